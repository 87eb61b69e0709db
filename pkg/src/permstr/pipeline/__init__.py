"""Training, decoding, evaluation, data ingestion, and benchmarking."""

from .data import Dataset, SampleManifest, load_dataset, load_sample, read_manifest
from .decode import AR, NAR, DecodeResult, decode, decode_ar, decode_nar, refine
from .loss import plm_loss
from .metrics import EvalReport, compute_metrics
from .train import TrainConfig, evaluate, train_loop, train_step

__all__ = [
    "AR", "NAR", "DecodeResult", "Dataset", "EvalReport", "SampleManifest", "TrainConfig",
    "compute_metrics", "decode", "decode_ar", "decode_nar", "evaluate", "load_dataset",
    "load_sample", "plm_loss", "read_manifest", "refine", "train_loop", "train_step",
]
