"""Training loop: PLM loss, Adam with 1cycle, then SWA over the final stretch."""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, fields

import numpy as np

from .. import model as M
from .. import numerics as nx
from ..optim import AdamState, OneCycleSchedule, SwaState, adam_step, lr_at, swa_update_and_finalize
from ..permute import sample_permutations
from ..textcodec import TokenCodec, charset_slice
from .data import Dataset, SampleManifest, load_dataset
from .decode import AR, DEFAULT_REFINE, decode
from .loss import plm_loss
from .metrics import EvalReport, SampleRecord, compute_metrics


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    K: int = 6
    batch_size: int = 32
    total_steps: int = 3000
    max_lr: float = 1e-3
    swa_start_frac: float = 0.75
    swa_every: int = 100
    warmup_frac: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4
    seed: int = 0
    preset: str = "tiny64"
    charset_size: int = 36
    dropout_p: float = 0.1
    val_every: int = 200
    val_samples: int = 128

    def __post_init__(self):
        if self.K < 1 or (self.K != 1 and self.K % 2):
            raise ValueError(f"K must be 1 or even, got {self.K}")
        if not 0.0 < self.swa_start_frac < 1.0:
            raise ValueError("swa_start_frac must lie in (0, 1)")
        if self.batch_size < 1 or self.total_steps < 1:
            raise ValueError("batch_size and total_steps must be positive")

    @property
    def swa_start(self) -> int:
        return math.ceil(self.swa_start_frac * self.total_steps)

    @property
    def swa_lr(self) -> float:
        return self.max_lr / 20.0

    def model_config(self) -> M.ModelConfig:
        return M.preset(self.preset, charset_size=self.charset_size, dropout_p=self.dropout_p)

    def schedule(self) -> OneCycleSchedule:
        return OneCycleSchedule(self.max_lr, self.total_steps, self.warmup_frac, self.div_factor, self.final_div_factor)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class TrainState:
    cfg: TrainConfig
    model_cfg: M.ModelConfig
    params: M.ModelParams
    adam: AdamState
    swa: SwaState
    sched: OneCycleSchedule
    data_rng: np.random.Generator
    perm_rng: np.random.Generator
    drop_rng: np.random.Generator
    step: int = 0
    history: list = field(default_factory=list)

    def lr(self) -> float:
        if self.step >= self.cfg.swa_start:
            return self.cfg.swa_lr
        return lr_at(self.sched, self.step)


def init_state(cfg: TrainConfig) -> TrainState:
    mcfg = cfg.model_config()
    init_seq, data_seq, perm_seq, drop_seq = np.random.SeedSequence(cfg.seed).spawn(4)
    return TrainState(
        cfg=cfg,
        model_cfg=mcfg,
        params=M.init_params(mcfg, np.random.default_rng(init_seq)),
        adam=AdamState(),
        swa=SwaState(swa_lr=cfg.swa_lr),
        sched=cfg.schedule(),
        data_rng=np.random.default_rng(data_seq),
        perm_rng=np.random.default_rng(perm_seq),
        drop_rng=np.random.default_rng(drop_seq),
    )


def _grad_norms(params: M.ModelParams) -> dict:
    return {k: float(np.linalg.norm(t.grad)) if t.grad is not None else None for k, t in params.items()}


def train_step(batch, state: TrainState) -> float:
    """Encode once, decode under K permutation masks, backprop, Adam update."""
    images, ctx, tgt, lengths = batch
    cfg, mcfg, params = state.cfg, state.model_cfg, state.params
    perms = sample_permutations(cfg.K, int(np.max(lengths)), state.perm_rng)
    params.zero_grad()
    z = M.encode_image(images, params, mcfg)
    loss = plm_loss(z, ctx, tgt, perms, params, mcfg, train=True, rng=state.drop_rng)
    nx.backward(loss)
    value = loss.item()
    lr = state.lr()
    if not math.isfinite(value):
        norms = {k: v for k, v in _grad_norms(params).items() if v is None or not math.isfinite(v) or v > 1e3}
        raise TrainingError(f"non-finite loss {value} at step {state.step} (lr={lr:.3g}); suspicious grad norms: {norms}")
    adam_step(params.values(), state.adam, lr, params.names())
    state.step += 1
    return value


def evaluate(
    params: M.ModelParams,
    cfg: M.ModelConfig,
    data: Dataset,
    scheme: str = AR,
    refine_iters: int | None = None,
    charset_size: int | None = None,
    batch_size: int = 128,
) -> EvalReport:
    preds, records = [], []
    for start in range(0, len(data), batch_size):
        idx = np.arange(start, min(start + batch_size, len(data)))
        with nx.no_grad():
            z = M.encode_image(data.images[idx], params, cfg)
        for i, r in zip(idx, decode(z, params, cfg, scheme, refine_iters, charset_size)):
            preds.append(r.text)
            records.append(SampleRecord(r.text, data.labels[i], r.confidence, r.latency_ms))
    report = compute_metrics(preds, list(data.labels))
    report.samples = records
    report.scheme = scheme
    report.refine_iters = DEFAULT_REFINE[scheme] if refine_iters is None else refine_iters
    report.charset_size = charset_size or cfg.charset_size
    return report


def _as_dataset(data, cfg: TrainConfig, mcfg: M.ModelConfig) -> Dataset:
    if isinstance(data, Dataset):
        return data
    if isinstance(data, SampleManifest):
        return load_dataset(data, mcfg, TokenCodec(charset_slice(cfg.charset_size), mcfg.max_len))
    raise TypeError(f"expected a Dataset or SampleManifest, got {type(data).__name__}")


@dataclass
class TrainResult:
    params: M.ModelParams  # SWA average
    last_params: M.ModelParams
    model_cfg: M.ModelConfig
    history: list
    swa_start: int
    swa_count: int


def train_loop(cfg: TrainConfig, data, val_data=None, log=None, state: TrainState | None = None) -> TrainResult:
    """Run ``cfg.total_steps`` updates and return the SWA-averaged parameters.

    Every ``val_every`` steps (and at the end) ``log`` receives a line
    ``step lr loss val_word_acc``.
    """
    state = state or init_state(cfg)
    mcfg = state.model_cfg
    train = _as_dataset(data, cfg, mcfg)
    if len(train) == 0:
        raise TrainingError("training set is empty after label filtering")
    val = _as_dataset(val_data, cfg, mcfg) if val_data is not None else None
    if val is None:
        keep = np.arange(min(cfg.val_samples, len(train)))
        val = Dataset(train.images[keep], [train.labels[i] for i in keep], train.context_ids[keep],
                      train.target_ids[keep], train.lengths[keep])
    log = log if log is not None else (lambda line: print(line, file=sys.stderr))

    order = np.empty(0, dtype=np.intp)
    pos = 0
    bs = min(cfg.batch_size, len(train))
    while state.step < cfg.total_steps:
        if pos + bs > order.size:
            order = state.data_rng.permutation(len(train))
            pos = 0
        idx = order[pos : pos + bs]
        pos += bs
        lr = state.lr()
        loss = train_step(train.batch(idx), state)
        done = state.step
        if done > cfg.swa_start - 1 and ((done - cfg.swa_start) % cfg.swa_every == 0 or done == cfg.total_steps):
            swa_update_and_finalize(state.swa, state.params.values())
        if done % cfg.val_every == 0 or done == cfg.total_steps:
            acc = evaluate(state.params, mcfg, val, AR, 0).word_accuracy
            state.history.append((done, lr, loss, acc))
            log(f"{done} {lr:.6g} {loss:.6f} {acc:.4f}")

    averaged = state.params.copy()
    if state.swa.count:
        averaged.load_arrays(a.astype(np.float32) for a in swa_update_and_finalize(state.swa, [], finalize=True))
    return TrainResult(averaged, state.params, mcfg, state.history, cfg.swa_start, state.swa.count)
