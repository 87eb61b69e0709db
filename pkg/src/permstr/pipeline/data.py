"""Sample manifests and in-memory datasets."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..model import ModelConfig
from ..textcodec import Rejected, TokenCodec, charset_slice, encode_label, preprocess_label
from .imageio import DataError, read_pnm, to_model_input

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.tsv"


@dataclass(frozen=True)
class SampleManifest:
    base_dir: Path
    rows: tuple  # ((relative path, raw label), ...)

    def __len__(self) -> int:
        return len(self.rows)


def read_manifest(path) -> SampleManifest:
    """Parse ``relative/path<TAB>label`` rows; paths resolve against the manifest's directory."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        rel, sep, label = line.partition("\t")
        if not sep or not label:
            raise DataError(f"{path}:{lineno}: expected 'path<TAB>label'")
        if not (path.parent / rel).is_file():
            raise DataError(f"{path}:{lineno}: image {rel} does not exist")
        rows.append((rel, label))
    return SampleManifest(path.parent, tuple(rows))


def write_manifest(path, rows) -> None:
    Path(path).write_text("".join(f"{rel}\t{label}\n" for rel, label in rows), encoding="utf-8")


def load_sample(row, base_dir, cfg: ModelConfig, charset_size: int | None = None):
    """Return ``(image, label)``; ``label`` is a :class:`Rejected` when filtered out."""
    rel, raw = row
    img = read_pnm(Path(base_dir) / rel)
    x = to_model_input(img, cfg.image_w, cfg.image_h, cfg.channels)
    label = preprocess_label(raw, charset_slice(charset_size or cfg.charset_size), cfg.max_len)
    return x, label


@dataclass
class Dataset:
    images: np.ndarray  # (N, H, W, C) float32
    labels: list
    context_ids: np.ndarray  # (N, T+1)
    target_ids: np.ndarray  # (N, T+1)
    lengths: np.ndarray
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.labels)

    def batch(self, idx):
        idx = np.asarray(idx)
        return self.images[idx], self.context_ids[idx], self.target_ids[idx], self.lengths[idx]


def load_dataset(manifest: SampleManifest, cfg: ModelConfig, codec: TokenCodec) -> Dataset:
    images, labels, encoded = [], [], []
    skipped = 0
    for row in manifest.rows:
        x, label = load_sample(row, manifest.base_dir, cfg, len(codec.charset))
        if isinstance(label, Rejected):
            skipped += 1
            continue
        images.append(x)
        labels.append(label)
        encoded.append(encode_label(label, codec))
    if skipped:
        log.warning("skipped %d of %d samples rejected by label preprocessing", skipped, len(manifest))
    t1 = codec.max_len + 1
    return Dataset(
        images=np.stack(images) if images else np.zeros((0, cfg.image_h, cfg.image_w, cfg.channels), np.float32),
        labels=labels,
        context_ids=np.stack([e.context_ids for e in encoded]) if encoded else np.zeros((0, t1), np.int64),
        target_ids=np.stack([e.target_ids for e in encoded]) if encoded else np.zeros((0, t1), np.int64),
        lengths=np.array([e.length for e in encoded], dtype=np.int64),
        skipped=skipped,
    )
