"""Binary PGM (P5) / PPM (P6) reading and writing, plus model-input preprocessing."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..kernels import bilinear_resize


class DataError(ValueError):
    """An input file is missing or cannot be parsed."""


def _tokens(raw: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments."""
    out, i = [], 0
    while len(out) < count:
        while i < len(raw) and raw[i : i + 1].isspace():
            i += 1
        if i < len(raw) and raw[i : i + 1] == b"#":
            while i < len(raw) and raw[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < len(raw) and not raw[i : i + 1].isspace():
            i += 1
        if start == i:
            raise DataError("truncated header")
        out.append(raw[start:i])
    return out, i + 1  # single whitespace byte ends the header


def read_pnm(path) -> np.ndarray:
    """Return a ``(H, W, C)`` uint8 array (C = 1 for P5, 3 for P6)."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    try:
        (magic, w, h, maxval), start = _tokens(raw, 4)
        channels = {b"P5": 1, b"P6": 3}[magic]
        w, h, maxval = int(w), int(h), int(maxval)
    except (KeyError, ValueError, DataError) as exc:
        raise DataError(f"{path}: not a binary PGM/PPM file ({exc})") from None
    if not 0 < maxval < 256 or w < 1 or h < 1:
        raise DataError(f"{path}: unsupported extents {w}x{h} or maxval {maxval}")
    n = w * h * channels
    pixels = np.frombuffer(raw, dtype=np.uint8, count=-1, offset=start)
    if pixels.size < n:
        raise DataError(f"{path}: expected {n} pixel bytes, found {pixels.size}")
    img = pixels[:n].reshape(h, w, channels)
    if maxval != 255:
        img = np.round(img.astype(np.float64) * (255.0 / maxval)).astype(np.uint8)
    return img


def write_pnm(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim == 2:
        img = img[:, :, None]
    h, w, c = img.shape
    magic = {1: "P5", 3: "P6"}.get(c)
    if magic is None:
        raise ValueError(f"cannot write {c}-channel image as PGM/PPM")
    Path(path).write_bytes(f"{magic}\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def to_model_input(img: np.ndarray, width: int, height: int, channels: int) -> np.ndarray:
    """uint8 ``(H, W, C)`` -> float32 ``(height, width, channels)`` in [-1, 1].

    Resizing ignores aspect ratio. Grey images are replicated to RGB; RGB is
    reduced to grey with BT.601 luma weights.
    """
    x = 2.0 * np.asarray(img, dtype=np.float64) / 255.0 - 1.0
    if x.shape[2] != channels:
        if channels == 3 and x.shape[2] == 1:
            x = np.repeat(x, 3, axis=2)
        elif channels == 1 and x.shape[2] == 3:
            x = x @ np.array([[0.299], [0.587], [0.114]])
        else:
            raise DataError(f"cannot convert {x.shape[2]} channels to {channels}")
    if x.shape[:2] != (height, width):
        x = bilinear_resize(np.ascontiguousarray(x), height, width)
    return x.astype(np.float32)
