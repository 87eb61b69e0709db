"""Deterministic synthetic text-image corpus from a built-in 5x7 bitmap font."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..textcodec import Charset
from .data import MANIFEST_NAME, SampleManifest, write_manifest
from .imageio import write_pnm

GLYPH_W, GLYPH_H = 5, 7

# Five column bytes per printable ASCII character, bit 0 = top row.
_FONT_COLUMNS = {
    "!": "00005f0000", '"': "0007000700", "#": "147f147f14", "$": "242a7f2a12",
    "%": "2313086462", "&": "3649552250", "'": "0005030000", "(": "001c224100",
    ")": "0041221c00", "*": "14083e0814", "+": "08083e0808", ",": "0050300000",
    "-": "0808080808", ".": "0060600000", "/": "2010080402", "0": "3e5149453e",
    "1": "00427f4000", "2": "4261514946", "3": "2141454b31", "4": "1814127f10",
    "5": "2745454539", "6": "3c4a494930", "7": "0171090503", "8": "3649494936",
    "9": "064949291e", ":": "0036360000", ";": "0056360000", "<": "0814224100",
    "=": "1414141414", ">": "0041221408", "?": "0201510906", "@": "324979413e",
    "A": "7e1111117e", "B": "7f49494936", "C": "3e41414122", "D": "7f4141221c",
    "E": "7f49494941", "F": "7f09090901", "G": "3e4149497a", "H": "7f0808087f",
    "I": "00417f4100", "J": "2040413f01", "K": "7f08142241", "L": "7f40404040",
    "M": "7f020c027f", "N": "7f0408107f", "O": "3e4141413e", "P": "7f09090906",
    "Q": "3e4151215e", "R": "7f09192946", "S": "4649494931", "T": "01017f0101",
    "U": "3f4040403f", "V": "1f2040201f", "W": "3f4038403f", "X": "6314081463",
    "Y": "0708700807", "Z": "6151494543", "[": "007f414100", "\\": "0204081020",
    "]": "0041417f00", "^": "0402010204", "_": "4040404040", "`": "0001020400",
    "a": "2054545478", "b": "7f48444438", "c": "3844444420", "d": "384444487f",
    "e": "3854545418", "f": "087e090102", "g": "0c5252523e", "h": "7f08040478",
    "i": "00447d4000", "j": "2040443d00", "k": "7f10284400", "l": "00417f4000",
    "m": "7c04180478", "n": "7c08040478", "o": "3844444438", "p": "7c14141408",
    "q": "081414187c", "r": "7c08040408", "s": "4854545420", "t": "043f444020",
    "u": "3c4040207c", "v": "1c2040201c", "w": "3c4030403c", "x": "4428102844",
    "y": "0c5050503c", "z": "4464544c44", "{": "0008364100", "|": "00007f0000",
    "}": "0041360800", "~": "1008081008",
}


class GenerationError(ValueError):
    pass


def glyph(ch: str) -> np.ndarray:
    """``(7, 5)`` boolean bitmap for ``ch``."""
    try:
        cols = bytes.fromhex(_FONT_COLUMNS[ch])
    except KeyError:
        raise GenerationError(f"no glyph for character {ch!r}") from None
    bits = np.array([[(c >> r) & 1 for c in cols] for r in range(GLYPH_H)], dtype=bool)
    return bits


def render_text(text: str, width: int, height: int, rng: np.random.Generator) -> np.ndarray:
    """Render ``text`` with a random scale, offset and polarity; returns uint8 ``(H, W)``."""
    glyphs = [glyph(c) for c in text]
    fits = [s for s in (1, 2) if len(text) * (GLYPH_W + 1) * s - s <= width and GLYPH_H * s <= height]
    if not fits:
        raise GenerationError(f"label {text!r} does not fit a {width}x{height} canvas")
    s = int(rng.choice(fits))
    strip = np.zeros((GLYPH_H, len(text) * (GLYPH_W + 1) - 1), dtype=bool)
    for i, g in enumerate(glyphs):
        strip[:, i * (GLYPH_W + 1) : i * (GLYPH_W + 1) + GLYPH_W] = g
    strip = np.kron(strip, np.ones((s, s), dtype=bool))
    dy = int(rng.integers(0, height - strip.shape[0] + 1))
    dx = int(rng.integers(0, width - strip.shape[1] + 1))
    ink, bg = (20, 235) if rng.random() < 0.5 else (235, 20)
    img = np.full((height, width), bg, dtype=np.uint8)
    img[dy : dy + strip.shape[0], dx : dx + strip.shape[1]][strip] = ink
    return img


def random_labels(count: int, charset: Charset, max_len: int, rng: np.random.Generator, min_len: int = 1) -> list[str]:
    chars = np.array(list(charset.chars))
    lengths = rng.integers(min_len, max_len + 1, size=count)
    return ["".join(rng.choice(chars, size=int(n))) for n in lengths]


def render_synthetic(
    labels,
    rng: np.random.Generator,
    out_dir,
    width: int = 64,
    height: int = 16,
    charset: Charset | None = None,
    max_len: int = 8,
    min_len: int = 1,
) -> SampleManifest:
    """Render each label to ``out_dir/NNNNNN.pgm`` and write ``manifest.tsv``.

    ``labels`` may be a count, in which case random labels with lengths drawn
    uniformly from ``min_len..max_len`` are taken from ``charset`` first.
    """
    if isinstance(labels, int):
        if charset is None:
            raise GenerationError("a label count needs a charset to draw from")
        if not 1 <= min_len <= max_len:
            raise GenerationError(f"need 1 <= min_len <= max_len, got {min_len}..{max_len}")
        labels = random_labels(labels, charset, max_len, rng, min_len)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, label in enumerate(labels):
        rel = f"{i:06d}.pgm"
        write_pnm(out_dir / rel, render_text(label, width, height, rng))
        rows.append((rel, label))
    write_manifest(out_dir / MANIFEST_NAME, rows)
    return SampleManifest(out_dir, tuple(rows))
