"""Charsets, label filtering, and token encoding."""

from __future__ import annotations

import string
import unicodedata
from dataclasses import dataclass
from functools import cached_property

import numpy as np

# digits, lowercase, uppercase, then punctuation in codepoint order
FULL_CHARSET = string.printable[:94]
SUPPORTED_SIZES = (36, 62, 94)


class UnsupportedCharsetError(ValueError):
    pass


class MalformedSequenceError(ValueError):
    pass


@dataclass(frozen=True)
class Charset:
    chars: str

    @cached_property
    def case_mode(self) -> str:
        letters = [c for c in self.chars if c.isalpha()]
        if letters and all(c.islower() for c in letters):
            return "lower"
        if letters and all(c.isupper() for c in letters):
            return "upper"
        return "mixed"

    @cached_property
    def index(self) -> dict:
        return {c: i for i, c in enumerate(self.chars)}

    def __len__(self) -> int:
        return len(self.chars)

    def __contains__(self, ch: str) -> bool:
        return ch in self.index


def charset_slice(size: int) -> Charset:
    if size not in SUPPORTED_SIZES:
        raise UnsupportedCharsetError(f"charset size {size} not in {SUPPORTED_SIZES}")
    return Charset(FULL_CHARSET[:size])


@dataclass(frozen=True)
class Rejected:
    """A label dropped by :func:`preprocess_label`; ``reason`` is 'empty' or 'too-long'."""

    reason: str
    label: str

    def __bool__(self) -> bool:
        return False


def preprocess_label(raw: str, charset: Charset, max_len: int) -> str | Rejected:
    label = "".join(raw.split())
    label = unicodedata.normalize("NFKD", label).encode("ascii", "ignore").decode("ascii")
    if charset.case_mode == "lower":
        label = label.lower()
    elif charset.case_mode == "upper":
        label = label.upper()
    # length is checked before out-of-charset characters are dropped
    if len(label) > max_len:
        return Rejected("too-long", label)
    label = "".join(c for c in label if c in charset)
    if not label:
        return Rejected("empty", label)
    return label


@dataclass(frozen=True)
class EncodedLabel:
    context_ids: np.ndarray  # (T+1,) [B], chars, [P]...
    target_ids: np.ndarray  # (T+1,) chars, [E], [P]...
    length: int


@dataclass(frozen=True)
class TokenCodec:
    charset: Charset
    max_len: int

    @property
    def eos_id(self) -> int:
        return len(self.charset)

    @property
    def bos_id(self) -> int:
        return len(self.charset) + 1

    @property
    def pad_id(self) -> int:
        return len(self.charset) + 2

    @property
    def num_classes(self) -> int:
        """Width of the output head: characters plus [E]."""
        return len(self.charset) + 1

    @property
    def vocab_size(self) -> int:
        """Rows of the context embedding table: characters plus [E], [B], [P]."""
        return len(self.charset) + 3

    def encode(self, label: str) -> EncodedLabel:
        return encode_label(label, self)

    def decode(self, ids) -> str:
        return decode_ids(ids, self)


def encode_label(label: str, codec: TokenCodec) -> EncodedLabel:
    n = len(label)
    if n == 0 or n > codec.max_len:
        raise ValueError(f"label length {n} outside [1, {codec.max_len}]")
    idx = codec.charset.index
    try:
        chars = [idx[c] for c in label]
    except KeyError as exc:
        raise ValueError(f"character {exc.args[0]!r} not in charset") from None
    size = codec.max_len + 1
    ctx = np.full(size, codec.pad_id, dtype=np.int64)
    tgt = np.full(size, codec.pad_id, dtype=np.int64)
    ctx[0] = codec.bos_id
    ctx[1 : n + 1] = chars
    tgt[:n] = chars
    tgt[n] = codec.eos_id
    return EncodedLabel(ctx, tgt, n)


def decode_ids(ids, codec: TokenCodec) -> str:
    chars = codec.charset.chars
    s = len(chars)
    out = []
    for i in ids:
        i = int(i)
        if i == codec.eos_id:
            break
        if i < 0 or i >= s:
            raise MalformedSequenceError(f"id {i} is not a character id and precedes [E]")
        out.append(chars[i])
    return "".join(out)
