"""Factorization orders and the attention masks that enforce them.

A mask for a sequence of ``T`` characters is a ``(T+1, T+1)`` boolean array.
Rows are outputs ``y_1 .. y_T, [E]``; columns are context tokens
``[B], y_1 .. y_T``. ``True`` means the output may attend to that context
token. Permutations are 1-based, matching the row/column labels.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

LTR = "ltr_pair_first"
RTL = "rtl_pair_second"
INTERIOR = "interior"
ROLES = (LTR, RTL, INTERIOR)


def check_permutation(z: Sequence[int]) -> tuple:
    z = tuple(int(i) for i in z)
    if sorted(z) != list(range(1, len(z) + 1)):
        raise ValueError(f"{list(z)} is not a permutation of 1..{len(z)}")
    return z


def sample_permutations(k: int, t: int, rng: np.random.Generator) -> list[tuple]:
    """``k`` orders of ``1..t``: left-to-right, ``k/2 - 1`` random ones, then all reversed.

    Duplicates are kept when ``t! < k``.
    """
    if k < 1 or (k != 1 and k % 2):
        raise ValueError(f"K must be 1 or even, got {k}")
    if t < 1:
        raise ValueError(f"T must be positive, got {t}")
    ltr = tuple(range(1, t + 1))
    if k == 1:
        return [ltr]
    first = [ltr] + [tuple(int(i) + 1 for i in rng.permutation(t)) for _ in range(k // 2 - 1)]
    return first + [z[::-1] for z in first]


def permutation_roles(k: int) -> list[str]:
    """Role of each entry of :func:`sample_permutations` output."""
    if k == 1:
        return [LTR]
    roles = [INTERIOR] * k
    roles[0] = LTR
    roles[k // 2] = RTL
    return roles


def mask_from_permutation(z: Sequence[int], role: str = INTERIOR) -> np.ndarray:
    z = check_permutation(z)
    if role not in ROLES:
        raise ValueError(f"unknown mask role {role!r}")
    t = len(z)
    mask = np.zeros((t + 1, t + 1), dtype=bool)
    mask[:, 0] = True
    for step, pos in enumerate(z):
        # output y_pos sees [B] plus every position earlier in the order
        mask[pos - 1, list(z[:step])] = True
    mask[t, :] = role != RTL
    mask[t, 0] = True
    return mask


def ltr_mask(t: int) -> np.ndarray:
    return mask_from_permutation(range(1, t + 1), LTR)


def cloze_mask(t: int) -> np.ndarray:
    if t < 1:
        raise ValueError(f"T must be positive, got {t}")
    mask = np.ones((t + 1, t + 1), dtype=bool)
    idx = np.arange(t)
    mask[idx, idx + 1] = False
    return mask


def nar_mask(t: int) -> np.ndarray:
    return np.ones((t + 1, t + 1), dtype=bool)


def pad_mask(mask: np.ndarray, size: int) -> np.ndarray:
    """Embed a mask built for a shorter batch into a ``size x size`` grid.

    Extra rows (padding outputs) see only ``[B]``; extra columns start closed.
    """
    n = mask.shape[0]
    if n > size:
        raise ValueError(f"mask of size {n} does not fit in {size}")
    out = np.zeros((size, size), dtype=bool)
    out[:n, :n] = mask
    out[:, 0] = True
    return out


def apply_context_restrictions(mask: np.ndarray, context_ids, eos_id: int, pad_id: int) -> np.ndarray:
    """Close every column whose context token is [E] or [P].

    ``mask`` may be ``(n, n)`` with ``context_ids`` of shape ``(n,)``, or
    batched with a leading axis on both.
    """
    ctx = np.asarray(context_ids)
    if ctx.shape[-1] != mask.shape[-1]:
        raise ValueError(f"context length {ctx.shape[-1]} vs mask width {mask.shape[-1]}")
    closed = (ctx == eos_id) | (ctx == pad_id)
    closed[..., 0] = False
    return mask & ~closed[..., None, :]


def format_mask(mask: np.ndarray) -> str:
    """Render a mask as a 0/1 grid with [B]/[E] headers."""
    t = mask.shape[0] - 1
    cols = ["[B]"] + [f"y{i}" for i in range(1, t + 1)]
    rows = [f"y{i}" for i in range(1, t + 1)] + ["[E]"]
    w = max(len(c) for c in cols + rows)
    lines = [" " * w + " | " + " ".join(c.rjust(w) for c in cols)]
    lines.append("-" * len(lines[0]))
    for name, row in zip(rows, mask):
        lines.append(name.rjust(w) + " | " + " ".join(str(int(b)).rjust(w) for b in row))
    return "\n".join(lines)
