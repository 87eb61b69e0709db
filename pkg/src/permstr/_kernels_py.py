"""Pure-Python/numpy versions of the compiled kernels in ``_kernels.pyx``.

Both implementations evaluate the same floating-point expressions in the same
order, so their outputs agree bit for bit.
"""

import numpy as np


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def _axis_weights(n_in: int, n_out: int):
    f = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    f = np.maximum(f, 0.0)
    i0 = np.minimum(np.floor(f).astype(np.intp), n_in - 1)
    i1 = np.where(i0 < n_in - 1, i0 + 1, i0)
    return i0, i1, f - i0


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    img = np.ascontiguousarray(img, dtype=np.float64)
    y0, y1, ty = _axis_weights(img.shape[0], out_h)
    x0, x1, tx = _axis_weights(img.shape[1], out_w)
    tx = tx[None, :, None]
    ty = ty[:, None, None]
    a = img[y0][:, x0]
    b = img[y0][:, x1]
    c = img[y1][:, x0]
    d = img[y1][:, x1]
    top = a + tx * (b - a)
    bot = c + tx * (d - c)
    return top + ty * (bot - top)
