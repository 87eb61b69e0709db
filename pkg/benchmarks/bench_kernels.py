"""Compare the compiled kernels against the pure-Python fallback.

Run with ``python3 benchmarks/bench_kernels.py``.  Both implementations are
imported directly, so the choice made at package import does not matter here.
"""

import argparse
import string
import timeit

import numpy as np

from permstr import _kernels_py as pure

try:
    from permstr import _kernels as compiled
except ImportError:
    compiled = None


def _cases(rng):
    alphabet = np.array(list(string.ascii_lowercase[:6]))
    words = ["".join(rng.choice(alphabet, size=int(n))) for n in rng.integers(0, 26, size=400)]
    pairs = list(zip(words[::2], words[1::2]))
    image = rng.uniform(-1, 1, size=(40, 160, 3))
    return pairs, image


def run(number: int) -> list[tuple[str, str, float]]:
    rng = np.random.default_rng(0)
    pairs, image = _cases(rng)
    impls = [("python", pure)] + ([("cython", compiled)] if compiled else [])
    rows = []
    for name, mod in impls:
        lev = timeit.timeit(lambda: [mod.levenshtein(a, b) for a, b in pairs], number=number) / number
        res = timeit.timeit(lambda: mod.bilinear_resize(image, 32, 128), number=number) / number
        rows.append(("levenshtein x200", name, lev * 1e3))
        rows.append(("resize 160x40->128x32", name, res * 1e3))
    if compiled:
        for a, b in pairs:
            assert pure.levenshtein(a, b) == compiled.levenshtein(a, b)
        np.testing.assert_array_equal(pure.bilinear_resize(image, 32, 128), compiled.bilinear_resize(image, 32, 128))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--number", type=int, default=20, help="repetitions per timing")
    args = ap.parse_args()
    rows = run(args.number)
    print(f"{'kernel':<24}{'backend':<9}{'ms/call':>10}")
    for kernel, backend, ms in rows:
        print(f"{kernel:<24}{backend:<9}{ms:>10.3f}")
    if compiled is None:
        print("compiled kernels not built; only the fallback was timed")
    else:
        for kernel in dict.fromkeys(r[0] for r in rows):
            py, cy = (ms for k, _, ms in rows if k == kernel)
            print(f"{kernel}: {py / cy:.1f}x faster compiled")


if __name__ == "__main__":
    main()
