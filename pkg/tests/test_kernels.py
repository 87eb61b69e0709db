import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import levenshtein_bruteforce

from permstr import _kernels_py as pure
from permstr import kernels

compiled = pytest.importorskip("permstr._kernels")


@given(st.text("abcd", max_size=12), st.text("abcd", max_size=12))
def test_levenshtein_backends_agree(a, b):
    expected = levenshtein_bruteforce(a, b)
    assert pure.levenshtein(a, b) == expected
    assert compiled.levenshtein(a, b) == expected


def test_levenshtein_examples():
    assert kernels.levenshtein("kitten", "sitting") == 3
    assert kernels.levenshtein("", "abc") == 3
    assert kernels.levenshtein("é", "e") == 1


@pytest.mark.parametrize("shape,out", [((1, 1, 1), (4, 6)), ((5, 7, 3), (16, 64)), ((32, 128, 1), (8, 20)), ((3, 3, 2), (3, 3))])
def test_resize_backends_bit_identical(shape, out):
    img = np.random.default_rng(0).uniform(-1, 1, size=shape)
    a = pure.bilinear_resize(img, *out)
    b = compiled.bilinear_resize(img, *out)
    assert a.shape == out + (shape[2],)
    np.testing.assert_array_equal(a, b)


def test_resize_identity_and_constant():
    img = np.random.default_rng(1).uniform(size=(4, 5, 1))
    np.testing.assert_array_equal(kernels.bilinear_resize(img, 4, 5), img)
    const = np.full((3, 2, 1), 0.25)
    assert np.all(kernels.bilinear_resize(const, 7, 9) == 0.25)


def test_upsample_two_pixels():
    img = np.array([[[0.0], [1.0]]])
    row = kernels.bilinear_resize(img, 1, 4)[0, :, 0]
    np.testing.assert_allclose(row, [0.0, 0.25, 0.75, 1.0])


def test_backend_selection_env():
    assert kernels.BACKEND == ("python" if os.environ.get("PERMSTR_PURE_PYTHON") else "cython")
    code = "from permstr import kernels; print(kernels.BACKEND)"
    env = {**os.environ, "PERMSTR_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
