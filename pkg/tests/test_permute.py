import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from permstr.permute import (
    INTERIOR,
    LTR,
    RTL,
    apply_context_restrictions,
    cloze_mask,
    format_mask,
    ltr_mask,
    mask_from_permutation,
    nar_mask,
    pad_mask,
    permutation_roles,
    sample_permutations,
)


def grid(rows):
    return np.array([[c == "1" for c in r] for r in rows])


# masks printed in the paper's table of AR attention masks (T = 3)
TABLE_AR_MASKS = {
    (1, 2, 3): ["1000", "1100", "1110", "1111"],
    (3, 2, 1): ["1011", "1001", "1000", "1111"],
    (1, 3, 2): ["1000", "1101", "1100", "1111"],
    (2, 3, 1): ["1011", "1000", "1010", "1111"],
}


@pytest.mark.parametrize("z", list(TABLE_AR_MASKS))
def test_printed_masks(z):
    role = LTR if z == (1, 2, 3) else INTERIOR
    np.testing.assert_array_equal(mask_from_permutation(z, role), grid(TABLE_AR_MASKS[z]))


def test_rtl_eos_row_is_context_free():
    m = mask_from_permutation((3, 2, 1), RTL)
    assert m[3].tolist() == [True, False, False, False]


def test_cloze_examples():
    np.testing.assert_array_equal(cloze_mask(3), grid(["1011", "1101", "1110", "1111"]))
    np.testing.assert_array_equal(cloze_mask(1), grid(["10", "11"]))
    for t in range(1, 9):
        assert not np.diag(cloze_mask(t)[:t, 1:]).any()


def test_nar_mask_all_ones():
    assert nar_mask(4).all()


@pytest.mark.parametrize("t", [3, 4])
def test_row_counts_exhaustive(t):
    for z in itertools.permutations(range(1, t + 1)):
        m = mask_from_permutation(z, INTERIOR)
        for step, pos in enumerate(z, 1):
            assert m[pos - 1].sum() == step
        assert m[:, 0].all() and m.any(axis=1).all()


@given(st.permutations(list(range(1, 7))))
def test_flip_duality(z):
    t = len(z)
    a = mask_from_permutation(z)[:t, 1:]
    b = mask_from_permutation(z[::-1])[:t, 1:]
    off = ~np.eye(t, dtype=bool)
    assert not (a & b).any()
    np.testing.assert_array_equal(a | b, off)


def test_ltr_equals_decoding_lookahead():
    t = 6
    expected = np.tril(np.ones((t + 1, t + 1), dtype=bool))
    np.testing.assert_array_equal(ltr_mask(t), expected)


def test_sample_permutations_examples():
    rng = np.random.default_rng(0)
    assert sample_permutations(1, 5, rng) == [(1, 2, 3, 4, 5)]
    assert sample_permutations(2, 3, rng) == [(1, 2, 3), (3, 2, 1)]
    assert sample_permutations(6, 1, rng) == [(1,)] * 6
    perms = sample_permutations(6, 7, rng)
    assert len(perms) == 6 and perms[0] == tuple(range(1, 8))
    for a, b in zip(perms[:3], perms[3:]):
        assert b == a[::-1]
    for z in perms:
        assert sorted(z) == list(range(1, 8))


def test_sample_permutations_rejects_odd():
    with pytest.raises(ValueError):
        sample_permutations(3, 4, np.random.default_rng(0))


def test_roles():
    assert permutation_roles(1) == [LTR]
    assert permutation_roles(6) == [LTR, INTERIOR, INTERIOR, RTL, INTERIOR, INTERIOR]


def test_context_restrictions():
    B, E, P = 7, 5, 8
    ctx = [B, 0, E, P]
    out = apply_context_restrictions(np.ones((4, 4), dtype=bool), ctx, E, P)
    assert not out[:, 2:].any() and out[:, :2].all()
    same = apply_context_restrictions(ltr_mask(3), [B, 0, 1, 2], E, P)
    np.testing.assert_array_equal(same, ltr_mask(3))
    only_b = apply_context_restrictions(np.ones((4, 4), dtype=bool), [B, P, P, P], E, P)
    assert only_b[:, 0].all() and not only_b[:, 1:].any()


def test_batched_context_restrictions():
    ctx = np.array([[7, 0, 8, 8], [7, 0, 1, 2]])
    out = apply_context_restrictions(np.broadcast_to(nar_mask(3), (2, 4, 4)), ctx, 5, 8)
    assert out[0, :, :2].all() and not out[0, :, 2:].any()
    assert out[1].all()


def test_pad_mask_embeds_short_batch():
    m = pad_mask(mask_from_permutation((2, 1), RTL), 5)
    assert m.shape == (5, 5)
    np.testing.assert_array_equal(m[:3, :3], mask_from_permutation((2, 1), RTL))
    assert m[:, 0].all() and not m[3:, 1:].any()


def test_format_mask_layout():
    text = format_mask(mask_from_permutation((2, 3, 1)))
    lines = text.splitlines()
    assert "[B]" in lines[0] and lines[-1].strip().startswith("[E]")
    assert lines[2].split("|")[1].split() == ["1", "0", "1", "1"]
