import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from permstr.numerics import ContractError, Tensor
from permstr.optim import (
    AdamState,
    OneCycleSchedule,
    SwaState,
    adam_step,
    lr_at,
    swa_update_and_finalize,
)


def param(values, grad=None):
    p = Tensor(values, requires_grad=True, dtype=np.float64)
    p.grad = None if grad is None else np.array(grad, dtype=np.float64)
    return p


def test_adam_zero_grad_keeps_params():
    p = param([1.0, -2.0], [0.0, 0.0])
    adam_step([p], AdamState(), lr=0.1)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_first_step_is_lr_times_sign():
    p = param([0.5, 0.5], [3.0, -0.02])
    adam_step([p], AdamState(), lr=0.01)
    np.testing.assert_allclose(p.data, [0.49, 0.51], rtol=0, atol=1e-8)


def _scalar_adam(x, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    return x


def test_adam_two_steps_match_scalar_oracle():
    rng = np.random.default_rng(0)
    x0 = rng.normal(size=5)
    g1, g2 = rng.normal(size=5), rng.normal(size=5)
    p = param(x0)
    state = AdamState()
    for g in (g1, g2):
        p.grad = g.copy()
        adam_step([p], state, lr=3e-3)
    assert state.step == 2
    expected = [_scalar_adam(x0[i], [g1[i], g2[i]], 3e-3) for i in range(5)]
    np.testing.assert_allclose(p.data, expected, rtol=0, atol=1e-12)


def test_adam_missing_grad_names_param():
    with pytest.raises(ContractError, match="enc.w"):
        adam_step([param([1.0])], AdamState(), 0.1, names=["enc.w"])


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 100.0))
def test_adam_first_step_scale_equivariant(c):
    rng = np.random.default_rng(1)
    g = rng.normal(size=4)
    a, b = param(np.zeros(4), g), param(np.zeros(4), c * g)
    adam_step([a], AdamState(eps=0.0), 1e-3)
    adam_step([b], AdamState(eps=0.0), 1e-3)
    np.testing.assert_allclose(a.data, b.data, rtol=1e-12, atol=1e-15)


def test_onecycle_endpoints():
    s = OneCycleSchedule(max_lr=1e-3, total_steps=1000)
    assert lr_at(s, 0) == pytest.approx(4e-5, rel=1e-12)
    assert lr_at(s, 300) == pytest.approx(1e-3, rel=1e-12)
    assert lr_at(s, 1000) == pytest.approx(1e-3 / (25 * 1e4), rel=1e-12)


def test_onecycle_monotone():
    s = OneCycleSchedule(max_lr=2e-3, total_steps=777, warmup_frac=0.3)
    lrs = [lr_at(s, i) for i in range(778)]
    peak = int(s.peak_step)
    assert all(a <= b for a, b in zip(lrs[: peak + 1], lrs[1 : peak + 1]))
    assert all(a >= b for a, b in zip(lrs[peak + 1 :], lrs[peak + 2 :]))
    assert max(lrs) <= 2e-3


def test_onecycle_range_error():
    with pytest.raises(ValueError):
        lr_at(OneCycleSchedule(1e-3, 10), 11)


def test_swa_single_and_pair():
    state = SwaState(swa_lr=1e-4)
    p = param([1.0, 3.0])
    swa_update_and_finalize(state, [p])
    np.testing.assert_array_equal(swa_update_and_finalize(state, [], finalize=True)[0], [1.0, 3.0])
    swa_update_and_finalize(state, [param([3.0, 5.0])])
    np.testing.assert_array_equal(swa_update_and_finalize(state, [], finalize=True)[0], [2.0, 4.0])


def test_swa_matches_direct_mean_and_is_order_invariant():
    rng = np.random.default_rng(5)
    snaps = [rng.normal(size=(3, 4)) for _ in range(17)]
    results = []
    for order in (range(17), rng.permutation(17)):
        state = SwaState(swa_lr=1e-4)
        for i in order:
            swa_update_and_finalize(state, [param(snaps[i])])
        results.append(swa_update_and_finalize(state, [], finalize=True)[0])
    direct = np.mean(snaps, axis=0)
    np.testing.assert_allclose(results[0], direct, rtol=0, atol=1e-12)
    np.testing.assert_allclose(results[1], direct, rtol=0, atol=1e-12)


def test_swa_finalize_empty():
    with pytest.raises(ContractError):
        swa_update_and_finalize(SwaState(swa_lr=1e-4), [], finalize=True)
