"""Adam, the 1cycle learning-rate schedule, and stochastic weight averaging."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import ContractError, Tensor


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: list[Tensor], state: AdamState, lr: float, names: list[str] | None = None) -> None:
    """One bias-corrected Adam update, in place. No weight decay."""
    for i, p in enumerate(params):
        if p.grad is None:
            label = names[i] if names else f"#{i}"
            raise ContractError(f"adam_step: parameter {label} has no gradient")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype, copy=False)


@dataclass(frozen=True)
class OneCycleSchedule:
    max_lr: float
    total_steps: int
    warmup_frac: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")
        if not 0.0 < self.warmup_frac < 1.0:
            raise ValueError("warmup_frac must lie in (0, 1)")
        if self.div_factor <= 1.0 or self.final_div_factor <= 1.0:
            raise ValueError("div factors must exceed 1")

    @property
    def initial_lr(self) -> float:
        return self.max_lr / self.div_factor

    @property
    def min_lr(self) -> float:
        return self.initial_lr / self.final_div_factor

    @property
    def peak_step(self) -> float:
        return self.warmup_frac * self.total_steps


def _cos_interp(start: float, end: float, frac: float) -> float:
    return end + (start - end) * (1.0 + math.cos(math.pi * frac)) / 2.0


def lr_at(sched: OneCycleSchedule, step: int) -> float:
    if step < 0 or step > sched.total_steps:
        raise ValueError(f"step {step} outside [0, {sched.total_steps}]")
    peak = sched.peak_step
    if step <= peak:
        return _cos_interp(sched.initial_lr, sched.max_lr, step / peak)
    return _cos_interp(sched.max_lr, sched.min_lr, (step - peak) / (sched.total_steps - peak))


@dataclass
class SwaState:
    swa_lr: float
    averaged: list | None = None
    count: int = 0


def swa_update_and_finalize(state: SwaState, params: list[Tensor], finalize: bool = False):
    """Fold ``params`` into the running mean, or return the mean when ``finalize``."""
    if finalize:
        if state.count == 0:
            raise ContractError("SWA finalize called before any snapshot was averaged")
        return [a.copy() for a in state.averaged]
    if state.averaged is None:
        state.averaged = [np.array(p.data, dtype=np.float64) for p in params]
        state.count = 1
        return None
    if [a.shape for a in state.averaged] != [p.shape for p in params]:
        raise ContractError("SWA snapshot shapes changed between updates")
    state.count += 1
    n = state.count
    for a, p in zip(state.averaged, params):
        a += (p.data - a) / n
    return None
