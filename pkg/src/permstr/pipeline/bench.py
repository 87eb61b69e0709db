"""Decode latency as a function of output length."""

from __future__ import annotations

import gc
import statistics
import time
from dataclasses import dataclass

import numpy as np

from .. import model as M
from .. import numerics as nx
from .decode import AR, DEFAULT_REFINE, NAR, decode

DEFAULT_LENGTHS = (1, 5, 9, 13, 17, 21, 25)


@dataclass
class BenchRow:
    length: int
    scheme: str
    mean_ms: float
    median_ms: float
    reps: int


def forced_length_params(cfg: M.ModelConfig, length: int, seed: int = 0) -> M.ModelParams:
    """Random weights rewired so every decode emits ``length`` characters then [E].

    Attention and MLP outputs are zeroed, so each decoder row reduces to its own
    position query.  Queries are scaled basis vectors and the head maps basis
    direction ``length`` to [E]; every other position prefers character 0.
    The amount of arithmetic per forward pass is unchanged.
    """
    if not 0 <= length <= cfg.max_len:
        raise ValueError(f"forced length {length} outside [0, {cfg.max_len}]")
    if cfg.d_model < cfg.max_len + 1:
        raise ValueError(f"d_model {cfg.d_model} too small to force lengths up to {cfg.max_len}")
    params = M.init_params(cfg, np.random.default_rng(seed))
    for name in ("dec.ctx_attn.o", "dec.img_attn.o", "dec.mlp.fc2"):
        params[f"{name}.w"].data[...] = 0
        params[f"{name}.b"].data[...] = 0
    params["dec.pos_queries"].data[...] = 4.0 * np.eye(cfg.max_len + 1, cfg.d_model)
    head_w, head_b = params["head.w"].data, params["head.b"].data
    head_w[...] = 0
    head_b[...] = 0
    head_b[0] = 1.0
    head_w[length, cfg.eos_id] = 10.0
    return params


def _time_once(z, params, cfg, scheme, refine_iters) -> float:
    t0 = time.perf_counter()
    decode(z, params, cfg, scheme, refine_iters)
    return (time.perf_counter() - t0) * 1e3


def latency_bench(
    params,
    cfg: M.ModelConfig,
    lengths=DEFAULT_LENGTHS,
    reps: int = 10,
    schemes=(AR, NAR),
    refine_iters: dict | None = None,
    seed: int = 0,
) -> list[BenchRow]:
    """Per-image decode time for each scheme and forced output length.

    ``params`` may be a callable ``length -> ModelParams`` (forced-length stubs)
    or fixed parameters, in which case the lengths only label the rows.
    Every series gets one warm-up decode. Each scheme is then timed as a
    block, with repetitions interleaved round-robin across lengths so slow
    drift hits all lengths alike. The
    garbage collector is paused while timing, as ``timeit`` does.
    """
    refine_iters = {**DEFAULT_REFINE, **(refine_iters or {})}
    rng = np.random.default_rng(seed)
    image = rng.uniform(-1, 1, size=(1, cfg.image_h, cfg.image_w, cfg.channels))
    series = []
    for length in lengths:
        p = params(length) if callable(params) else params
        with nx.no_grad():
            z = M.encode_image(image.astype(p["enc.pos"].dtype), p, cfg)
        series += [(length, scheme, z, p) for scheme in schemes]
    times = [[] for _ in series]
    enabled = gc.isenabled()
    gc.collect()
    gc.disable()
    try:
        for _, scheme, z, p in series:
            _time_once(z, p, cfg, scheme, refine_iters[scheme])
        for scheme in schemes:
            block = [(t, z, p) for t, (_, sc, z, p) in zip(times, series) if sc == scheme]
            for _ in range(reps):
                for t, z, p in block:
                    t.append(_time_once(z, p, cfg, scheme, refine_iters[scheme]))
    finally:
        if enabled:
            gc.enable()
    return [
        BenchRow(length, scheme, statistics.fmean(t), statistics.median(t), reps)
        for (length, scheme, _, _), t in zip(series, times)
    ]


def format_bench(rows: list[BenchRow]) -> str:
    lines = [f"{'length':>6}  {'scheme':<6}  {'mean_ms':>9}  {'median_ms':>9}  {'reps':>4}"]
    for r in rows:
        lines.append(f"{r.length:>6}  {r.scheme:<6}  {r.mean_ms:>9.3f}  {r.median_ms:>9.3f}  {r.reps:>4}")
    return "\n".join(lines)


def bench_records(rows: list[BenchRow]) -> list[str]:
    """Tab-separated rows: length, scheme, mean_ms, median_ms, reps."""
    return [f"{r.length}\t{r.scheme}\t{r.mean_ms:.6f}\t{r.median_ms:.6f}\t{r.reps}" for r in rows]


def linear_fit(xs, ys) -> tuple[float, float, float]:
    """Least-squares ``(slope, intercept, r2)``."""
    xs, ys = np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64)
    slope, intercept = np.polyfit(xs, ys, 1)
    resid = ys - (slope * xs + intercept)
    ss_tot = float(((ys - ys.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 0.0
    return float(slope), float(intercept), r2


def shape_summary(rows: list[BenchRow]) -> dict:
    """NAR max/min ratio and AR linear-fit statistics from the median timings."""
    out = {}
    nar = [r.median_ms for r in rows if r.scheme == NAR]
    if nar:
        out["nar_ratio"] = max(nar) / min(nar)
    ar = [(r.length, r.median_ms) for r in rows if r.scheme == AR]
    if len(ar) >= 2:
        slope, _, r2 = linear_fit(*zip(*ar))
        out["ar_slope_ms"] = slope
        out["ar_r2"] = r2
    return out
