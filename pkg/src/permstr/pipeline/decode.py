"""Greedy AR, NAR, and cloze-refinement decoding."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .. import model as M
from .. import numerics as nx
from ..permute import apply_context_restrictions, cloze_mask, ltr_mask, nar_mask
from ..textcodec import FULL_CHARSET, Charset, TokenCodec, decode_ids

AR, NAR = "ar", "nar"
DEFAULT_REFINE = {AR: 1, NAR: 2}


@dataclass
class DecodeResult:
    ids: np.ndarray  # (T+1,) argmax ids per output position
    text: str
    confidences: np.ndarray  # max softmax probability per emitted position (chars, then [E])
    scheme: str
    refine_iters: int
    latency_ms: float
    log_probs: np.ndarray  # (T+1, S+1) restricted log-softmax of the last pass

    @property
    def confidence(self) -> float:
        return float(np.prod(self.confidences))


def _restricted_log_probs(logits: np.ndarray, cfg: M.ModelConfig, charset_size: int | None) -> np.ndarray:
    logits = np.array(logits, dtype=np.float64)
    if charset_size is not None and charset_size < cfg.charset_size:
        logits[..., charset_size : cfg.charset_size] = -np.inf
    return nx.log_softmax_np(logits)


def _codec(cfg: M.ModelConfig) -> TokenCodec:
    # the head covers a prefix of the canonical ordering; any prefix length decodes
    return TokenCodec(Charset(FULL_CHARSET[: cfg.charset_size]), cfg.max_len)


def _finish(ids, logp, cfg, scheme, refine_iters, latency_ms) -> DecodeResult:
    codec = _codec(cfg)
    t = cfg.max_len
    eos = np.nonzero(ids == cfg.eos_id)[0]
    stop = int(eos[0]) if eos.size and eos[0] <= t else None
    text = decode_ids(ids[: t if stop is None else stop], codec)
    n_emit = t if stop is None else stop + 1
    conf = np.exp(logp[np.arange(n_emit), ids[:n_emit]])
    return DecodeResult(ids.copy(), text, conf, scheme, refine_iters, latency_ms, logp)


def _contexts_from(results, cfg) -> np.ndarray:
    """[B] followed by each previous output truncated at [E], pad-filled."""
    ctx = np.full((len(results), cfg.max_len + 1), cfg.pad_id, dtype=np.int64)
    ctx[:, 0] = cfg.bos_id
    for b, r in enumerate(results):
        n = len(r.text)
        ctx[b, 1 : n + 1] = r.ids[:n]
    return ctx


def _feature_batch(z) -> nx.Tensor:
    return z if isinstance(z, nx.Tensor) else nx.Tensor._wrap(np.asarray(z))


def refine(z, prev: list[DecodeResult], params, cfg, charset_size: int | None = None) -> list[DecodeResult]:
    """One cloze pass using each previous output as context."""
    z = _feature_batch(z)
    t0 = time.perf_counter()
    ctx = _contexts_from(prev, cfg)
    masks = apply_context_restrictions(np.broadcast_to(cloze_mask(cfg.max_len), (len(prev),) + (cfg.max_len + 1,) * 2), ctx, cfg.eos_id, cfg.pad_id)
    with nx.no_grad():
        logits = M.decoder_forward(z, ctx, masks, params, cfg).data
    logp = _restricted_log_probs(logits, cfg, charset_size)
    ids = logp.argmax(axis=-1)
    per = (time.perf_counter() - t0) * 1e3 / len(prev)
    return [
        _finish(ids[b], logp[b], cfg, p.scheme, p.refine_iters + 1, p.latency_ms + per)
        for b, p in enumerate(prev)
    ]


def _refine_n(z, results, params, cfg, n, charset_size):
    for _ in range(n):
        results = refine(z, results, params, cfg, charset_size)
    return results


def decode_nar(z, params, cfg, refine_iters: int = DEFAULT_REFINE[NAR], charset_size: int | None = None) -> list[DecodeResult]:
    """All positions at once with only [B] as context, then ``refine_iters`` cloze passes."""
    z = _feature_batch(z)
    b, n = z.shape[0], cfg.max_len + 1
    t0 = time.perf_counter()
    ctx = np.full((b, n), cfg.pad_id, dtype=np.int64)
    ctx[:, 0] = cfg.bos_id
    masks = apply_context_restrictions(np.broadcast_to(nar_mask(cfg.max_len), (b, n, n)), ctx, cfg.eos_id, cfg.pad_id)
    with nx.no_grad():
        logits = M.decoder_forward(z, ctx, masks, params, cfg).data
    logp = _restricted_log_probs(logits, cfg, charset_size)
    ids = logp.argmax(axis=-1)
    per = (time.perf_counter() - t0) * 1e3 / b
    results = [_finish(ids[i], logp[i], cfg, NAR, 0, per) for i in range(b)]
    return _refine_n(z, results, params, cfg, refine_iters, charset_size)


def decode_ar(z, params, cfg, refine_iters: int = DEFAULT_REFINE[AR], charset_size: int | None = None) -> list[DecodeResult]:
    """One new token per step under the left-to-right mask, then ``refine_iters`` cloze passes.

    Step ``i`` queries position token ``i`` only: rows of the decoder never
    interact, so recomputing earlier rows would reproduce the same logits.
    """
    z = _feature_batch(z)
    b, n = z.shape[0], cfg.max_len + 1
    t0 = time.perf_counter()
    ctx = np.full((b, n), cfg.pad_id, dtype=np.int64)
    ctx[:, 0] = cfg.bos_id
    ids = np.full((b, n), cfg.pad_id, dtype=np.int64)
    logp = np.zeros((b, n, cfg.num_classes))
    lookahead = ltr_mask(cfg.max_len)
    done = np.zeros(b, dtype=bool)
    with nx.no_grad():
        for i in range(n):
            row = np.broadcast_to(lookahead[i : i + 1], (b, 1, n))
            masks = apply_context_restrictions(row, ctx, cfg.eos_id, cfg.pad_id)
            logits = M.decoder_forward(z, ctx, masks, params, cfg, query_pos=[i]).data
            step = _restricted_log_probs(logits[:, 0], cfg, charset_size)
            tok = step.argmax(axis=-1)
            logp[:, i] = step
            ids[:, i] = tok
            done |= tok == cfg.eos_id
            if done.all():
                break
            if i + 1 < n:
                ctx[:, i + 1] = tok
    per = (time.perf_counter() - t0) * 1e3 / b
    results = [_finish(ids[k], logp[k], cfg, AR, 0, per) for k in range(b)]
    return _refine_n(z, results, params, cfg, refine_iters, charset_size)


def decode(z, params, cfg, scheme: str = AR, refine_iters: int | None = None, charset_size: int | None = None):
    if scheme not in DEFAULT_REFINE:
        raise ValueError(f"unknown decode scheme {scheme!r}")
    if refine_iters is None:
        refine_iters = DEFAULT_REFINE[scheme]
    fn = decode_ar if scheme == AR else decode_nar
    return fn(z, params, cfg, refine_iters, charset_size)


def cloze_from_truth(z, labels: list[str], params, cfg, charset_size: int | None = None) -> list[DecodeResult]:
    """A single refinement pass seeded with the ground-truth labels."""
    codec = _codec(cfg)
    seeds = []
    for lab in labels:
        ids = np.full(cfg.max_len + 1, cfg.pad_id, dtype=np.int64)
        ids[: len(lab)] = [codec.charset.index[c] for c in lab]
        ids[len(lab)] = cfg.eos_id
        seeds.append(DecodeResult(ids, lab, np.ones(len(lab) + 1), "truth", 0, 0.0, np.zeros((0, 0))))
    return refine(z, seeds, params, cfg, charset_size)
