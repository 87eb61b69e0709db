import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import metrics_bruteforce, sequential_loglik, tiny_cfg

from permstr import model as M
from permstr import numerics as nx
from permstr.permute import INTERIOR, LTR, RTL, apply_context_restrictions, ltr_mask, mask_from_permutation
from permstr.pipeline import bench as B
from permstr.pipeline.data import load_dataset, load_sample, read_manifest, write_manifest
from permstr.pipeline.decode import cloze_from_truth, decode, decode_ar, decode_nar, refine
from permstr.pipeline.imageio import DataError, read_pnm, to_model_input, write_pnm
from permstr.pipeline.loss import plm_loss
from permstr.pipeline.metrics import compute_metrics, normalized_edit_distance
from permstr.pipeline.synth import GenerationError, glyph, render_synthetic
from permstr.textcodec import FULL_CHARSET, TokenCodec, charset_slice, encode_label, preprocess_label


def _batch(cfg, rng, n=4, lengths=None):
    codec_chars = np.arange(cfg.charset_size)
    lengths = lengths or [int(v) for v in rng.integers(1, cfg.max_len + 1, size=n)]
    ctx = np.full((len(lengths), cfg.max_len + 1), cfg.pad_id)
    tgt = np.full_like(ctx, cfg.pad_id)
    ctx[:, 0] = cfg.bos_id
    for b, L in enumerate(lengths):
        ids = rng.choice(codec_chars, size=L)
        ctx[b, 1 : L + 1] = ids
        tgt[b, :L] = ids
        tgt[b, L] = cfg.eos_id
    images = rng.uniform(-1, 1, size=(len(lengths), cfg.image_h, cfg.image_w, cfg.channels))
    return images, ctx, tgt, np.array(lengths)


@pytest.fixture
def tiny():
    cfg = tiny_cfg()
    params = M.init_params(cfg, np.random.default_rng(0), dtype=np.float64)
    return cfg, params


def ar_cross_entropy(z, ctx, tgt, params, cfg):
    """Left-to-right teacher forcing under a lower-triangular mask."""
    n = cfg.max_len + 1
    causal = np.tril(np.ones((n, n), dtype=bool))
    mask = apply_context_restrictions(np.broadcast_to(causal, (len(ctx), n, n)), ctx, cfg.eos_id, cfg.pad_id)
    logits = M.decoder_forward(z, ctx, mask, params, cfg)
    return nx.masked_cross_entropy(nx.reshape(logits, (-1, cfg.num_classes)), tgt.reshape(-1), cfg.pad_id)


def test_plm_k1_equals_ar_loss(tiny):
    cfg, params = tiny
    rng = np.random.default_rng(1)
    for _ in range(3):
        images, ctx, tgt, lengths = _batch(cfg, rng)
        z = M.encode_image(images, params, cfg)
        perms = [tuple(range(1, int(lengths.max()) + 1))]
        assert plm_loss(z, ctx, tgt, perms, params, cfg).item() == ar_cross_entropy(z, ctx, tgt, params, cfg).item()


def test_plm_k2_is_mean_of_directions(tiny):
    cfg, params = tiny
    images, ctx, tgt, lengths = _batch(cfg, np.random.default_rng(2))
    z = M.encode_image(images, params, cfg)
    t = int(lengths.max())
    fwd, rev = tuple(range(1, t + 1)), tuple(range(t, 0, -1))
    both = plm_loss(z, ctx, tgt, [fwd, rev], params, cfg).item()
    a = plm_loss(z, ctx, tgt, [fwd], params, cfg, roles=[LTR]).item()
    b = plm_loss(z, ctx, tgt, [rev], params, cfg, roles=[RTL]).item()
    assert both == pytest.approx((a + b) / 2, rel=1e-12)


def test_plm_uniform_head_gives_log_classes(tiny):
    cfg, params = tiny
    params["head.w"].data[...] = 0
    images, ctx, tgt, lengths = _batch(cfg, np.random.default_rng(3))
    z = M.encode_image(images, params, cfg)
    perms = [(1, 2, 3, 4), (2, 1, 4, 3), (4, 3, 2, 1), (3, 4, 1, 2)]
    loss = plm_loss(z, ctx, tgt, perms, params, cfg).item()
    assert loss == pytest.approx(math.log(cfg.charset_size + 1), rel=1e-12)


def test_plm_interior_skips_eos(tiny):
    cfg, params = tiny
    images, ctx, tgt, _ = _batch(cfg, np.random.default_rng(4), lengths=[4, 4])
    z = M.encode_image(images, params, cfg)
    perm = [(2, 1, 4, 3)]
    interior = plm_loss(z, ctx, tgt, perm, params, cfg, roles=[INTERIOR]).item()
    mask = apply_context_restrictions(np.broadcast_to(mask_from_permutation(perm[0]), (2, 5, 5)), ctx, cfg.eos_id, cfg.pad_id)
    logits = M.decoder_forward(z, ctx, mask, params, cfg).data
    lp = logits - np.log(np.exp(logits).sum(-1, keepdims=True))
    expected = -np.mean([lp[b, i, tgt[b, i]] for b in range(2) for i in range(4)])
    assert interior == pytest.approx(expected, rel=1e-10)


def test_plm_gradient_finite(tiny):
    cfg, params = tiny
    images, ctx, tgt, lengths = _batch(cfg, np.random.default_rng(5))
    z = M.encode_image(images, params, cfg)
    loss = plm_loss(z, ctx, tgt, [(1, 2, 3, 4), (4, 3, 2, 1)], params, cfg)
    nx.backward(loss)
    assert all(np.isfinite(t.grad).all() for t in params.values())


@pytest.mark.parametrize("perm", [(1, 2, 3, 4), (3, 1, 4, 2), (4, 3, 2, 1), (2, 4, 1, 3)])
def test_factorization_consistency(tiny, perm):
    cfg, params = tiny
    images, ctx, tgt, _ = _batch(cfg, np.random.default_rng(6), lengths=[4])
    z = M.encode_image(images, params, cfg)
    mask = mask_from_permutation(perm, INTERIOR)
    logits = M.decoder_forward(z, ctx, mask, params, cfg).data[0]
    lp = logits - np.log(np.exp(logits).sum(-1, keepdims=True))
    single = float(sum(lp[i, tgt[0, i]] for i in range(5)))
    assert single == pytest.approx(sequential_loglik(z, ctx, tgt, perm, params, cfg), abs=1e-6)


class CallCounter:
    def __init__(self, monkeypatch):
        self.calls = 0
        real = M.decoder_forward

        def wrapped(*a, **kw):
            self.calls += 1
            return real(*a, **kw)

        monkeypatch.setattr(M, "decoder_forward", wrapped)


def _stub(length, max_len=8):
    cfg = M.ModelConfig(max_len=max_len, d_model=16, d_mlp=32, dropout_p=0.0)
    params = B.forced_length_params(cfg, length)
    z = M.encode_image(np.zeros((2, cfg.image_h, cfg.image_w, 1), np.float32), params, cfg)
    return cfg, params, z


@pytest.mark.parametrize("refine_iters", [0, 1, 3])
def test_nar_call_count(monkeypatch, refine_iters):
    cfg, params, z = _stub(3)
    counter = CallCounter(monkeypatch)
    decode_nar(z, params, cfg, refine_iters)
    assert counter.calls == 1 + refine_iters


@pytest.mark.parametrize("length", [0, 2, 8])
def test_ar_stops_at_eos(monkeypatch, length):
    cfg, params, z = _stub(length)
    counter = CallCounter(monkeypatch)
    out = decode_ar(z, params, cfg, refine_iters=1)
    assert counter.calls == length + 1 + 1
    assert [r.text for r in out] == ["0" * length] * 2


def test_forced_stub_outputs_and_confidence():
    cfg, params, z = _stub(5)
    for r in decode(z, params, cfg, "nar", 0) + decode(z, params, cfg, "ar", 0):
        assert r.text == "00000"
        assert len(r.confidences) == 6
        assert 0 < r.confidence <= 1 and r.confidence == pytest.approx(np.prod(r.confidences))


def test_ar_idempotent_under_teacher_forcing(tiny):
    cfg, params = tiny
    images = np.random.default_rng(7).uniform(-1, 1, size=(6, cfg.image_h, cfg.image_w, 1))
    z = M.encode_image(images, params, cfg)
    results = decode_ar(z, params, cfg, refine_iters=0)
    for b, r in enumerate(results):
        n = len(r.text)
        ctx = np.full((1, cfg.max_len + 1), cfg.pad_id)
        ctx[0, 0] = cfg.bos_id
        ctx[0, 1 : n + 1] = r.ids[:n]
        mask = apply_context_restrictions(ltr_mask(cfg.max_len)[None], ctx, cfg.eos_id, cfg.pad_id)
        logits = M.decoder_forward(nx.Tensor._wrap(z.data[b : b + 1]), ctx, mask, params, cfg).data[0]
        stop = min(n + 1, cfg.max_len + 1)
        np.testing.assert_array_equal(logits[:stop].argmax(-1), r.ids[:stop])


def test_charset_restriction_never_leaks():
    cfg = M.ModelConfig(charset_size=94, d_model=16, d_mlp=32)
    params = M.init_params(cfg, np.random.default_rng(8))
    params["head.b"].data[36:94] = 5.0  # strongly prefer upper case and punctuation
    z = M.encode_image(np.random.default_rng(9).uniform(-1, 1, (5, 16, 64, 1)), params, cfg)
    for scheme in ("ar", "nar"):
        for r in decode(z, params, cfg, scheme, charset_size=36):
            assert set(r.text) <= set(FULL_CHARSET[:36])
        assert any(set(r.text) - set(FULL_CHARSET[:36]) for r in decode(z, params, cfg, scheme, 0))


def test_refine_of_empty_prediction_is_nar_like():
    cfg, params, z = _stub(4)
    nar = decode_nar(z, params, cfg, 0)
    empty = [r.__class__(np.full(cfg.max_len + 1, cfg.eos_id), "", np.ones(1), "nar", 0, 0.0, None) for r in nar]
    out = refine(z, empty, params, cfg)
    assert [r.text for r in out] == [r.text for r in nar]
    assert all(r.refine_iters == 1 for r in out)


def test_cloze_from_truth_shape(tiny):
    cfg, params = tiny
    z = M.encode_image(np.zeros((2, cfg.image_h, cfg.image_w, 1)), params, cfg)
    out = cloze_from_truth(z, ["01", "4"], params, cfg)
    assert len(out) == 2 and all(isinstance(r.text, str) for r in out)


def test_decode_unknown_scheme(tiny):
    cfg, params = tiny
    z = M.encode_image(np.zeros((1, cfg.image_h, cfg.image_w, 1)), params, cfg)
    with pytest.raises(ValueError):
        decode(z, params, cfg, "beam")


# metrics


def test_metric_examples():
    r = compute_metrics(["abc", "x"], ["abc", "x"])
    assert (r.word_accuracy, r.one_minus_ned) == (1.0, 1.0)
    r = compute_metrics(["abc"], ["abd"])
    assert r.word_accuracy == 0 and r.one_minus_ned == pytest.approx(2 / 3)
    assert compute_metrics([""], ["a"]).one_minus_ned == 0.0
    assert normalized_edit_distance("", "") == 0.0
    with pytest.raises(ValueError):
        compute_metrics(["a"], [])


@settings(max_examples=200)
@given(st.lists(st.tuples(st.text("abc", max_size=6), st.text("abc", max_size=6)), min_size=1, max_size=8))
def test_metrics_match_bruteforce(pairs):
    preds, gts = zip(*pairs)
    r = compute_metrics(list(preds), list(gts))
    assert (r.word_accuracy, r.one_minus_ned) == metrics_bruteforce(preds, gts)


def test_report_formats():
    from permstr.pipeline.metrics import SampleRecord

    r = compute_metrics(["a"], ["b"])
    r.samples = [SampleRecord("a", "b", 0.5, 1.0)]
    assert "word accuracy" in r.summary()
    assert r.records() == ['{"prediction": "a", "ground_truth": "b", "confidence": 0.5, "latency_ms": 1.0}']


# images and data


def test_pnm_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    grey = rng.integers(0, 256, size=(5, 7, 1), dtype=np.uint8)
    rgb = rng.integers(0, 256, size=(3, 4, 3), dtype=np.uint8)
    write_pnm(tmp_path / "g.pgm", grey)
    write_pnm(tmp_path / "c.ppm", rgb)
    np.testing.assert_array_equal(read_pnm(tmp_path / "g.pgm"), grey)
    np.testing.assert_array_equal(read_pnm(tmp_path / "c.ppm"), rgb)


def test_pnm_header_comments_and_maxval(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n2 1\n15\n\x00\x0f")
    np.testing.assert_array_equal(read_pnm(p)[:, :, 0], [[0, 255]])


@pytest.mark.parametrize("payload", [b"P2\n1 1\n255\n0", b"P5\n2 2\n255\n\x00", b"", b"P5\n1 1\n65535\n\x00\x00"])
def test_pnm_rejects_bad_files(tmp_path, payload):
    p = tmp_path / "bad.pgm"
    p.write_bytes(payload)
    with pytest.raises(DataError, match="bad.pgm"):
        read_pnm(p)


def test_normalization_endpoints():
    img = np.array([[[0], [255], [128]]], dtype=np.uint8)
    x = to_model_input(img, 3, 1, 1)
    assert x[0, 0, 0] == -1.0 and x[0, 1, 0] == 1.0
    assert x[0, 2, 0] == np.float32(2 * 128 / 255 - 1)


def test_resize_constant_and_channels():
    x = to_model_input(np.full((1, 1, 1), 77, np.uint8), 128, 32, 3)
    assert x.shape == (32, 128, 3)
    assert np.all(x == np.float32(2 * 77 / 255 - 1))


def test_load_sample_and_skips(tmp_path, caplog):
    write_pnm(tmp_path / "a.pgm", np.full((16, 64), 200, np.uint8))
    write_manifest(tmp_path / "manifest.tsv", [("a.pgm", "Ab C"), ("a.pgm", "!!!"), ("a.pgm", "toolongforit")])
    cfg = M.ModelConfig()
    manifest = read_manifest(tmp_path)
    x, label = load_sample(manifest.rows[0], manifest.base_dir, cfg)
    assert x.shape == (16, 64, 1) and label == "abc"
    with caplog.at_level(logging.WARNING):
        data = load_dataset(manifest, cfg, TokenCodec(charset_slice(36), cfg.max_len))
    assert data.labels == ["abc"] and data.skipped == 2
    assert "skipped 2" in caplog.text


def test_manifest_missing_image(tmp_path):
    (tmp_path / "manifest.tsv").write_text("missing.pgm\tabc\n")
    with pytest.raises(DataError, match="missing.pgm"):
        read_manifest(tmp_path)


# synthetic corpus


def test_synth_deterministic(tmp_path):
    cs = charset_slice(94)
    a = render_synthetic(12, np.random.default_rng(4), tmp_path / "a", charset=cs)
    b = render_synthetic(12, np.random.default_rng(4), tmp_path / "b", charset=cs)
    assert len(a) == 12 and a.rows == b.rows
    for rel, _ in a.rows:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    assert (tmp_path / "a" / "manifest.tsv").read_bytes() == (tmp_path / "b" / "manifest.tsv").read_bytes()
    for _, label in a.rows:
        assert preprocess_label(label, cs, 8) == label


def test_glyphs_distinct():
    bitmaps = {glyph(c).tobytes() for c in FULL_CHARSET}
    assert len(bitmaps) == 94
    with pytest.raises(GenerationError):
        glyph("é")


def test_synth_rejects_unfit(tmp_path):
    with pytest.raises(GenerationError):
        render_synthetic(["x" * 20], np.random.default_rng(0), tmp_path, width=64, height=16)


def test_synth_labels_encode(tmp_path):
    m = render_synthetic(8, np.random.default_rng(2), tmp_path, charset=charset_slice(36), max_len=8)
    codec = TokenCodec(charset_slice(36), 8)
    for _, label in m.rows:
        assert encode_label(label, codec).length == len(label)


# latency bench


def test_bench_rows_and_summary():
    cfg = M.ModelConfig(max_len=9, d_model=16, d_mlp=32)
    rows = B.latency_bench(lambda n: B.forced_length_params(cfg, n), cfg, (1, 5, 9), reps=2)
    assert [(r.length, r.scheme) for r in rows] == [(1, "ar"), (1, "nar"), (5, "ar"), (5, "nar"), (9, "ar"), (9, "nar")]
    assert all(r.mean_ms > 0 for r in rows)
    s = B.shape_summary(rows)
    assert set(s) == {"nar_ratio", "ar_slope_ms", "ar_r2"}
    assert len(B.format_bench(rows).splitlines()) == 7
    assert B.bench_records(rows)[0].split("\t")[:2] == ["1", "ar"]


def test_linear_fit_exact():
    slope, intercept, r2 = B.linear_fit([1, 2, 3], [3, 5, 7])
    assert (round(slope, 12), round(intercept, 12), r2) == (2.0, 1.0, 1.0)


def test_forced_length_bounds():
    with pytest.raises(ValueError):
        B.forced_length_params(M.ModelConfig(max_len=8, d_model=16, d_mlp=32), 9)


# training loop


@pytest.fixture
def small_corpus(tmp_path):
    render_synthetic(16, np.random.default_rng(3), tmp_path, charset=charset_slice(36))
    cfg = M.ModelConfig()
    return load_dataset(read_manifest(tmp_path), cfg, TokenCodec(charset_slice(36), cfg.max_len))


def test_train_seed_reproducible_and_learns(small_corpus):
    from permstr.pipeline.train import TrainConfig, init_state, train_step

    cfg = TrainConfig(total_steps=200, batch_size=16, seed=4)
    runs = []
    for _ in range(2):
        state = init_state(cfg)
        runs.append([train_step(small_corpus.batch(np.arange(16)), state) for _ in range(200)])
    assert runs[0] == runs[1]
    assert runs[0][-1] < runs[0][0]


def test_train_loop_logs_and_averages(small_corpus):
    from permstr.pipeline.train import TrainConfig, train_loop

    lines = []
    cfg = TrainConfig(total_steps=12, batch_size=8, seed=1, swa_every=2, val_every=4)
    res = train_loop(cfg, small_corpus, log=lines.append)
    assert [line.split()[0] for line in lines] == ["4", "8", "12"]
    assert all(len(line.split()) == 4 for line in lines)
    assert res.swa_start == 9 and res.swa_count == 3  # steps 9, 11, 12
    assert not np.array_equal(res.params["head.w"].data, res.last_params["head.w"].data)


def test_train_lr_follows_schedule_then_swa():
    from permstr.pipeline.train import TrainConfig, init_state
    from permstr.optim import lr_at

    cfg = TrainConfig(total_steps=100)
    state = init_state(cfg)
    assert state.lr() == lr_at(cfg.schedule(), 0)
    state.step = 75
    assert state.lr() == cfg.max_lr / 20


def test_non_finite_loss_aborts(small_corpus):
    from permstr.pipeline.train import TrainConfig, TrainingError, init_state, train_step

    state = init_state(TrainConfig(batch_size=4))
    state.params["head.b"].data[0] = np.inf
    with pytest.raises(TrainingError, match="step 0"):
        train_step(small_corpus.batch(np.arange(4)), state)
