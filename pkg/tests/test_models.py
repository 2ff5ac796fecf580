import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hecad import data, models, nn


def _stored(model):
    return sum(p.size for p in model.params())


# ------------------------------------------------------------- parameter counts

@pytest.mark.parametrize("tier, expected", [("iot", 271_017), ("cloud", 1_085_077)])
def test_ae_preset_counts(tier, expected):
    m = models.build_ae(models.AE_PRESETS[tier], 0)
    assert m.parameter_count() == _stored(m) == expected


def test_ae_edge_count_is_closed_form_not_table():
    m = models.build_ae(models.AE_PRESETS["edge"], 0)
    assert m.parameter_count() == 588_201
    assert models.DOCUMENTED_MISMATCHES[("univariate", "edge")] != 588_201


def test_ae_small_stack_hand_count():
    assert models.ae_parameter_count((4, 2, 4)) == 4 * 2 + 2 + 2 * 4 + 4 == 22
    assert models.build_ae(models.AeArchitecture((4, 2, 4)), 0).parameter_count() == 22


@pytest.mark.parametrize("tier, expected", [("iot", 28_518), ("edge", 97_818)])
def test_seq2seq_preset_counts(tier, expected):
    m = models.build_seq2seq(models.SEQ2SEQ_PRESETS[tier], 0)
    assert m.parameter_count() == _stored(m) == expected
    assert models.seq2seq_parameter_count(models.SEQ2SEQ_PRESETS[tier]) == expected


def test_seq2seq_cloud_reading():
    m = models.build_seq2seq(models.SEQ2SEQ_PRESETS["cloud"], 0)
    assert m.parameter_count() == _stored(m) == 275_618
    assert m.parameter_count() != models.DOCUMENTED_MISMATCHES[("multivariate", "cloud")]


def test_seq2seq_one_unit_hand_count():
    arch = models.Seq2SeqArchitecture(1, 1, 1, False, "single")
    assert models.build_seq2seq(arch, 0).parameter_count() == 4 * 3 + 4 * 3 + 2 == 26


def test_tier_counts_increase():
    for presets, build in ((models.AE_PRESETS, models.build_ae), (models.SEQ2SEQ_PRESETS, models.build_seq2seq)):
        counts = [build(presets[t], 0).parameter_count() for t in models.TIERS]
        assert counts == sorted(counts) and len(set(counts)) == 3


@pytest.mark.parametrize("sizes", [(4, 2, 3), (), (5,), (4, 0, 4)])
def test_ae_arch_rejects_bad_stacks(sizes):
    with pytest.raises(ValueError):
        models.AeArchitecture(sizes)


def test_seq2seq_arch_rejects_zero_and_mismatch():
    with pytest.raises(ValueError):
        models.Seq2SeqArchitecture(0, 4, 4)
    with pytest.raises(ValueError):
        models.Seq2SeqArchitecture(3, 4, 4, bidirectional_encoder=True)


# ----------------------------------------------------------------------- flops

def test_flops_convention():
    m = models.build_ae(models.AeArchitecture((2, 3, 2)), 0)
    # 2->3 layer: 2*(2*3)+3 = 15; 3->2 layer: 2*(3*2)+2 = 14
    assert models.estimate_flops(m) == 15 + 14
    assert "multiply-accumulate" in models.FLOP_CONVENTION


def test_flops_empty_model():
    assert models.estimate_flops(None) == 0


def test_flops_ae_iot_order_of_magnitude():
    f = models.estimate_flops(models.build_ae(models.AE_PRESETS["iot"], 0))
    assert 5.0e5 < f < 6.0e5


# -------------------------------------------------------------------- training

def _windows(x):
    return [data.Window(np.asarray(w, dtype=float), False, ("t", i)) for i, w in enumerate(x)]


def test_zero_epochs_returns_unchanged():
    m = models.build_ae(models.AeArchitecture((6, 3, 6)), 0)
    before = nn.flatten(m.params())
    det = models.train_detector(m, _windows(np.ones((2, 6))), models.TrainConfig(epochs=0))
    np.testing.assert_array_equal(nn.flatten(det.model.params()), before)
    assert det.epochs_used == 0 and det.loss_history == []


def test_ae_learns_constant_zero_windows():
    m = models.build_ae(models.AeArchitecture((8, 4, 8)), 0)
    cfg = models.default_train_config(m, epochs=200)
    det = models.train_detector(m, _windows(np.zeros((4, 8))), cfg)
    errs = models.reconstruct(det, np.zeros(8)).errors
    assert errs.mean() < 1e-3


def test_train_rejects_empty_and_labeled():
    m = models.build_ae(models.AeArchitecture((4, 2, 4)), 0)
    with pytest.raises(ValueError):
        models.train_detector(m, [])
    with pytest.raises(ValueError):
        models.train_detector(m, [data.Window(np.zeros((4, 1)), True)])


def _periodic(n, steps=12, dims=2, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(steps)
    out = []
    for _ in range(n):
        ph = rng.uniform(0, 2 * np.pi)
        out.append(np.stack([np.sin(2 * np.pi * t / 6 + ph + k) for k in range(dims)], axis=1))
    return _windows(out)


def test_seq2seq_teacher_forced_loss_halves():
    arch = models.Seq2SeqArchitecture(2, 8, 8, False, "single")
    m = models.build_seq2seq(arch, 0)
    ws = _periodic(8)
    start = m.teacher_forced_loss(ws)
    det = models.train_detector(m, ws, models.default_train_config(m, epochs=60))
    assert m.teacher_forced_loss(ws) <= 0.5 * start
    hist = det.loss_history
    assert min(hist[-50:]) <= hist[-50] + 1e-12


def test_seq2seq_constant_two_step_sequence():
    arch = models.Seq2SeqArchitecture(1, 4, 4, False, "single")
    m = models.build_seq2seq(arch, 0)
    ws = _windows([np.full((2, 1), 0.5)] * 4)
    models.train_detector(m, ws, models.default_train_config(m, epochs=300))
    assert np.mean(models.reconstruct(m, ws[0]).errors ** 2) < 1e-2


def test_seq2seq_backward_matches_finite_differences():
    arch = models.Seq2SeqArchitecture(2, 3, 6, True, "double")
    m = models.build_seq2seq(arch, 3)
    x = np.stack([w.data for w in _periodic(2, steps=5)])

    def f(theta):
        nn.unflatten_into(m.params(), theta)
        out, _ = m.teacher_forced(x)
        return float(np.mean((out - x) ** 2))

    theta = nn.flatten(m.params())
    out, cache = m.teacher_forced(x)
    grads = m.teacher_forced_backward(cache, 2 * (out - x) / out.size)
    analytic = nn.flatten(grads)
    numeric = nn.finite_diff_gradient(f, theta)
    err = np.max(np.abs(analytic - numeric)) / np.max(np.abs(numeric))
    assert err < 1e-5


# -------------------------------------------------------------- reconstruction

def test_identity_and_zero_detectors():
    ident = models.Autoencoder(models.AeArchitecture((3, 3)), [nn.Dense(np.eye(3), np.zeros(3))])
    w = np.array([1.0, -2.0, 0.5])
    np.testing.assert_array_equal(models.reconstruct(ident, w).errors, 0)
    zero = models.Autoencoder(models.AeArchitecture((3, 3)), [nn.Dense(np.zeros((3, 3)), np.zeros(3))])
    np.testing.assert_array_equal(models.reconstruct(zero, np.ones(3)).errors, 1)


def test_reconstruct_shape_mismatch():
    m = models.build_ae(models.AeArchitecture((4, 2, 4)), 0)
    with pytest.raises(nn.ShapeError):
        models.reconstruct(m, np.zeros(5))
    s = models.build_seq2seq(models.Seq2SeqArchitecture(3, 2, 2), 0)
    with pytest.raises(nn.ShapeError):
        models.reconstruct(s, np.zeros((4, 2)))


def test_reconstruct_independent_of_batch():
    m = models.build_ae(models.AeArchitecture((16, 8, 16)), 0)
    rng = np.random.default_rng(0)
    ws = [rng.normal(size=16) for _ in range(7)]
    together = models.reconstruct_many(m, ws)
    for w, r in zip(ws, together):
        np.testing.assert_array_equal(models.reconstruct(m, w).errors, r.errors)


def test_trained_ae_heldout_error_below_training_tail():
    ts = data.gen_univariate_weekly(6, (), seed=3)
    ts = data.apply_scaler(data.fit_scaler(ts), ts)
    ws = data.slide_windows(ts, data.UNIVARIATE_WINDOW)
    m = models.build_ae(models.AE_PRESETS["iot"], 0)
    det = models.train_detector(m, ws[:5], models.default_train_config(m, epochs=100))
    train_err = np.concatenate([r.errors.ravel() for r in models.reconstruct_many(det, ws[:5])])
    assert models.reconstruct(det, ws[5]).errors.mean() < np.percentile(train_err, 99)


# ---------------------------------------------------------------------- encode

def test_encode_dims():
    s = models.build_seq2seq(models.SEQ2SEQ_PRESETS["iot"], 0)
    st_ = models.encode(s, np.zeros((10, 18)))
    assert isinstance(st_, models.EncoderState) and st_.concatenated.size == 100
    a = models.build_ae(models.AE_PRESETS["iot"], 0)
    assert models.encode(a, np.zeros(672)).size == 201


def test_zero_weight_encoder_gives_zero_state():
    s = models.build_seq2seq(models.Seq2SeqArchitecture(2, 3, 3), 0)
    for p in s.params():
        p[...] = 0
    np.testing.assert_array_equal(models.encode(s, np.ones((4, 2))).concatenated, 0)


def test_encode_needs_bottleneck():
    a = models.Autoencoder(models.AeArchitecture((3, 3)), [nn.Dense(np.eye(3), np.zeros(3))])
    with pytest.raises(ValueError):
        models.encode(a, np.zeros(3))


# ----------------------------------------------------------------- checkpoints

@pytest.mark.parametrize("build, arch, x", [
    (models.build_ae, models.AeArchitecture((6, 3, 6)), np.linspace(-1, 1, 6)),
    (models.build_seq2seq, models.Seq2SeqArchitecture(2, 3, 6, True, "double"), np.ones((4, 2))),
])
def test_checkpoint_roundtrip(tmp_path, build, arch, x):
    det = models.TrainedDetector(build(arch, 5), "edge", 3, [0.3, 0.2, 0.1])
    path = tmp_path / "d.npz"
    models.save_detector(path, det)
    back = models.load_detector(path)
    assert back.tier == "edge" and back.epochs_used == 3 and back.loss_history == [0.3, 0.2, 0.1]
    np.testing.assert_array_equal(nn.flatten(back.model.params()), nn.flatten(det.model.params()))
    np.testing.assert_array_equal(models.reconstruct(back, x).output, models.reconstruct(det, x).output)


@given(st.integers(1, 5), st.integers(1, 4))
def test_symmetric_stacks_count_matches_storage(width, depth):
    half = [8] + [width + i for i in range(depth)]
    sizes = tuple(half + half[-2::-1])
    m = models.build_ae(models.AeArchitecture(sizes, dropout=0.0), 0)
    assert m.parameter_count() == _stored(m) == models.ae_parameter_count(sizes)


def test_drift_ratio():
    ae = models.build_ae(models.AeArchitecture((4, 2, 4)), 0)
    assert np.isnan(models.drift_ratio(ae, _windows(np.zeros((2, 4)))))
    s = models.build_seq2seq(models.Seq2SeqArchitecture(2, 3, 3), 0)
    assert models.drift_ratio(s, _periodic(2, steps=6)) > 0
