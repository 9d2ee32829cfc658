import math

import numpy as np
import pytest

from trailnav.labels import Category, SoftLabel3
from trailnav.loss import LossConfig
from trailnav.perception import (
    EMBED_DIM,
    Head,
    OptimizerConfig,
    OracleParams,
    SyntheticDataset,
    TrainingDivergedError,
    TwoHeadModel,
    accuracy,
    embed_state,
    embedding_matrix,
    export_dataset_csv,
    init_model,
    load_dataset_csv,
    load_model,
    make_synthetic_dataset,
    mean_winning_probability,
    model_forward,
    model_predict,
    oracle_predict,
    save_model,
    split_dataset,
    train_stage,
    value_to_category,
    vo_only,
)
from trailnav.trail import RelativeState


def kernel_probs(value: float, anchors, sigma: float) -> np.ndarray:
    # Independent reference: explicit Gaussian scoring + softmax over
    # the anchors in increasing order.
    scores = np.array([-((value - a) ** 2) / (2.0 * sigma**2) for a in anchors])
    e = np.exp(scores - scores.max())
    return e / e.sum()


def test_oracle_centered_state():
    est = oracle_predict(RelativeState(0.0, 0.0, 0.0), OracleParams())
    ref = kernel_probs(0.0, (-math.pi / 6, 0.0, math.pi / 6), math.pi / 12)
    assert est.vo.p_center == pytest.approx(ref[1], abs=1e-12)
    assert est.vo.p_left == pytest.approx(ref[0], abs=1e-12)
    assert est.vo.p_left == est.vo.p_right
    # Frozen values of the reference computation itself.
    assert est.vo.p_center == pytest.approx(0.7869860421615985, abs=1e-9)
    assert est.vo.p_left == pytest.approx(0.10650697891920075, abs=1e-9)
    assert est.lo.p_center == pytest.approx(0.7869860421615985, abs=1e-9)


def test_oracle_facing_left_puts_mass_on_left():
    # Heading error +30 degrees means aimed left of the trail, which is
    # exactly the left category's anchor.
    est = oracle_predict(RelativeState(0.0, 0.0, math.pi / 6.0), OracleParams())
    ref = kernel_probs(math.pi / 6.0, (-math.pi / 6, 0.0, math.pi / 6), math.pi / 12)
    assert est.vo.p_left == pytest.approx(ref[2], abs=1e-12)
    assert est.vo.p_center == pytest.approx(ref[1], abs=1e-12)
    assert est.vo.p_right == pytest.approx(ref[0], abs=1e-12)
    assert est.vo.p_left == pytest.approx(0.8805369017749616, abs=1e-9)
    assert est.vo.p_center == pytest.approx(0.11916771100200385, abs=1e-9)
    assert est.vo.p_right == pytest.approx(0.00029538722303456454, abs=1e-9)
    assert est.vo.argmax() is Category.LEFT


def test_oracle_offset_left_puts_mass_on_left():
    est = oracle_predict(RelativeState(0.0, 0.5, 0.0), OracleParams())
    assert est.lo.argmax() is Category.LEFT
    est = oracle_predict(RelativeState(0.0, -0.5, 0.0), OracleParams())
    assert est.lo.argmax() is Category.RIGHT


def test_oracle_mirror_symmetry():
    rng = np.random.default_rng(30)
    params = OracleParams()
    for _ in range(300):
        rel = RelativeState(0.0, rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0))
        a = oracle_predict(rel, params)
        b = oracle_predict(rel.mirrored(), params)
        assert b.vo.p_left == pytest.approx(a.vo.p_right, abs=1e-12)
        assert b.vo.p_center == pytest.approx(a.vo.p_center, abs=1e-12)
        assert b.lo.p_left == pytest.approx(a.lo.p_right, abs=1e-12)


def test_oracle_sigma_limits():
    sharp = OracleParams(sigma_vo=0.01, sigma_lo=0.01)
    wide = OracleParams(sigma_vo=50.0, sigma_lo=50.0)
    rel = RelativeState(0.0, 0.5, math.pi / 6.0)
    assert oracle_predict(rel, sharp).vo.p_left > 0.999
    flat = oracle_predict(rel, wide).vo
    assert abs(flat.p_left - 1.0 / 3.0) < 1e-3


def test_oracle_noise_requires_rng_and_is_seeded():
    params = OracleParams(label_noise=0.5)
    rel = RelativeState(0.0, 0.1, 0.1)
    with pytest.raises(ValueError):
        oracle_predict(rel, params)
    a = oracle_predict(rel, params, np.random.default_rng(7))
    b = oracle_predict(rel, params, np.random.default_rng(7))
    c = oracle_predict(rel, params, np.random.default_rng(8))
    assert a.vo == b.vo and a.lo == b.lo
    assert a.vo != c.vo


def test_oracle_params_validation():
    with pytest.raises(ValueError):
        OracleParams(vo_anchors=(0.3, 0.0, -0.3))
    with pytest.raises(ValueError):
        OracleParams(sigma_vo=0.0)
    with pytest.raises(ValueError):
        OracleParams(label_noise=-0.1)


def test_value_to_category():
    p = OracleParams()
    assert value_to_category(0.3, p.vo_anchors) is Category.LEFT
    assert value_to_category(-0.4, p.vo_anchors) is Category.RIGHT
    assert value_to_category(0.0, p.vo_anchors) is Category.CENTER
    assert value_to_category(0.6, p.lo_anchors) is Category.LEFT


def test_vo_only_flattens_offset_head():
    est = oracle_predict(RelativeState(0.0, 0.6, 0.2), OracleParams(), timestamp=1.5)
    deg = vo_only(est)
    assert deg.lo == SoftLabel3.uniform()
    assert deg.vo == est.vo
    assert deg.timestamp == 1.5


def test_embedding_is_injective():
    # Noiseless features recover the state through the pseudo-inverse.
    E = embedding_matrix()
    assert np.linalg.matrix_rank(E) == 2
    pinv = np.linalg.pinv(E)
    rng = np.random.default_rng(31)
    for _ in range(100):
        d, psi = rng.uniform(-1.0, 1.0, 2)
        v = pinv @ embed_state(d, psi)
        assert np.allclose(v, [d, psi], atol=1e-9)


def test_embed_noise_requires_rng():
    with pytest.raises(ValueError):
        embed_state(0.1, 0.1, noise_std=0.1)


def test_dataset_balance_and_determinism():
    for kind in ("orientation_only", "offset_only", "joint"):
        ds = make_synthetic_dataset(kind, 1000, np.random.default_rng(5))
        labels = ds.vo_labels if kind != "offset_only" else ds.lo_labels
        counts = np.bincount(labels, minlength=3)
        assert np.all(np.abs(counts - 1000 / 3) <= 0.2 * 1000 / 3)
        again = make_synthetic_dataset(kind, 1000, np.random.default_rng(5))
        assert np.array_equal(ds.features, again.features)
        assert np.array_equal(ds.vo_labels, again.vo_labels)


def test_dataset_labels_match_recovered_values():
    # Recover (offset, heading) from noiseless features and confirm the
    # stored labels are the nearest-anchor classes of those values.
    p = OracleParams()
    ds = make_synthetic_dataset("joint", 300, np.random.default_rng(6), noise_std=0.0)
    pinv = np.linalg.pinv(embedding_matrix())
    for i in range(len(ds)):
        d, psi = pinv @ ds.features[i]
        assert int(value_to_category(psi, p.vo_anchors)) == ds.vo_labels[i]
        assert int(value_to_category(d, p.lo_anchors)) == ds.lo_labels[i]


def test_orientation_only_pins_offset():
    ds = make_synthetic_dataset("orientation_only", 300, np.random.default_rng(7), noise_std=0.0)
    pinv = np.linalg.pinv(embedding_matrix())
    offsets = ds.features @ pinv.T[:, 0]
    assert np.allclose(offsets, 0.0, atol=1e-9)
    assert np.all(ds.lo_labels == int(Category.CENTER))


def test_dataset_kind_validation():
    with pytest.raises(ValueError):
        make_synthetic_dataset("bogus", 10, np.random.default_rng(0))
    with pytest.raises(ValueError):
        make_synthetic_dataset("joint", 0, np.random.default_rng(0))


def test_split_dataset():
    ds = make_synthetic_dataset("joint", 500, np.random.default_rng(8))
    train, hold = split_dataset(ds, 0.2, np.random.default_rng(9))
    assert len(train) == 400 and len(hold) == 100
    # Same split under the same seed.
    t2, h2 = split_dataset(ds, 0.2, np.random.default_rng(9))
    assert np.array_equal(train.features, t2.features)
    assert np.array_equal(hold.features, h2.features)


def test_dataset_csv_round_trip(tmp_path):
    ds = make_synthetic_dataset("joint", 50, np.random.default_rng(10))
    path = tmp_path / "ds.csv"
    export_dataset_csv(ds, path)
    back = load_dataset_csv(path)
    assert np.array_equal(back.features, ds.features)
    assert np.array_equal(back.vo_labels, ds.vo_labels)
    assert np.array_equal(back.lo_labels, ds.lo_labels)
    bad = tmp_path / "bad.csv"
    bad.write_text("nope\n")
    with pytest.raises(ValueError):
        load_dataset_csv(bad)


def test_zero_model_predicts_uniform():
    h = 32
    model = TwoHeadModel(
        np.zeros((EMBED_DIM, h)), np.zeros(h),
        np.zeros((h, 3)), np.zeros(3), np.zeros((h, 3)), np.zeros(3),
    )
    est = model_predict(model, np.ones(EMBED_DIM), timestamp=2.0)
    assert est.vo == SoftLabel3.uniform()
    assert est.lo == SoftLabel3.uniform()
    assert est.timestamp == 2.0


def test_forward_batch_matches_single():
    model = init_model(np.random.default_rng(11))
    X = np.random.default_rng(12).normal(0.0, 1.0, (5, EMBED_DIM))
    zv, zl = model_forward(model, X)
    for i in range(5):
        # Batched and single-row matmuls take different BLAS paths, so
        # agreement is to rounding, not bit-exact.
        zvi, zli = model_forward(model, X[i])
        assert np.allclose(zv[i], zvi[0], atol=1e-12, rtol=0.0)
        assert np.allclose(zl[i], zli[0], atol=1e-12, rtol=0.0)


def test_training_improves_and_history_is_monotone():
    rng = np.random.default_rng(0)
    ds = make_synthetic_dataset("orientation_only", 1500, rng)
    train, hold = split_dataset(ds, 0.2, rng)
    model = init_model(rng)
    trained, history = train_stage(
        model, train, Head.VO,
        LossConfig.for_orientation_head(), OptimizerConfig(epochs=150),
    )
    assert history[-1] < history[0]
    assert all(b <= a + 1e-3 for a, b in zip(history, history[1:]))
    assert accuracy(trained, hold, Head.VO) >= 0.85
    assert 1.0 / 3.0 < mean_winning_probability(trained, hold, Head.VO) <= 1.0
    # The untrained input model is untouched.
    assert not np.array_equal(trained.vo_weight, model.vo_weight)


def test_freeze_mask_is_respected_bit_exactly():
    rng = np.random.default_rng(1)
    ds1 = make_synthetic_dataset("orientation_only", 900, rng)
    ds2 = make_synthetic_dataset("offset_only", 900, rng)
    stage1, _ = train_stage(
        init_model(rng), ds1, Head.VO,
        LossConfig.for_orientation_head(), OptimizerConfig(epochs=80),
    )
    stage2, _ = train_stage(
        stage1.with_frozen(trunk=True, vo_head=True), ds2, Head.LO,
        LossConfig.for_offset_head(), OptimizerConfig(epochs=80),
    )
    assert np.array_equal(stage2.trunk_weight, stage1.trunk_weight)
    assert np.array_equal(stage2.trunk_bias, stage1.trunk_bias)
    assert np.array_equal(stage2.vo_weight, stage1.vo_weight)
    assert np.array_equal(stage2.vo_bias, stage1.vo_bias)
    assert not np.array_equal(stage2.lo_weight, stage1.lo_weight)


def test_training_frozen_head_raises():
    rng = np.random.default_rng(2)
    ds = make_synthetic_dataset("offset_only", 60, rng)
    model = init_model(rng).with_frozen(lo_head=True)
    with pytest.raises(ValueError):
        train_stage(model, ds, Head.LO, LossConfig.for_offset_head(), OptimizerConfig())


def test_training_diverged_error_carries_state():
    rng = np.random.default_rng(3)
    ds = make_synthetic_dataset("orientation_only", 30, rng)
    bad = SyntheticDataset(ds.features * np.inf, ds.vo_labels, ds.lo_labels)
    model = init_model(rng)
    with pytest.raises(TrainingDivergedError) as exc, np.errstate(invalid="ignore"):
        train_stage(model, bad, Head.VO, LossConfig.for_orientation_head(), OptimizerConfig())
    assert exc.value.model is model


def test_training_is_deterministic():
    def run():
        rng = np.random.default_rng(4)
        ds = make_synthetic_dataset("orientation_only", 600, rng)
        m, h = train_stage(init_model(rng), ds, Head.VO,
                           LossConfig.for_orientation_head(), OptimizerConfig(epochs=60))
        return m, h

    a, ha = run()
    b, hb = run()
    assert ha == hb
    assert np.array_equal(a.trunk_weight, b.trunk_weight)
    assert np.array_equal(a.vo_weight, b.vo_weight)


def test_model_save_load_round_trip(tmp_path):
    model = init_model(np.random.default_rng(13)).with_frozen(trunk=True)
    path = tmp_path / "model.txt"
    save_model(model, path)
    back = load_model(path)
    for name in ("trunk_weight", "trunk_bias", "vo_weight", "vo_bias", "lo_weight", "lo_bias"):
        assert np.array_equal(getattr(back, name), getattr(model, name)), name
    assert back.frozen == model.frozen
    # Save of the loaded model reproduces the file byte for byte.
    path2 = tmp_path / "model2.txt"
    save_model(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_model_load_rejects_bad_files(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("# other-format v9\n")
    with pytest.raises(ValueError):
        load_model(bad)
    bad.write_text("# twohead-model v1\nfrozen\n")
    with pytest.raises(ValueError):
        load_model(bad)
