import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from egohoi import fusion, synth
from egohoi.errors import DimensionMismatch, SchemaError, SingleClassDataset
from egohoi.fusion import (FEATURE_LEN, HAND_SLICE, OBJECT_SLICE, PAIR_SLICE, POSE_SLICE,
                           FusionModel, extract_features, loss_and_grad, predict, train)


@pytest.fixture(scope="module")
def dataset():
    samples = synth.make_fusion_dataset(0, 400)
    return samples, np.array([s[3] for s in samples])


def feats_of(samples, ablate=None):
    return [extract_features(p, h, o, ablate) for p, h, o, _ in samples]


def random_model(rng, hidden=5, scale=1.0):
    m = FusionModel.init(hidden, FEATURE_LEN, int(rng.integers(1 << 31)))
    m.b1 = rng.normal(size=hidden) * scale
    m.b2 = float(rng.normal())
    return m


def test_empty_object_features(rng):
    p, h, o, _ = synth.fusion_sample(rng)
    x = extract_features(p, h, np.zeros_like(o)).values
    assert x[OBJECT_SLICE.stop - 1] == 0.0
    assert x[PAIR_SLICE.start] == 0.0
    assert x[PAIR_SLICE.start + 1] == 1.0


def test_identical_masks_full_overlap(rng):
    p, h, _, _ = synth.fusion_sample(rng)
    x = extract_features(p, h, h).values
    assert x[PAIR_SLICE.start] == 1.0
    assert x[PAIR_SLICE.start + 1] == 0.0


def test_full_ablation_zero(rng):
    p, h, o, _ = synth.fusion_sample(rng)
    x = extract_features(p, h, o, {"pose", "hand", "object"})
    assert len(x) == FEATURE_LEN and not x.values.any()


def test_ablation_zeroes_blocks(rng):
    p, h, o, _ = synth.fusion_sample(rng)
    full = extract_features(p, h, o).values
    no_obj = extract_features(p, h, o, {"object"}).values
    assert not no_obj[OBJECT_SLICE].any() and not no_obj[PAIR_SLICE].any()
    np.testing.assert_array_equal(no_obj[POSE_SLICE], full[POSE_SLICE])
    np.testing.assert_array_equal(no_obj[HAND_SLICE], full[HAND_SLICE])
    with pytest.raises(ValueError):
        extract_features(p, h, o, {"gaze"})


def test_pair_features_brute_force(rng):
    for _ in range(10):
        p, h, o, _ = synth.fusion_sample(rng)
        x = extract_features(p, h, o).values
        H, W = h.shape
        hp = np.argwhere(h)
        op = np.argwhere(o)
        assert x[PAIR_SLICE.start] == pytest.approx(np.sum(h & o) / max(1, o.sum()))
        d = np.min(np.linalg.norm(op[:, None, :] - hp[None], axis=2), axis=1)
        assert x[PAIR_SLICE.start + 1] == pytest.approx(d.mean() / np.hypot(H, W), rel=1e-12)


def test_upsampling_invariance(rng):
    for _ in range(5):
        p, h, o, _ = synth.fusion_sample(rng)
        up = lambda m: np.kron(m, np.ones((2, 2), m.dtype))
        a = extract_features(p, h, o).values
        b = extract_features(p, up(h), up(o)).values
        for sl in (HAND_SLICE, OBJECT_SLICE):
            np.testing.assert_allclose(b[sl], a[sl], atol=0.02)
        assert b[PAIR_SLICE.start] == pytest.approx(a[PAIR_SLICE.start], abs=0.02)


def test_mismatched_masks():
    with pytest.raises(DimensionMismatch):
        extract_features(np.zeros((1, 32, 32)), np.zeros((64, 64)), np.zeros((32, 32)))


def test_predict_zero_weights():
    m = FusionModel(np.zeros((4, FEATURE_LEN)), np.zeros(4), np.zeros(4), 0.0)
    assert predict(m, np.ones(FEATURE_LEN)) == 0.5


def test_predict_saturation():
    m = FusionModel(np.zeros((4, FEATURE_LEN)), np.zeros(4), np.zeros(4), 50.0)
    # 1 - 1e-20 is 1.0 in float64, so the bound is stated on the complement
    assert 1.0 - predict(m, np.ones(FEATURE_LEN)) < 1e-20
    m.b2 = -800.0
    assert predict(m, np.ones(FEATURE_LEN)) == 0.0


def test_predict_matches_straight_line_forward(rng):
    for _ in range(100):
        m = random_model(rng, hidden=int(rng.integers(1, 20)))
        x = rng.normal(size=FEATURE_LEN)
        h = [np.tanh(sum(m.w1[i, k] * x[k] for k in range(FEATURE_LEN)) + m.b1[i])
             for i in range(m.hidden)]
        z = sum(m.w2[i] * h[i] for i in range(m.hidden)) + m.b2
        assert predict(m, x) == pytest.approx(1 / (1 + np.exp(-z)), abs=1e-12)


def _fd_check(m, batch, h=1e-5):
    _, g = loss_and_grad(m, batch)
    errs = []
    for name in ("w1", "b1", "w2", "b2"):
        p = np.atleast_1d(np.asarray(getattr(m, name), dtype=float))
        flat = p.ravel()
        num = np.zeros_like(flat)
        for k in range(flat.size):
            for sgn in (1, -1):
                q = flat.copy()
                q[k] += sgn * h
                setattr(m, name, q.reshape(p.shape) if name != "b2" else float(q[0]))
                num[k] += sgn * loss_and_grad(m, batch)[0]
            setattr(m, name, p if name != "b2" else float(p[0]))
        num /= 2 * h
        ana = np.atleast_1d(g[name]).ravel()
        errs.append(np.linalg.norm(ana - num) / max(np.linalg.norm(ana) + np.linalg.norm(num),
                                                    1e-12))
    return max(errs)


def test_gradient_check_random_points(rng):
    for _ in range(10):
        m = FusionModel.init(4, 12, int(rng.integers(1 << 31)))
        m.w1 = m.w1[:, :12]
        m.b1 = rng.normal(size=4)
        m.b2 = float(rng.normal())
        X = rng.normal(size=(8, 12))
        y = rng.integers(0, 2, 8).astype(float)
        assert _fd_check(m, (X, y)) < 1e-4


def test_gradient_check_on_real_features(dataset):
    samples, labels = dataset
    X = np.stack([f.values for f in feats_of(samples[:6])])
    m = FusionModel.init(3, FEATURE_LEN, 1)
    assert _fd_check(m, (X, labels[:6].astype(float))) < 1e-4


def test_confident_correct_loss_zero():
    m = FusionModel(np.zeros((2, 3)), np.zeros(2), np.zeros(2), 60.0)
    loss, _ = loss_and_grad(m, (np.zeros((4, 3)), np.ones(4)))
    assert loss < 1e-20


def test_duplicating_batch_changes_nothing(rng):
    m = FusionModel.init(5, 9, 3)
    X = rng.normal(size=(7, 9))
    y = rng.integers(0, 2, 7).astype(float)
    l1, g1 = loss_and_grad(m, (X, y))
    l2, g2 = loss_and_grad(m, (np.vstack([X, X]), np.concatenate([y, y])))
    assert abs(l1 - l2) < 1e-12
    for k in g1:
        np.testing.assert_allclose(g1[k], g2[k], atol=1e-12)


def test_list_batch_equals_array_batch(rng):
    m = FusionModel.init(5, FEATURE_LEN, 3)
    X = rng.normal(size=(4, FEATURE_LEN))
    y = np.array([0, 1, 1, 0])
    l1, _ = loss_and_grad(m, (X, y.astype(float)))
    l2, _ = loss_and_grad(m, list(zip(X, y)))
    assert l1 == l2


def test_training_accuracy_and_ablation(dataset):
    samples, labels = dataset
    full = train(feats_of(samples), labels)
    acc_full = fusion.accuracy(full.model, feats_of(samples), labels)
    no_obj = train(feats_of(samples, {"object"}), labels, ablate={"object"})
    acc_no_obj = fusion.accuracy(no_obj.model, feats_of(samples, {"object"}), labels)
    assert acc_full >= 0.95
    assert acc_no_obj <= acc_full
    assert all(b <= a for a, b in zip(full.losses, full.losses[1:]))


def test_training_deterministic(dataset):
    samples, labels = dataset
    f = feats_of(samples[:60])
    a = train(f, labels[:60], epochs=20, seed=4).model
    b = train(f, labels[:60], epochs=20, seed=4).model
    for k in ("w1", "b1", "w2"):
        assert getattr(a, k).tobytes() == getattr(b, k).tobytes()
    assert a.b2 == b.b2


def test_single_class_rejected(dataset):
    samples, _ = dataset
    with pytest.raises(SingleClassDataset):
        train(feats_of(samples[:5]), np.ones(5))


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_threshold_monotone(p, t1, t2):
    lo, hi = sorted((t1, t2))
    assert not (not fusion.decide(p, lo) and fusion.decide(p, hi))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-50, 50))
def test_probability_in_range(seed, b2):
    r = np.random.default_rng(seed)
    m = FusionModel.init(4, FEATURE_LEN, seed % (1 << 31))
    m.b2 = b2
    p = predict(m, r.normal(size=FEATURE_LEN))
    assert 0.0 < p < 1.0 or abs(b2) > 30


def test_model_json_round_trip(tmp_path):
    m = FusionModel.init(6, FEATURE_LEN, 2, {"hand"})
    m.save(tmp_path / "m.json")
    back = FusionModel.load(tmp_path / "m.json")
    assert back.ablate == m.ablate
    for k in ("w1", "b1", "w2"):
        np.testing.assert_array_equal(getattr(back, k), getattr(m, k))
    doc = json.loads((tmp_path / "m.json").read_text())
    doc["w1"] = doc["w1"][:-1]
    (tmp_path / "bad.json").write_text(json.dumps(doc))
    with pytest.raises(SchemaError):
        FusionModel.load(tmp_path / "bad.json")


def test_predict_length_mismatch():
    with pytest.raises(DimensionMismatch):
        predict(FusionModel.init(2, FEATURE_LEN, 0), np.zeros(5))
