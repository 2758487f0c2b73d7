import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import central_diff
from owapool import bow
from owapool.bow import (BowRegularization, BowSchedule, CodedImage, Dictionary, PhaseRecord, SvmModel,
                         alternating_train, dense_descriptors, fit_svm, joint_cost, joint_grads,
                         kmeans_fit, lagrangian, one_vs_rest_labels, pool_image, stack_sorted,
                         svm_cost, triangle_encode)
from owapool.harness.synth import separable_codes, spurious_codes
from owapool.tensor import ShapeError


def test_triangle_example():
    d = Dictionary(np.array([[-1.0], [1.0], [4.0]]))
    np.testing.assert_allclose(triangle_encode(np.array([0.0]), d), [1.0, 1.0, 0.0])


def test_triangle_limits():
    d = Dictionary(np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]]))
    code = triangle_encode(np.zeros(2), d)
    assert code[0] > 0 and code[1] == 0 and code[2] == 0
    square = Dictionary(np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]))
    np.testing.assert_array_equal(triangle_encode(np.zeros(2), square), np.zeros(4))


def test_triangle_batch_and_nonnegative(rng):
    d = Dictionary(rng.standard_normal((5, 3)))
    X = rng.standard_normal((20, 3))
    codes = triangle_encode(X, d)
    assert codes.shape == (20, 5)
    assert np.all(codes >= 0)
    np.testing.assert_array_equal(codes[3], triangle_encode(X[3], d))
    with pytest.raises(ShapeError):
        triangle_encode(np.zeros(4), d)


def test_pool_image_example():
    codes = np.array([[0.1, 0.0], [0.5, 0.2], [0.3, 0.9]])
    w = [5.0, 1.0, 0.0]
    np.testing.assert_allclose(pool_image(codes, w), [2.8, 4.7])
    np.testing.assert_allclose(pool_image(codes, [1.0, 0, 0]), codes.max(axis=0))
    np.testing.assert_allclose(pool_image(CodedImage(codes, 0), np.full(3, 1 / 3)), codes.mean(axis=0))
    with pytest.raises(ShapeError):
        pool_image(codes, [1.0, 0.0])


def test_pool_image_hand_example():
    codes = np.array([[1.0, 0.0], [3.0, 2.0], [2.0, 4.0]])
    np.testing.assert_allclose(pool_image(codes, [0.5, 0.3, 0.2]), [2.3, 2.6])


@given(arrays(np.float64, (6, 3), elements=st.floats(0, 5)), st.permutations(range(6)))
def test_pooling_ignores_cell_order(codes, perm):
    w = np.linspace(1, 0, 6)
    np.testing.assert_allclose(pool_image(codes[list(perm)], w), pool_image(codes, w))


def test_svm_cost_cases():
    Z = np.array([[1.0, 0.0], [0.0, 1.0]])
    y = np.array([1.0, -1.0])
    assert svm_cost(np.zeros(2), Z, y, 3.0) == pytest.approx(3.0)  # C1/m * (1 + 1)
    th = np.array([2.0, -2.0])  # margins 2 -> no slack, only 0.5 * 8
    assert svm_cost(th, Z, y, 3.0) == pytest.approx(4.0)
    th = np.array([0.5, 0.0])  # slack 0.5 and 1
    assert svm_cost(th, Z, y, 2.0) == pytest.approx(2.0 / 2 * (0.25 + 1.0) + 0.125)


def longhand_cost(theta, w, codes, y, C1, C2):
    total = 0.0
    for c in range(theta.shape[0]):
        acc = 0.0
        for i in range(codes.shape[0]):
            z = [sum(wi * s for wi, s in zip(w, sorted(codes[i, :, k], reverse=True)))
                 for k in range(codes.shape[2])]
            margin = y[c, i] * sum(t * zk for t, zk in zip(theta[c], z))
            acc += max(0.0, 1.0 - margin) ** 2
        total += C1 / codes.shape[0] * acc + 0.5 * sum(t * t for t in theta[c])
    return total + C2 * sum((w[j] - w[j + 1]) ** 2 for j in range(len(w) - 1))


def test_joint_cost_matches_longhand(rng):
    codes = rng.uniform(0, 1, (7, 5, 3))
    labels = rng.integers(0, 3, 7)
    Y = one_vs_rest_labels(labels, 3)
    theta = rng.standard_normal((3, 3))
    w = rng.standard_normal(5)
    reg = BowRegularization(2.0, 0.7)
    assert joint_cost(theta, w, codes, Y, reg) == pytest.approx(longhand_cost(theta, w, codes, Y, 2.0, 0.7), rel=1e-12)


def test_joint_cost_degenerates_to_max_svm(rng):
    codes = rng.uniform(0, 1, (9, 4, 3))
    y = np.where(rng.random(9) < 0.5, 1.0, -1.0)
    theta = rng.standard_normal(3)
    e1 = np.array([1.0, 0, 0, 0])
    reg = BowRegularization(1.5, 0.0)
    assert joint_cost(theta, e1, codes, y, reg) == pytest.approx(svm_cost(theta, codes.max(axis=1), y, 1.5))
    u = np.full(4, 0.25)
    assert joint_cost(theta, u, codes, y, BowRegularization(1.5, 3.0)) == pytest.approx(
        svm_cost(theta, codes.mean(axis=1), y, 1.5))


@pytest.mark.parametrize("C2", [0.0, 0.8])
def test_joint_grads_finite_differences(rng, C2):
    codes = rng.uniform(0, 1, (8, 5, 4))
    Y = one_vs_rest_labels(rng.integers(0, 3, 8), 3)
    theta = rng.standard_normal((3, 4)) * 0.3
    w = rng.uniform(0, 0.5, 5)
    lam, mu = 0.3, rng.uniform(0, 1, 5)
    reg = BowRegularization(1.3, C2)
    g_th, g_w, g_lam, g_mu = joint_grads(theta, w, codes, Y, reg, lam, mu)
    L = lambda th, ww, l, m: lagrangian(th, ww, codes, Y, reg, l, m)
    np.testing.assert_allclose(g_th, central_diff(lambda t: L(t, w, lam, mu), theta.copy()), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(g_w, central_diff(lambda v: L(theta, v, lam, mu), w.copy()), rtol=1e-4, atol=1e-8)
    assert g_lam == pytest.approx(central_diff(lambda l: L(theta, w, float(l[0]), mu), np.array([lam]))[0])
    np.testing.assert_allclose(g_mu, central_diff(lambda m: L(theta, w, lam, m), mu.copy()), atol=1e-8)


def test_grad_lambda_zero_on_simplex(rng):
    codes = rng.uniform(0, 1, (4, 3, 2))
    w = np.array([0.5, 0.3, 0.2])
    _, _, g_lam, g_mu = joint_grads(np.zeros(2), w, codes, np.ones(4), BowRegularization(), 1.0, np.zeros(3))
    assert g_lam == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_array_equal(g_mu, -w)


def test_binary_theta_shape_kept(rng):
    codes = rng.uniform(0, 1, (4, 3, 2))
    g = joint_grads(np.zeros(2), np.full(3, 1 / 3), codes, np.ones(4), BowRegularization(), 0.0, np.zeros(3))[0]
    assert g.shape == (2,)


# ------------------------------------------------------------------- k-means

def blobs(rng, k=3, per=40, d=2):
    centers = np.array([[0, 0], [10, 0], [0, 10]], dtype=float)[:k]
    return np.concatenate([c + 0.3 * rng.standard_normal((per, d)) for c in centers]), centers


def test_kmeans_recovers_blobs(rng):
    X, true = blobs(rng)
    d, inertia = kmeans_fit(X, 3, seed=1)
    found = d.centers[np.lexsort(d.centers.T[::-1])]
    np.testing.assert_allclose(found, true[np.lexsort(true.T[::-1])], atol=0.2)
    assert inertia < 40


def test_kmeans_two_blobs_within_tolerance(rng):
    means = np.array([[-5.0, 2.0], [6.0, -1.0]])
    X = np.concatenate([m + 0.5 * rng.standard_normal((200, 2)) for m in means])
    d, _ = kmeans_fit(X, 2, seed=0)
    # oracle: the sample means of the generated blobs
    oracle = np.stack([X[:200].mean(0), X[200:].mean(0)])
    found = d.centers[np.argsort(d.centers[:, 0])]
    assert np.abs(found - oracle).max() < 1e-9
    assert np.abs(found - means).max() < 0.1


def test_kmeans_k_equals_n_zero_inertia(rng):
    X = rng.standard_normal((6, 3))
    d, inertia = kmeans_fit(X, 6, seed=0)
    assert inertia == pytest.approx(0.0, abs=1e-12)
    assert d.K == 6


def test_kmeans_deterministic_and_validates(rng):
    X, _ = blobs(rng)
    a, _ = kmeans_fit(X, 4, seed=3)
    b, _ = kmeans_fit(X, 4, seed=3)
    np.testing.assert_array_equal(a.centers, b.centers)
    with pytest.raises(ValueError):
        kmeans_fit(X[:3], 5)


def test_dense_descriptors_shape_and_norm(rng):
    img = rng.uniform(0, 1, (3, 32, 32))
    D = dense_descriptors(img, patch=16, step=8)
    assert D.shape == (9, 128)
    np.testing.assert_allclose(np.linalg.norm(D, axis=1), 1.0)
    assert np.all(dense_descriptors(np.zeros((16, 16)), patch=16) == 0)


# ------------------------------------------------------------------ training

def test_prediction_invariant_to_positive_scaling(rng):
    model = SvmModel(rng.standard_normal((4, 5)))
    Z = rng.standard_normal((30, 5))
    scaled = SvmModel(model.theta * 3.7)
    np.testing.assert_array_equal(model.predict(Z), scaled.predict(Z))


def test_frozen_pooling_equals_plain_svm():
    codes, y = separable_codes(20, 4, 4)
    sched = BowSchedule(train_w=False, max_outer=1)
    res = alternating_train(codes, y, 2, BowRegularization(4.0), sched)
    assert [r.phase for r in res.history] == ["theta"]
    Z = stack_sorted(codes) @ np.full(4, 0.25)
    theta = fit_svm(Z, one_vs_rest_labels(y, 2), 4.0, schedule=sched)
    np.testing.assert_array_equal(res.model.theta, theta)
    np.testing.assert_array_equal(res.w, np.full(4, 0.25))


def test_separable_toy_reaches_full_accuracy():
    codes, y = separable_codes(20, 4, 4)
    res = alternating_train(codes, y, 2, BowRegularization(10.0), BowSchedule(max_outer=20))
    assert bow.evaluate(res.model, res.w, codes, y) == 1.0


def assert_monotone(history, tol=1e-9):
    for rec in history:
        for before, after in rec.steps:
            assert after <= before + tol, (rec.phase, rec.outer, before, after)


def simplex_gap(w):
    return max(abs(w.sum() - 1.0), -w.min(), 0.0)


def test_phases_monotone_and_weights_approach_simplex():
    codes, y = spurious_codes(80, K=6, cells=8, seed=2)
    short = alternating_train(codes, y, 2, BowRegularization(10.0), BowSchedule(max_outer=15))
    long = alternating_train(codes, y, 2, BowRegularization(10.0), BowSchedule(max_outer=100))
    assert_monotone(long.history)
    assert simplex_gap(long.w) < simplex_gap(short.w)
    assert simplex_gap(long.w) < 0.02
    assert np.all(long.model.mu >= 0)


def test_large_smoothness_gives_near_uniform():
    codes, y = spurious_codes(60, K=4, cells=8, seed=3)
    res = alternating_train(codes, y, 2, BowRegularization(10.0, 1e4),
                            BowSchedule(max_outer=10, w_lr=1e-5))
    assert np.abs(res.w - 1 / 8).max() < 0.02


def test_learned_weights_beat_max_on_spurious_codes():
    codes, y = spurious_codes(120, K=8, cells=12, seed=4)
    tr, te = slice(0, 60), slice(60, None)
    reg = BowRegularization(10.0)
    mx = alternating_train(codes[tr], y[tr], 2, reg, BowSchedule(train_w=False, max_outer=3),
                           w0=np.eye(12)[0])
    owa = alternating_train(codes[tr], y[tr], 2, reg, BowSchedule(max_outer=20))
    assert bow.evaluate(owa.model, owa.w, codes[te], y[te]) >= bow.evaluate(mx.model, mx.w, codes[te], y[te]) + 0.05


# ----------------------------------------------------------------- exchange

def test_descriptor_csv_roundtrip(tmp_path, rng):
    feats = rng.standard_normal((3, 4, 5))
    rows = [(f"img{i}", c, i % 2, feats[i, c]) for i in range(3) for c in range(4)]
    path = tmp_path / "desc.csv"
    bow.write_descriptor_csv(path, rows)
    ids, labels, back = bow.read_descriptor_csv(path)
    assert ids == ["img0", "img1", "img2"]
    np.testing.assert_array_equal(labels, [0, 1, 0])
    np.testing.assert_array_equal(back, feats)


def test_descriptor_csv_rejects_bad_rows(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("image_id,cell,label,f0\na,0,1,0.5\na,1,0,0.2\n")
    with pytest.raises(ValueError, match="inconsistent label"):
        bow.read_descriptor_csv(path)
    path.write_text("image_id,cell,label,f0\na,0,1\n")
    with pytest.raises(ValueError, match="expected 4 fields"):
        bow.read_descriptor_csv(path)


def test_model_json_roundtrip(tmp_path):
    codes, y = separable_codes(20, 4, 4)
    res = alternating_train(codes, y, 2, BowRegularization(10.0), BowSchedule(max_outer=3))
    d = Dictionary(np.arange(8.0).reshape(4, 2))
    text = bow.model_to_json(tmp_path / "m.json", d, res)
    json.loads(text)
    d2, model, w, payload = bow.model_from_json(str(tmp_path / "m.json"))
    np.testing.assert_array_equal(d2.centers, d.centers)
    np.testing.assert_array_equal(model.theta, res.model.theta)
    np.testing.assert_array_equal(w, res.w)
    assert payload["outer_iterations"] == res.outer_iterations
    assert len(payload["history"]) == len(res.history)
