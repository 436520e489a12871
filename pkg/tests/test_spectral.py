import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from dagekit import errors, graphs, spectral


def pd(rng, m):
    a = rng.normal(size=(m, m))
    return a @ a.T + 0.1 * np.eye(m)


def test_scatter_examples():
    lap = np.array([[1.0, -1.0], [-1.0, 1.0]])
    np.testing.assert_array_equal(spectral.scatter(np.eye(2), lap), lap)
    np.testing.assert_array_equal(spectral.scatter(np.ones((3, 2)), np.zeros((2, 2))), np.zeros((3, 3)))
    with pytest.raises(errors.DimensionMismatch):
        spectral.scatter(np.eye(2), np.zeros((3, 3)))


def test_ratio_trace_diagonal():
    model = spectral.solve_ratio_trace(spectral.ScatterPencil(np.diag([1.0, 4.0]), np.eye(2)), 1, reg=0.0)
    np.testing.assert_allclose(model.projection[:, 0], [1.0, 0.0], atol=1e-15)
    assert model.eigenvalues[0] == pytest.approx(1.0)


def test_ratio_trace_identical_pencil():
    s = pd(np.random.default_rng(0), 5)
    model = spectral.solve_ratio_trace(spectral.ScatterPencil(s, s), 3, reg=0.0)
    np.testing.assert_allclose(model.eigenvalues, 1.0, rtol=1e-10)


def test_ratio_trace_beats_random_search():
    rng = np.random.default_rng(1)
    sl, sb = pd(rng, 6), pd(rng, 6)
    v = spectral.solve_ratio_trace(spectral.ScatterPencil(sl, sb), 1, reg=0.0).projection[:, 0]
    best = (v @ sb @ v) / (v @ sl @ v)
    u = rng.normal(size=(6, 200_000))
    search = np.max(np.einsum("ij,ij->j", u, sb @ u) / np.einsum("ij,ij->j", u, sl @ u))
    assert search <= best + 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 7), st.integers(0, 2**31 - 1), st.floats(1e-3, 1e3))
def test_ratio_trace_scale_invariant(m, seed, c):
    rng = np.random.default_rng(seed)
    p = spectral.ScatterPencil(pd(rng, m), pd(rng, m))
    a = spectral.solve_ratio_trace(p, 1, reg=0.0)
    b = spectral.solve_ratio_trace(p.scaled(c), 1, reg=0.0)
    np.testing.assert_allclose(a.eigenvalues, b.eigenvalues, rtol=1e-8)
    assert abs(scipy.linalg.subspace_angles(a.projection, b.projection)).max() < 1e-6


def test_sign_convention():
    rng = np.random.default_rng(2)
    model = spectral.solve_ratio_trace(spectral.ScatterPencil(pd(rng, 5), pd(rng, 5)), 3)
    v = model.projection
    assert (v[np.argmax(np.abs(v), axis=0), np.arange(3)] > 0).all()


def test_trace_ratio_diagonal():
    res = spectral.solve_trace_ratio(spectral.ScatterPencil(np.diag([4.0, 1.0]), np.eye(2)), 1, reg=0.0)
    assert res.lam == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(np.abs(res.model.projection[:, 0]), [0.0, 1.0], atol=1e-12)
    assert res.converged


def test_trace_ratio_identical_pencil():
    s = pd(np.random.default_rng(3), 4)
    res = spectral.solve_trace_ratio(spectral.ScatterPencil(s, s), 2, reg=0.0)
    assert res.lam == pytest.approx(1.0, rel=1e-12)
    assert res.iterations <= 2


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**31 - 1))
def test_trace_ratio_monotone(m, seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, m))
    res = spectral.solve_trace_ratio(spectral.ScatterPencil(pd(rng, m), pd(rng, m)), d, reg=0.0)
    h = np.asarray(res.lambda_history)
    assert (np.diff(h) <= 0).all()
    v = res.model.projection
    np.testing.assert_allclose(v.T @ v, np.eye(d), atol=1e-10)


def test_dimension_checks():
    p = spectral.ScatterPencil(np.eye(3), np.eye(3))
    with pytest.raises(errors.DimensionTooLarge):
        spectral.solve_ratio_trace(p, 4)
    with pytest.raises(errors.DimensionMismatch):
        spectral.ScatterPencil(np.eye(3), np.eye(2))


def test_singular_numerator_without_ridge():
    p = spectral.ScatterPencil(np.zeros((2, 2)), np.eye(2))
    with pytest.raises(errors.SingularNumerator):
        spectral.solve_ratio_trace(p, 1, reg=0.0)
    model = spectral.solve_ratio_trace(p, 1, reg=1e-6)
    assert np.isfinite(model.projection).all()


def test_linear_dage_separates_classes():
    rng = np.random.default_rng(4)
    x = np.concatenate([rng.normal(size=(2, 40)), rng.normal(size=(2, 40)) + [[6.0], [0.0]]], axis=1)
    labels = np.repeat([0, 1], 40)
    model = spectral.fit_linear_dage(x, graphs.dage_lda_graphs(labels), 1)
    z = model.transform(x)[0]
    gap = abs(z[labels == 0].mean() - z[labels == 1].mean())
    within = max(z[labels == 0].std(), z[labels == 1].std())
    assert gap >= 5 * within


def test_full_dimension_is_invertible():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(3, 20))
    model = spectral.fit_linear_dage(x, graphs.dage_lda_graphs(rng.integers(0, 3, 20)), 3, reg=1e-6)
    assert np.isfinite(np.linalg.cond(model.projection))


def test_two_points_direction():
    x = np.array([[0.0, 3.0], [0.0, 4.0]])
    model = spectral.fit_linear_dage(x, graphs.dage_lda_graphs([0, 1]), 1)
    v = model.projection[:, 0]
    assert abs(v @ np.array([3.0, 4.0])) / (np.linalg.norm(v) * 5.0) == pytest.approx(1.0, abs=1e-9)


def test_gram_examples():
    np.testing.assert_array_equal(spectral.gram(np.eye(2)), np.eye(2))
    x = np.array([[0.0, math.sqrt(2.0)]])
    k = spectral.gram(x, spectral.Kernel("rbf", 1.0))
    assert k[0, 1] == pytest.approx(math.exp(-1))
    with pytest.raises(errors.NonPositiveSigma):
        spectral.Kernel("rbf", 0.0)


def test_kernel_matches_linear_subspace():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(4, 25))
    gp = graphs.dage_lda_graphs(rng.integers(0, 3, 25))
    lin = spectral.fit_linear_dage(x, gp, 2, reg=1e-10)
    ker = spectral.fit_kernel_dage(x, gp, spectral.LINEAR, 2, reg=1e-10)
    assert scipy.linalg.subspace_angles(lin.transform(x).T, ker.transform(x).T).max() < 1e-6


def test_rbf_kernel_handles_xor():
    rng = np.random.default_rng(7)
    centres = np.array([[1, 1], [-1, -1], [1, -1], [-1, 1]], dtype=float).T * 3
    labels = np.repeat([0, 0, 1, 1], 10)
    x = centres[:, np.repeat(np.arange(4), 10)] + 0.3 * rng.normal(size=(2, 40))
    gp = graphs.dage_lda_graphs(labels)
    ker = spectral.fit_kernel_dage(x, gp, spectral.Kernel("rbf", 2.0), 1)
    z = ker.transform(x)[0]
    # one threshold separates the classes
    assert z[labels == 0].max() < z[labels == 1].min() or z[labels == 1].max() < z[labels == 0].min()
    lin = spectral.fit_linear_dage(x, gp, 1).transform(x)[0]
    assert not (lin[labels == 0].max() < lin[labels == 1].min() or lin[labels == 1].max() < lin[labels == 0].min())


def test_tiny_sigma_stays_finite():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(2, 10))
    model = spectral.fit_kernel_dage(x, graphs.dage_lda_graphs(rng.integers(0, 2, 10)),
                                     spectral.Kernel("rbf", 1e-6), 1, reg=1e-6)
    assert np.isfinite(model.transform(x)).all()


def test_transform_shapes_and_round_trip():
    model = spectral.EmbeddingModel("linear", np.eye(3)[:, :2])
    x = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(model.transform(x), x[:2])
    rng = np.random.default_rng(9)
    x = rng.normal(size=(3, 12))
    ker = spectral.fit_kernel_dage(x, graphs.dage_lda_graphs(rng.integers(0, 2, 12)), spectral.Kernel("rbf", 1.5), 2)
    assert ker.transform(x[:, 0]).shape == (2, 1)
    back = spectral.EmbeddingModel.from_json(ker.to_json())
    np.testing.assert_array_equal(back.transform(x), ker.transform(x))
    with pytest.raises(errors.DimensionMismatch):
        ker.transform(np.ones((4, 1)))
