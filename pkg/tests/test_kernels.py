"""The jitted and numpy kernels must agree; the toggle is exercised in a subprocess."""
import os
import subprocess
import sys

import numpy as np
import pytest

from dagekit import _accel, kernels

pytestmark = pytest.mark.skipif(not _accel.NUMBA_AVAILABLE, reason="numba not importable")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def test_pairwise_sqdist(rng):
    a, b = rng.normal(size=(4, 7)), rng.normal(size=(4, 5))
    np.testing.assert_allclose(kernels.pairwise_sqdist_jit(a, b), kernels.pairwise_sqdist_numpy(a, b), rtol=1e-14)
    assert kernels.pairwise_sqdist_numpy(a, a).diagonal().max() == 0.0


def test_pair_energy(rng):
    w = rng.uniform(size=(6, 6))
    np.fill_diagonal(w, 0.0)
    phi = rng.normal(size=(3, 6))
    assert kernels.pair_energy_jit(w, phi) == pytest.approx(kernels.pair_energy_numpy(w, phi), rel=1e-14)


def test_dsne_edges(rng):
    sqd = rng.uniform(size=(5, 6))
    src, tgt = np.array([0, 1, 0, 2, 1]), np.array([0, 1, 2, 0, 1, 3])
    far_j, near_j = kernels.dsne_edges_jit(sqd, src, tgt)
    far_n, near_n = kernels.dsne_edges_numpy(sqd, src, tgt)
    np.testing.assert_array_equal(far_j, far_n)
    np.testing.assert_array_equal(near_j, near_n)
    assert far_n[5] == -1  # no source of class 3


def test_dsne_edges_tie_lowest_index():
    sqd = np.array([[1.0], [1.0], [0.5], [0.5]])
    for fn in (kernels.dsne_edges_jit, kernels.dsne_edges_numpy):
        far, near = fn(sqd, np.array([0, 0, 1, 1]), np.array([0]))
        assert (far[0], near[0]) == (0, 2)


def test_knn(rng):
    x = rng.normal(size=(3, 9))
    x[:, 4] = x[:, 2]  # duplicate point
    np.testing.assert_array_equal(kernels.knn_jit(x, 3), kernels.knn_numpy(x, 3))


def test_margin_weights(rng):
    dist = rng.uniform(0, 3, size=(4, 4))
    active = rng.uniform(size=(4, 4)) < 0.5
    np.testing.assert_allclose(
        kernels.margin_weights_jit(dist, active, 2.0, 1e-9),
        kernels.margin_weights_numpy(dist, active, 2.0, 1e-9),
        rtol=1e-14,
    )


def test_env_flag_disables_numba():
    env = dict(os.environ, DAGEKIT_DISABLE_NUMBA="1")
    out = subprocess.run(
        [sys.executable, "-c", "from dagekit import _accel; print(_accel.use_numba())"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "False"


def test_numpy_path_runs_checks():
    env = dict(os.environ, DAGEKIT_DISABLE_NUMBA="1")
    out = subprocess.run(
        [sys.executable, "-m", "dagekit.cli", "check", "--filter", "graphs"],
        env=env, capture_output=True, text=True,
    )
    assert out.returncode == 0, out.stdout + out.stderr
