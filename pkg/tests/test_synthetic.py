import numpy as np
import pytest

from dagekit import synthetic, trainer
from dagekit.synthetic import ShiftSpec


def test_same_seed_bit_identical():
    a = synthetic.generate(synthetic.BENCHMARK_SPEC)
    b = synthetic.generate(synthetic.BENCHMARK_SPEC)
    assert a[0].equals(b[0]) and a[1].equals(b[1])
    assert (a[0].dim, a[0].n, a[1].n) == (10, 150, 150)


def test_simplex_edges():
    v = synthetic.simplex_vertices(4)
    d = np.linalg.norm(v[:, :, None] - v[:, None, :], axis=0)
    np.testing.assert_allclose(d[np.triu_indices(4, 1)], 1.0)


def test_shift_inverts():
    spec = ShiftSpec(scale=tuple(np.linspace(0.5, 2, 10)))
    x = np.random.default_rng(0).normal(size=(10, 5))
    np.testing.assert_allclose(synthetic.invert_shift(spec, synthetic.apply_shift(spec, x)), x, atol=1e-12)


def _ncm_gap(spec):
    src, tgt = synthetic.generate(spec)
    on_src = trainer.ncm_baseline(src, src).accuracy
    return on_src, trainer.ncm_baseline(src, tgt).accuracy


def test_no_shift_matches_source_accuracy():
    # large sample so that finite-sample noise stays well under the 2-point tolerance
    on_src, on_tgt = _ncm_gap(ShiftSpec(n_per_class=1000, rotation_deg=0.0, translation=0.0))
    assert abs(on_src - on_tgt) <= 0.02


def test_shift_degrades_ncm():
    _, unshifted = _ncm_gap(ShiftSpec(rotation_deg=0.0, translation=0.0))
    _, shifted = _ncm_gap(synthetic.BENCHMARK_SPEC)
    assert shifted < unshifted - 0.1


def test_spec_round_trip_and_validation():
    spec = ShiftSpec(scale=(1.0,) * 10, seed=3)
    assert ShiftSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ValueError):
        ShiftSpec(class_count=1)
    with pytest.raises(ValueError):
        ShiftSpec(scale=(1.0, 2.0))
