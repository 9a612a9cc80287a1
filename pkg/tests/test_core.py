import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stalegrad.core import (
    DomainError,
    FeasibleRegion,
    ScaledVector,
    Schedule,
    SparseVector,
    StructuralError,
    axpy,
    eta,
    project,
)


class TestProject:
    def test_radial_scaling(self):
        out = project(np.array([3.0, 4.0]), FeasibleRegion("l2_ball", 1.0))
        np.testing.assert_allclose(out, [0.6, 0.8])

    def test_identity_inside(self):
        x = np.array([0.1, 0.2])
        np.testing.assert_array_equal(project(x, FeasibleRegion("l2_ball", 1.0)), x)

    def test_identity_unbounded(self):
        x = np.array([7.0, -24.0])
        np.testing.assert_array_equal(project(x, FeasibleRegion()), x)

    def test_rejects_nonfinite(self):
        with pytest.raises(DomainError):
            project(np.array([np.nan, 0.0]), FeasibleRegion("l2_ball", 1.0))

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=8),
           st.floats(0.01, 100.0))
    @settings(max_examples=200, deadline=None)
    def test_idempotent_and_inside(self, values, radius):
        region = FeasibleRegion("l2_ball", radius)
        x = np.array(values)
        once = project(x, region)
        assert np.linalg.norm(once) <= radius * (1 + 1e-12)
        np.testing.assert_array_equal(project(once, region), once)


class TestEta:
    def test_inv_sqrt_shifted(self):
        assert eta(Schedule("inv_sqrt_shifted", sigma=2.0, tau=3), 7) == 1.0

    def test_inv_linear_strong(self):
        assert eta(Schedule("inv_linear_strong", lam=0.5, tau=0), 4) == 0.5

    def test_inv_sqrt_plain(self):
        assert eta(Schedule("inv_sqrt_plain"), 16) == 0.25

    def test_shifted_rejects_early_t(self):
        sched = Schedule("inv_sqrt_shifted", sigma=1.0, tau=5)
        for t in (1, 5):
            with pytest.raises(DomainError):
                eta(sched, t)

    @given(st.sampled_from(["inv_sqrt_shifted", "inv_linear_strong", "inv_sqrt_plain"]),
           st.integers(0, 20), st.integers(1, 500), st.integers(1, 500))
    @settings(max_examples=200, deadline=None)
    def test_monotone_nonincreasing(self, kind, tau, a, b):
        sched = Schedule(kind, sigma=0.7, lam=2.0, tau=tau)
        t1, t2 = sorted((tau + a, tau + b))
        assert eta(sched, t2) <= eta(sched, t1)


class TestAxpy:
    def test_basic(self):
        g = SparseVector(np.array([0]), np.array([2.0]))
        np.testing.assert_array_equal(axpy(np.ones(3), -0.5, g), [0.0, 1.0, 1.0])

    def test_zero_scalar_is_identity(self):
        x = np.array([1.0, 2.0])
        g = SparseVector(np.array([1]), np.array([5.0]))
        np.testing.assert_array_equal(axpy(x, 0.0, g), x)

    def test_empty_gradient_is_identity(self):
        x = np.array([1.0, 2.0])
        np.testing.assert_array_equal(axpy(x, 3.0, SparseVector.empty()), x)

    def test_scatter(self):
        g = SparseVector(np.array([0, 1]), np.array([1.0, 2.0]))
        np.testing.assert_array_equal(axpy(np.zeros(2), 1.0, g), [1.0, 2.0])

    def test_out_of_range_index(self):
        g = SparseVector(np.array([5]), np.array([1.0]))
        with pytest.raises(StructuralError):
            axpy(np.zeros(3), 1.0, g)


class TestSparseVector:
    def test_rejects_unsorted(self):
        with pytest.raises(StructuralError):
            SparseVector(np.array([3, 1]), np.array([1.0, 2.0]))

    def test_rejects_stored_zero(self):
        with pytest.raises(StructuralError):
            SparseVector(np.array([0]), np.array([0.0]))

    def test_from_pairs_accumulates_and_drops_zero_sums(self):
        v = SparseVector.from_pairs([(3, 1.0), (1, 2.0), (3, -1.0)])
        assert v.indices.tolist() == [1]
        assert v.values.tolist() == [2.0]

    def test_dense_round_trip(self):
        x = np.array([0.0, -1.5, 0.0, 2.0])
        v = SparseVector.from_dense(x)
        np.testing.assert_array_equal(v.to_dense(4), x)


class TestScaledVector:
    def test_norm_tracker_matches_exact(self, rng):
        sv = ScaledVector.zeros(30)
        for _ in range(500):
            idx = np.sort(rng.choice(30, size=3, replace=False)).astype(np.int64)
            g = SparseVector(idx, rng.standard_normal(3) + 0.01)
            sv.rescale(1.0 - 0.01 * rng.random())
            sv.apply_gradient(g, 0.1)
            if rng.random() < 0.2:
                sv.project_ball(2.0)
        assert sv.norm_sq() == pytest.approx(sv.recompute_norm_sq(), rel=1e-9, abs=1e-12)

    def test_rescale_folds_small_scales(self):
        sv = ScaledVector.zeros(2)
        sv.apply_gradient(SparseVector(np.array([0]), np.array([1.0])), -1.0)  # x = [1, 0]
        for _ in range(200):
            sv.rescale(0.5)
        assert sv.scale >= 1e-6 or sv.scale == 1.0
        assert np.isfinite(sv.materialize()).all()

    def test_rescale_zero_factor_folds_to_zero_vector(self):
        sv = ScaledVector.zeros(2)
        sv.apply_gradient(SparseVector(np.array([1]), np.array([2.0])), -1.0)
        sv.rescale(0.0)
        np.testing.assert_array_equal(sv.materialize(), [0.0, 0.0])
        assert sv.scale == 1.0
