import math

import numpy as np
import pytest

from conftest import random_margin_stream, random_plain_config
from oracles import exponentiated_gradient
from stalegrad.core import DomainError, FeasibleRegion, Schedule, SparseVector
from stalegrad.engine import RunConfig, run
from stalegrad.losses import LossSpec
from stalegrad.mirror import MirrorMap, bregman, measure_phi, mirror_step, run_mirror
from stalegrad.streams import SparseExample


class TestBregman:
    def test_zero_at_equal_points(self):
        assert bregman(MirrorMap("squared_norm"), np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0

    def test_squared_norm_value(self):
        assert bregman(MirrorMap("squared_norm"), np.array([3.0, 0.0]), np.zeros(2)) == 4.5

    def test_entropy_value_against_definition(self):
        # D(x||x') for phi(x) = sum x log x - x equals sum x log(x/x') - x + x'
        # at x=[1], x'=[e] this is -1 - 1 + e = e - 2
        d = bregman(MirrorMap("neg_entropy_unnormalized"), np.array([1.0]), np.array([math.e]))
        assert d == pytest.approx(math.e - 2.0, rel=1e-12)
        # cross-check with the raw definition phi(x)-phi(x')-<x-x', grad phi(x')>
        phi = lambda v: float(np.sum(v * np.log(v) - v))
        gphi = lambda v: np.log(v)
        x, xp = np.array([1.0]), np.array([math.e])
        raw = phi(x) - phi(xp) - float(np.dot(x - xp, gphi(xp)))
        assert d == pytest.approx(raw, rel=1e-12)

    def test_nonnegative_and_faithful(self, rng):
        for kind in ("squared_norm", "neg_entropy_unnormalized"):
            mmap = MirrorMap(kind)
            for _ in range(300):
                if kind == "squared_norm":
                    x = rng.standard_normal(4)
                    xp = rng.standard_normal(4)
                else:
                    x = rng.random(4) + 1e-3
                    xp = rng.random(4) + 1e-3
                d = bregman(mmap, x, xp)
                assert d >= -1e-12
                if np.allclose(x, xp, atol=1e-15):
                    assert d <= 1e-12
            assert bregman(mmap, x, x) <= 1e-12

    def test_entropy_domain_error(self):
        with pytest.raises(DomainError):
            bregman(MirrorMap("neg_entropy_unnormalized"), np.array([0.0]), np.array([1.0]))


class TestMirrorStep:
    def test_squared_norm_reduces_to_gradient_step(self):
        g = SparseVector(np.array([0]), np.array([2.0]))
        out = mirror_step(MirrorMap("squared_norm"), np.array([1.0, 1.0]), g, 0.25)
        np.testing.assert_array_equal(out, [0.5, 1.0])

    def test_entropy_empty_gradient_identity(self):
        x = np.array([0.3, 0.7])
        out = mirror_step(MirrorMap("neg_entropy_unnormalized"), x, SparseVector.empty(), 1.0)
        np.testing.assert_array_equal(out, x)

    def test_entropy_multiplicative(self):
        g = SparseVector(np.array([0]), np.array([math.log(2.0)]))
        out = mirror_step(MirrorMap("neg_entropy_unnormalized"), np.array([1.0, 1.0]), g, 1.0)
        np.testing.assert_allclose(out, [0.5, 1.0], rtol=1e-15)
        # numerical check through the dual composition: grad phi* = exp, grad phi = log
        composed = np.exp(np.log(np.array([1.0, 1.0])) - 1.0 * g.to_dense(2))
        np.testing.assert_allclose(out, composed, rtol=1e-15)

    def test_overflow_clamped(self):
        g = SparseVector(np.array([0]), np.array([-2000.0]))
        out = mirror_step(MirrorMap("neg_entropy_unnormalized"), np.array([1.0]), g, 1.0)
        assert np.isfinite(out).all()


class TestRunMirror:
    def test_squared_norm_bitwise_equals_engine(self):
        rng = np.random.default_rng(77)
        for _ in range(25):
            dim = int(rng.integers(1, 30))
            T = int(rng.integers(10, 150))
            tau = int(rng.integers(0, 6))
            schedule, region, loss = random_plain_config(rng, dim)
            schedule = Schedule(schedule.kind, sigma=schedule.sigma, lam=schedule.lam, tau=tau)
            stream = random_margin_stream(rng, T, dim)
            cfg = RunConfig(dimension=dim, tau=tau, schedule=schedule, region=region, loss=loss)
            a = run(cfg, stream)
            b = run_mirror(cfg, MirrorMap("squared_norm"), stream)
            assert np.array_equal(a.ledger.losses, b.ledger.losses)
            assert np.array_equal(a.final_x, b.final_x)
            assert a.delay_histogram == b.delay_histogram

    @pytest.mark.parametrize("tau", [0, 5, 50])
    def test_entropy_keeps_iterates_strictly_positive(self, tau, rng):
        stream = random_margin_stream(rng, 120, 6, nnz=3)
        cfg = RunConfig(dimension=6, tau=tau, schedule=Schedule("inv_sqrt_plain"),
                        region=FeasibleRegion(), loss=LossSpec("smoothed_margin"))
        res = run_mirror(cfg, MirrorMap("neg_entropy_unnormalized"), stream)
        assert np.all(res.final_x > 0.0)

    def test_entropy_matches_eg_oracle_no_delay(self):
        # two-expert linear losses <l_t, x>: encode as margin examples with
        # label -1 and the smoothed margin's linear branch (slope -1), so the
        # engine's gradient is exactly l_t while <l_t, x> >= 0.
        rng = np.random.default_rng(3)
        T = 50
        loss_vectors = rng.random((T, 2))
        stream = [
            SparseExample(-1.0, SparseVector(np.array([0, 1]), loss_vectors[t].astype(np.float64)))
            for t in range(T)
        ]
        sigma = 0.5
        cfg = RunConfig(dimension=2, tau=0,
                        schedule=Schedule("inv_sqrt_shifted", sigma=sigma, tau=0),
                        region=FeasibleRegion(), loss=LossSpec("smoothed_margin"))
        res = run_mirror(cfg, MirrorMap("neg_entropy_unnormalized"), stream)
        oracle = exponentiated_gradient(2, loss_vectors, sigma)
        np.testing.assert_allclose(res.final_x, oracle[-1], rtol=1e-12)

    def test_entropy_rejects_l2_and_ball(self, rng):
        stream = random_margin_stream(rng, 10, 3)
        cfg = RunConfig(dimension=3, tau=0, schedule=Schedule("inv_sqrt_plain"),
                        region=FeasibleRegion(), loss=LossSpec("smoothed_margin", l2_reg=0.1))
        with pytest.raises(DomainError):
            run_mirror(cfg, MirrorMap("neg_entropy_unnormalized"), stream)
        cfg2 = RunConfig(dimension=3, tau=0, schedule=Schedule("inv_sqrt_plain"),
                         region=FeasibleRegion("l2_ball", 1.0), loss=LossSpec("smoothed_margin"))
        with pytest.raises(DomainError):
            run_mirror(cfg2, MirrorMap("neg_entropy_unnormalized"), stream)

    def test_normalized_variant_stays_on_simplex(self, rng):
        stream = random_margin_stream(rng, 60, 4, nnz=2)
        cfg = RunConfig(dimension=4, tau=2, schedule=Schedule("inv_sqrt_plain"),
                        region=FeasibleRegion(), loss=LossSpec("smoothed_margin"))
        res = run_mirror(cfg, MirrorMap("neg_entropy_unnormalized", normalize=True), stream)
        assert float(np.sum(res.final_x)) == pytest.approx(1.0, rel=1e-12)
        assert np.all(res.final_x > 0)

    def test_exp_clamp_reported(self):
        huge = SparseExample(-1.0, SparseVector(np.array([0]), np.array([1e6])))
        cfg = RunConfig(dimension=1, tau=0,
                        schedule=Schedule("inv_sqrt_shifted", sigma=10.0, tau=0),
                        region=FeasibleRegion(), loss=LossSpec("smoothed_margin"))
        res = run_mirror(cfg, MirrorMap("neg_entropy_unnormalized"), [huge, huge])
        assert res.exp_clamps > 0
        assert any("clamped" in w for w in res.warnings)
        assert np.isfinite(res.final_x).all()


class TestMeasurePhi:
    def test_squared_norm_is_exactly_one(self):
        assert measure_phi(MirrorMap("squared_norm"), dim=5, samples=200) == pytest.approx(1.0)

    def test_entropy_measurement_positive_finite(self):
        phi = measure_phi(MirrorMap("neg_entropy_unnormalized"), dim=5, samples=200)
        assert 0.0 < phi < math.inf
