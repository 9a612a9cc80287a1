import math

import numpy as np
import pytest

from oracles import brute_force_pairwise_frobenius
from stalegrad.bounds import (
    BoundInputs,
    BoundPreconditionError,
    bound_alpha,
    bound_bregman,
    bound_lipschitz,
    bound_smooth,
    bound_smooth_strong,
    bound_strong,
    estimate_alpha,
    optimal_sigma,
)
from stalegrad.core import DomainError, SparseVector


def inputs(**kw):
    base = dict(F=1.0, L=1.0, tau=1, T=100)
    base.update(kw)
    return BoundInputs(**base)


class TestLipschitz:
    def test_optimal_form(self):
        assert bound_lipschitz(inputs(tau=4, T=400), optimal=True) == pytest.approx(160.0)

    def test_term_by_term(self):
        v = bound_lipschitz(inputs(sigma=1.0, tau=1, T=100))
        assert v == pytest.approx(10.0 + 10.0 + 0.5 + 20.0)

    def test_no_delay_drops_delay_terms(self):
        v = bound_lipschitz(inputs(sigma=1.0, tau=0, T=100))
        assert v == pytest.approx(20.0)

    def test_optimal_needs_T_at_least_tau_squared(self):
        with pytest.raises(BoundPreconditionError):
            bound_lipschitz(inputs(tau=20, T=100), optimal=True)

    def test_optimal_sigma_helper(self):
        assert optimal_sigma(2.0, 1.0, 2) == pytest.approx(1.0)
        # sigma^2 = F^2 / (2 tau L^2)
        s = optimal_sigma(1.5, 0.7, 5)
        assert s * s == pytest.approx(1.5**2 / (2 * 5 * 0.7**2))


class TestStrong:
    def test_tau_zero(self):
        # at tau=0 only (1/2)(L^2/lam)(1 + log T) survives; equals 1 at T = e
        v = bound_strong(inputs(tau=0, T=3, lam=1.0))
        assert v == pytest.approx(0.5 * (1 + math.log(3)), rel=1e-12)

    def test_unit_case(self):
        assert bound_strong(inputs(tau=1, T=1, lam=1.0)) == pytest.approx(1.0 + 1.5 * 2.0)

    def test_scaled_case(self):
        T = round(math.e**2)
        v = bound_strong(inputs(F=1.0, L=1.0, tau=2, lam=2.0, T=T))
        expected = 2.0 * 2 * 1.0 + 2.5 * 0.5 * (1 + 2 + math.log(T))
        assert v == pytest.approx(expected)

    def test_requires_lam(self):
        with pytest.raises(DomainError):
            bound_strong(inputs(tau=1, T=10))


class TestAlpha:
    def test_alpha_one_recovers_lipschitz_exactly(self):
        for sigma in (0.1, 1.0, 3.7):
            for tau in (0, 1, 5, 16):
                a = bound_alpha(inputs(sigma=sigma, tau=tau, alpha=1.0))
                b = bound_lipschitz(inputs(sigma=sigma, tau=tau))
                assert a == b  # bitwise

    def test_optimal_form(self):
        v = bound_alpha(inputs(F=1.0, L=1.0, alpha=0.25, tau=4, T=400), optimal=True)
        assert v == pytest.approx(80.0)

    def test_optimal_requires_tau_alpha(self):
        with pytest.raises(BoundPreconditionError):
            bound_alpha(inputs(alpha=0.1, tau=4, T=400), optimal=True)


class TestSmooth:
    def test_unit_substitution(self):
        v = bound_smooth(inputs(H=1.0, tau=1, T=1))
        assert v == pytest.approx(28.3 + 2.0 / 3.0 + 8.0 / 3.0)

    def test_growth_in_T_is_log_plus_sqrt(self):
        lo = bound_smooth(inputs(H=1.0, tau=2, T=100))
        hi = bound_smooth(inputs(H=1.0, tau=2, T=200))
        expected_gain = (4.0 / 3.0) * math.log(2.0) * 4 + (8.0 / 3.0) * (math.sqrt(200) - math.sqrt(100))
        assert hi - lo == pytest.approx(expected_gain)

    def test_H_precondition(self):
        with pytest.raises(BoundPreconditionError):
            bound_smooth(inputs(H=0.01, tau=1, T=100))


class TestSmoothStrong:
    def test_unit_substitution(self):
        v = bound_smooth_strong(inputs(H=1.0, lam=1.0, tau=1, T=1))
        inner = 1.0 + 1.5 * (2.0 + math.log(4.0)) + 0.5 + math.pi**2 / 6.0
        assert v == pytest.approx((10.0 / 9.0) * inner)

    def test_log_additivity_in_T(self):
        a = bound_smooth_strong(inputs(H=1.0, lam=1.0, tau=1, T=100))
        b = bound_smooth_strong(inputs(H=1.0, lam=1.0, tau=1, T=round(100 * math.e)))
        assert b - a == pytest.approx((10.0 / 9.0) * 0.5 * math.log(round(100 * math.e) / 100.0))

    def test_lambda_scaling_with_zero_L(self):
        # only lam tau F^2 survives when L = 0 is approached
        small = bound_smooth_strong(BoundInputs(F=1.0, L=1e-9, tau=1, T=10, lam=1.0, H=1.0))
        big = bound_smooth_strong(BoundInputs(F=1.0, L=1e-9, tau=1, T=10, lam=10.0, H=1.0))
        assert big / small == pytest.approx(10.0, rel=1e-6)


class TestBregman:
    def test_phi_one_recovers_lipschitz_exactly(self):
        for sigma in (0.2, 1.0):
            a = bound_bregman(inputs(sigma=sigma, tau=3, Phi=1.0))
            b = bound_lipschitz(inputs(sigma=sigma, tau=3))
            assert a == b

    def test_optimal_form(self):
        assert bound_bregman(inputs(Phi=1.0, tau=1, T=100), optimal=True) == pytest.approx(40.0)

    def test_optimal_requires_tau_phi(self):
        with pytest.raises(BoundPreconditionError):
            bound_bregman(inputs(Phi=0.3, tau=1, T=100), optimal=True)


class TestMonotonicity:
    def test_bounds_nondecreasing_in_tau_T_L_F(self):
        taus = [1, 2, 4, 8, 16]
        Ts = [64, 256, 1024, 4096]
        Ls = [0.5, 1.0, 2.0]
        Fs = [0.5, 1.0, 2.0]
        evaluators = [
            lambda i: bound_lipschitz(i),
            lambda i: bound_strong(i),
            lambda i: bound_alpha(i),
            lambda i: bound_smooth(i),
            lambda i: bound_smooth_strong(i),
            lambda i: bound_bregman(i),
        ]
        def make(tau, T, L, F):
            return BoundInputs(F=F, L=L, tau=tau, T=T, sigma=1.0, lam=0.5, H=2.0,
                               alpha=0.5, Phi=2.0)
        for ev in evaluators:
            for T in Ts:
                for L in Ls:
                    for F in Fs:
                        vals = [ev(make(tau, T, L, F)) for tau in taus]
                        assert all(b >= a - 1e-9 for a, b in zip(vals, vals[1:]))
            base = ev(make(2, 256, 1.0, 1.0))
            assert ev(make(2, 1024, 1.0, 1.0)) >= base - 1e-9
            assert ev(make(2, 256, 2.0, 1.0)) >= base - 1e-9
            assert ev(make(2, 256, 1.0, 2.0)) >= base - 1e-9


def one_hot(i, val=1.0):
    return SparseVector(np.array([i], dtype=np.int64), np.array([val]))


class TestEstimateAlpha:
    def test_fully_correlated(self):
        sample = [one_hot(0)] * 50
        assert estimate_alpha(sample, Lambda=1.0, L=2.0) == pytest.approx(1.0 / 4.0)

    def test_orthonormal_one_hots(self):
        d = 8
        sample = [one_hot(i % d) for i in range(8000)]
        a = estimate_alpha(sample, Lambda=1.0, L=1.0)
        assert a == pytest.approx(1.0 / d, rel=1e-9)

    def test_matches_brute_force_outer_products(self, rng):
        # the ||mu||^2 factorization equals the explicit pairwise average
        d, m = 6, 40
        dense = rng.standard_normal((m, d))
        sample = [SparseVector(np.arange(d, dtype=np.int64), row) for row in dense]
        frob = brute_force_pairwise_frobenius(dense)
        a = estimate_alpha(sample, Lambda=1.0, L=1.0)
        assert a == pytest.approx(frob, rel=1e-9)

    def test_mean_zero_sample_decays(self, rng):
        vals = []
        for m in (100, 1000, 10000):
            sample = [one_hot(0, 1.0 if i % 2 == 0 else -1.0) for i in range(m)]
            vals.append(estimate_alpha(sample, Lambda=1.0, L=1.0))
        assert vals[0] <= 1e-2
        assert all(v == 0.0 for v in vals)  # exactly balanced signs cancel
        # genuinely random signs decay like 1/m
        noisy = []
        for m in (100, 10000):
            signs = rng.choice([-1.0, 1.0], size=m)
            noisy.append(estimate_alpha([one_hot(0, s) for s in signs], Lambda=1.0, L=1.0))
        assert noisy[1] < max(noisy[0], 1e-4) * 10

    def test_range_invariant(self, rng):
        sample = [one_hot(int(i), float(rng.uniform(0.1, 2.0))) for i in rng.integers(0, 5, 200)]
        max_norm_sq = max(float(np.dot(z.values, z.values)) for z in sample)
        a = estimate_alpha(sample, Lambda=1.5, L=1.0)
        assert 0.0 <= a <= 1.5**2 * max_norm_sq / 1.0

    def test_empty_sample_rejected(self):
        with pytest.raises(DomainError):
            estimate_alpha([], Lambda=1.0, L=1.0)
