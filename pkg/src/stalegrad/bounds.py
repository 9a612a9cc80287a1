"""Closed-form regret-bound evaluators and the gradient-correlation estimator.

These are the yardsticks the harness compares empirical regret against. Each
evaluator computes exactly the displayed formula of the corresponding
guarantee; preconditions are enforced, never silently ignored, because the
formulas are meaningless outside their hypotheses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

from .core import DomainError, SparseVector


class BoundPreconditionError(DomainError):
    """The bound's hypotheses do not hold for these inputs."""


@dataclass(frozen=True)
class BoundInputs:
    """Constants the bounds are evaluated at.

    F: divergence-diameter root (max D(x||x') <= F^2 over the region),
    L: gradient-norm bound, tau: delay, T: horizon, sigma: step-size scale,
    lam: strong convexity, H: gradient smoothness, alpha: correlation factor,
    Phi: implicit-update Lipschitz constant.
    """

    F: float
    L: float
    tau: int
    T: int
    sigma: float | None = None
    lam: float | None = None
    H: float | None = None
    alpha: float | None = None
    Phi: float | None = None

    def __post_init__(self):
        if not (self.F > 0 and self.L > 0):
            raise DomainError("F and L must be positive")
        if self.tau < 0:
            raise DomainError("tau must be non-negative")
        if self.T < 1:
            raise DomainError("T must be >= 1")


def optimal_sigma(F: float, L: float, tau: int, factor: float = 1.0) -> float:
    """sigma minimizing the delay-penalty bound: F / (L * sqrt(2 * tau * factor)).

    factor is 1 for the worst case, alpha for correlation-scaled streams, and
    Phi for Bregman geometry. Requires tau * factor > 0.
    """
    if tau * factor <= 0:
        raise DomainError("optimal sigma requires tau * factor > 0")
    return F / (L * math.sqrt(2.0 * tau * factor))


def _delay_penalty_bound(F: float, L: float, tau: int, T: int, sigma: float, factor: float) -> float:
    # sigma L^2 sqrt(T) + F^2 sqrt(T)/sigma + L^2 factor sigma tau^2 / 2
    #   + 2 L^2 factor sigma tau sqrt(T)
    # The factor multiplications stay in this exact position so that
    # factor == 1.0 reproduces the worst-case value bit for bit.
    if not (sigma > 0):
        raise DomainError("sigma must be positive")
    rt = math.sqrt(T)
    return (
        sigma * L * L * rt
        + F * F * rt / sigma
        + L * L * factor * sigma * tau * tau / 2.0
        + 2.0 * L * L * factor * sigma * tau * rt
    )


def _optimal_form(F: float, L: float, tau: int, T: int, factor: float) -> float:
    if T < tau * tau:
        raise BoundPreconditionError(f"optimal form needs T >= tau^2 (T={T}, tau={tau})")
    return 4.0 * F * L * math.sqrt(factor * tau * T)


def bound_lipschitz(inp: BoundInputs, optimal: bool = False) -> float:
    """Worst-case delayed regret bound for L-Lipschitz convex losses.

    Full form at the supplied sigma; with optimal=True (tau >= 1, T >= tau^2,
    sigma^2 = F^2 / (2 tau L^2)) the closed form 4 F L sqrt(tau T).
    """
    if optimal:
        if inp.tau < 1:
            raise BoundPreconditionError("optimal form needs tau >= 1")
        return _optimal_form(inp.F, inp.L, inp.tau, inp.T, 1.0)
    if inp.sigma is None:
        raise DomainError("sigma required for the full form")
    return _delay_penalty_bound(inp.F, inp.L, inp.tau, inp.T, inp.sigma, 1.0)


def bound_strong(inp: BoundInputs) -> float:
    """Delayed regret bound under lam-strong convexity with eta_t = 1/(lam (t - tau)):
    lam tau F^2 + (1/2 + tau) (L^2 / lam) (1 + tau + log T)."""
    if inp.lam is None or not (inp.lam > 0):
        raise DomainError("lam must be positive")
    return (
        inp.lam * inp.tau * inp.F * inp.F
        + (0.5 + inp.tau) * (inp.L * inp.L / inp.lam) * (1.0 + inp.tau + math.log(inp.T))
    )


def bound_alpha(inp: BoundInputs, optimal: bool = False) -> float:
    """Correlation-scaled delayed regret bound: the worst-case form with the
    tau-dependent terms rescaled by alpha; alpha = 1 recovers bound_lipschitz
    exactly. Optimal form needs tau * alpha >= 1 and T >= tau^2."""
    if inp.alpha is None or not (0.0 <= inp.alpha <= 1.0):
        raise DomainError("alpha must lie in [0, 1]")
    if optimal:
        if inp.tau * inp.alpha < 1.0:
            raise BoundPreconditionError(
                f"optimal form needs tau * alpha >= 1 (tau={inp.tau}, alpha={inp.alpha})"
            )
        return _optimal_form(inp.F, inp.L, inp.tau, inp.T, inp.alpha)
    if inp.sigma is None:
        raise DomainError("sigma required for the full form")
    return _delay_penalty_bound(inp.F, inp.L, inp.tau, inp.T, inp.sigma, inp.alpha)


def bound_smooth(inp: BoundInputs) -> float:
    """Expected-regret bound for i.i.d. losses with H-Lipschitz gradients at
    sigma = F/L: [28.3 F^2 H + (2/3) F L + (4/3) F^2 H log T] tau^2
    + (8/3) F L sqrt(T). Hypothesis: H >= L / (4 F sqrt(tau))."""
    if inp.H is None or inp.H < 0:
        raise DomainError("H must be supplied and non-negative")
    if inp.tau < 1:
        raise BoundPreconditionError("smooth-gradient bound needs tau >= 1")
    threshold = inp.L / (4.0 * inp.F * math.sqrt(inp.tau))
    if inp.H < threshold:
        raise BoundPreconditionError(
            f"needs H >= L / (4 F sqrt(tau)) = {threshold:.6g}, got H = {inp.H:.6g}"
        )
    F2H = inp.F * inp.F * inp.H
    return (
        (28.3 * F2H + (2.0 / 3.0) * inp.F * inp.L + (4.0 / 3.0) * F2H * math.log(inp.T))
        * inp.tau * inp.tau
        + (8.0 / 3.0) * inp.F * inp.L * math.sqrt(inp.T)
    )


def bound_smooth_strong(inp: BoundInputs) -> float:
    """Expected-regret bound under smoothness plus strong convexity:
    (10/9) [lam tau F^2 + (1/2 + tau)(L^2/lam)(1 + tau + log(3 tau + H tau / lam))
    + (L^2 / 2 lam)(1 + log T) + pi^2 tau^2 H L^2 / (6 lam^2)]."""
    if inp.lam is None or not (inp.lam > 0):
        raise DomainError("lam must be positive")
    if inp.H is None or inp.H < 0:
        raise DomainError("H must be supplied and non-negative")
    if inp.tau < 1:
        raise BoundPreconditionError("smooth+strong bound needs tau >= 1")
    L2 = inp.L * inp.L
    inner = (
        inp.lam * inp.tau * inp.F * inp.F
        + (0.5 + inp.tau) * (L2 / inp.lam)
        * (1.0 + inp.tau + math.log(3.0 * inp.tau + inp.H * inp.tau / inp.lam))
        + (L2 / (2.0 * inp.lam)) * (1.0 + math.log(inp.T))
        + math.pi * math.pi * inp.tau * inp.tau * inp.H * L2 / (6.0 * inp.lam * inp.lam)
    )
    return (10.0 / 9.0) * inner


def bound_bregman(inp: BoundInputs, optimal: bool = False) -> float:
    """Delayed mirror-descent regret bound for Phi-Lipschitz implicit updates;
    Phi = 1 recovers bound_lipschitz exactly. Optimal form needs
    tau * Phi >= 1 and T >= tau^2, giving 4 F L sqrt(Phi tau T)."""
    if inp.Phi is None or not (inp.Phi > 0):
        raise DomainError("Phi must be positive")
    if optimal:
        if inp.tau * inp.Phi < 1.0:
            raise BoundPreconditionError(
                f"optimal form needs tau * Phi >= 1 (tau={inp.tau}, Phi={inp.Phi})"
            )
        return _optimal_form(inp.F, inp.L, inp.tau, inp.T, inp.Phi)
    if inp.sigma is None:
        raise DomainError("sigma required for the full form")
    return _delay_penalty_bound(inp.F, inp.L, inp.tau, inp.T, inp.sigma, inp.Phi)


def estimate_alpha(sample: Iterable[SparseVector], Lambda: float, L: float) -> float:
    """Empirical correlation factor Lambda^2 ||mean(z)||^2 / L^2.

    For i.i.d. z the Frobenius norm of the second cross-moment factorizes as
    ||E[z] E[z]^T||_F = ||E[z]||^2, so no d x d matrix is ever materialized;
    the factorization is property-tested against explicit outer products at
    small d.
    """
    if not (Lambda > 0 and L > 0):
        raise DomainError("Lambda and L must be positive")
    acc: dict[int, float] = {}
    m = 0
    for z in sample:
        m += 1
        for i, v in zip(z.indices.tolist(), z.values.tolist()):
            acc[i] = acc.get(i, 0.0) + v
    if m == 0:
        raise DomainError("sample must be non-empty")
    mean_sq = sum((v / m) ** 2 for v in acc.values())
    return Lambda * Lambda * mean_sq / (L * L)
