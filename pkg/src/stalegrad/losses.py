"""Convex margin losses: values, derivatives, gradients, and the constants
(L, lambda, H, Lambda) the regret bounds are evaluated at.

Margin convention: an example (y, z) incurs l(y * <z, x>). The L2 penalty is
NOT folded into these gradients; engines apply it lazily as a scale factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DomainError, ScaledVector, SparseVector, StructuralError

LOSS_KINDS = ("smoothed_margin", "logistic", "squared")


@dataclass(frozen=True)
class LossSpec:
    kind: str
    l2_reg: float = 0.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise DomainError(f"unknown loss kind {self.kind!r}")
        if self.l2_reg < 0:
            raise DomainError("l2_reg must be non-negative")


@dataclass(frozen=True)
class LossConstants:
    """Constants of a loss over a linear function class.

    L: bound on ||grad f_t||, lam: strong convexity, H: gradient Lipschitz
    constant, Lambda: bound on the scalar derivative |l'(chi)|.
    """

    L: float
    lam: float
    H: float
    Lambda: float


def margin_loss(kind: str, chi: float) -> float:
    """Scalar loss l(chi). chi is the signed margin y * <z, x>."""
    if not math.isfinite(chi):
        raise DomainError("margin must be finite")
    if kind == "smoothed_margin":
        if chi <= 0.0:
            return 0.5 - chi
        if chi <= 1.0:
            return 0.5 * (chi - 1.0) * (chi - 1.0)
        return 0.0
    if kind == "logistic":
        # log(1 + exp(-chi)) without overflow on either tail
        if chi >= 0.0:
            return math.log1p(math.exp(-chi))
        return -chi + math.log1p(math.exp(chi))
    if kind == "squared":
        return 0.5 * (1.0 - chi) * (1.0 - chi)
    raise DomainError(f"unknown loss kind {kind!r}")


def margin_derivative(kind: str, chi: float) -> float:
    """l'(chi). The smoothed margin is C^1: both branches give -1 at chi = 0."""
    if not math.isfinite(chi):
        raise DomainError("margin must be finite")
    if kind == "smoothed_margin":
        if chi <= 0.0:
            return -1.0
        if chi <= 1.0:
            return chi - 1.0
        return 0.0
    if kind == "logistic":
        if chi > 700.0:
            return -math.exp(-chi)
        return -1.0 / (1.0 + math.exp(chi))
    if kind == "squared":
        return chi - 1.0
    raise DomainError(f"unknown loss kind {kind!r}")


def example_gradient(loss: LossSpec, x: np.ndarray, label: float, z: SparseVector) -> SparseVector:
    """Gradient of l(y * <z, x>) with respect to x: y * l'(chi) * z, sparse.

    L2 regularization is handled lazily by the engines, never here.
    """
    x = np.asarray(x, dtype=np.float64)
    if z.nnz and int(z.indices[-1]) >= x.shape[0]:
        raise StructuralError("feature index out of range for parameter dimension")
    chi = label * z.dot_dense(x)
    coeff = label * margin_derivative(loss.kind, chi)
    return z.scaled(coeff)


_SCALAR_CURVATURE = {"smoothed_margin": 1.0, "logistic": 0.25, "squared": 1.0}


def constants_for(loss: LossSpec, z_norm_bound: float, region_radius: float | None = None) -> LossConstants:
    """Constants for f_t(x) = l(y <z,x>) + (l2_reg/2)||x||^2 with ||z|| <= z_norm_bound.

    Lambda is 1 for the margin and logistic losses. The squared loss has an
    unbounded scalar derivative, so its Lambda (and hence L) is finite only
    when a region radius caps |chi|. H for the smoothed margin is the
    curvature of its quadratic segment; its derivative is globally
    1-Lipschitz, so the constant is exact despite the piecewise definition.
    """
    if not (z_norm_bound > 0):
        raise DomainError("z_norm_bound must be positive")
    if loss.kind in ("smoothed_margin", "logistic"):
        Lambda = 1.0
    else:  # squared: |chi - 1| <= 1 + z_norm_bound * R
        Lambda = 1.0 + z_norm_bound * region_radius if region_radius is not None else math.inf
    L = Lambda * z_norm_bound
    if region_radius is not None:
        L += loss.l2_reg * region_radius
    elif loss.l2_reg > 0:
        L = math.inf  # unbounded X: the regularizer gradient has no uniform bound
    H = _SCALAR_CURVATURE[loss.kind] * z_norm_bound * z_norm_bound + loss.l2_reg
    return LossConstants(L=L, lam=loss.l2_reg, H=H, Lambda=Lambda)


def regularized_value(loss: LossSpec, chi: float, x_norm_sq: float) -> float:
    """Full per-example objective: margin loss plus the L2 penalty term."""
    v = margin_loss(loss.kind, chi)
    if loss.l2_reg > 0.0:
        v += 0.5 * loss.l2_reg * x_norm_sq
    return v


def predict_margin(state: ScaledVector, z: SparseVector) -> float:
    """Raw margin <z, x> of the current iterate, O(nnz)."""
    return state.dot(z)
