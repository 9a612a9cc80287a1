"""Reference batch solver for the fixed comparator x*.

Regret needs the best fixed point in hindsight; the guarantees assume it
exists but never construct it. Quadratic streams have the closed form
(projected mean of the centers). Margin streams are solved by full-batch
projected gradient descent over a sparse design matrix, which dominates a
stochastic reference solver here because every pass is two sparse matvecs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .core import DomainError, FeasibleRegion, project
from .losses import LossSpec
from .streams import Example, QuadraticExample, SparseExample


@dataclass
class ComparatorResult:
    point: np.ndarray
    losses: np.ndarray  # f_t(x*) aligned with the stream
    objective: float    # mean of losses


def _vec_margin_loss(kind: str, chi: np.ndarray) -> np.ndarray:
    if kind == "smoothed_margin":
        out = np.zeros_like(chi)
        left = chi <= 0.0
        mid = (chi > 0.0) & (chi <= 1.0)
        out[left] = 0.5 - chi[left]
        out[mid] = 0.5 * (chi[mid] - 1.0) ** 2
        return out
    if kind == "logistic":
        return np.logaddexp(0.0, -chi)
    if kind == "squared":
        return 0.5 * (1.0 - chi) ** 2
    raise DomainError(f"unknown loss kind {kind!r}")


def _vec_margin_derivative(kind: str, chi: np.ndarray) -> np.ndarray:
    if kind == "smoothed_margin":
        out = np.zeros_like(chi)
        left = chi <= 0.0
        mid = (chi > 0.0) & (chi <= 1.0)
        out[left] = -1.0
        out[mid] = chi[mid] - 1.0
        return out
    if kind == "logistic":
        return -1.0 / (1.0 + np.exp(np.minimum(chi, 700.0)))
    if kind == "squared":
        return chi - 1.0
    raise DomainError(f"unknown loss kind {kind!r}")


def design_matrix(stream: list[Example], dim: int) -> tuple[sp.csr_matrix, np.ndarray]:
    """CSR feature matrix and label vector for a margin stream."""
    indptr = np.zeros(len(stream) + 1, dtype=np.int64)
    idx_parts, val_parts, labels = [], [], np.empty(len(stream))
    for i, ex in enumerate(stream):
        if not isinstance(ex, SparseExample):
            raise DomainError("design_matrix expects a margin stream")
        idx_parts.append(ex.features.indices)
        val_parts.append(ex.features.values)
        indptr[i + 1] = indptr[i] + ex.features.nnz
        labels[i] = ex.label
    indices = np.concatenate(idx_parts) if idx_parts else np.empty(0, dtype=np.int64)
    values = np.concatenate(val_parts) if val_parts else np.empty(0)
    Z = sp.csr_matrix((values, indices, indptr), shape=(len(stream), dim))
    return Z, labels


def solve_comparator(stream: list[Example], loss: LossSpec, region: FeasibleRegion,
                     dim: int, iters: int = 300) -> ComparatorResult:
    """x* minimizing the average loss of the stream over the region, plus its
    per-step losses f_t(x*)."""
    if not stream:
        raise DomainError("empty stream")
    if isinstance(stream[0], QuadraticExample):
        centers = np.stack([ex.center for ex in stream])
        x = project(centers.mean(axis=0), region)
        if loss.l2_reg > 0.0:
            # (1 + lam) x = mean(c); still closed form, then project.
            x = project(centers.mean(axis=0) / (1.0 + loss.l2_reg), region)
        diffs = centers - x[None, :]
        losses = 0.5 * np.einsum("ij,ij->i", diffs, diffs)
        if loss.l2_reg > 0.0:
            losses = losses + 0.5 * loss.l2_reg * float(np.dot(x, x))
        return ComparatorResult(point=x, losses=losses, objective=float(losses.mean()))

    Z, y = design_matrix(stream, dim)
    n = Z.shape[0]
    row_sq = np.asarray(Z.multiply(Z).sum(axis=1)).ravel()
    z_sq_max = float(row_sq.max()) if n else 1.0
    curvature = {"smoothed_margin": 1.0, "logistic": 0.25, "squared": 1.0}[loss.kind]
    lipschitz = curvature * max(z_sq_max, 1e-12) + loss.l2_reg
    step = 1.0 / lipschitz

    x = np.zeros(dim)
    for _ in range(iters):
        chi = y * (Z @ x)
        coeff = y * _vec_margin_derivative(loss.kind, chi)
        grad = (Z.T @ coeff) / n
        if loss.l2_reg > 0.0:
            grad = grad + loss.l2_reg * x
        x = x - step * grad
        if region.kind == "l2_ball":
            x = project(x, region)

    chi = y * (Z @ x)
    losses = _vec_margin_loss(loss.kind, chi)
    if loss.l2_reg > 0.0:
        losses = losses + 0.5 * loss.l2_reg * float(np.dot(x, x))
    return ComparatorResult(point=x, losses=losses, objective=float(losses.mean()))


def comparator_losses(stream: list[Example], loss: LossSpec, x: np.ndarray) -> np.ndarray:
    """Per-step losses f_t(x) of a fixed point on the stream."""
    if not stream:
        raise DomainError("empty stream")
    if isinstance(stream[0], QuadraticExample):
        centers = np.stack([ex.center for ex in stream])
        diffs = centers - x[None, :]
        out = 0.5 * np.einsum("ij,ij->i", diffs, diffs)
    else:
        Z, y = design_matrix(stream, x.shape[0])
        out = _vec_margin_loss(loss.kind, y * (Z @ x))
    if loss.l2_reg > 0.0:
        out = out + 0.5 * loss.l2_reg * float(np.dot(x, x))
    return out
