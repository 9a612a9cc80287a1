"""Delayed mirror descent: Bregman geometry with implicit (dual-space) updates.

The squared-norm map reduces to the Euclidean engine and shares its code path
outright, so the two are bit-identical by construction. The unnormalized
negative-entropy map yields delayed exponentiated gradient descent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DomainError, ScaledVector, SparseVector, eta
from .engine import DelayBuffer, RunConfig, RunResult, gradient_at, predict_example, run as run_euclidean
from .ledger import RegretLedger
from .losses import margin_derivative, margin_loss
from .streams import Example, QuadraticExample, SparseExample

MAP_KINDS = ("squared_norm", "neg_entropy_unnormalized")
EXP_CLAMP = 700.0  # |exponent| above this would overflow float64


@dataclass(frozen=True)
class MirrorMap:
    """kind selects the potential; Phi is the implicit-update Lipschitz
    constant used by the Bregman regret bound (supplied or measured, there is
    no closed form for the entropy map). normalize renormalizes entropy-map
    iterates onto the simplex after each step (expert-advice variant)."""

    kind: str
    Phi: float | None = None
    normalize: bool = False

    def __post_init__(self):
        if self.kind not in MAP_KINDS:
            raise DomainError(f"unknown mirror map kind {self.kind!r}")
        if self.Phi is not None and not (self.Phi > 0):
            raise DomainError("Phi must be positive when supplied")
        if self.normalize and self.kind != "neg_entropy_unnormalized":
            raise DomainError("normalize applies to the entropy map only")


def bregman(mmap: MirrorMap, x: np.ndarray, xp: np.ndarray) -> float:
    """D_phi(x||x') = phi(x) - phi(x') - <x - x', grad phi(x')>; >= 0, zero iff x = x'."""
    x = np.asarray(x, dtype=np.float64)
    xp = np.asarray(xp, dtype=np.float64)
    if x.shape != xp.shape:
        raise DomainError("mismatched shapes")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xp))):
        raise DomainError("non-finite input")
    if mmap.kind == "squared_norm":
        d = x - xp
        return 0.5 * float(np.dot(d, d))
    if np.any(x <= 0.0) or np.any(xp <= 0.0):
        raise DomainError("entropy map requires strictly positive coordinates")
    return float(np.sum(x * np.log(x / xp) - x + xp))


def mirror_step(mmap: MirrorMap, x: np.ndarray, g: SparseVector, eta_t: float) -> np.ndarray:
    """One implicit update x -> grad phi*(grad phi(x) - eta * g).

    squared_norm: x - eta*g. neg_entropy: coordinate-wise x_i * exp(-eta*g_i)
    (exponents are clamped at +-700 to dodge float overflow; callers that
    care count clamps via run_mirror's report).
    """
    x = np.asarray(x, dtype=np.float64)
    if not (eta_t > 0):
        raise DomainError("eta must be positive")
    if mmap.kind == "squared_norm":
        out = x.copy()
        if g.nnz:
            out[g.indices] -= eta_t * g.values
        return out
    if np.any(x <= 0.0):
        raise DomainError("entropy map requires strictly positive coordinates")
    out = x.copy()
    if g.nnz:
        expo = np.clip(-eta_t * g.values, -EXP_CLAMP, EXP_CLAMP)
        out[g.indices] = out[g.indices] * np.exp(expo)
    if mmap.normalize:
        out /= np.sum(out)
    return out


def measure_phi(mmap: MirrorMap, dim: int, seed: int = 0, samples: int = 1000,
                point_scale: float = 1.0, dual_scale: float = 1.0) -> float:
    """Empirical Phi: max over sampled (x, x') of
    ||grad phi*(grad phi(x) - x') - x|| / ||x'||. Exactly 1 for squared_norm;
    for the entropy map this is a domain-dependent measurement, not a bound."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        if mmap.kind == "squared_norm":
            x = rng.standard_normal(dim) * point_scale
        else:
            x = rng.random(dim) * point_scale + 1e-3
        xp = rng.standard_normal(dim) * dual_scale
        n = float(np.linalg.norm(xp))
        if n == 0.0:
            continue
        if mmap.kind == "squared_norm":
            moved = x - xp
        else:
            moved = x * np.exp(np.clip(-xp, -EXP_CLAMP, EXP_CLAMP))
        ratio = float(np.linalg.norm(moved - x)) / n
        worst = max(worst, ratio)
    return worst


def run_mirror(config: RunConfig, mmap: MirrorMap, stream: list[Example]) -> RunResult:
    """Delayed mirror descent with the same loop and FIFO semantics as the
    Euclidean engine.

    squared_norm delegates to that engine outright (it is the same
    algorithm). The entropy map initializes iterates at 1/d (zero is outside
    its domain), requires an unbounded region and zero L2 shrinkage, and
    keeps every iterate strictly positive.
    """
    if mmap.kind == "squared_norm":
        return run_euclidean(config, stream)

    if config.loss.l2_reg > 0.0:
        raise DomainError("lazy L2 shrinkage is undefined for the entropy map; use l2_reg=0")
    if config.region.kind != "unbounded":
        raise DomainError("the entropy map runs over the unbounded region only")

    n = len(stream)
    if n == 0:
        raise DomainError("stream must contain at least one example")
    tau = config.tau
    warnings: list[str] = []
    if tau >= n:
        warnings.append(f"tau={tau} >= stream length {n}: no updates will be applied")

    x = np.full(config.dimension, 1.0 / config.dimension, dtype=np.float64)
    buf = DelayBuffer(min(tau, n))
    losses = np.empty(n, dtype=np.float64)
    errs = np.empty(n, dtype=np.float64)
    histogram: dict[int, int] = {}
    applies = 0
    clamps = 0

    for t in range(1, n + 1):
        ex = stream[t - 1]
        value, err, chi = _predict_dense(x, config, ex)
        losses[t - 1] = value
        errs[t - 1] = err
        g = _gradient_dense(x, config, ex, chi)
        if t <= tau:
            buf.push(g, t, applies)
            continue
        g_old, birth_step, birth_applies = buf.exchange(g, t, applies)
        if birth_step != t - tau:
            raise RuntimeError(f"delay contract broken: popped birth {birth_step} at step {t}")
        eta_t = eta(config.schedule, t)
        if g_old.nnz:
            raw = -eta_t * g_old.values
            if np.any(np.abs(raw) > EXP_CLAMP):
                clamps += int(np.sum(np.abs(raw) > EXP_CLAMP))
            x[g_old.indices] = x[g_old.indices] * np.exp(np.clip(raw, -EXP_CLAMP, EXP_CLAMP))
        if mmap.normalize:
            x /= np.sum(x)
        applies += 1
        if applies > tau:
            d = (applies - 1) - birth_applies
            histogram[d] = histogram.get(d, 0) + 1

    if clamps:
        warnings.append(f"{clamps} exponent(s) clamped at +-{EXP_CLAMP:g} during updates")
    ledger = RegretLedger(losses=losses, err_indicator=errs, tau=tau)
    return RunResult(
        final_x=x,
        ledger=ledger,
        examples=n,
        updates_applied=applies,
        delay_histogram=histogram,
        warnings=warnings,
        exp_clamps=clamps,
    )


def _predict_dense(x: np.ndarray, config: RunConfig, ex: Example):
    if isinstance(ex, SparseExample):
        chi = ex.label * ex.features.dot_dense(x)
        return margin_loss(config.loss.kind, chi), (1.0 if chi <= 0.0 else 0.0), chi
    if isinstance(ex, QuadraticExample):
        diff = x - ex.center
        return 0.5 * float(np.dot(diff, diff)), math.nan, math.nan
    raise DomainError(f"unsupported example type {type(ex).__name__}")


def _gradient_dense(x: np.ndarray, config: RunConfig, ex: Example, chi: float) -> SparseVector:
    if isinstance(ex, SparseExample):
        coeff = ex.label * margin_derivative(config.loss.kind, chi)
        return ex.features.scaled(coeff)
    return SparseVector.from_dense(x - ex.center)
