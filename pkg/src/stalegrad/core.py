"""Shared numeric foundations: sparse/dense vectors, projection, step-size schedules.

Everything here is 64-bit float and side-effect free unless the docstring
says otherwise; engines own all mutation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SCALE_RENORM_THRESHOLD = 1e-6


class DomainError(ValueError):
    """Input violates an operation's mathematical domain."""


class StructuralError(ValueError):
    """Input violates a structural contract (shapes, index ranges, alignment)."""


@dataclass(frozen=True)
class SparseVector:
    """Sorted sparse vector: strictly increasing indices, no stored zeros."""

    indices: np.ndarray  # int64, strictly increasing
    values: np.ndarray   # float64, no exact zeros

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if idx.ndim != 1 or val.ndim != 1 or idx.shape != val.shape:
            raise StructuralError("indices and values must be 1-d arrays of equal length")
        if idx.size:
            if np.any(np.diff(idx) <= 0):
                raise StructuralError("indices must be strictly increasing")
            if idx[0] < 0:
                raise StructuralError("negative index")
            if np.any(val == 0.0):
                raise StructuralError("zero-valued entries must not be stored")
            if not np.all(np.isfinite(val)):
                raise DomainError("non-finite sparse value")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @classmethod
    def from_pairs(cls, pairs) -> "SparseVector":
        """Build from an iterable of (index, value); accumulates duplicates, drops zeros."""
        acc: dict[int, float] = {}
        for i, v in pairs:
            acc[int(i)] = acc.get(int(i), 0.0) + float(v)
        items = sorted((i, v) for i, v in acc.items() if v != 0.0)
        if not items:
            return cls.empty()
        idx, val = zip(*items)
        return cls(np.array(idx, dtype=np.int64), np.array(val, dtype=np.float64))

    @classmethod
    def empty(cls) -> "SparseVector":
        return cls(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64))

    @classmethod
    def from_dense(cls, x: np.ndarray) -> "SparseVector":
        x = np.asarray(x, dtype=np.float64)
        idx = np.nonzero(x)[0].astype(np.int64)
        return cls(idx, x[idx])

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def to_dense(self, dim: int) -> np.ndarray:
        if self.indices.size and self.indices[-1] >= dim:
            raise StructuralError(f"index {int(self.indices[-1])} out of range for dim {dim}")
        out = np.zeros(dim, dtype=np.float64)
        out[self.indices] = self.values
        return out

    def scaled(self, a: float) -> "SparseVector":
        if a == 0.0:
            return SparseVector.empty()
        v = a * self.values
        if np.any(v == 0.0):  # underflow can zero entries; keep the invariant
            keep = v != 0.0
            return SparseVector(self.indices[keep], v[keep])
        return SparseVector(self.indices, v)

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def dot_dense(self, x: np.ndarray) -> float:
        return sdot(x, self.indices, self.values)


def sdot(dense: np.ndarray, indices: np.ndarray, values: np.ndarray) -> float:
    """Canonical sparse-against-dense inner product.

    Every engine computes margins through this one helper so that results are
    bit-identical across engines (floating-point summation order is fixed by
    the gather + dot below).
    """
    if indices.size == 0:
        return 0.0
    return float(np.dot(dense[indices], values))


@dataclass(frozen=True)
class FeasibleRegion:
    """Feasible set: all of R^d, or the L2 ball of a given radius."""

    kind: str = "unbounded"  # "unbounded" | "l2_ball"
    radius: float = 1.0

    def __post_init__(self):
        if self.kind not in ("unbounded", "l2_ball"):
            raise DomainError(f"unknown region kind {self.kind!r}")
        if self.kind == "l2_ball" and not (self.radius > 0):
            raise DomainError("l2_ball radius must be positive")

    def diameter_sq_bound(self) -> float:
        """Upper bound F^2 on the half-squared-distance diameter max_{x,x'} ||x-x'||^2 / 2."""
        if self.kind == "unbounded":
            return float("inf")
        return 2.0 * self.radius * self.radius


def project(x: np.ndarray, region: FeasibleRegion) -> np.ndarray:
    """Euclidean projection of x onto the region. Rejects non-finite input.

    Rescales until the norm is inside the ball so the operation is exactly
    idempotent; a single rescale can land one ulp outside, in which case the
    next scale factor rounds to 1 and the loop stops making progress.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DomainError("cannot project a non-finite vector")
    out = x.copy()
    if region.kind == "unbounded":
        return out
    n = float(np.linalg.norm(out))
    while n > region.radius:
        c = region.radius / n
        if c >= 1.0:
            break
        out = out * c
        n = float(np.linalg.norm(out))
    return out


@dataclass(frozen=True)
class Schedule:
    """Step-size schedule eta_t.

    kinds:
      inv_sqrt_shifted   eta_t = sigma / sqrt(t - tau), defined for t > tau
      inv_linear_strong  eta_t = 1 / (lam * (t - tau)), defined for t > tau
      inv_sqrt_plain     eta_t = 1 / sqrt(t)
    """

    kind: str
    sigma: float = 1.0
    lam: float = 1.0
    tau: int = 0

    def __post_init__(self):
        if self.kind not in ("inv_sqrt_shifted", "inv_linear_strong", "inv_sqrt_plain"):
            raise DomainError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "inv_sqrt_shifted" and not (self.sigma > 0):
            raise DomainError("sigma must be positive")
        if self.kind == "inv_linear_strong" and not (self.lam > 0):
            raise DomainError("lam must be positive")
        if self.tau < 0:
            raise DomainError("tau must be non-negative")


def eta(schedule: Schedule, t: int) -> float:
    """Step size at step t (1-based). Shifted kinds reject t <= tau outright."""
    if t < 1:
        raise DomainError("t must be a positive integer")
    if schedule.kind == "inv_sqrt_plain":
        return 1.0 / np.sqrt(t)
    if t <= schedule.tau:
        raise DomainError(f"schedule undefined at t={t} <= tau={schedule.tau}")
    if schedule.kind == "inv_sqrt_shifted":
        return schedule.sigma / np.sqrt(t - schedule.tau)
    return 1.0 / (schedule.lam * (t - schedule.tau))


def axpy(x: np.ndarray, a: float, g: SparseVector) -> np.ndarray:
    """x + a * g, touching only g's indices. Returns a new array."""
    out = np.array(x, dtype=np.float64, copy=True)
    if g.nnz == 0 or a == 0.0:
        return out
    if int(g.indices[-1]) >= out.shape[0]:
        raise StructuralError(
            f"gradient index {int(g.indices[-1])} out of range for dim {out.shape[0]}"
        )
    out[g.indices] += a * g.values
    return out


@dataclass
class ScaledVector:
    """Mutable iterate stored as x = scale * values.

    The scalar lets L2 shrinkage run in O(1) while gradient steps stay sparse.
    sq_values tracks sum(values**2) incrementally so the regularizer term of
    the loss is O(nnz) per step; it is bookkeeping only and never feeds back
    into the update arithmetic. Not thread-safe: engines serialize mutation.
    """

    values: np.ndarray
    scale: float = 1.0
    sq_values: float = field(default=0.0)

    @classmethod
    def zeros(cls, dim: int) -> "ScaledVector":
        if dim <= 0:
            raise DomainError("dimension must be positive")
        return cls(values=np.zeros(dim, dtype=np.float64), scale=1.0, sq_values=0.0)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def materialize(self) -> np.ndarray:
        return self.scale * self.values

    def dot(self, z: SparseVector) -> float:
        return self.scale * sdot(self.values, z.indices, z.values)

    def norm_sq(self) -> float:
        """||x||^2 from the incremental tracker."""
        return self.scale * self.scale * self.sq_values

    def recompute_norm_sq(self) -> float:
        """Exact ||x||^2; O(d). Used by tests to audit the tracker."""
        return self.scale * self.scale * float(np.dot(self.values, self.values))

    def rescale(self, factor: float) -> None:
        """x <- factor * x via the lazy scalar; folds the scale in near underflow."""
        self.scale *= factor
        if abs(self.scale) < SCALE_RENORM_THRESHOLD:
            self.values *= self.scale
            self.sq_values *= self.scale * self.scale
            self.scale = 1.0

    def apply_gradient(self, g: SparseVector, step: float) -> None:
        """x <- x - step * g, touching only g's indices."""
        if g.nnz == 0:
            return
        idx = g.indices
        old = self.values[idx]
        new = old - (step / self.scale) * g.values
        self.values[idx] = new
        self.sq_values += float(np.dot(new, new) - np.dot(old, old))

    def project_ball(self, radius: float) -> None:
        """Scale back onto the L2 ball; applied densely so no lazy factor is
        involved. Same shrink-until-inside loop as `project`."""
        n = abs(self.scale) * float(np.linalg.norm(self.values))
        while n > radius:
            c = radius / n
            if c >= 1.0:
                break
            self.values *= c
            self.sq_values *= c * c
            n = abs(self.scale) * float(np.linalg.norm(self.values))

    def snapshot(self) -> "ScaledVector":
        return ScaledVector(values=self.values.copy(), scale=self.scale, sq_values=self.sq_values)
