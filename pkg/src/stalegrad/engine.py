"""Single-threaded delayed-gradient descent with an explicit gradient FIFO.

This engine is the reference semantics: the parallel engines must reproduce
it bit for bit in their deterministic modes, so every piece of arithmetic the
engines share (margins, gradients, the update step) lives in the helpers
here and in core/losses.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import DomainError, FeasibleRegion, ScaledVector, Schedule, SparseVector, eta
from .ledger import RegretLedger
from .losses import LossSpec, margin_derivative, margin_loss
from .streams import Example, QuadraticExample, SparseExample


@dataclass(frozen=True)
class RunConfig:
    dimension: int
    tau: int
    schedule: Schedule
    region: FeasibleRegion
    loss: LossSpec
    seed: int = 0

    def __post_init__(self):
        if self.dimension < 1:
            raise DomainError("dimension must be positive")
        if self.tau < 0:
            raise DomainError("tau must be non-negative")


class DelayBuffer:
    """FIFO of (gradient, birth step, birth update-count) with capacity tau.

    After warm-up, the gradient popped at step t was pushed at step t - tau;
    tau = 0 passes gradients straight through.
    """

    def __init__(self, capacity: int):
        if capacity < 0:
            raise DomainError("capacity must be non-negative")
        self.capacity = capacity
        self._q: deque = deque()

    def __len__(self) -> int:
        return len(self._q)

    def push(self, g: SparseVector, birth_step: int, birth_applies: int) -> None:
        if len(self._q) >= self.capacity:
            raise RuntimeError("DelayBuffer overfilled beyond its capacity")
        self._q.append((g, birth_step, birth_applies))

    def exchange(self, g: SparseVector, birth_step: int, birth_applies: int):
        """Pop the oldest entry, push the new one; size is preserved."""
        if self.capacity == 0:
            return g, birth_step, birth_applies
        out = self._q.popleft()
        self._q.append((g, birth_step, birth_applies))
        return out


@dataclass
class RunResult:
    """Trajectory summary plus the ledger (and, for parallel engines, delays)."""

    final_x: np.ndarray
    ledger: RegretLedger
    examples: int
    updates_applied: int
    delay_histogram: dict[int, int] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    exp_clamps: int = 0
    measured_delays: np.ndarray | None = None


def predict_example(state: ScaledVector, loss: LossSpec, ex: Example):
    """Loss and progressive-validation outcome of the current iterate on ex,
    computed before any update. Returns (loss value, err indicator, margin)."""
    if isinstance(ex, SparseExample):
        chi_raw = state.dot(ex.features)
        chi = ex.label * chi_raw
        value = margin_loss(loss.kind, chi)
        if loss.l2_reg > 0.0:
            value += 0.5 * loss.l2_reg * state.norm_sq()
        err = 1.0 if chi <= 0.0 else 0.0
        return value, err, chi
    if isinstance(ex, QuadraticExample):
        diff = state.materialize() - ex.center
        value = 0.5 * float(np.dot(diff, diff))
        if loss.l2_reg > 0.0:
            value += 0.5 * loss.l2_reg * state.norm_sq()
        return value, math.nan, math.nan
    raise DomainError(f"unsupported example type {type(ex).__name__}")


def gradient_at(state: ScaledVector, loss: LossSpec, ex: Example, chi: float) -> SparseVector:
    """Data-term gradient at the current iterate; the L2 term stays lazy."""
    if isinstance(ex, SparseExample):
        coeff = ex.label * margin_derivative(loss.kind, chi)
        return ex.features.scaled(coeff)
    diff = state.materialize() - ex.center
    return SparseVector.from_dense(diff)


def apply_step(state: ScaledVector, g: SparseVector, eta_t: float,
               loss: LossSpec, region: FeasibleRegion) -> None:
    """One update: lazy L2 shrinkage, sparse gradient step, projection.

    The async and pipeline engines route their updates through the exact same
    arithmetic, which is what makes the bitwise-equivalence contracts hold.
    """
    if loss.l2_reg > 0.0:
        state.rescale(1.0 - eta_t * loss.l2_reg)
    state.apply_gradient(g, eta_t)
    if region.kind == "l2_ball":
        state.project_ball(region.radius)


def step(state: ScaledVector, g_delayed: SparseVector, t: int, config: RunConfig) -> None:
    """The update of the main loop at step t, exposed for reuse. t must exceed tau."""
    if t <= config.tau:
        raise DomainError(f"no update is defined at t={t} <= tau={config.tau}")
    apply_step(state, g_delayed, eta(config.schedule, t), config.loss, config.region)


def run(config: RunConfig, stream: list[Example]) -> RunResult:
    """Delayed SGD over the stream.

    Warm-up: the iterate stays at 0 for steps 1..tau while their gradients
    are enqueued. Main loop (t = tau+1..N): incur f_t(x_t), enqueue g_t, pop
    g_{t-tau}, update. The ledger covers every step including warm-up; the
    final tau gradients are computed but never applied, so the run has
    exactly max(0, N - tau) updates. The delay histogram counts post-warm-up
    applies only (the first tau applies are the initialization transient).
    """
    n = len(stream)
    if n == 0:
        raise DomainError("stream must contain at least one example")
    tau = config.tau
    warnings: list[str] = []
    if tau >= n:
        warnings.append(f"tau={tau} >= stream length {n}: no updates will be applied")

    state = ScaledVector.zeros(config.dimension)
    buf = DelayBuffer(min(tau, n))
    losses = np.empty(n, dtype=np.float64)
    errs = np.empty(n, dtype=np.float64)
    histogram: dict[int, int] = {}
    applies = 0

    for t in range(1, n + 1):
        ex = stream[t - 1]
        value, err, chi = predict_example(state, config.loss, ex)
        losses[t - 1] = value
        errs[t - 1] = err
        g = gradient_at(state, config.loss, ex, chi)
        if t <= tau:
            buf.push(g, t, applies)
            continue
        g_old, birth_step, birth_applies = buf.exchange(g, t, applies)
        if birth_step != t - tau:
            raise RuntimeError(f"delay contract broken: popped birth {birth_step} at step {t}")
        apply_step(state, g_old, eta(config.schedule, t), config.loss, config.region)
        applies += 1
        if applies > tau:
            d = (applies - 1) - birth_applies
            histogram[d] = histogram.get(d, 0) + 1

    ledger = RegretLedger(losses=losses, err_indicator=errs, tau=tau)
    return RunResult(
        final_x=state.materialize(),
        ledger=ledger,
        examples=n,
        updates_applied=applies,
        delay_histogram=histogram,
        warnings=warnings,
    )
