"""Shared-parameter asynchronous engine: n workers compute gradients against
one parameter vector and updates are applied one at a time.

round_robin_strict serializes reads and applies into the canonical round-robin
schedule, which makes the run deterministic and bit-identical to the delay
simulator at tau = n - 1 (same helpers, same arithmetic, same order). The
final tau computed gradients are left unapplied, mirroring the simulator's
termination. free_running applies gradients in completion order, measures the
delays it actually produced, and applies every gradient; producers stall when
the oldest in-flight gradient is about to exceed max_delay.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from queue import Empty, Queue

import numpy as np

from .core import DomainError, ScaledVector, SparseVector, eta, sdot
from .engine import RunConfig, RunResult, apply_step, gradient_at, predict_example
from .ledger import RegretLedger
from .losses import margin_derivative, margin_loss
from .streams import Example, QuadraticExample, SparseExample


@dataclass(frozen=True)
class AsyncConfig:
    workers: int
    mode: str = "round_robin_strict"      # | "free_running"
    max_delay: int = 100
    read_consistency: str = "snapshot"    # | "relaxed"

    def __post_init__(self):
        if self.workers < 1:
            raise DomainError("workers must be >= 1")
        if self.mode not in ("round_robin_strict", "free_running"):
            raise DomainError(f"unknown mode {self.mode!r}")
        if self.read_consistency not in ("snapshot", "relaxed"):
            raise DomainError(f"unknown read consistency {self.read_consistency!r}")
        if self.max_delay < self.workers - 1:
            raise DomainError("max_delay must be >= workers - 1")


class EngineAbort(RuntimeError):
    """A worker failed; carries the partial, invalidated result."""

    def __init__(self, message: str, result: RunResult | None = None):
        super().__init__(message)
        self.result = result


class SharedState:
    """The one parameter vector, guarded by a lock and an update token.

    Updates require holding the token (single logical updater); reads either
    copy under the lock (snapshot) or gather per-coordinate without it
    (relaxed; aligned 8-byte reads cannot tear).
    """

    def __init__(self, config: RunConfig):
        self.config = config
        self.vector = ScaledVector.zeros(config.dimension)
        self.lock = threading.Lock()
        self.update_counter = 0
        self._owner: int | None = None

    def acquire_update_right(self):
        state = self

        class _Token:
            def __enter__(self_inner):
                state.lock.acquire()
                state._owner = threading.get_ident()
                return state

            def __exit__(self_inner, *exc):
                state._owner = None
                state.lock.release()
                return False

        return _Token()

    def apply(self, g: SparseVector, eta_t: float) -> None:
        if self._owner != threading.get_ident():
            raise RuntimeError("apply requires the update right (lock or token)")
        apply_step(self.vector, g, eta_t, self.config.loss, self.config.region)
        self.update_counter += 1

    def snapshot(self) -> ScaledVector:
        with self.lock:
            return self.vector.snapshot()

    def relaxed_gather(self, indices: np.ndarray) -> tuple[np.ndarray, float, float]:
        """Unlocked (values[indices], scale, sq_values): coordinates are
        individually atomic but the tuple is not a consistent snapshot."""
        return self.vector.values[indices], self.vector.scale, self.vector.sq_values


def apply_update(state: SharedState, g: SparseVector, eta_t: float) -> None:
    """Apply one gradient under the update right; identical arithmetic to the
    simulator's step. The counter increments even for an empty gradient."""
    state.apply(g, eta_t)


def _compute_snapshot(state_view: ScaledVector, config: RunConfig, ex: Example):
    value, err, chi = predict_example(state_view, config.loss, ex)
    g = gradient_at(state_view, config.loss, ex, chi)
    return value, err, g


def _compute_relaxed(shared: SharedState, config: RunConfig, ex: Example):
    if isinstance(ex, SparseExample):
        z = ex.features
        vals, scale, sq = shared.relaxed_gather(z.indices)
        chi = ex.label * (scale * float(np.dot(vals, z.values)) if z.nnz else 0.0)
        value = margin_loss(config.loss.kind, chi)
        if config.loss.l2_reg > 0.0:
            value += 0.5 * config.loss.l2_reg * scale * scale * sq
        err = 1.0 if chi <= 0.0 else 0.0
        coeff = ex.label * margin_derivative(config.loss.kind, chi)
        return value, err, z.scaled(coeff)
    if isinstance(ex, QuadraticExample):
        # racy full copy; per-element reads are still atomic
        x = shared.vector.scale * shared.vector.values.copy()
        diff = x - ex.center
        value = 0.5 * float(np.dot(diff, diff))
        return value, float("nan"), SparseVector.from_dense(diff)
    raise DomainError(f"unsupported example type {type(ex).__name__}")


def run_async(acfg: AsyncConfig, config: RunConfig, stream: list[Example]) -> RunResult:
    if len(stream) == 0:
        raise DomainError("stream must contain at least one example")
    if acfg.mode == "round_robin_strict":
        return _run_strict(acfg, config, stream)
    return _run_free(acfg, config, stream)


# --- strict mode -----------------------------------------------------------

class _EventClock:
    """Global sequencer: thread i executes its events when the cursor reaches
    them. Keeps the strict schedule deterministic under real threads."""

    def __init__(self, events: list[tuple[str, int]]):
        self.events = events
        self.cursor = 0
        self.cond = threading.Condition()
        self.failure: BaseException | None = None

    def wait_for(self, event: tuple[str, int]):
        with self.cond:
            while self.failure is None and (
                self.cursor < len(self.events) and self.events[self.cursor] != event
            ):
                self.cond.wait()
            if self.failure is not None:
                raise EngineAbort("aborted by peer failure")

    def advance(self):
        with self.cond:
            self.cursor += 1
            self.cond.notify_all()

    def abort(self, exc: BaseException):
        with self.cond:
            if self.failure is None:
                self.failure = exc
            self.cond.notify_all()


def _strict_schedule(n_examples: int, workers: int) -> list[tuple[str, int]]:
    tau = workers - 1
    events: list[tuple[str, int]] = []
    for k in range(1, min(workers, n_examples) + 1):
        events.append(("read", k))
    for k in range(1, n_examples - tau + 1):
        events.append(("apply", k))
        if k + workers <= n_examples:
            events.append(("read", k + workers))
    return events


def _run_strict(acfg: AsyncConfig, config: RunConfig, stream: list[Example]) -> RunResult:
    n = len(stream)
    workers = acfg.workers
    tau = workers - 1
    shared = SharedState(config)
    clock = _EventClock(_strict_schedule(n, workers))
    losses = np.full(n, np.nan)
    errs = np.full(n, np.nan)
    histogram: dict[int, int] = {}
    applies_total = max(0, n - tau)

    def worker(w: int):
        try:
            for k in range(w + 1, n + 1, workers):
                clock.wait_for(("read", k))
                view = shared.vector.snapshot()
                birth = shared.update_counter
                clock.advance()
                value, err, g = _compute_snapshot(view, config, stream[k - 1])
                losses[k - 1] = value
                errs[k - 1] = err
                if k > applies_total:
                    continue  # tail gradient: computed, never applied
                clock.wait_for(("apply", k))
                with shared.acquire_update_right():
                    before = shared.update_counter
                    apply_update(shared, g, eta(config.schedule, tau + k))
                if k > tau:
                    d = before - birth
                    if d > acfg.max_delay:
                        raise RuntimeError(f"delay {d} exceeded max_delay {acfg.max_delay}")
                    histogram[d] = histogram.get(d, 0) + 1
                clock.advance()
        except EngineAbort:
            pass
        except BaseException as exc:  # noqa: BLE001 - worker panic aborts the run
            clock.abort(exc)

    threads = [threading.Thread(target=worker, args=(w,), daemon=True) for w in range(workers)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()

    if clock.failure is not None:
        ledger = RegretLedger(losses=losses, err_indicator=errs, tau=tau, valid=False,
                              notes=[f"aborted: {clock.failure!r}"])
        partial = RunResult(final_x=shared.vector.materialize(), ledger=ledger,
                            examples=n, updates_applied=shared.update_counter,
                            delay_histogram=histogram,
                            warnings=["worker failure; ledger is a partial prefix"])
        raise EngineAbort(f"worker failed: {clock.failure!r}", partial)

    ledger = RegretLedger(losses=losses, err_indicator=errs, tau=tau)
    warnings = []
    if tau >= n:
        warnings.append(f"workers-1={tau} >= stream length {n}: no updates were applied")
    return RunResult(final_x=shared.vector.materialize(), ledger=ledger, examples=n,
                     updates_applied=shared.update_counter, delay_histogram=histogram,
                     warnings=warnings)


# --- free-running mode ------------------------------------------------------

def _run_free(acfg: AsyncConfig, config: RunConfig, stream: list[Example]) -> RunResult:
    n = len(stream)
    workers = acfg.workers
    shared = SharedState(config)
    updates: Queue = Queue(maxsize=max(2 * workers, 4))
    gate = threading.Condition()
    in_flight: dict[int, int] = {}  # example id -> birth counter
    # Producers stall before the oldest in-flight gradient can exceed
    # max_delay. At most `cap` gradients fly at once and no read happens once
    # the counter has moved `threshold` past the oldest birth; together these
    # bound every birth-to-apply span by threshold + 2*cap - 1 <= max_delay.
    cap = max(1, min(workers + 1, (acfg.max_delay + 1) // 2))
    threshold = max(0, acfg.max_delay - 2 * cap + 1)
    abort: list[BaseException] = []

    def may_start() -> bool:
        if abort:
            return True
        if not in_flight:
            return True
        if len(in_flight) >= cap:
            return False
        return (shared.update_counter - min(in_flight.values())) < threshold

    def worker(w: int):
        try:
            for k in range(w + 1, n + 1, workers):
                with gate:
                    gate.wait_for(may_start)
                    if abort:
                        return
                    birth = shared.update_counter
                    in_flight[k] = birth
                if acfg.read_consistency == "snapshot":
                    view = shared.snapshot()
                    value, err, g = _compute_snapshot(view, config, stream[k - 1])
                else:
                    value, err, g = _compute_relaxed(shared, config, stream[k - 1])
                updates.put((k, birth, value, err, g))
        except BaseException as exc:  # noqa: BLE001
            abort.append(exc)
            with gate:
                gate.notify_all()
            updates.put(None)

    threads = [threading.Thread(target=worker, args=(w,), daemon=True) for w in range(workers)]
    for th in threads:
        th.start()

    losses, errs, delays = [], [], []
    histogram: dict[int, int] = {}
    applied = 0
    failure: BaseException | None = None
    while applied < n:
        item = updates.get()
        if item is None:
            failure = abort[0] if abort else RuntimeError("worker stopped unexpectedly")
            break
        k, birth, value, err, g = item
        with shared.acquire_update_right():
            before = shared.update_counter
            apply_update(shared, g, eta(config.schedule, (workers - 1) + before + 1))
        d = before - birth
        if d > acfg.max_delay:
            failure = RuntimeError(f"delay {d} exceeded max_delay {acfg.max_delay}")
            break
        applied += 1
        losses.append(value)
        errs.append(err)
        delays.append(d)
        if applied > workers - 1:
            histogram[d] = histogram.get(d, 0) + 1
        with gate:
            in_flight.pop(k, None)
            gate.notify_all()

    if failure is not None:
        abort.append(failure)
        with gate:
            gate.notify_all()
        # keep draining so producers blocked on a full queue can exit
        while any(th.is_alive() for th in threads):
            try:
                updates.get(timeout=0.05)
            except Empty:
                pass
    for th in threads:
        th.join()

    ledger = RegretLedger(losses=np.array(losses), err_indicator=np.array(errs),
                          tau=workers - 1, valid=failure is None,
                          notes=[] if failure is None else [f"aborted: {failure!r}"])
    result = RunResult(final_x=shared.vector.materialize(), ledger=ledger, examples=n,
                       updates_applied=applied, delay_histogram=histogram,
                       measured_delays=np.array(delays, dtype=np.int64),
                       warnings=[] if failure is None else ["worker failure; partial ledger"])
    if failure is not None:
        raise EngineAbort(f"worker failed: {failure!r}", result)
    return result
