"""Feature-sharded pipeline engine.

The feature space is partitioned into contiguous slices, one shard worker
each. Shards compute partial dot products for in-flight examples; the master
sums them in fixed shard order, derives the scalar update coefficient, and
broadcasts it; shards then update their own slices. Delay arises because up
to `window` examples flow through the dataflow at once.

Message passing only: the master never touches shard slices and a shard never
sees indices outside its range. Every shard processes the master's command
stream in order, so all slices stay mutually consistent in time and the whole
run is deterministic.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from queue import Queue

import numpy as np

from .core import DomainError, ScaledVector, SparseVector, StructuralError, eta, sdot
from .engine import RunConfig, RunResult, apply_step
from .async_engine import EngineAbort
from .ledger import RegretLedger
from .losses import margin_derivative, margin_loss
from .streams import Example, QuadraticExample, SparseExample

DEFAULT_WINDOW_CAP = 100


@dataclass(frozen=True)
class ShardPlan:
    """Contiguous ranges [start, end) partitioning [0, d); sizes differ by <= 1."""

    boundaries: tuple[tuple[int, int], ...]

    @property
    def shards(self) -> int:
        return len(self.boundaries)

    @property
    def dimension(self) -> int:
        return self.boundaries[-1][1]

    def starts(self) -> np.ndarray:
        return np.array([b[0] for b in self.boundaries], dtype=np.int64)


def plan_shards(d: int, shards: int) -> ShardPlan:
    if d < 1:
        raise DomainError("dimension must be positive")
    if not (1 <= shards <= d):
        raise DomainError(f"shards must lie in [1, {d}]")
    base, extra = divmod(d, shards)
    bounds = []
    start = 0
    for s in range(shards):
        size = base + (1 if s < extra else 0)
        bounds.append((start, start + size))
        start += size
    return ShardPlan(tuple(bounds))


def partial_dot(x_slice: np.ndarray, start: int, z: SparseVector) -> float:
    """Exact inner product of a parameter slice with a feature slice given in
    global indices. Misaligned indices are a structural error."""
    x_slice = np.asarray(x_slice, dtype=np.float64)
    if z.nnz == 0:
        return 0.0
    local = z.indices - start
    if local[0] < 0 or local[-1] >= x_slice.shape[0]:
        raise StructuralError("feature indices fall outside the slice range")
    return float(np.dot(x_slice[local], z.values))


def split_example(ex: Example, plan: ShardPlan):
    """Pre-slice an example per shard: (local indices, values) for margin
    features, or the center slice for quadratic examples."""
    if isinstance(ex, SparseExample):
        z = ex.features
        cuts = np.searchsorted(z.indices, [b[0] for b in plan.boundaries] + [plan.dimension])
        parts = []
        for s, (start, _end) in enumerate(plan.boundaries):
            lo, hi = cuts[s], cuts[s + 1]
            parts.append((z.indices[lo:hi] - start, z.values[lo:hi]))
        return parts
    if isinstance(ex, QuadraticExample):
        if ex.center.shape[0] != plan.dimension:
            raise StructuralError("center dimension does not match the shard plan")
        return [ex.center[start:end] for start, end in plan.boundaries]
    raise DomainError(f"unsupported example type {type(ex).__name__}")


def _shard_worker(sid: int, size: int, config: RunConfig, inbox: Queue, outbox: Queue):
    """One shard: owns its slice of x (as a ScaledVector so the lazy-scale
    arithmetic is identical to the simulator's), answers dot requests, applies
    broadcast updates in master order."""
    state = ScaledVector.zeros(size)
    pending: dict[int, object] = {}
    try:
        while True:
            msg = inbox.get()
            kind = msg[0]
            if kind == "stop":
                break
            if kind == "dot":
                _, k, part = msg
                if isinstance(part, tuple):  # margin features (local idx, values)
                    idx, vals = part
                    partial = sdot(state.values, idx, vals)
                    pending[k] = ("margin", idx, vals)
                else:  # quadratic center slice
                    diff = state.scale * state.values - part
                    partial = 0.5 * float(np.dot(diff, diff))
                    pending[k] = ("quad", SparseVector.from_dense(diff))
                outbox.put((sid, k, partial, state.norm_sq()))
            elif kind == "upd":
                _, k, eta_t, coeff = msg
                stash = pending.pop(k)
                if stash[0] == "margin":
                    _, idx, vals = stash
                    g = SparseVector(idx, vals).scaled(coeff) if idx.size else SparseVector.empty()
                else:
                    g = stash[1]
                apply_step(state, g, eta_t, config.loss, config.region)
            else:
                raise RuntimeError(f"unknown message {kind!r}")
    except BaseException as exc:  # noqa: BLE001 - shard failure aborts the run
        outbox.put((sid, -1, exc, None))
        return
    outbox.put((sid, -2, state.materialize(), None))


def run_pipeline(plan: ShardPlan, config: RunConfig, window: int, stream: list[Example],
                 window_cap: int = DEFAULT_WINDOW_CAP) -> RunResult:
    """Run the sharded pipeline with up to `window` examples in flight.

    The master dispatches dot requests eagerly up to the window and releases
    the scalar update for example k as soon as all its partials are in; a new
    dot request follows each update, so the post-warm-up delay is exactly
    window - 1 updates. window=1 is the fully synchronous pipeline and
    reproduces the tau=0 simulator (bit for bit with one shard). Requires the
    unbounded region: projection would need a global norm, which breaks slice
    locality.
    """
    n = len(stream)
    if n == 0:
        raise DomainError("stream must contain at least one example")
    if not (1 <= window <= window_cap):
        raise DomainError(f"window must lie in [1, {window_cap}]")
    if config.region.kind != "unbounded":
        raise DomainError("the pipeline engine supports the unbounded region only")
    if plan.dimension != config.dimension:
        raise StructuralError("shard plan does not cover the configured dimension")

    shards = plan.shards
    inboxes = [Queue() for _ in range(shards)]
    outbox: Queue = Queue()
    threads = [
        threading.Thread(target=_shard_worker, args=(s, end - start, config, inboxes[s], outbox), daemon=True)
        for s, (start, end) in enumerate(plan.boundaries)
    ]
    for th in threads:
        th.start()

    scale_rep = ScaledVector(values=np.empty(0, dtype=np.float64), scale=1.0, sq_values=0.0)
    tau_equiv = window - 1
    losses = np.empty(n, dtype=np.float64)
    errs = np.empty(n, dtype=np.float64)
    delays = np.empty(n, dtype=np.int64)
    histogram: dict[int, int] = {}
    read_scale: dict[int, float] = {}
    read_upds: dict[int, int] = {}
    partials: dict[int, list] = {}
    arrived: dict[int, int] = {}
    reg_sq: dict[int, float] = {}
    upds_sent = 0
    failure: BaseException | None = None
    failed_sids: set[int] = set()

    def send_dot(k: int):
        read_scale[k] = scale_rep.scale
        read_upds[k] = upds_sent
        partials[k] = [0.0] * shards
        arrived[k] = 0
        reg_sq[k] = 0.0
        parts = split_example(stream[k - 1], plan)
        for s in range(shards):
            inboxes[s].put(("dot", k, parts[s]))

    dots_sent = min(window, n)
    for k in range(1, dots_sent + 1):
        send_dot(k)

    completed = 0
    while completed < n and failure is None:
        sid, k, payload, sq = outbox.get()
        if k == -1:
            failure = payload
            failed_sids.add(sid)
            break
        partials[k][sid] = payload
        reg_sq[k] += sq if sq is not None else 0.0
        arrived[k] += 1
        if arrived[k] < shards:
            continue
        # example k is fully read; partials summed in fixed shard order
        ex = stream[k - 1]
        total = 0.0
        for p in partials[k]:
            total += p
        if isinstance(ex, SparseExample):
            chi = ex.label * (read_scale[k] * total)
            value = margin_loss(config.loss.kind, chi)
            err = 1.0 if chi <= 0.0 else 0.0
            coeff = ex.label * margin_derivative(config.loss.kind, chi)
        else:
            value = total
            err = math.nan
            coeff = 1.0
        if config.loss.l2_reg > 0.0:
            value += 0.5 * config.loss.l2_reg * reg_sq[k]
        losses[k - 1] = value
        errs[k - 1] = err
        d = (k - 1) - read_upds[k]
        delays[k - 1] = d
        if d > tau_equiv:
            failure = RuntimeError(f"measured delay {d} exceeded window - 1 = {tau_equiv}")
            break
        if k > tau_equiv:
            histogram[d] = histogram.get(d, 0) + 1
        eta_t = eta(config.schedule, tau_equiv + k)
        for s in range(shards):
            inboxes[s].put(("upd", k, eta_t, coeff))
        apply_step(scale_rep, SparseVector.empty(), eta_t, config.loss, config.region)
        upds_sent += 1
        for table in (partials, arrived, read_scale, read_upds, reg_sq):
            table.pop(k, None)
        completed += 1
        nxt = dots_sent + 1
        if nxt <= n:
            send_dot(nxt)
            dots_sent = nxt

    for s in range(shards):
        inboxes[s].put(("stop",))

    final = np.zeros(config.dimension, dtype=np.float64)
    done_shards: set[int] = set(failed_sids)
    while len(done_shards) < shards:
        sid, k, payload, _sq = outbox.get()
        if k == -2:
            start, end = plan.boundaries[sid]
            final[start:end] = payload
            done_shards.add(sid)
        elif k == -1:
            if failure is None:
                failure = payload
            done_shards.add(sid)  # a failed shard sends no final slice
    for th in threads:
        th.join()

    valid = failure is None
    ledger = RegretLedger(
        losses=losses[: completed if not valid else n],
        err_indicator=errs[: completed if not valid else n],
        tau=tau_equiv,
        valid=valid,
        notes=[] if valid else [f"aborted: {failure!r}"],
    )
    result = RunResult(
        final_x=final,
        ledger=ledger,
        examples=n,
        updates_applied=completed,
        delay_histogram=histogram,
        measured_delays=delays[: completed if not valid else n].copy(),
        warnings=[] if valid else ["shard failure; partial ledger"],
    )
    if failure is not None:
        raise EngineAbort(f"shard failed: {failure!r}", result)
    return result
