import threading

import numpy as np
import pytest

from conftest import random_margin_stream
from stalegrad.async_engine import (
    AsyncConfig,
    EngineAbort,
    SharedState,
    apply_update,
    run_async,
)
from stalegrad.core import DomainError, FeasibleRegion, Schedule, SparseVector
from stalegrad.engine import RunConfig, run
from stalegrad.losses import LossSpec
from stalegrad.streams import SparseExample


def make_config(dim, tau, kind="inv_sqrt_plain", lam=1.0, l2=0.0, region=None):
    return RunConfig(
        dimension=dim, tau=tau,
        schedule=Schedule(kind, sigma=0.7, lam=lam, tau=tau),
        region=region or FeasibleRegion(),
        loss=LossSpec("smoothed_margin", l2_reg=l2),
    )


class TestStrictMode:
    @pytest.mark.parametrize("workers", [1, 2, 3, 4, 8])
    def test_bitwise_equals_simulator(self, workers, rng):
        stream = random_margin_stream(rng, 150, 12)
        tau = workers - 1
        cfg = make_config(12, tau)
        sim = run(cfg, stream)
        par = run_async(AsyncConfig(workers=workers), cfg, stream)
        assert np.array_equal(sim.ledger.losses, par.ledger.losses)
        assert np.array_equal(sim.ledger.err_indicator, par.ledger.err_indicator)
        assert np.array_equal(sim.final_x, par.final_x)
        assert sim.updates_applied == par.updates_applied
        assert sim.delay_histogram == par.delay_histogram

    def test_bitwise_with_ball_and_reg(self, rng):
        stream = random_margin_stream(rng, 120, 8)
        cfg = make_config(8, 3, kind="inv_linear_strong", lam=0.1, l2=0.1,
                          region=FeasibleRegion("l2_ball", 1.0))
        sim = run(cfg, stream)
        par = run_async(AsyncConfig(workers=4), cfg, stream)
        assert np.array_equal(sim.ledger.losses, par.ledger.losses)
        assert np.array_equal(sim.final_x, par.final_x)

    def test_histogram_point_mass(self, rng):
        stream = random_margin_stream(rng, 200, 10)
        par = run_async(AsyncConfig(workers=3), make_config(10, 2), stream)
        assert set(par.delay_histogram) == {2}
        assert par.delay_histogram[2] == 200 - 2 - 2

    def test_deterministic_across_runs(self, rng):
        stream = random_margin_stream(rng, 100, 6)
        cfg = make_config(6, 3)
        a = run_async(AsyncConfig(workers=4), cfg, stream)
        b = run_async(AsyncConfig(workers=4), cfg, stream)
        assert np.array_equal(a.ledger.losses, b.ledger.losses)
        assert np.array_equal(a.final_x, b.final_x)

    def test_worker_failure_aborts_with_partial_ledger(self, rng):
        stream = random_margin_stream(rng, 50, 4)
        bad = SparseExample(1.0, SparseVector(np.array([99]), np.array([1.0])))
        stream[20] = bad  # out-of-range index: the computing worker raises
        with pytest.raises(EngineAbort) as exc_info:
            run_async(AsyncConfig(workers=2), make_config(4, 1), stream)
        partial = exc_info.value.result
        assert partial is not None
        assert not partial.ledger.valid


class TestFreeRunning:
    def test_all_updates_applied(self, rng):
        stream = random_margin_stream(rng, 300, 10)
        cfg = make_config(10, 3)
        res = run_async(AsyncConfig(workers=4, mode="free_running"), cfg, stream)
        assert res.updates_applied == 300
        assert len(res.ledger) == 300

    def test_delays_within_cap(self, rng):
        stream = random_margin_stream(rng, 400, 10)
        cfg = make_config(10, 3)
        for read in ("snapshot", "relaxed"):
            res = run_async(AsyncConfig(workers=4, mode="free_running", max_delay=9,
                                        read_consistency=read), cfg, stream)
            assert res.measured_delays is not None
            assert int(res.measured_delays.max(initial=0)) <= 9
            assert set(res.delay_histogram) <= set(range(10))

    def test_loss_close_to_simulator_at_median_delay(self, rng):
        stream = random_margin_stream(rng, 2000, 10)
        cfg = make_config(10, 3)
        res = run_async(AsyncConfig(workers=4, mode="free_running",
                                    read_consistency="relaxed"), cfg, stream)
        med = int(np.median(res.measured_delays))
        sim = run(make_config(10, med), stream)
        a, b = res.ledger.total_loss() / 2000, sim.ledger.total_loss() / 2000
        assert abs(a - b) / b < 0.02


class TestSharedState:
    def test_apply_requires_token(self):
        state = SharedState(make_config(3, 0))
        with pytest.raises(RuntimeError):
            apply_update(state, SparseVector.empty(), 0.1)

    def test_counter_increments_on_empty_gradient(self):
        state = SharedState(make_config(3, 0))
        with state.acquire_update_right():
            apply_update(state, SparseVector.empty(), 0.1)
            apply_update(state, SparseVector.empty(), 0.1)
        assert state.update_counter == 2

    def test_arithmetic_matches_simulator_step(self):
        # same example as the simulator's step contract: x=[1,0], g={(0,1)},
        # eta=0.1, no reg, unbounded -> [0.9, 0]
        state = SharedState(make_config(2, 0))
        with state.acquire_update_right():
            apply_update(state, SparseVector(np.array([0]), np.array([-1.0])), 1.0)
            apply_update(state, SparseVector(np.array([0]), np.array([1.0])), 0.1)
        np.testing.assert_allclose(state.vector.materialize(), [0.9, 0.0])
        assert state.update_counter == 2

    def test_relaxed_reads_are_never_torn(self):
        """Writers flip a coordinate between two exact values; unlocked readers
        must only ever observe one of them (aligned 8-byte atomicity)."""
        state = SharedState(make_config(1, 0))
        with state.acquire_update_right():
            apply_update(state, SparseVector(np.array([0]), np.array([-1.0])), 1.0)
        stop = threading.Event()
        seen_bad = []

        def writer():
            flip = SparseVector(np.array([0]), np.array([1.0]))
            flop = SparseVector(np.array([0]), np.array([-1.0]))
            while not stop.is_set():
                with state.acquire_update_right():
                    apply_update(state, flip, 2.0)   # 1.0 -> -1.0
                with state.acquire_update_right():
                    apply_update(state, flop, 2.0)   # -1.0 -> 1.0

        def reader():
            idx = np.array([0], dtype=np.int64)
            for _ in range(20000):
                vals, _, _ = state.relaxed_gather(idx)
                v = float(vals[0])
                if v not in (1.0, -1.0):
                    seen_bad.append(v)
                    return

        w = threading.Thread(target=writer, daemon=True)
        r = threading.Thread(target=reader, daemon=True)
        w.start(); r.start()
        r.join()
        stop.set()
        w.join()
        assert not seen_bad, f"torn or out-of-protocol values observed: {seen_bad[:3]}"


class TestAsyncConfigValidation:
    def test_max_delay_floor(self):
        with pytest.raises(DomainError):
            AsyncConfig(workers=4, max_delay=1)

    def test_mode_names(self):
        with pytest.raises(DomainError):
            AsyncConfig(workers=1, mode="chaotic")
