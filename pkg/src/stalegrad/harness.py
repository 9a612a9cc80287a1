"""Experiment harness: delay sweeps, engine selection, bound comparison, CSVs.

Config files are flat `key = value` text with `#` comments and dotted keys.
Outputs per experiment: curve_tau<T>_rep<R>.csv (t,loss,cumloss,err,regret),
summary.csv (per-delay aggregates), bounds.csv (formula values vs empirical
regret). Reruns with the same config and seed write byte-identical files for
the deterministic engines.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import bounds as bounds_mod
from .async_engine import AsyncConfig, run_async
from .comparator import comparator_losses, solve_comparator
from .core import DomainError, FeasibleRegion, Schedule
from .engine import RunConfig, RunResult, run as run_simulator
from .ledger import RegretLedger
from .losses import LossSpec, constants_for
from .mirror import MirrorMap, run_mirror
from .pipeline import plan_shards, run_pipeline
from .streams import (
    HashConfig,
    SparseExample,
    hash_corpus,
    load_corpus,
    permute,
    synthetic_stream,
    synthetic_text_corpus,
)

OUTPUT_DIR_ENV = "STALEGRAD_OUTPUT_DIR"

ENGINES = ("simulator", "mirror", "async", "pipeline")
DATA_KINDS = ("corpus", "synthetic_text", "quadratic_iid", "linear_margin_iid", "correlated_blocks")


class ConfigError(DomainError):
    """Bad experiment input (unreadable data, invalid keys); exit code 2."""


def parse_config_text(text: str) -> dict[str, str]:
    """Flat `key = value` lines; `#` starts a comment; blank lines ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected `key = value`, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def _get(mapping, key, default=None):
    return mapping.get(key, default)


def _get_float(mapping, key, default):
    raw = mapping.get(key)
    if raw is None:
        return default
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: not a number: {raw!r}") from exc


def _get_int(mapping, key, default):
    raw = mapping.get(key)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: not an integer: {raw!r}") from exc


def _get_bool(mapping, key, default):
    raw = mapping.get(key)
    if raw is None:
        return default
    if raw.lower() in ("true", "1", "yes", "on"):
        return True
    if raw.lower() in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: not a boolean: {raw!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    engine: str
    delays: tuple[int, ...]
    repeats: int
    seed: int
    outputs: str
    data_kind: str
    data_params: dict
    features: str
    hash_cfg: HashConfig
    dimension: int
    loss: LossSpec
    region: FeasibleRegion
    schedule_kind: str
    sigma: float
    mirror_kind: str
    mirror_normalize: bool
    async_mode: str
    async_max_delay: int
    async_read: str
    shards: int
    comparator_iters: int
    bound_overrides: dict
    delay_trace: bool

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ConfigError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        if not self.delays:
            raise ConfigError("delays must be non-empty")
        if any(d < 0 for d in self.delays):
            raise ConfigError("delays must be non-negative")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.data_kind not in DATA_KINDS:
            raise ConfigError(f"data.kind must be one of {DATA_KINDS}, got {self.data_kind!r}")
        if self.features not in ("linear", "quadratic"):
            raise ConfigError("features must be linear or quadratic")


def experiment_config_from_mapping(mapping: dict[str, str]) -> ExperimentConfig:
    try:
        delays_raw = _get(mapping, "delays", "0")
        delays = tuple(int(part.strip()) for part in delays_raw.split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"delays: expected comma-separated integers: {delays_raw!r}") from exc

    data_kind = _get(mapping, "data.kind", "linear_margin_iid")
    data_params = {
        "path": _get(mapping, "data.path"),
        "count": _get_int(mapping, "data.count", 1000),
        "dim": _get_int(mapping, "data.dim", 16),
        "nnz": _get_int(mapping, "data.nnz", 5),
        "z_norm_bound": _get_float(mapping, "data.z_norm_bound", 1.0),
        "label_noise": _get_float(mapping, "data.label_noise", 0.0),
        "center_radius": _get_float(mapping, "data.center_radius", 1.0),
        "block": _get_int(mapping, "data.block", 4),
        "vocab_size": _get_int(mapping, "data.vocab_size", 2000),
        "doc_len_min": _get_int(mapping, "data.doc_len_min", 15),
        "doc_len_max": _get_int(mapping, "data.doc_len_max", 40),
        "signal_fraction": _get_float(mapping, "data.signal_fraction", 0.3),
        "max_rows": _get_int(mapping, "data.max_rows", 0) or None,
    }
    hash_cfg = HashConfig(
        bits=_get_int(mapping, "hash.bits", 18),
        signed=_get_bool(mapping, "hash.signed", True),
        seed=_get_int(mapping, "hash.seed", 0),
    )
    if data_kind in ("corpus", "synthetic_text"):
        dimension = hash_cfg.bins
    else:
        dimension = _get_int(mapping, "dimension", data_params["dim"])

    loss = LossSpec(
        kind=_get(mapping, "loss.kind", "smoothed_margin"),
        l2_reg=_get_float(mapping, "loss.l2_reg", 0.0),
    )
    region = FeasibleRegion(
        kind=_get(mapping, "region.kind", "unbounded"),
        radius=_get_float(mapping, "region.radius", 1.0),
    )
    outputs = os.environ.get(OUTPUT_DIR_ENV) or _get(mapping, "outputs", "./out")

    overrides = {}
    for name in ("F", "L", "H", "alpha", "Phi", "lambda", "sigma"):
        raw = mapping.get(f"bounds.{name}")
        if raw is not None:
            overrides[name] = float(raw)

    return ExperimentConfig(
        engine=_get(mapping, "engine", "simulator"),
        delays=delays,
        repeats=_get_int(mapping, "repeats", 1),
        seed=_get_int(mapping, "seed", 0),
        outputs=outputs,
        data_kind=data_kind,
        data_params=data_params,
        features=_get(mapping, "features", "linear"),
        hash_cfg=hash_cfg,
        dimension=dimension,
        loss=loss,
        region=region,
        schedule_kind=_get(mapping, "schedule.kind", "inv_sqrt_plain"),
        sigma=_get_float(mapping, "schedule.sigma", 1.0),
        mirror_kind=_get(mapping, "mirror.kind", "squared_norm"),
        mirror_normalize=_get_bool(mapping, "mirror.normalize", False),
        async_mode=_get(mapping, "async.mode", "round_robin_strict"),
        async_max_delay=_get_int(mapping, "async.max_delay", 100),
        async_read=_get(mapping, "async.read_consistency", "snapshot"),
        shards=_get_int(mapping, "pipeline.shards", 4),
        comparator_iters=_get_int(mapping, "comparator.iters", 300),
        bound_overrides=overrides,
        delay_trace=_get_bool(mapping, "pipeline.delay_trace", False),
    )


def _derived_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence(entropy=seed, spawn_key=tuple(key)).generate_state(1)[0])


def build_base_stream(cfg: ExperimentConfig) -> list:
    """Materialize the example stream (before per-repeat shuffling)."""
    p = cfg.data_params
    if cfg.data_kind == "corpus":
        path = p["path"]
        if not path:
            raise ConfigError("data.path is required for data.kind = corpus")
        if not os.path.isfile(path):
            raise ConfigError(f"data path not readable: {path}")
        rows, summary = load_corpus(path, max_rows=p["max_rows"])
        if not rows:
            raise ConfigError(f"no usable examples in {path} ({summary.skipped} lines skipped)")
        return hash_corpus(rows, cfg.hash_cfg, features=cfg.features)
    if cfg.data_kind == "synthetic_text":
        rows = synthetic_text_corpus(
            count=p["count"],
            seed=_derived_seed(cfg.seed, 1),
            vocab_size=p["vocab_size"],
            doc_len=(p["doc_len_min"], p["doc_len_max"]),
            signal_fraction=p["signal_fraction"],
        )
        return hash_corpus([(float(l), t) for l, t in rows], cfg.hash_cfg, features=cfg.features)
    params = {k: p[k] for k in ("count", "dim", "nnz", "z_norm_bound", "label_noise",
                                "center_radius", "block")}
    return synthetic_stream(cfg.data_kind, params, seed=_derived_seed(cfg.seed, 2))


def _make_schedule(cfg: ExperimentConfig, tau: int) -> Schedule:
    lam = cfg.loss.l2_reg if cfg.loss.l2_reg > 0 else 1.0
    return Schedule(kind=cfg.schedule_kind, sigma=cfg.sigma, lam=lam, tau=tau)


def run_engine(cfg: ExperimentConfig, tau: int, stream: list) -> RunResult:
    """Dispatch one run. For the parallel engines the delay is realized
    physically: async uses tau+1 workers, the pipeline a window of tau+1."""
    rc = RunConfig(
        dimension=cfg.dimension,
        tau=tau,
        schedule=_make_schedule(cfg, tau),
        region=cfg.region,
        loss=cfg.loss,
        seed=cfg.seed,
    )
    if cfg.engine == "simulator":
        return run_simulator(rc, stream)
    if cfg.engine == "mirror":
        mmap = MirrorMap(kind=cfg.mirror_kind, normalize=cfg.mirror_normalize)
        return run_mirror(rc, mmap, stream)
    if cfg.engine == "async":
        acfg = AsyncConfig(
            workers=tau + 1,
            mode=cfg.async_mode,
            max_delay=max(cfg.async_max_delay, tau),
            read_consistency=cfg.async_read,
        )
        return run_async(acfg, rc, stream)
    if tau + 1 > 100:
        raise ConfigError(f"pipeline window {tau + 1} exceeds the in-flight cap of 100")
    plan = plan_shards(cfg.dimension, min(cfg.shards, cfg.dimension))
    return run_pipeline(plan, rc, window=tau + 1, stream=stream)


@dataclass
class BoundReportRow:
    bound: str
    empirical_regret: float | None
    bound_value: float | None
    ratio: float | None
    passed: bool | None
    note: str = ""


def _evaluate_bound(inputs: bounds_mod.BoundInputs, which: str, optimal: bool) -> float:
    evaluators = {
        "lipschitz": lambda: bounds_mod.bound_lipschitz(inputs, optimal=optimal),
        "strong": lambda: bounds_mod.bound_strong(inputs),
        "alpha": lambda: bounds_mod.bound_alpha(inputs, optimal=optimal),
        "smooth": lambda: bounds_mod.bound_smooth(inputs),
        "smooth_strong": lambda: bounds_mod.bound_smooth_strong(inputs),
        "bregman": lambda: bounds_mod.bound_bregman(inputs, optimal=optimal),
    }
    if which not in evaluators:
        raise DomainError(f"unknown bound id {which!r}")
    return evaluators[which]()


def _bound_row(empirical: float | None, inputs: bounds_mod.BoundInputs, which: str,
               optimal: bool = False, note: str = "") -> BoundReportRow:
    try:
        value = _evaluate_bound(inputs, which, optimal)
    except (bounds_mod.BoundPreconditionError, DomainError) as exc:
        return BoundReportRow(bound=which, empirical_regret=empirical, bound_value=None,
                              ratio=None, passed=None, note=f"skipped: {exc}")
    if empirical is None:
        return BoundReportRow(bound=which, empirical_regret=None, bound_value=value,
                              ratio=None, passed=None, note=note)
    ratio = empirical / value if value != 0 else math.inf
    return BoundReportRow(bound=which, empirical_regret=empirical, bound_value=value,
                          ratio=ratio, passed=bool(empirical <= value), note=note)


def compare_to_bound(ledger: RegretLedger, inputs: bounds_mod.BoundInputs, which: str,
                     optimal: bool = False, note: str = "") -> BoundReportRow:
    """Empirical regret (post-warm-up window) against one bound formula.
    Precondition violations are reported as skipped rows, never evaluated."""
    return _bound_row(ledger.regret(include_warmup=False), inputs, which, optimal, note)


def _fmt(x) -> str:
    """Shortest round-trip text for a float; empty for missing."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    xf = float(x)
    if math.isnan(xf):
        return "nan"
    return repr(xf)


def write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(c) if not isinstance(c, str) else c for c in row) + "\n")


@dataclass
class ExperimentReport:
    output_dir: str
    files: list[str] = field(default_factory=list)
    summary_rows: list[dict] = field(default_factory=list)
    bound_rows: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def derive_bound_inputs(cfg: ExperimentConfig, stream: list, tau: int, T: int):
    """BoundInputs for bounds.csv, derived from the run unless overridden.
    Returns (inputs or None, reason when None, notes)."""
    notes = []
    ov = cfg.bound_overrides
    margin_stream = stream and isinstance(stream[0], SparseExample)
    z_bound = 1.0
    if margin_stream:
        z_bound = max(ex.features.norm() for ex in stream) or 1.0
    radius = cfg.region.radius if cfg.region.kind == "l2_ball" else None

    if "F" in ov:
        F = ov["F"]
    elif cfg.region.kind == "l2_ball":
        F = math.sqrt(cfg.region.diameter_sq_bound())
    else:
        return None, "region is unbounded and no bounds.F override was given", notes

    consts = constants_for(cfg.loss, z_bound, region_radius=radius)
    L = ov.get("L", consts.L)
    H = ov.get("H", consts.H)
    lam = ov.get("lambda", cfg.loss.l2_reg)
    if not margin_stream:
        # quadratic stream: gradient x - c, so L is the reach of the iterates
        L = ov.get("L", (radius or 1.0) + cfg.data_params["center_radius"])
        H = ov.get("H", 1.0)
        lam = ov.get("lambda", 1.0 + cfg.loss.l2_reg)
    if "alpha" in ov:
        alpha = ov["alpha"]
    elif margin_stream:
        alpha = min(1.0, bounds_mod.estimate_alpha(
            (ex.features for ex in stream), Lambda=consts.Lambda, L=max(L, 1e-12)))
        notes.append("alpha estimated from the stream")
    else:
        alpha = 1.0
    if math.isinf(L):
        return None, "L is unbounded for this loss/region combination", notes
    sigma = ov.get("sigma", cfg.sigma)
    if cfg.schedule_kind != "inv_sqrt_shifted":
        notes.append(f"schedule is {cfg.schedule_kind}; delay-penalty bounds assume sigma/sqrt(t-tau)")
    inputs = bounds_mod.BoundInputs(F=F, L=L, tau=tau, T=T, sigma=sigma,
                                    lam=lam if lam > 0 else None,
                                    H=H, alpha=alpha, Phi=ov.get("Phi", 1.0))
    return inputs, "", notes


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Execute the sweep and write curve/summary/bounds CSVs.

    All inputs are validated (including data readability) before any output
    file or directory is created, so failures leave no partial files.
    """
    base_stream = build_base_stream(cfg)
    n = len(base_stream)
    for tau in cfg.delays:
        if cfg.engine in ("async", "pipeline") and tau + 1 > n:
            raise ConfigError(f"delay {tau} needs more than {n} examples")

    os.makedirs(cfg.outputs, exist_ok=True)
    report = ExperimentReport(output_dir=os.path.abspath(cfg.outputs))

    per_delay: dict[int, dict[str, list[float]]] = {
        tau: {"err": [], "regret": [], "loss": []} for tau in cfg.delays
    }
    bound_rows_csv: list[list] = []

    for rep in range(cfg.repeats):
        if cfg.data_kind in ("corpus", "synthetic_text"):
            stream = permute(base_stream, _derived_seed(cfg.seed, 3, rep))
        elif cfg.repeats > 1:
            params = {k: cfg.data_params[k] for k in ("count", "dim", "nnz", "z_norm_bound",
                                                      "label_noise", "center_radius", "block")}
            stream = synthetic_stream(cfg.data_kind, params, seed=_derived_seed(cfg.seed, 2, rep))
        else:
            stream = base_stream
        comp = solve_comparator(stream, cfg.loss, cfg.region, cfg.dimension,
                                iters=cfg.comparator_iters)
        for tau in cfg.delays:
            result = run_engine(cfg, tau, stream)
            ledger = result.ledger
            ledger.attach_comparator(comparator_losses(stream, cfg.loss, comp.point))
            curve_name = f"curve_tau{tau}_rep{rep}.csv"
            _write_curve(os.path.join(cfg.outputs, curve_name), ledger)
            report.files.append(curve_name)
            if cfg.delay_trace and result.measured_delays is not None:
                trace_name = f"delays_tau{tau}_rep{rep}.csv"
                write_csv(os.path.join(cfg.outputs, trace_name), ["t", "delay"],
                          [[i + 1, int(d)] for i, d in enumerate(result.measured_delays)])
                report.files.append(trace_name)
            report.warnings.extend(f"tau={tau} rep={rep}: {w}" for w in result.warnings)
            per_delay[tau]["err"].append(ledger.final_err())
            per_delay[tau]["regret"].append(ledger.regret(include_warmup=False))
            per_delay[tau]["loss"].append(ledger.total_loss())

    summary_rows: list[list] = []
    for tau in cfg.delays:
        err = np.array(per_delay[tau]["err"])
        reg = np.array(per_delay[tau]["regret"])
        row = [tau, cfg.repeats,
               float(err.mean()), float(err.std()),
               float(reg.mean()), float(reg.std())]
        summary_rows.append(row)
        report.summary_rows.append({
            "tau": tau, "repeats": cfg.repeats,
            "final_err_mean": row[2], "final_err_std": row[3],
            "final_regret_mean": row[4], "final_regret_std": row[5],
        })
        T_window = max(1, n - tau)
        inputs, reason, notes = derive_bound_inputs(cfg, base_stream, tau, T_window)
        mean_regret = float(reg.mean())
        for which in ("lipschitz", "strong", "alpha", "smooth", "smooth_strong", "bregman"):
            if inputs is None:
                row_obj = BoundReportRow(bound=which, empirical_regret=mean_regret,
                                         bound_value=None, ratio=None, passed=None,
                                         note=f"skipped: {reason}")
            else:
                row_obj = _bound_row(mean_regret, inputs, which, note="; ".join(notes))
            bound_rows_csv.append([tau, row_obj.bound, row_obj.empirical_regret,
                                   row_obj.bound_value, row_obj.ratio, row_obj.passed,
                                   row_obj.note])
            report.bound_rows.append({
                "tau": tau, "bound": row_obj.bound,
                "empirical_regret": row_obj.empirical_regret,
                "bound_value": row_obj.bound_value,
                "ratio": row_obj.ratio, "passed": row_obj.passed, "note": row_obj.note,
            })

    write_csv(os.path.join(cfg.outputs, "summary.csv"),
              ["tau", "repeats", "final_err_mean", "final_err_std",
               "final_regret_mean", "final_regret_std"], summary_rows)
    report.files.append("summary.csv")
    write_csv(os.path.join(cfg.outputs, "bounds.csv"),
              ["tau", "bound", "empirical_regret", "bound_value", "ratio", "pass", "note"],
              bound_rows_csv)
    report.files.append("bounds.csv")
    return report


def _write_curve(path: str, ledger: RegretLedger) -> None:
    cum = ledger.cum_loss
    err = ledger.err_rate
    regret = ledger.regret_curve
    rows = []
    for i in range(len(ledger)):
        rows.append([i + 1, float(ledger.losses[i]), float(cum[i]), float(err[i]),
                     float(regret[i])])
    write_csv(path, ["t", "loss", "cumloss", "err", "regret"], rows)


def evaluate_bounds_only(cfg: ExperimentConfig) -> ExperimentReport:
    """The `bounds` subcommand: evaluate every bound at the configured
    constants without running any engine; writes bounds.csv only."""
    base_stream = build_base_stream(cfg)
    n = len(base_stream)
    os.makedirs(cfg.outputs, exist_ok=True)
    report = ExperimentReport(output_dir=os.path.abspath(cfg.outputs))
    rows_csv: list[list] = []
    for tau in cfg.delays:
        inputs, reason, notes = derive_bound_inputs(cfg, base_stream, tau, max(1, n - tau))
        for which in ("lipschitz", "strong", "alpha", "smooth", "smooth_strong", "bregman"):
            if inputs is None:
                rows_csv.append([tau, which, None, None, None, None, f"skipped: {reason}"])
                report.bound_rows.append({"tau": tau, "bound": which, "bound_value": None,
                                          "note": f"skipped: {reason}"})
                continue
            row_obj = _bound_row(None, inputs, which, note="; ".join(notes))
            rows_csv.append([tau, which, None, row_obj.bound_value, None, None, row_obj.note])
            report.bound_rows.append({"tau": tau, "bound": which,
                                      "bound_value": row_obj.bound_value,
                                      "note": row_obj.note})
    write_csv(os.path.join(cfg.outputs, "bounds.csv"),
              ["tau", "bound", "empirical_regret", "bound_value", "ratio", "pass", "note"],
              rows_csv)
    report.files.append("bounds.csv")
    return report
