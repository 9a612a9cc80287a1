"""FastAPI service wrapping the harness.

POST /run       execute a delay-sweep experiment, write CSVs, return summary
POST /bounds    evaluate every bound formula at the configured constants
GET  /hash-selftest   verify the pinned hash against its frozen vectors
GET  /version

Client errors (bad config, unreadable data) map to 400; engine failures to
500. The CLI is a thin client of these endpoints.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..async_engine import EngineAbort
from ..core import DomainError
from ..harness import (
    ConfigError,
    ExperimentReport,
    evaluate_bounds_only,
    experiment_config_from_mapping,
    parse_config_text,
    run_experiment,
)
from ..streams import hash_selftest
from .models import (
    BoundRow,
    HashCheck,
    HashSelfTestResponse,
    RunRequest,
    RunResponse,
    SummaryRow,
    VersionResponse,
)

app = FastAPI(title="stalegrad", version=__version__)


def _config_from_request(req: RunRequest):
    mapping = dict(req.config or {})
    if req.config_text is not None:
        mapping = {**parse_config_text(req.config_text), **mapping}
    return experiment_config_from_mapping(mapping)


def _to_response(report: ExperimentReport) -> RunResponse:
    return RunResponse(
        output_dir=report.output_dir,
        files=report.files,
        summary=[SummaryRow(**row) for row in report.summary_rows],
        bounds=[BoundRow(**row) for row in report.bound_rows],
        warnings=report.warnings,
    )


@app.post("/run", response_model=RunResponse)
def run_endpoint(req: RunRequest) -> RunResponse:
    try:
        cfg = _config_from_request(req)
        report = run_experiment(cfg)
    except ConfigError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    except DomainError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    except EngineAbort as exc:
        raise HTTPException(status_code=500, detail=f"engine aborted: {exc}") from exc
    return _to_response(report)


@app.post("/bounds", response_model=RunResponse)
def bounds_endpoint(req: RunRequest) -> RunResponse:
    try:
        cfg = _config_from_request(req)
        report = evaluate_bounds_only(cfg)
    except (ConfigError, DomainError) as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    return _to_response(report)


@app.get("/hash-selftest", response_model=HashSelfTestResponse)
def hash_selftest_endpoint() -> HashSelfTestResponse:
    ok, checked, failures = hash_selftest()
    return HashSelfTestResponse(
        ok=ok,
        checked=checked,
        failures=[HashCheck(**f) for f in failures],
    )


@app.get("/version", response_model=VersionResponse)
def version_endpoint() -> VersionResponse:
    return VersionResponse(name="stalegrad", version=__version__)
