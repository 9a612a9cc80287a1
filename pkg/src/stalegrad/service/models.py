"""Request/response schemas for the benchmark service."""

from __future__ import annotations

from pydantic import BaseModel, Field, model_validator


class RunRequest(BaseModel):
    """An experiment submission: either raw config text (the same `key = value`
    format the config files use) or a flat key/value mapping."""

    config_text: str | None = None
    config: dict[str, str] | None = None

    @model_validator(mode="after")
    def _one_source(self):
        if self.config_text is None and self.config is None:
            raise ValueError("provide config_text or config")
        return self


class SummaryRow(BaseModel):
    tau: int
    repeats: int
    final_err_mean: float
    final_err_std: float
    final_regret_mean: float
    final_regret_std: float


class BoundRow(BaseModel):
    tau: int
    bound: str
    empirical_regret: float | None = None
    bound_value: float | None = None
    ratio: float | None = None
    passed: bool | None = None
    note: str = ""


class RunResponse(BaseModel):
    output_dir: str
    files: list[str]
    summary: list[SummaryRow] = Field(default_factory=list)
    bounds: list[BoundRow] = Field(default_factory=list)
    warnings: list[str] = Field(default_factory=list)


class HashCheck(BaseModel):
    token: str
    seed: int
    expected: int
    actual: int
    ok: bool


class HashSelfTestResponse(BaseModel):
    ok: bool
    checked: int
    failures: list[HashCheck] = Field(default_factory=list)


class VersionResponse(BaseModel):
    name: str
    version: str
