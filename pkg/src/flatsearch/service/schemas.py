from __future__ import annotations

from typing import Any, Literal

from pydantic import BaseModel, Field


class SearchRequest(BaseModel):
    config: dict[str, Any] = Field(default_factory=dict, description="EngineConfig fields; omitted ones keep defaults")
    seed: int | None = None
    resume: bool = False
    optimizer: Literal["sgd", "asam"] | None = None
    alpha: float | None = Field(None, ge=0.0, le=1.0)
    sigma: float | None = Field(None, ge=0.0)
    param_limit: float | None = Field(None, gt=0.0)
    penalty: float | None = Field(None, ge=0.0)


class Record(BaseModel):
    gene: list[int]
    top1_accuracy: float
    robustness: float
    param_count: int
    sigma: float
    optimizer: str
    seed: int
    wall_clock_seconds: float = 0.0
    failed: bool = False


class SearchResult(BaseModel):
    top_k: list[Record]
    archive_size: int
    archive_path: str | None = None
    log_path: str | None = None


class Job(BaseModel):
    id: str
    state: Literal["queued", "running", "done", "failed"]
    archive_size: int = 0
    error: str | None = None
    result: SearchResult | None = None


class EvaluateRequest(BaseModel):
    gene: list[int]
    config: dict[str, Any] = Field(default_factory=dict)
    seed: int | None = None


class CorruptRequest(BaseModel):
    types: list[str]
    out: str
    config: dict[str, Any] = Field(default_factory=dict)
    resolution: int | None = Field(None, gt=0, description="defaults to the largest resolution in the space")
    seed: int = 0


class CorruptResponse(BaseModel):
    files: list[str]


class ReportRequest(BaseModel):
    archive: str
    out: str
    config: dict[str, Any] = Field(default_factory=dict)
    types: list[str] = Field(default_factory=list, description="retrain X° and add corruption errors when set")
    seed: int = 0


class ReportResponse(BaseModel):
    files: dict[str, str]
    models: list[Record]
