"""Request/response models for the HTTP API."""
from __future__ import annotations

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, model_validator


class Overrides(BaseModel):
    seed: Optional[int] = None
    rounds: Optional[int] = None
    lam: Optional[float] = Field(default=None, alias="lambda")
    distance: Optional[str] = None
    topology: Optional[str] = None
    gamma: Optional[int] = None
    runs: Optional[int] = None
    method: Optional[str] = None

    model_config = {"populate_by_name": True}

    def as_dict(self) -> dict:
        pairs = {
            "seed": self.seed, "rounds": self.rounds, "lambda": self.lam,
            "distance": self.distance, "topology": self.topology,
            "gamma": self.gamma, "runs": self.runs, "method": self.method,
        }
        return {k: v for k, v in pairs.items() if v is not None}


class ExperimentRequest(BaseModel):
    """Submit either a full config mapping or a preset name, plus overrides."""

    config: Optional[Dict[str, Any]] = None
    preset: Optional[str] = None
    overrides: Overrides = Field(default_factory=Overrides)
    out_name: Optional[str] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.config is None) == (self.preset is None):
            raise ValueError("provide exactly one of 'config' or 'preset'")
        return self


class JobInfo(BaseModel):
    job_id: str
    name: str
    status: str  # queued | running | done | failed
    out_dir: str
    error: Optional[str] = None
    summary: Optional[Dict[str, Any]] = None


class JobList(BaseModel):
    jobs: List[JobInfo]


class RecordsResponse(BaseModel):
    job_id: str
    seed: int
    total: int
    offset: int
    records: List[Dict[str, Any]]


class SummarizeRequest(BaseModel):
    run_dirs: List[str]


class PresetList(BaseModel):
    presets: List[str]


class PresetInfo(BaseModel):
    name: str
    config: Dict[str, Any]


class Health(BaseModel):
    status: str = "ok"
