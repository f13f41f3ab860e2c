"""Pydantic request/response models for the experiment service."""

from __future__ import annotations

from typing import Any, Literal, Optional

from pydantic import BaseModel, Field

ExperimentKind = Literal["validate", "simulate", "occupation", "flow_gap",
                         "estimate_D", "dyson_compare", "thermo_sweep",
                         "continuity", "mollify_study"]


class SiteConfig(BaseModel):
    id: int = Field(ge=0)
    mass: float = Field(gt=0)
    nu: float = Field(gt=0)


class InteractionConfig(BaseModel):
    k: int = Field(ge=0)
    l: int = Field(ge=0)
    family: str
    params: dict[str, Any] = Field(default_factory=dict)


class ModelConfig(BaseModel):
    dim_n: int = Field(ge=1)
    sites: list[SiteConfig]
    interactions: list[InteractionConfig] = Field(default_factory=list)
    global_C: Optional[float] = None

    def as_dict(self) -> dict:
        out = self.model_dump()
        if out.get("global_C") is None:
            out.pop("global_C", None)
        return out


class ExperimentRequest(BaseModel):
    kind: ExperimentKind
    model: ModelConfig
    params: dict[str, Any] = Field(default_factory=dict)
    seed: int = 0
    workers: Optional[int] = Field(default=None, ge=1)


class ExperimentResponse(BaseModel):
    kind: ExperimentKind
    seed: int
    artifacts: dict[str, str]


class HealthResponse(BaseModel):
    status: str
    version: str
    kinds: list[str]


class ErrorDetail(BaseModel):
    code: Literal["parse", "validation", "blowup", "internal"]
    message: str
    report: Optional[dict[str, Any]] = None
