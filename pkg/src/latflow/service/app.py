"""FastAPI service wrapping the experiment runners.

POST /experiments/{kind} runs one experiment synchronously and returns the
artifact payloads inline; the CLI is a thin client of this API (in-process
ASGI by default, remote over HTTP with --server).

Error mapping: bad content -> 400 {"code": "parse"}, model assumption
failure -> 422 {"code": "validation", "report"}, numerical blow-up ->
500 {"code": "blowup"}.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..config import ConfigError
from ..experiments import KINDS, ValidationFailure, run_experiment
from ..model import BlowUpError
from .schemas import (ErrorDetail, ExperimentKind, ExperimentRequest,
                      ExperimentResponse, HealthResponse)

app = FastAPI(
    title="latflow",
    description="Harmonic-oscillator lattice dynamics experiments",
    version=__version__,
)


@app.get("/health", response_model=HealthResponse)
def health() -> HealthResponse:
    return HealthResponse(status="ok", version=__version__, kinds=list(KINDS))


@app.post("/experiments/{kind}", response_model=ExperimentResponse)
def run(kind: ExperimentKind, request: ExperimentRequest) -> ExperimentResponse:
    if request.kind != kind:
        raise HTTPException(
            status_code=400,
            detail=ErrorDetail(code="parse",
                               message=f"request kind '{request.kind}' does not "
                                       f"match path kind '{kind}'").model_dump())
    try:
        artifacts = run_experiment(kind, request.model.as_dict(), request.params,
                                   request.seed, request.workers)
    except ConfigError as exc:
        raise HTTPException(status_code=400,
                            detail=ErrorDetail(code="parse",
                                               message=str(exc)).model_dump())
    except ValidationFailure as exc:
        raise HTTPException(status_code=422,
                            detail=ErrorDetail(code="validation",
                                               message=str(exc),
                                               report=exc.report).model_dump())
    except BlowUpError as exc:
        raise HTTPException(status_code=500,
                            detail=ErrorDetail(code="blowup",
                                               message=str(exc)).model_dump())
    except (KeyError, TypeError, ValueError) as exc:
        raise HTTPException(status_code=400,
                            detail=ErrorDetail(code="parse",
                                               message=f"{type(exc).__name__}: {exc}"
                                               ).model_dump())
    return ExperimentResponse(kind=kind, seed=request.seed, artifacts=artifacts)
