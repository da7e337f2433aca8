"""Read-only HTTP facade over a fitted run artifact.

Interactive what-if queries only: no retraining endpoints.  Requests are
stateless over an immutable artifact snapshot, so concurrent handling needs
no locks; reloading an artifact means restarting the process.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from fastapi import FastAPI, Header, HTTPException, Request
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from .artifact import RunArtifact, load_run_artifact
from .domain import TreatmentCondition
from .regression import design_row
from .util import derive_seed

DEFAULT_SAMPLES = 1024
CI_SAMPLES = 10_000


class PredictRequest(BaseModel):
    county_id: str
    n: int = Field(ge=0)
    b: int = Field(ge=0)
    want_interval: bool = True
    s: int = Field(default=DEFAULT_SAMPLES, ge=16, le=200_000)


def _artifact(request: Request) -> RunArtifact:
    artifact = request.app.state.artifact
    if artifact is None:
        raise HTTPException(status_code=503, detail="artifact not loaded")
    return artifact


def _seed_from_header(header_value: str | None) -> int:
    if header_value is None:
        return 0
    try:
        return int(header_value)
    except ValueError:
        raise HTTPException(status_code=400,
                            detail="X-Sample-Seed must be an integer")


def build_app(artifact: RunArtifact | None = None,
              cors_origins: tuple[str, ...] = ("*",)) -> FastAPI:
    app = FastAPI(title="policy-surrogate what-if service")
    app.add_middleware(CORSMiddleware, allow_origins=list(cors_origins),
                       allow_methods=["*"], allow_headers=["*"])
    app.state.artifact = artifact

    @app.get("/counties")
    def counties(request: Request):
        art = _artifact(request)
        return {
            "grid": {"levels_n": art.grid.levels_n, "levels_b": art.grid.levels_b},
            "counties": [{
                "county_id": c.county_id,
                "lat": c.centroid_lat,
                "lon": c.centroid_lon,
                "median_income": c.median_income,
                "pop_density": c.pop_density,
                "pct_black": c.pct_black,
                "population": c.population,
            } for c in art.counties],
        }

    @app.get("/coefficients/{county_id}")
    def coefficients(county_id: str, request: Request,
                     x_sample_seed: str | None = Header(default=None)):
        art = _artifact(request)
        if county_id not in art.county_ids:
            raise HTTPException(status_code=404,
                                detail=f"unknown county {county_id!r}")
        seed = _seed_from_header(x_sample_seed)
        county = art.county(county_id)
        x_std = art.surrogate.standardized(county.vector())[0]
        post = art.surrogate.posterior(x_std)
        draws = art.surrogate.sample_posterior(
            x_std, CI_SAMPLES, derive_seed(seed, "coef_ci", county_id))
        lo, hi = np.quantile(draws, [0.025, 0.975], axis=0)
        return {
            "county_id": county_id,
            "coefficients": {
                name: {"mean": float(post.means[j]),
                       "ci_low": float(lo[j]),
                       "ci_high": float(hi[j])}
                for j, name in enumerate(art.surrogate.output_names)
            },
        }

    @app.post("/predict")
    def predict(body: PredictRequest, request: Request,
                x_sample_seed: str | None = Header(default=None)):
        art = _artifact(request)
        if body.county_id not in art.county_ids:
            raise HTTPException(status_code=404,
                                detail=f"unknown county {body.county_id!r}")
        condition = TreatmentCondition(body.n, body.b)
        if not art.grid.contains(condition):
            raise HTTPException(
                status_code=400,
                detail=f"condition ({body.n}, {body.b}) outside the "
                       f"{art.grid.levels_n}x{art.grid.levels_b} grid")
        seed = _seed_from_header(x_sample_seed)
        county = art.county(body.county_id)
        x_std = art.surrogate.standardized(county.vector())[0]
        post = art.surrogate.posterior(x_std)
        row = design_row(condition, art.response_kind)
        mean = float(row @ post.means)
        if body.want_interval:
            draws = art.surrogate.sample_posterior(
                x_std, body.s,
                derive_seed(seed, "predict", body.county_id, body.n, body.b))
            zeta = draws @ row
            ci_low, ci_high = (float(q) for q in np.quantile(zeta, [0.025, 0.975]))
        else:
            ci_low = ci_high = mean
        return {
            "county_id": body.county_id,
            "n": body.n,
            "b": body.b,
            "mean": mean,
            "ci_low": ci_low,
            "ci_high": ci_high,
            "coefficients": {name: float(post.means[j])
                             for j, name in enumerate(art.surrogate.output_names)},
        }

    return app


def serve(artifact_dir: str | Path, host: str = "127.0.0.1", port: int = 8787,
          cors_origins: tuple[str, ...] = ("*",)) -> None:
    import uvicorn

    app = build_app(load_run_artifact(artifact_dir), cors_origins)
    uvicorn.run(app, host=host, port=port, log_level="warning")
