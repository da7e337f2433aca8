"""Run-artifact persistence.

An artifact directory is self-contained: the fitted surrogate snapshot,
county features, reference truth table, config echo with a content hash,
recorded history, and the coefficient table all live inside it, so the
what-if service and the evaluation commands need nothing else.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .domain import CountyFeatures, TreatmentCondition, TreatmentGrid
from .evaluation import TruthTable, write_history_csv
from .gpr import CoefficientSurrogate
from .seqdes import InitSummary, SeqDesState
from .util import derive_seed

ARTIFACT_FILE = "artifact.json"
HISTORY_FILE = "history.csv"
COEFFICIENTS_FILE = "coefficients.csv"

CI_SAMPLES = 10_000


class ArtifactError(ValueError):
    pass


def content_hash(config_echo: dict, seed: int) -> str:
    canonical = json.dumps({"config": config_echo, "seed": seed},
                           sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CoefficientRow:
    county_id: str
    means: tuple[float, ...]
    ci_low: tuple[float, ...]
    ci_high: tuple[float, ...]


def coefficient_table(surrogate: CoefficientSurrogate,
                      counties: Sequence[CountyFeatures], seed: int,
                      s: int = CI_SAMPLES) -> list[CoefficientRow]:
    """Posterior mean and empirical 95% interval per coefficient per county."""
    rows = []
    for county in counties:
        x_std = surrogate.standardized(county.vector())[0]
        draws = surrogate.sample_posterior(
            x_std, s, derive_seed(seed, "coef_ci", county.county_id))
        lo, hi = np.quantile(draws, [0.025, 0.975], axis=0)
        mean = surrogate.posterior(x_std).means
        rows.append(CoefficientRow(county.county_id, tuple(map(float, mean)),
                                   tuple(map(float, lo)), tuple(map(float, hi))))
    return rows


def write_coefficients_csv(path: str | Path, rows: Sequence[CoefficientRow],
                           output_names: Sequence[str]) -> None:
    header = ["county_id"]
    for name in output_names:
        header += [name, f"{name}_lo", f"{name}_hi"]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            record = [row.county_id]
            for j in range(len(output_names)):
                record += [repr(row.means[j]), repr(row.ci_low[j]),
                           repr(row.ci_high[j])]
            w.writerow(record)


def _cond_key(cond: TreatmentCondition) -> str:
    return f"{cond.n},{cond.b}"


def _truth_to_json(truth: TruthTable) -> dict:
    out: dict[str, dict[str, float]] = {}
    for (cid, cond), value in truth.values.items():
        out.setdefault(cid, {})[_cond_key(cond)] = value
    return out


def _truth_from_json(doc: dict) -> TruthTable:
    values = {}
    for cid, cells in doc.items():
        for key, value in cells.items():
            n, b = key.split(",")
            values[(cid, TreatmentCondition(int(n), int(b)))] = float(value)
    return TruthTable(values)


@dataclass
class RunArtifact:
    schema_version: int
    config_echo: dict
    hash: str
    seed: int
    grid: TreatmentGrid
    response_kind: str
    counties: list[CountyFeatures]
    surrogate: CoefficientSurrogate
    truth: TruthTable
    init_summary: InitSummary
    budget_total: int
    budget_used: int
    directory: Path | None = None

    @property
    def county_ids(self) -> list[str]:
        return [c.county_id for c in self.counties]

    def county(self, county_id: str) -> CountyFeatures:
        for c in self.counties:
            if c.county_id == county_id:
                return c
        raise KeyError(county_id)


def save_run_artifact(out_dir: str | Path, config_echo: dict,
                      state: SeqDesState, truth: TruthTable) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "schema_version": 1,
        "config_echo": config_echo,
        "content_hash": content_hash(config_echo, state.seed),
        "seed": state.seed,
        "grid": {"levels_n": state.grid.levels_n, "levels_b": state.grid.levels_b},
        "response_kind": state.settings.response_kind,
        "counties": [{"county_id": c.county_id, "lat": c.centroid_lat,
                      "lon": c.centroid_lon, "median_income": c.median_income,
                      "pop_density": c.pop_density, "pct_black": c.pct_black,
                      "population": c.population} for c in state.counties],
        "surrogate": state.surrogate.to_dict(),
        "truth": _truth_to_json(truth),
        "init_summary": {"budget_used": state.init_summary.budget_used,
                         "rel_error": state.init_summary.rel_error,
                         "mse": state.init_summary.mse},
        "budget_total": state.budget_total,
        "budget_used": state.budget_used,
    }
    (out_dir / ARTIFACT_FILE).write_text(
        json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")
    write_history_csv(out_dir / HISTORY_FILE, state)
    rows = coefficient_table(state.surrogate, state.counties, state.seed)
    write_coefficients_csv(out_dir / COEFFICIENTS_FILE, rows,
                           state.surrogate.output_names)
    return out_dir


def load_run_artifact(directory: str | Path) -> RunArtifact:
    directory = Path(directory)
    path = directory / ARTIFACT_FILE
    if not path.exists():
        raise ArtifactError(f"no {ARTIFACT_FILE} in {directory}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("schema_version") != 1:
        raise ArtifactError(f"unsupported artifact schema {doc.get('schema_version')}")
    counties = [CountyFeatures(c["county_id"], c["lat"], c["lon"],
                               c["median_income"], c["pop_density"],
                               c["pct_black"], c["population"])
                for c in doc["counties"]]
    init = doc["init_summary"]
    return RunArtifact(
        schema_version=1,
        config_echo=doc["config_echo"],
        hash=doc["content_hash"],
        seed=int(doc["seed"]),
        grid=TreatmentGrid(doc["grid"]["levels_n"], doc["grid"]["levels_b"]),
        response_kind=doc["response_kind"],
        counties=counties,
        surrogate=CoefficientSurrogate.from_dict(doc["surrogate"]),
        truth=_truth_from_json(doc["truth"]),
        init_summary=InitSummary(init["budget_used"], init["rel_error"],
                                 init["mse"]),
        budget_total=int(doc["budget_total"]),
        budget_used=int(doc["budget_used"]),
        directory=directory,
    )


def read_history_rows(directory: str | Path) -> list[dict]:
    with (Path(directory) / HISTORY_FILE).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
