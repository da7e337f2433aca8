"""Run configuration: strict JSON parsing, defaults, and validation.

Unknown keys are rejected everywhere so typos cannot silently change an
experiment.  Paths are resolved relative to the config file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .domain import TreatmentCondition, TreatmentGrid, load_county_features_csv
from .gpr import KernelSpec
from .regression import INTERACTION, MAIN_EFFECTS
from .seqdes import AcquisitionConfig, InitPlan, ModelSettings
from .simulator import SimConfig

SCHEMA_VERSION = 1

STRATEGIES = ("two-stage", "one-stage")
NOISE_MODES = ("hetero", "homo")
RESPONSES = (MAIN_EFFECTS, INTERACTION)
TRUTH_MODES = ("analytic", "holdout")
SIMULATORS = ("linear", "oud")


class ConfigError(ValueError):
    pass


def _require_keys(obj: dict, allowed: set[str], context: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {context}: {sorted(unknown)}")


def _choice(value: str, options: tuple[str, ...], context: str) -> str:
    if value not in options:
        raise ConfigError(f"{context} must be one of {list(options)}, got {value!r}")
    return value


@dataclass(frozen=True)
class RunConfig:
    county_csv: Path
    params_json: Path
    output_dir: Path
    grid: TreatmentGrid
    plan: InitPlan
    acquisition: AcquisitionConfig
    budget: int
    replicates_per_step: int
    strategy: str
    noise: str
    response: str
    truth: str
    holdout_replicates: int
    simulator_kind: str
    sim: SimConfig
    noise_div_rc: bool
    refit_every: int
    fit_restarts: int
    plateau_window: int
    plateau_tol: float | None
    seed: int

    def settings(self) -> ModelSettings:
        return ModelSettings(response_kind=self.response, noise_mode=self.noise,
                             noise_div_rc=self.noise_div_rc,
                             kernel=KernelSpec.default(),
                             refit_every=self.refit_every,
                             fit_restarts=self.fit_restarts)

    def to_json_dict(self) -> dict:
        plan_dict: dict = {"replicates_baseline": self.plan.replicates_baseline,
                           "replicates_other": self.plan.replicates_other}
        if self.plan.extra_conditions is not None:
            plan_dict["conditions"] = [[c.n, c.b] for c in self.plan.extra_conditions]
        if self.plan.counties is not None:
            plan_dict["counties"] = list(self.plan.counties)
        return {
            "paths": {"county_csv": str(self.county_csv),
                      "params_json": str(self.params_json),
                      "output_dir": str(self.output_dir)},
            "grid": {"levels_n": self.grid.levels_n, "levels_b": self.grid.levels_b},
            "init": plan_dict,
            "acquisition": {"weights": list(self.acquisition.weights),
                            "snr_epsilon": self.acquisition.snr_epsilon,
                            "variance_source": self.acquisition.variance_source,
                            "samples": self.acquisition.s},
            "budget": self.budget,
            "replicates_per_step": self.replicates_per_step,
            "strategy": self.strategy,
            "noise": self.noise,
            "response": self.response,
            "truth": self.truth,
            "holdout_replicates": self.holdout_replicates,
            "simulator": self.simulator_kind,
            "sim": {"horizon_years": self.sim.horizon_years,
                    "steps_per_year": self.sim.steps_per_year,
                    "cohort_size": self.sim.cohort_size},
            "noise_div_rc": self.noise_div_rc,
            "refit_every": self.refit_every,
            "fit_restarts": self.fit_restarts,
            "plateau": {"window": self.plateau_window, "tol": self.plateau_tol},
            "seed": self.seed,
        }


_TOP_KEYS = {"paths", "grid", "init", "acquisition", "budget",
             "replicates_per_step", "strategy", "noise", "response", "truth",
             "holdout_replicates", "simulator", "sim", "noise_div_rc",
             "refit_every", "fit_restarts", "plateau", "seed"}


def parse_config(doc: dict, base_dir: Path) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object")
    _require_keys(doc, _TOP_KEYS, "config")

    paths = doc.get("paths")
    if not isinstance(paths, dict):
        raise ConfigError("config needs a 'paths' object")
    _require_keys(paths, {"county_csv", "params_json", "output_dir"}, "paths")
    for key in ("county_csv", "params_json", "output_dir"):
        if key not in paths:
            raise ConfigError(f"paths.{key} is required")

    def resolve(p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else (base_dir / path)

    county_csv = resolve(paths["county_csv"])
    params_json = resolve(paths["params_json"])
    output_dir = resolve(paths["output_dir"])
    for path in (county_csv, params_json):
        if not path.exists():
            raise ConfigError(f"referenced file does not exist: {path}")

    grid_doc = doc.get("grid", {"levels_n": 5, "levels_b": 5})
    _require_keys(grid_doc, {"levels_n", "levels_b"}, "grid")
    grid = TreatmentGrid(int(grid_doc.get("levels_n", 5)),
                         int(grid_doc.get("levels_b", 5)))

    init_doc = doc.get("init", {})
    _require_keys(init_doc, {"replicates_baseline", "replicates_other",
                             "conditions", "counties"}, "init")
    conditions = init_doc.get("conditions")
    if conditions is not None:
        conditions = tuple(TreatmentCondition(int(n), int(b)) for n, b in conditions)
    counties_subset = init_doc.get("counties")
    if counties_subset is not None:
        counties_subset = tuple(str(c) for c in counties_subset)
    plan = InitPlan(int(init_doc.get("replicates_baseline", 10)),
                    int(init_doc.get("replicates_other", 3)),
                    conditions, counties_subset)

    acq_doc = doc.get("acquisition", {})
    _require_keys(acq_doc, {"weights", "snr_epsilon", "variance_source",
                            "samples"}, "acquisition")
    weights = acq_doc.get("weights", [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0])
    acquisition = AcquisitionConfig(
        weights=tuple(float(w) for w in weights),
        snr_epsilon=float(acq_doc.get("snr_epsilon", 1e-6)),
        variance_source=str(acq_doc.get("variance_source", "posterior")),
        s=int(acq_doc.get("samples", 256)))

    if "budget" not in doc:
        raise ConfigError("config needs a 'budget'")
    budget = int(doc["budget"])

    sim_doc = doc.get("sim", {})
    _require_keys(sim_doc, {"horizon_years", "steps_per_year", "cohort_size"}, "sim")
    sim = SimConfig(horizon_years=int(sim_doc.get("horizon_years", 5)),
                    steps_per_year=int(sim_doc.get("steps_per_year", 12)),
                    cohort_size=int(sim_doc.get("cohort_size", 20_000)))

    plateau_doc = doc.get("plateau", {})
    _require_keys(plateau_doc, {"window", "tol"}, "plateau")
    tol = plateau_doc.get("tol")

    cfg = RunConfig(
        county_csv=county_csv, params_json=params_json, output_dir=output_dir,
        grid=grid, plan=plan, acquisition=acquisition, budget=budget,
        replicates_per_step=int(doc.get("replicates_per_step", 8)),
        strategy=_choice(doc.get("strategy", "two-stage"), STRATEGIES, "strategy"),
        noise=_choice(doc.get("noise", "hetero"), NOISE_MODES, "noise"),
        response=_choice(doc.get("response", MAIN_EFFECTS), RESPONSES, "response"),
        truth=_choice(doc.get("truth", "analytic"), TRUTH_MODES, "truth"),
        holdout_replicates=int(doc.get("holdout_replicates", 40)),
        simulator_kind=_choice(doc.get("simulator", "linear"), SIMULATORS, "simulator"),
        sim=sim,
        noise_div_rc=bool(doc.get("noise_div_rc", False)),
        refit_every=int(doc.get("refit_every", 5)),
        fit_restarts=int(doc.get("fit_restarts", 2)),
        plateau_window=int(plateau_doc.get("window", 10)),
        plateau_tol=None if tol is None else float(tol),
        seed=int(doc.get("seed", 0)),
    )
    _validate_budget(cfg)
    return cfg


def _validate_budget(cfg: RunConfig) -> None:
    counties = load_county_features_csv(cfg.county_csv)
    n_init = (len(cfg.plan.counties) if cfg.plan.counties is not None
              else len(counties))
    cost = cfg.plan.cost(cfg.grid, n_init)
    if cfg.budget < cost:
        raise ConfigError(f"budget {cfg.budget} is below the initialization "
                          f"cost {cost}")


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(doc, path.parent.resolve())


def save_config(path: str | Path, cfg: RunConfig) -> None:
    Path(path).write_text(json.dumps(cfg.to_json_dict(), indent=2, sort_keys=True),
                          encoding="utf-8")
