"""Metrics, learning curves, strategy baselines, specification comparisons,
factorial slices, and prototype assignment.

Everything here evaluates fitted surrogates against a reference truth table
(exact analytic expectations in synthetic modes, or held-out replicate
means) and emits plot-ready tables.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .domain import (CountyFeatures, TreatmentCondition, TreatmentGrid,
                     enumerate_grid)
from .gpr import CoefficientSurrogate
from .regression import MAIN_EFFECTS, design_row
from .seqdes import (AcquisitionConfig, InitPlan, ModelSettings, SeqDesState,
                     exhaustive_step, initialize, new_state, run, step)
from .simulator import OutcomeSimulator
from .util import derive_seed

Cell = tuple[str, TreatmentCondition]


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class TruthTable:
    """Reference outcome per (county, condition) cell over a full grid."""

    values: dict[Cell, float]

    @classmethod
    def from_simulator(cls, simulator: OutcomeSimulator,
                       county_ids: Sequence[str],
                       grid: TreatmentGrid) -> "TruthTable":
        values = {(cid, cond): simulator.true_outcome(cid, cond)
                  for cid in county_ids for cond in enumerate_grid(grid)}
        return cls(values)

    @classmethod
    def from_holdout(cls, simulator: OutcomeSimulator, county_ids: Sequence[str],
                     grid: TreatmentGrid, replicates: int, seed: int) -> "TruthTable":
        """Held-out replicate means; these runs are reference data and are
        not charged against any design budget."""
        values = {}
        for cid in county_ids:
            for cond in enumerate_grid(grid):
                batch_seed = derive_seed(seed, "holdout", cid, cond.n, cond.b)
                obs = simulator.run(cid, cond, replicates, batch_seed)
                values[(cid, cond)] = float(np.mean([o.outcome for o in obs]))
        return cls(values)

    def require_cells(self, cells: Sequence[Cell]) -> None:
        missing = [c for c in cells if c not in self.values]
        if missing:
            raise EvaluationError(f"truth table missing {len(missing)} cells, "
                                  f"first: {missing[0]}")


@dataclass(frozen=True)
class MetricsResult:
    rel_error: float
    mse: float
    n_cells: int
    n_excluded: int  # truth == 0 cells skipped for relative error


def score_table(predictions: dict[Cell, float], truth: TruthTable) -> MetricsResult:
    """Mean |pred-truth|/truth and mean squared error over matching cells."""
    if not predictions:
        raise EvaluationError("no predictions to score")
    truth.require_cells(list(predictions))
    rel_terms, sq_terms, excluded = [], [], 0
    for cell, pred in predictions.items():
        ref = truth.values[cell]
        sq_terms.append((pred - ref) ** 2)
        if ref > 0:
            rel_terms.append(abs(pred - ref) / ref)
        else:
            excluded += 1
    rel = float(np.mean(rel_terms)) if rel_terms else math.nan
    return MetricsResult(rel, float(np.mean(sq_terms)), len(predictions), excluded)


def relative_error(predictions: dict[Cell, float], truth: TruthTable) -> float:
    return score_table(predictions, truth).rel_error


def mse(predictions: dict[Cell, float], truth: TruthTable) -> float:
    return score_table(predictions, truth).mse


def predict_table(surrogate: CoefficientSurrogate,
                  counties: Sequence[CountyFeatures], grid: TreatmentGrid,
                  kind: str = MAIN_EFFECTS) -> dict[Cell, float]:
    """Posterior-mean outcome for every (county, condition) cell."""
    x_std = surrogate.standardized(np.vstack([c.vector() for c in counties]))
    means, _ = surrogate.posterior_batch(x_std)
    conditions = enumerate_grid(grid)
    design = np.vstack([design_row(c, kind) for c in conditions])
    outcomes = means @ design.T
    return {(county.county_id, cond): float(outcomes[i, j])
            for i, county in enumerate(counties)
            for j, cond in enumerate(conditions)}


def evaluate_state(state: SeqDesState, truth: TruthTable) -> MetricsResult:
    preds = predict_table(state.surrogate, state.counties, state.grid,
                          state.settings.response_kind)
    return score_table(preds, truth)


def make_metrics_fn(counties: Sequence[CountyFeatures], grid: TreatmentGrid,
                    truth: TruthTable, kind: str = MAIN_EFFECTS):
    """Closure handed to the design loop so every iteration records metrics."""
    counties = list(counties)

    def metrics_fn(surrogate: CoefficientSurrogate) -> tuple[float, float]:
        res = score_table(predict_table(surrogate, counties, grid, kind), truth)
        return res.rel_error, res.mse

    return metrics_fn


@dataclass(frozen=True)
class LearningCurvePoint:
    budget_used: int
    rel_error: float
    mse: float
    per_county: dict[str, tuple[float, float]] | None = None


def per_county_metrics(surrogate: CoefficientSurrogate,
                       counties: Sequence[CountyFeatures], grid: TreatmentGrid,
                       truth: TruthTable,
                       kind: str = MAIN_EFFECTS) -> dict[str, tuple[float, float]]:
    preds = predict_table(surrogate, counties, grid, kind)
    out = {}
    for county in counties:
        cells = {cell: v for cell, v in preds.items() if cell[0] == county.county_id}
        res = score_table(cells, truth)
        out[county.county_id] = (res.rel_error, res.mse)
    return out


def learning_curve(state: SeqDesState, truth: TruthTable,
                   eval_every: int = 1,
                   per_county_final: bool = True) -> list[LearningCurvePoint]:
    """Metric trajectory from the per-iteration snapshots recorded during the
    run: the post-initialization point, every ``eval_every``-th iteration,
    and the final iteration."""
    if state.init_summary is None:
        raise EvaluationError("state has no initialization summary")
    if state.init_summary.rel_error is None:
        raise EvaluationError("run was executed without a metrics function")
    points = [LearningCurvePoint(state.init_summary.budget_used,
                                 state.init_summary.rel_error,
                                 state.init_summary.mse)]
    records = state.history
    for i, rec in enumerate(records):
        is_last = i == len(records) - 1
        if rec.iteration % eval_every == 0 or is_last:
            breakdown = None
            if is_last and per_county_final:
                breakdown = per_county_metrics(state.surrogate, state.counties,
                                               state.grid, truth,
                                               state.settings.response_kind)
            points.append(LearningCurvePoint(rec.budget_used, rec.rel_error,
                                             rec.mse, breakdown))
    budgets = [p.budget_used for p in points]
    if any(b2 <= b1 for b1, b2 in zip(budgets, budgets[1:])):
        raise EvaluationError("learning-curve budgets must strictly increase")
    return points


@dataclass(frozen=True)
class WorkflowProblem:
    """A self-contained experiment: candidate pool, grid, simulator, truth,
    and loop parameters.  Ablations run variants of this bundle."""

    counties: tuple[CountyFeatures, ...]
    grid: TreatmentGrid
    simulator: OutcomeSimulator
    truth: TruthTable
    plan: InitPlan
    budget: int
    replicates_per_step: int = 8
    settings: ModelSettings = field(default_factory=ModelSettings)
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)


def execute(problem: WorkflowProblem, seed: int,
            settings: ModelSettings | None = None,
            step_fn: Callable = step,
            max_iterations: int | None = None,
            plateau_window: int = 10,
            plateau_tol: float | None = None) -> SeqDesState:
    """Run one full workflow over a problem bundle with per-iteration metrics."""
    settings = settings or problem.settings
    metrics_fn = make_metrics_fn(problem.counties, problem.grid, problem.truth,
                                 settings.response_kind)
    acq = replace(problem.acquisition, seed=derive_seed(seed, "acquisition"))
    state = new_state(problem.counties, problem.grid, problem.budget, seed, settings)
    state = initialize(state, problem.plan, problem.simulator, acq, metrics_fn)
    return run(state, acq, problem.simulator, problem.replicates_per_step,
               metrics_fn=metrics_fn, step_fn=step_fn,
               max_iterations=max_iterations,
               plateau_window=plateau_window, plateau_tol=plateau_tol)


def run_one_stage_baseline(problem: WorkflowProblem, seed: int,
                           settings: ModelSettings | None = None,
                           max_iterations: int | None = None) -> SeqDesState:
    """County selection stays adaptive; every grid condition in the chosen
    county is simulated each iteration (budget accounting unchanged)."""
    return execute(problem, seed, settings=settings, step_fn=exhaustive_step,
                   max_iterations=max_iterations)


@dataclass(frozen=True)
class CurveBundle:
    """Learning curves for one strategy across seeds, aligned on budgets."""

    budgets: tuple[int, ...]
    errors: np.ndarray          # (n_seeds, n_checkpoints) relative error
    mses: np.ndarray

    @property
    def mean_curve(self) -> np.ndarray:
        return self.errors.mean(axis=0)

    @property
    def band(self) -> tuple[np.ndarray, np.ndarray]:
        return self.errors.min(axis=0), self.errors.max(axis=0)

    @property
    def final_error(self) -> float:
        return float(self.errors[:, -1].mean())


def _curve_from_state(state: SeqDesState) -> tuple[list[int], list[float], list[float]]:
    budgets = [state.init_summary.budget_used]
    rel = [state.init_summary.rel_error]
    sq = [state.init_summary.mse]
    for rec in state.history:
        budgets.append(rec.budget_used)
        rel.append(rec.rel_error)
        sq.append(rec.mse)
    return budgets, rel, sq


def bundle_runs(states: Sequence[SeqDesState]) -> CurveBundle:
    curves = [_curve_from_state(s) for s in states]
    n = min(len(c[0]) for c in curves)
    budgets = curves[0][0][:n]
    for c in curves:
        if c[0][:n] != budgets:
            raise EvaluationError("runs hit different budget checkpoints; "
                                  "cannot align curves")
    errors = np.array([c[1][:n] for c in curves])
    mses = np.array([c[2][:n] for c in curves])
    return CurveBundle(tuple(budgets), errors, mses)


def compare_noise_models(problem: WorkflowProblem,
                         seeds: Sequence[int]) -> dict[str, CurveBundle]:
    """Paired heteroscedastic vs pooled-variance learning curves on identical
    seeds and budget checkpoints."""
    out = {}
    for mode in ("hetero", "homo"):
        settings = replace(problem.settings, noise_mode=mode)
        states = [execute(problem, seed, settings=settings) for seed in seeds]
        out[mode] = bundle_runs(states)
    return out


def budget_to_threshold(bundle: CurveBundle, threshold: float) -> float:
    """Mean budget at which runs first reach the error threshold (inf when a
    run never does)."""
    costs = []
    for row in bundle.errors:
        hit = [b for b, e in zip(bundle.budgets, row) if e <= threshold]
        costs.append(hit[0] if hit else math.inf)
    return float(np.mean(costs))


@dataclass(frozen=True)
class DeltaRow:
    county_id: str
    coefficient: str
    delta_mean: float
    ci_low: float
    ci_high: float

    @property
    def spans_zero(self) -> bool:
        return self.ci_low <= 0.0 <= self.ci_high


@dataclass(frozen=True)
class SpecificationComparison:
    deltas: list[DeltaRow]
    munb_mean: float
    munb_sd: float
    munb_p10: float
    munb_p90: float
    munb_abs_mean: float        # mean over counties of |mu_nb|
    main_abs_mean: float        # mean over counties of (|mu_n|+|mu_b|)/2

    @property
    def fraction_spanning_zero(self) -> float:
        return float(np.mean([d.spans_zero for d in self.deltas]))


def compare_specifications(main_state: SeqDesState, int_state: SeqDesState,
                           s: int = 2000, seed: int = 0) -> SpecificationComparison:
    """Per-county posterior-mean differences (interaction minus main effects)
    for the shared coefficients, with empirical credible intervals from
    posterior samples, plus a summary of the interaction coefficient."""
    if main_state.settings.response_kind == int_state.settings.response_kind:
        raise EvaluationError("states must carry different response kinds")
    counties = main_state.counties
    deltas = []
    munb_means = []
    main_abs = []
    names = ("mu0", "mu_n", "mu_b")
    for i, county in enumerate(counties):
        x_main = main_state.pool_x_std[i]
        x_int = int_state.pool_x_std[i]
        d_main = main_state.surrogate.sample_posterior(
            x_main, s, derive_seed(seed, "cmp", county.county_id, "main"))
        d_int = int_state.surrogate.sample_posterior(
            x_int, s, derive_seed(seed, "cmp", county.county_id, "int"))
        diff = d_int[:, :3] - d_main
        lo, hi = np.quantile(diff, [0.025, 0.975], axis=0)
        mean = diff.mean(axis=0)
        for j, name in enumerate(names):
            deltas.append(DeltaRow(county.county_id, name, float(mean[j]),
                                   float(lo[j]), float(hi[j])))
        post_int = int_state.surrogate.posterior(x_int)
        post_main = main_state.surrogate.posterior(x_main)
        munb_means.append(post_int.means[3])
        main_abs.append(0.5 * (abs(post_main.means[1]) + abs(post_main.means[2])))
    munb = np.array(munb_means)
    return SpecificationComparison(
        deltas=deltas,
        munb_mean=float(munb.mean()),
        munb_sd=float(munb.std(ddof=1)) if munb.size > 1 else 0.0,
        munb_p10=float(np.quantile(munb, 0.10)),
        munb_p90=float(np.quantile(munb, 0.90)),
        munb_abs_mean=float(np.abs(munb).mean()),
        main_abs_mean=float(np.mean(main_abs)),
    )


@dataclass(frozen=True)
class FactorialSlices:
    """Outcome slices along each treatment axis plus the parallelism defect
    (max absolute second mixed difference) as the quantitative stand-in for
    a visual parallel-lines judgment."""

    county_id: str
    outcome_by_b: dict[int, list[float]]   # fixed n -> outcomes over b
    outcome_by_n: dict[int, list[float]]   # fixed b -> outcomes over n
    parallelism_defect: float
    mean_abs_step: float                   # mean |first difference| along axes


def factorial_slices(truth: TruthTable, county_id: str,
                     grid: TreatmentGrid) -> FactorialSlices:
    z = np.empty((grid.levels_n, grid.levels_b))
    for n in range(grid.levels_n):
        for b in range(grid.levels_b):
            cell = (county_id, TreatmentCondition(n, b))
            if cell not in truth.values:
                raise EvaluationError(f"truth table missing cell {cell}")
            z[n, b] = truth.values[cell]
    mixed = z[1:, 1:] - z[1:, :-1] - z[:-1, 1:] + z[:-1, :-1]
    steps = np.concatenate([np.abs(np.diff(z, axis=0)).ravel(),
                            np.abs(np.diff(z, axis=1)).ravel()])
    return FactorialSlices(
        county_id=county_id,
        outcome_by_b={n: list(z[n, :]) for n in range(grid.levels_n)},
        outcome_by_n={b: list(z[:, b]) for b in range(grid.levels_b)},
        parallelism_defect=float(np.max(np.abs(mixed))) if mixed.size else 0.0,
        mean_abs_step=float(steps.mean()) if steps.size else 0.0,
    )


@dataclass(frozen=True)
class CountySummaryFeatures:
    """Trend summary used to match counties to calibrated prototypes."""

    county_id: str
    mean_death_rate: float
    death_slope: float
    opioid_slope_mag: float
    nal_slope_mag: float
    bup_slope_mag: float
    fent_slope_mag: float
    population: float

    def __post_init__(self):
        vec = self.vector()
        if not np.all(np.isfinite(vec)):
            raise EvaluationError(f"non-finite summary features for {self.county_id}")

    def vector(self) -> np.ndarray:
        return np.array([self.mean_death_rate, self.death_slope,
                         self.opioid_slope_mag, self.nal_slope_mag,
                         self.bup_slope_mag, self.fent_slope_mag,
                         self.population])


def assign_prototypes(summaries: Sequence[CountySummaryFeatures],
                      prototype_ids: Sequence[str]) -> dict[str, str]:
    """Nearest calibrated prototype by Euclidean distance over z-scored
    summary features; prototypes map to themselves, ties break to the
    lexicographically smallest prototype id."""
    if not prototype_ids:
        raise EvaluationError("need at least one prototype")
    ids = [s.county_id for s in summaries]
    unknown = set(prototype_ids) - set(ids)
    if unknown:
        raise EvaluationError(f"prototypes missing from summaries: {sorted(unknown)}")
    matrix = np.vstack([s.vector() for s in summaries])
    mean = matrix.mean(axis=0)
    sd = matrix.std(axis=0, ddof=1) if len(ids) > 1 else np.ones(matrix.shape[1])
    sd = np.where(sd == 0, 1.0, sd)
    z = (matrix - mean) / sd
    z_by_id = {cid: z[i] for i, cid in enumerate(ids)}
    mapping = {}
    protos = sorted(prototype_ids)
    for cid in ids:
        if cid in protos:
            mapping[cid] = cid
            continue
        best, best_d = None, math.inf
        for pid in protos:
            d = float(np.linalg.norm(z_by_id[cid] - z_by_id[pid]))
            if d < best_d:
                best, best_d = pid, d
        mapping[cid] = best
    return mapping


# ---------------------------------------------------------------- CSV export

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_learning_curve_csv(path: str | Path, points: Sequence[LearningCurvePoint]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["budget_used", "rel_error", "mse"])
        for p in points:
            w.writerow([p.budget_used, _fmt(p.rel_error), _fmt(p.mse)])


def write_history_csv(path: str | Path, state: SeqDesState) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "county_id", "n", "b", "replicates", "budget_used",
                    "rel_error", "mse"])
        for rec in state.history:
            n = rec.condition.n if rec.condition else ""
            b = rec.condition.b if rec.condition else ""
            w.writerow([rec.iteration, rec.county_id, n, b, rec.replicates,
                        rec.budget_used, _fmt(rec.rel_error), _fmt(rec.mse)])


def write_assignment_csv(path: str | Path, mapping: dict[str, str]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["county_id", "prototype_id"])
        for cid in sorted(mapping):
            w.writerow([cid, mapping[cid]])


def write_factorial_csv(path: str | Path, slices: FactorialSlices) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["county_id", "axis", "fixed_level", "level", "outcome"])
        for n, outcomes in slices.outcome_by_b.items():
            for b, z in enumerate(outcomes):
                w.writerow([slices.county_id, "b", n, b, _fmt(z)])
        for b, outcomes in slices.outcome_by_n.items():
            for n, z in enumerate(outcomes):
                w.writerow([slices.county_id, "n", b, n, _fmt(z)])
        w.writerow([slices.county_id, "defect", "", "", _fmt(slices.parallelism_defect)])


def write_delta_mu_csv(path: str | Path, comparison: SpecificationComparison) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["county_id", "coefficient", "delta_mean", "ci_low", "ci_high",
                    "spans_zero"])
        for d in comparison.deltas:
            w.writerow([d.county_id, d.coefficient, _fmt(d.delta_mean),
                        _fmt(d.ci_low), _fmt(d.ci_high), int(d.spans_zero)])
