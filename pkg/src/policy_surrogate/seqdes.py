"""Two-stage sequential design over counties and treatment conditions.

The outer stage scores counties by a scalarized signal-to-noise ratio of
the coefficient posterior and picks the argmax; the inner stage draws one
shared set of posterior coefficient samples for the chosen county and picks
the treatment condition whose predicted outcome has the widest empirical
95% credible interval.  The workflow loop alternates selection, simulation,
per-county regression refit, and surrogate update until the budget runs out
or the posterior plateaus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .domain import (CountyFeatures, Observation, TreatmentCondition,
                     TreatmentGrid, enumerate_grid, standardize)
from .gpr import (CoefficientSurrogate, KernelSpec, PosteriorSummary,
                  OUTPUT_NAMES_INTERACTION, OUTPUT_NAMES_MAIN)
from .regression import (MAIN_EFFECTS, design_row, fit_response,
                         n_coefficients, noise_variance_for_gp)
from .simulator import OutcomeSimulator
from .util import derive_seed

VARIANCE_POSTERIOR = "posterior"
VARIANCE_OBSERVATION_NOISE = "observation-noise"

MetricsFn = Callable[[CoefficientSurrogate], tuple[float, float]]


class SeqDesError(ValueError):
    pass


class BudgetError(SeqDesError):
    pass


@dataclass(frozen=True)
class AcquisitionConfig:
    """Scalarization weights and sampling sizes for both selection stages."""

    weights: tuple[float, ...] = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)
    snr_epsilon: float = 1e-6
    variance_source: str = VARIANCE_POSTERIOR
    s: int = 256
    seed: int = 0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise SeqDesError("weights must be nonnegative and sum to 1")
        if self.s < 16:
            raise SeqDesError("posterior sample count must be >= 16")
        if self.variance_source not in (VARIANCE_POSTERIOR, VARIANCE_OBSERVATION_NOISE):
            raise SeqDesError(f"unknown variance source {self.variance_source!r}")
        if self.snr_epsilon <= 0:
            raise SeqDesError("snr_epsilon must be > 0")

    def weight_vector(self, n_outputs: int) -> np.ndarray:
        w = np.asarray(self.weights, dtype=float)
        if w.size == n_outputs:
            return w
        if w.size == 3 and n_outputs == 4:
            # interaction runs keep the uniform-scalarization intent
            return np.full(4, 0.25)
        raise SeqDesError(f"weight vector has {w.size} entries for {n_outputs} outputs")


@dataclass(frozen=True)
class InitPlan:
    """Initial allocation: extra replicates anchor the baseline condition."""

    replicates_baseline: int = 10
    replicates_other: int = 3
    extra_conditions: tuple[TreatmentCondition, ...] | None = None
    counties: tuple[str, ...] | None = None  # None: every candidate county

    def __post_init__(self):
        if not self.replicates_baseline >= self.replicates_other >= 1:
            raise SeqDesError("need replicates_baseline >= replicates_other >= 1")

    def conditions_for(self, grid: TreatmentGrid) -> list[tuple[TreatmentCondition, int]]:
        """(condition, replicates) pairs; default extras are the non-baseline
        grid corners."""
        baseline = TreatmentCondition(0, 0)
        extras = self.extra_conditions
        if extras is None:
            extras = tuple(c for c in grid.corners() if c != baseline)
        for c in extras:
            if not grid.contains(c):
                raise SeqDesError(f"initial condition {c} outside grid")
            if c == baseline:
                raise SeqDesError("baseline is always included; list only extras")
        return [(baseline, self.replicates_baseline)] + \
               [(c, self.replicates_other) for c in extras]

    def cost(self, grid: TreatmentGrid, n_counties: int) -> int:
        per_county = sum(r for _, r in self.conditions_for(grid))
        return per_county * n_counties


@dataclass(frozen=True)
class ModelSettings:
    """Knobs shared by the regression/surrogate layers during a run."""

    response_kind: str = MAIN_EFFECTS
    noise_mode: str = "hetero"          # "hetero" | "homo"
    noise_div_rc: bool = False
    kernel: KernelSpec | None = None
    refit_every: int = 5
    fit_restarts: int = 2

    def output_names(self) -> tuple[str, ...]:
        return (OUTPUT_NAMES_MAIN if n_coefficients(self.response_kind) == 3
                else OUTPUT_NAMES_INTERACTION)


@dataclass(frozen=True)
class HistoryRecord:
    iteration: int
    county_id: str
    condition: TreatmentCondition | None  # None: batch covered the whole grid
    replicates: int
    budget_used: int
    rel_error: float | None
    mse: float | None
    scalarized_mean: float


@dataclass(frozen=True)
class InitSummary:
    budget_used: int
    rel_error: float | None
    mse: float | None


@dataclass(frozen=True)
class SeqDesState:
    """Everything the loop carries between iterations; transitions are
    functional (each step returns a new state)."""

    counties: tuple[CountyFeatures, ...]
    grid: TreatmentGrid
    settings: ModelSettings
    budget_total: int
    seed: int
    observations: dict[str, tuple[Observation, ...]] = field(default_factory=dict)
    raw_noise: dict[str, tuple[float, ...]] = field(default_factory=dict)
    surrogate: CoefficientSurrogate | None = None
    init_conditions: tuple[TreatmentCondition, ...] = ()
    pool_x_std: np.ndarray | None = None
    budget_used: int = 0
    iteration: int = 0
    history: tuple[HistoryRecord, ...] = ()
    init_summary: InitSummary | None = None
    terminal: bool = False

    def __post_init__(self):
        if self.budget_used > self.budget_total:
            raise BudgetError(
                f"budget_used {self.budget_used} exceeds total {self.budget_total}")
        ids = [c.county_id for c in self.counties]
        if len(set(ids)) != len(ids):
            raise SeqDesError("duplicate county ids in candidate pool")

    @property
    def county_ids(self) -> list[str]:
        return [c.county_id for c in self.counties]

    def features_by_county(self) -> dict[str, np.ndarray]:
        return {c.county_id: c.vector() for c in self.counties}

    def remaining_budget(self) -> int:
        return self.budget_total - self.budget_used


def new_state(counties: Sequence[CountyFeatures], grid: TreatmentGrid,
              budget_total: int, seed: int,
              settings: ModelSettings | None = None) -> SeqDesState:
    return SeqDesState(counties=tuple(counties), grid=grid,
                       settings=settings or ModelSettings(),
                       budget_total=budget_total, seed=seed)


def snr_score(post: PosteriorSummary, cfg: AcquisitionConfig) -> float:
    """Scalarized sigma / |mu| with an epsilon floor on the denominator."""
    w = cfg.weight_vector(post.means.size)
    mu = float(w @ post.means)
    sigma = math.sqrt(float(w @ (post.variances * w)))
    return sigma / max(abs(mu), cfg.snr_epsilon)


def _county_posteriors(state: SeqDesState, cfg: AcquisitionConfig) -> list[PosteriorSummary]:
    means, variances = state.surrogate.posterior_batch(state.pool_x_std)
    if cfg.variance_source == VARIANCE_OBSERVATION_NOISE:
        # counties without a training row keep their posterior variance
        surr = state.surrogate
        idx = {cid: i for i, cid in enumerate(surr.county_ids)}
        for row, cid in enumerate(state.county_ids):
            if cid in idx:
                variances[row] = surr.noise[idx[cid]]
    return [PosteriorSummary(means[i], variances[i]) for i in range(len(state.counties))]


def select_county(state: SeqDesState, cfg: AcquisitionConfig) -> str:
    """Argmax of the SNR acquisition over the full candidate pool; ties break
    to the lexicographically smallest county id."""
    if state.surrogate is None or state.surrogate.n_counties < 1:
        raise SeqDesError("surrogate not trained; initialize first")
    if not state.counties:
        raise SeqDesError("empty candidate set")
    posteriors = _county_posteriors(state, cfg)
    scores = [snr_score(p, cfg) for p in posteriors]
    best_id, best_score = None, -math.inf
    for cid, score in sorted(zip(state.county_ids, scores)):
        if score > best_score:
            best_id, best_score = cid, score
    return best_id


def credible_widths(surrogate: CoefficientSurrogate, x_std: np.ndarray,
                    grid: TreatmentGrid, cfg: AcquisitionConfig,
                    seed: int | None = None,
                    kind: str = MAIN_EFFECTS) -> tuple[list[TreatmentCondition], np.ndarray]:
    """Empirical 95% interval width of the predicted outcome per condition.

    One shared sample set is drawn and reused across the whole grid, which
    removes Monte-Carlo noise from the argmax comparison.  Quantiles use
    linear interpolation between order statistics.
    """
    conditions = enumerate_grid(grid)
    draws = surrogate.sample_posterior(x_std, cfg.s,
                                       cfg.seed if seed is None else seed)
    design = np.vstack([design_row(c, kind) for c in conditions])
    zeta = draws @ design.T                       # (S, n_conditions)
    lo, hi = np.quantile(zeta, [0.025, 0.975], axis=0)
    return conditions, hi - lo


def select_condition(surrogate: CoefficientSurrogate, x_std: np.ndarray,
                     grid: TreatmentGrid, cfg: AcquisitionConfig,
                     seed: int | None = None,
                     kind: str = MAIN_EFFECTS) -> TreatmentCondition:
    """Widest-interval condition; ties break to the smallest (n, b)."""
    conditions, widths = credible_widths(surrogate, x_std, grid, cfg, seed, kind)
    best = 0
    for i in range(1, len(conditions)):
        if widths[i] > widths[best]:
            best = i
    return conditions[best]


def _noise_matrix(state: SeqDesState, county_ids: Sequence[str]) -> np.ndarray:
    rows = np.vstack([state.raw_noise[cid] for cid in county_ids])
    if state.settings.noise_mode == "homo":
        # one pooled variance per output: the mean of all coefficient variances
        return np.tile(rows.mean(axis=0), (rows.shape[0], 1))
    return rows


def _scalarized_mean(state: SeqDesState, cfg: AcquisitionConfig) -> float:
    means, _ = state.surrogate.posterior_batch(state.pool_x_std)
    w = cfg.weight_vector(means.shape[1])
    return float(np.mean(means @ w))


def _metrics(metrics_fn: MetricsFn | None,
             surrogate: CoefficientSurrogate) -> tuple[float | None, float | None]:
    if metrics_fn is None:
        return None, None
    rel, mse = metrics_fn(surrogate)
    return float(rel), float(mse)


def _refit_county(state: SeqDesState, county_id: str) -> tuple:
    obs = state.observations[county_id]
    est = fit_response(list(obs), state.settings.response_kind)
    noise = noise_variance_for_gp(est, div_rc=state.settings.noise_div_rc)
    return est, noise


def initialize(state: SeqDesState, plan: InitPlan, simulator: OutcomeSimulator,
               cfg: AcquisitionConfig | None = None,
               metrics_fn: MetricsFn | None = None) -> SeqDesState:
    """Seed the loop: baseline-heavy replicates at the initial conditions for
    each initial county, then first regression and surrogate fits."""
    if state.surrogate is not None:
        raise SeqDesError("state already initialized")
    cfg = cfg or AcquisitionConfig()
    init_ids = list(plan.counties) if plan.counties is not None else state.county_ids
    unknown = set(init_ids) - set(state.county_ids)
    if unknown:
        raise SeqDesError(f"initial counties not in pool: {sorted(unknown)}")
    allocation = plan.conditions_for(state.grid)
    cost = plan.cost(state.grid, len(init_ids))
    if cost > state.budget_total:
        raise BudgetError(f"initialization needs {cost} runs, budget is "
                          f"{state.budget_total}")

    observations: dict[str, tuple[Observation, ...]] = {}
    for cid in init_ids:
        rows: list[Observation] = []
        for cond, reps in allocation:
            batch_seed = derive_seed(state.seed, "init", cid, cond.n, cond.b)
            rows.extend(simulator.run(cid, cond, reps, batch_seed))
        observations[cid] = tuple(rows)

    scaler, pool_x_std = standardize(list(state.counties))
    settings = state.settings
    estimates, raw_noise = [], {}
    for cid in init_ids:
        est = fit_response(list(observations[cid]), settings.response_kind)
        estimates.append(est)
        raw_noise[cid] = tuple(noise_variance_for_gp(est, settings.noise_div_rc))

    interim = replace(state, observations=observations, raw_noise=raw_noise,
                      pool_x_std=pool_x_std, budget_used=cost)
    noise_rows = list(_noise_matrix(interim, [e.county_id for e in estimates]))
    surrogate = CoefficientSurrogate.from_estimates(
        scaler, state.features_by_county(), estimates, noise_rows,
        kernel=settings.kernel, output_names=settings.output_names(),
        refit_every=settings.refit_every, fit_restarts=settings.fit_restarts,
        fit_seed=derive_seed(state.seed, "gpfit"))
    rel, mse = _metrics(metrics_fn, surrogate)
    return replace(interim, surrogate=surrogate,
                   init_conditions=tuple(cond for cond, _ in allocation),
                   init_summary=InitSummary(cost, rel, mse))


def _augment(state: SeqDesState, county_id: str,
             batches: Sequence[tuple[TreatmentCondition, int]],
             simulator: OutcomeSimulator, cfg: AcquisitionConfig,
             metrics_fn: MetricsFn | None) -> SeqDesState:
    """Run replicate batches for one county, refit its regression over all of
    its observations, and push the new row through the surrogate."""
    t = state.iteration + 1
    new_obs = list(state.observations.get(county_id, ()))
    total_reps = 0
    for cond, reps in batches:
        seed = derive_seed(state.seed, "sim", t, county_id, cond.n, cond.b)
        new_obs.extend(simulator.run(county_id, cond, reps, seed))
        total_reps += reps
    observations = dict(state.observations)
    observations[county_id] = tuple(new_obs)

    interim = replace(state, observations=observations)
    est, noise = _refit_county(interim, county_id)
    raw_noise = dict(state.raw_noise)
    raw_noise[county_id] = tuple(noise)
    interim = replace(interim, raw_noise=raw_noise)

    surrogate = state.surrogate.update([est], [np.asarray(noise)],
                                       state.features_by_county())
    if state.settings.noise_mode == "homo":
        pooled = _noise_matrix(interim, surrogate.county_ids)
        surrogate = replace(surrogate, noise=pooled, _models=None)

    budget_used = state.budget_used + total_reps
    interim = replace(interim, surrogate=surrogate, budget_used=budget_used,
                      iteration=t)
    rel, mse = _metrics(metrics_fn, surrogate)
    record = HistoryRecord(
        iteration=t, county_id=county_id,
        condition=batches[0][0] if len(batches) == 1 else None,
        replicates=total_reps, budget_used=budget_used,
        rel_error=rel, mse=mse,
        scalarized_mean=_scalarized_mean(interim, cfg))
    return replace(interim, history=state.history + (record,))


def step(state: SeqDesState, cfg: AcquisitionConfig, simulator: OutcomeSimulator,
         replicates_per_step: int = 8,
         metrics_fn: MetricsFn | None = None) -> SeqDesState:
    """One loop iteration: county selection, condition selection, simulation,
    regression refit, surrogate update.  A no-op carrying a terminal flag when
    the remaining budget cannot cover the batch.

    A county visited for the first time (possible when initialization covered
    only a subset of the pool) gets an identification batch spread over the
    initial condition set instead, so its regression is full rank before the
    widest-interval rule takes over on later visits.
    """
    if state.surrogate is None:
        raise SeqDesError("state not initialized")
    if state.terminal:
        return state
    if replicates_per_step > state.remaining_budget():
        return replace(state, terminal=True)
    county_id = select_county(state, cfg)
    if county_id not in state.raw_noise:
        conds = state.init_conditions
        per = max(1, replicates_per_step // len(conds))
        batches = [(cond, per) for cond in conds]
        if per * len(conds) > state.remaining_budget():
            return replace(state, terminal=True)
    else:
        row = state.county_ids.index(county_id)
        cond_seed = derive_seed(cfg.seed, "acq", state.iteration + 1)
        condition = select_condition(state.surrogate, state.pool_x_std[row],
                                     state.grid, cfg, seed=cond_seed,
                                     kind=state.settings.response_kind)
        batches = [(condition, replicates_per_step)]
    return _augment(state, county_id, batches, simulator, cfg, metrics_fn)


def exhaustive_step(state: SeqDesState, cfg: AcquisitionConfig,
                    simulator: OutcomeSimulator, replicates_per_step: int = 8,
                    metrics_fn: MetricsFn | None = None) -> SeqDesState:
    """One-stage variant: county selection as usual, then every grid condition
    simulated with replicates_per_step/grid_size runs rounded up."""
    if state.surrogate is None:
        raise SeqDesError("state not initialized")
    if state.terminal:
        return state
    per_condition = max(1, math.ceil(replicates_per_step / state.grid.size))
    cost = per_condition * state.grid.size
    if cost > state.remaining_budget():
        return replace(state, terminal=True)
    county_id = select_county(state, cfg)
    batches = [(cond, per_condition) for cond in enumerate_grid(state.grid)]
    return _augment(state, county_id, batches, simulator, cfg, metrics_fn)


def run(state: SeqDesState, cfg: AcquisitionConfig, simulator: OutcomeSimulator,
        replicates_per_step: int = 8, max_iterations: int | None = None,
        plateau_window: int = 10, plateau_tol: float | None = None,
        metrics_fn: MetricsFn | None = None,
        step_fn: Callable = step) -> SeqDesState:
    """Iterate until the budget is exhausted, the posterior plateaus, or an
    iteration cap is hit.

    The plateau statistic is the pool-averaged scalarized posterior mean;
    stopping triggers when its relative change across ``plateau_window``
    iterations falls below ``plateau_tol`` (None disables the check).
    """
    while True:
        if max_iterations is not None and state.iteration >= max_iterations:
            return state
        nxt = step_fn(state, cfg, simulator, replicates_per_step, metrics_fn)
        if nxt.terminal or nxt.iteration == state.iteration:
            return nxt
        state = nxt
        if plateau_tol is not None and len(state.history) >= plateau_window:
            g_now = state.history[-1].scalarized_mean
            g_then = state.history[-plateau_window].scalarized_mean
            change = abs(g_now - g_then) / max(abs(g_then), 1e-12)
            if change < plateau_tol:
                return state
