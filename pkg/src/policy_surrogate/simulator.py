"""Ground-truth generators.

The stochastic cohort model is the "expensive" simulator: a closed cohort
moves between seven health states (nonuse, prescribed use, misuse, active
disorder, treatment, overdose death, other death) under logistic transition
probabilities tied to local dispensing rates.  Treatment levels scale the
corresponding baseline dispensing rate by 25% per level.

A cheap linear-truth mode generates outcomes from exact affine response
coefficients plus Gaussian noise; it exists so the learning loop can be
validated against a known answer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from . import _kernels
from .domain import Observation, TreatmentCondition

# State indices in the cohort count vector.
NONUSE, PRESCRIBED, MISUSE, OUD, TREATMENT, DEAD_OD, DEAD_OTHER = range(7)
STATE_NAMES = ("nonuse", "prescribed_use", "misuse", "oud", "treatment",
               "overdose_dead", "other_dead")

PER_100K = 100_000.0
LEVEL_SCALE = 0.25  # one treatment level = +25% of the baseline dispensing rate


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class CountyOudParams:
    """Logistic transition coefficients and local covariates for one county.

    ``beta0``..``beta6`` parameterize the three logistic transitions
    (prescription uptake, treatment entry, overdose death).  The remaining
    per-year probabilities are synthetic stand-ins with documented defaults;
    they are not calibrated values.
    """

    beta0: float
    beta1: float
    beta2: float
    beta3: float
    beta4: float
    beta5: float
    beta6: float
    baseline_opioid_rate: float   # prescriptions per 100 persons per year
    baseline_bup_rate: float
    baseline_nal_rate: float
    fentanyl_rate: float          # seizures per 100,000 per year
    misuse_onset: float = 0.002        # per-year probabilities
    oud_onset_rx: float = 0.02
    oud_onset_misuse: float = 0.10
    relapse: float = 0.30
    treatment_success: float = 0.25
    other_death_exit: float = 0.008

    def __post_init__(self):
        for name in ("baseline_opioid_rate", "baseline_bup_rate",
                     "baseline_nal_rate", "fentanyl_rate"):
            if getattr(self, name) < 0:
                raise SimulationError(f"{name} must be >= 0")
        for name in ("misuse_onset", "oud_onset_rx", "oud_onset_misuse",
                     "relapse", "treatment_success", "other_death_exit"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise SimulationError(f"{name}={v} outside [0, 1]")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class SimConfig:
    horizon_years: int = 5
    steps_per_year: int = 12
    cohort_size: int = 20_000
    rng_seed: int = 0

    def __post_init__(self):
        if self.horizon_years < 1:
            raise SimulationError("horizon_years must be >= 1")
        if self.steps_per_year < 1:
            raise SimulationError("steps_per_year must be >= 1")
        if self.cohort_size < 100:
            raise SimulationError("cohort_size must be >= 100")

    @property
    def n_steps(self) -> int:
        return self.horizon_years * self.steps_per_year


@dataclass(frozen=True)
class CohortState:
    """Counts per health state; the cohort is closed (sum is invariant)."""

    counts: tuple[int, ...]

    def __post_init__(self):
        if len(self.counts) != 7 or any(c < 0 for c in self.counts):
            raise SimulationError("need 7 nonnegative state counts")

    @classmethod
    def all_nonuse(cls, cohort_size: int) -> "CohortState":
        return cls((cohort_size, 0, 0, 0, 0, 0, 0))

    @property
    def total(self) -> int:
        return sum(self.counts)


def _sigmoid(logit: float) -> float:
    if not math.isfinite(logit):
        raise SimulationError(f"non-finite transition logit {logit}")
    if logit >= 0:
        return 1.0 / (1.0 + math.exp(-logit))
    e = math.exp(logit)
    return e / (1.0 + e)


def annual_to_step(p_annual: float, steps_per_year: int) -> float:
    """Complementary-power conversion; keeps annual semantics invariant to
    the step count."""
    return 1.0 - (1.0 - p_annual) ** (1.0 / steps_per_year)


def transition_probabilities(params: CountyOudParams,
                             condition: TreatmentCondition) -> tuple[float, float, float]:
    """Annual (p1, p2, p3): prescription uptake, treatment entry, overdose death.

    Treatment level k multiplies the corresponding baseline dispensing rate
    by (1 + 0.25*k); naloxone acts on the death logit, buprenorphine on the
    treatment-entry logit.
    """
    bup = params.baseline_bup_rate * (1.0 + LEVEL_SCALE * condition.b)
    nal = params.baseline_nal_rate * (1.0 + LEVEL_SCALE * condition.n)
    p1 = _sigmoid(params.beta0 + params.beta1 * params.baseline_opioid_rate)
    p2 = _sigmoid(params.beta2 + params.beta3 * bup)
    p3 = _sigmoid(params.beta4 + params.beta5 * params.fentanyl_rate - params.beta6 * nal)
    return p1, p2, p3


def step_transition_matrix(params: CountyOudParams, condition: TreatmentCondition,
                           steps_per_year: int) -> np.ndarray:
    """Per-step 7x7 transition-probability matrix (off-diagonal moves only;
    the stay probability is the remainder of each row).

    Competing exits from the disorder state are thinned in a fixed order:
    overdose death first, then treatment entry, then other-cause death.
    """
    p1a, p2a, p3a = transition_probabilities(params, condition)
    p1 = annual_to_step(p1a, steps_per_year)
    p2 = annual_to_step(p2a, steps_per_year)
    p3 = annual_to_step(p3a, steps_per_year)
    q_mis = annual_to_step(params.misuse_onset, steps_per_year)
    q_rx = annual_to_step(params.oud_onset_rx, steps_per_year)
    q_misoud = annual_to_step(params.oud_onset_misuse, steps_per_year)
    q_rel = annual_to_step(params.relapse, steps_per_year)
    q_succ = annual_to_step(params.treatment_success, steps_per_year)
    q_exit = annual_to_step(params.other_death_exit, steps_per_year)

    t = np.zeros((7, 7))
    t[NONUSE, PRESCRIBED] = p1
    t[NONUSE, MISUSE] = (1.0 - p1) * q_mis
    t[PRESCRIBED, OUD] = q_rx
    t[MISUSE, OUD] = q_misoud
    t[OUD, DEAD_OD] = p3
    t[OUD, TREATMENT] = (1.0 - p3) * p2
    t[OUD, DEAD_OTHER] = (1.0 - p3) * (1.0 - p2) * q_exit
    t[TREATMENT, NONUSE] = q_succ
    t[TREATMENT, OUD] = (1.0 - q_succ) * q_rel
    return t


def simulate_replicate(county_id: str, params: CountyOudParams,
                       condition: TreatmentCondition, cfg: SimConfig,
                       initial: CohortState | None = None,
                       return_trajectory: bool = False):
    """One stochastic cohort run; returns the Observation (and the per-step
    count history when requested).  Deterministic given the config seed."""
    initial = initial or CohortState.all_nonuse(cfg.cohort_size)
    if initial.total != cfg.cohort_size:
        raise SimulationError("initial state counts must sum to cohort_size")
    trans = step_transition_matrix(params, condition, cfg.steps_per_year)
    traj = _kernels.chain_trajectory(trans, np.array(initial.counts), cfg.n_steps,
                                     cfg.rng_seed)
    outcome = traj[-1, DEAD_OD] * PER_100K / cfg.cohort_size
    obs = Observation(county_id, condition, float(outcome), cfg.rng_seed)
    if return_trajectory:
        return obs, traj
    return obs


def expected_deaths_analytic(params: CountyOudParams, condition: TreatmentCondition,
                             cfg: SimConfig, initial: CohortState | None = None) -> float:
    """Exact expectation of the stochastic chain's overdose deaths per 100,000.

    Propagates the expected state-occupancy vector through the deterministic
    transition matrix; binomial thinning is linear in counts, so this is the
    exact mean of `simulate_replicate`.
    """
    initial = initial or CohortState.all_nonuse(cfg.cohort_size)
    t = step_transition_matrix(params, condition, cfg.steps_per_year)
    m = t.copy()
    np.fill_diagonal(m, 1.0 - t.sum(axis=1))
    v = np.array(initial.counts, dtype=float) / initial.total
    for _ in range(cfg.n_steps):
        v = m.T @ v
    return float(v[DEAD_OD] * PER_100K)


def run_batch(county_id: str, params: CountyOudParams, condition: TreatmentCondition,
              cfg: SimConfig, replicates: int) -> list[Observation]:
    """R independent replicates with seeds cfg.rng_seed + 0..R-1."""
    if replicates < 1:
        raise SimulationError("replicates must be >= 1")
    out = []
    for i in range(replicates):
        rep_cfg = SimConfig(cfg.horizon_years, cfg.steps_per_year,
                            cfg.cohort_size, cfg.rng_seed + i)
        out.append(simulate_replicate(county_id, params, condition, rep_cfg))
    return out


@dataclass(frozen=True)
class LinearTruthParams:
    """Exact affine response coefficients for the cheap ground-truth mode."""

    mu0: float
    mu_n: float
    mu_b: float
    mu_nb: float = 0.0
    noise_sd: float = 0.0

    def __post_init__(self):
        if self.mu0 < 0:
            raise SimulationError("mu0 must be >= 0")
        if self.noise_sd < 0:
            raise SimulationError("noise_sd must be >= 0")

    def mean(self, condition: TreatmentCondition) -> float:
        return (self.mu0 + self.mu_n * condition.n + self.mu_b * condition.b
                + self.mu_nb * condition.n * condition.b)


def linear_truth_outcome(county_id: str, coeffs: LinearTruthParams,
                         condition: TreatmentCondition, seed: int) -> Observation:
    """Affine mean plus Gaussian noise, clipped at zero."""
    rng = np.random.default_rng(seed)
    value = coeffs.mean(condition)
    if coeffs.noise_sd > 0:
        value += coeffs.noise_sd * rng.standard_normal()
    return Observation(county_id, condition, max(float(value), 0.0), seed)


class OutcomeSimulator(Protocol):
    """What the sequential-design loop needs from a ground-truth generator."""

    def run(self, county_id: str, condition: TreatmentCondition,
            replicates: int, seed: int) -> list[Observation]: ...

    def true_outcome(self, county_id: str, condition: TreatmentCondition) -> float: ...


@dataclass
class OudSimulator:
    """Stochastic cohort simulator over a table of per-county parameters."""

    params_by_county: dict[str, CountyOudParams]
    cfg: SimConfig = field(default_factory=SimConfig)

    def _params(self, county_id: str) -> CountyOudParams:
        try:
            return self.params_by_county[county_id]
        except KeyError:
            raise SimulationError(f"no simulator parameters for county {county_id!r}")

    def run(self, county_id, condition, replicates, seed):
        cfg = SimConfig(self.cfg.horizon_years, self.cfg.steps_per_year,
                        self.cfg.cohort_size, seed)
        return run_batch(county_id, self._params(county_id), condition, cfg, replicates)

    def true_outcome(self, county_id, condition):
        return expected_deaths_analytic(self._params(county_id), condition, self.cfg)


@dataclass
class LinearTruthSimulator:
    """Noisy affine ground truth; `true_outcome` is the exact (unclipped,
    floored at 0) mean, so oracle comparisons carry no Monte-Carlo error."""

    coeffs_by_county: dict[str, LinearTruthParams]

    def _coeffs(self, county_id: str) -> LinearTruthParams:
        try:
            return self.coeffs_by_county[county_id]
        except KeyError:
            raise SimulationError(f"no truth coefficients for county {county_id!r}")

    def run(self, county_id, condition, replicates, seed):
        coeffs = self._coeffs(county_id)
        return [linear_truth_outcome(county_id, coeffs, condition, seed + i)
                for i in range(replicates)]

    def true_outcome(self, county_id, condition):
        return max(self._coeffs(county_id).mean(condition), 0.0)


def load_oud_params_json(path: str | Path) -> dict[str, CountyOudParams]:
    """County parameter table from a JSON document keyed by county_id."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict) or not doc:
        raise SimulationError(f"{path}: expected a non-empty county->params object")
    return {cid: CountyOudParams(**p) for cid, p in doc.items()}


def load_linear_truth_json(path: str | Path) -> dict[str, LinearTruthParams]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict) or not doc:
        raise SimulationError(f"{path}: expected a non-empty county->coeffs object")
    return {cid: LinearTruthParams(**p) for cid, p in doc.items()}


def save_params_json(path: str | Path, params: dict) -> None:
    doc = {cid: p.to_dict() if hasattr(p, "to_dict") else
           {f.name: getattr(p, f.name) for f in fields(p)}
           for cid, p in params.items()}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")
