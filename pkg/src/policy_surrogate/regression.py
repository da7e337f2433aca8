"""Per-county least-squares summarization of simulation outcomes.

Observations at treatment conditions (n, b) are condensed into affine
response coefficients with a covariance estimate; the coefficient variances
feed the surrogate as per-observation noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .domain import Observation, TreatmentCondition

MAIN_EFFECTS = "main"
INTERACTION = "interaction"

NOISE_FLOOR = 1e-8


class RegressionError(ValueError):
    pass


@dataclass(frozen=True)
class CoefficientEstimate:
    """OLS response coefficients for one county.

    ``beta`` is (intercept, per-level naloxone effect, per-level
    buprenorphine effect[, interaction effect]); ``cov`` is the matching
    coefficient covariance.
    """

    county_id: str
    model_kind: str
    beta: np.ndarray
    cov: np.ndarray
    replicates_total: int
    distinct_conditions: int

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "cov", cov)
        if not np.all(np.isfinite(beta)):
            raise RegressionError("non-finite coefficients")
        if cov.shape != (beta.size, beta.size):
            raise RegressionError("covariance shape mismatch")
        if np.any(np.diag(cov) < 0):
            raise RegressionError("negative covariance diagonal")
        if np.min(np.linalg.eigvalsh((cov + cov.T) / 2.0)) < -1e-10:
            raise RegressionError("covariance not PSD")


@dataclass(frozen=True)
class ResponsePrediction:
    mean: float
    variance: float | None = None

    def __post_init__(self):
        if self.variance is not None and self.variance < 0:
            raise RegressionError("variance must be >= 0")


def design_row(condition: TreatmentCondition, kind: str) -> np.ndarray:
    if kind == MAIN_EFFECTS:
        return np.array([1.0, condition.n, condition.b])
    if kind == INTERACTION:
        return np.array([1.0, condition.n, condition.b, condition.n * condition.b])
    raise RegressionError(f"unknown response model kind {kind!r}")


def n_coefficients(kind: str) -> int:
    return 3 if kind == MAIN_EFFECTS else 4


def _check_rank(x: np.ndarray, kind: str) -> None:
    ncoef = n_coefficients(kind)
    if np.linalg.matrix_rank(x) >= ncoef:
        return
    # name the missing direction for the caller
    msgs = []
    if np.ptp(x[:, 1]) == 0:
        msgs.append("no variation in n")
    if np.ptp(x[:, 2]) == 0:
        msgs.append("no variation in b")
    if kind == INTERACTION and x.shape[1] > 3 and np.ptp(x[:, 3]) == 0:
        msgs.append("no condition with n*b != 0 varying")
    if not msgs:
        msgs.append("conditions are affinely dependent")
    raise RegressionError(
        f"rank-deficient design for {kind} model ({'; '.join(msgs)}); "
        f"observed {x.shape[0]} rows")


def _replicate_variance(observations: Sequence[Observation]) -> float | None:
    """Pooled sample variance of outcomes within repeated conditions."""
    groups: dict[TreatmentCondition, list[float]] = {}
    for obs in observations:
        groups.setdefault(obs.condition, []).append(obs.outcome)
    variances = [np.var(v, ddof=1) for v in groups.values() if len(v) >= 2]
    if not variances:
        return None
    return float(np.mean(variances))


def fit_response(observations: Sequence[Observation], kind: str = MAIN_EFFECTS) -> CoefficientEstimate:
    """Ordinary least squares over one county's observations.

    cov = s^2 (X^T X)^-1 with s^2 the residual mean square.  When the fit is
    saturated (zero residual degrees of freedom) s^2 falls back to the pooled
    within-condition replicate variance, or zero if no condition repeats.
    """
    if not observations:
        raise RegressionError("no observations")
    county_ids = {obs.county_id for obs in observations}
    if len(county_ids) != 1:
        raise RegressionError(f"observations span multiple counties: {sorted(county_ids)}")
    county_id = observations[0].county_id

    x = np.vstack([design_row(obs.condition, kind) for obs in observations])
    y = np.array([obs.outcome for obs in observations])
    _check_rank(x, kind)

    xtx = x.T @ x
    xtx_inv = np.linalg.inv(xtx)
    beta = xtx_inv @ (x.T @ y)
    dof = x.shape[0] - x.shape[1]
    if dof > 0:
        rss = float(np.sum((y - x @ beta) ** 2))
        s2 = rss / dof
    else:
        s2 = _replicate_variance(observations) or 0.0
    return CoefficientEstimate(
        county_id=county_id,
        model_kind=kind,
        beta=beta,
        cov=s2 * xtx_inv,
        replicates_total=len(observations),
        distinct_conditions=len({obs.condition for obs in observations}),
    )


def predict_response(beta: np.ndarray | CoefficientEstimate,
                     condition: TreatmentCondition,
                     cov: np.ndarray | None = None,
                     want_variance: bool = False) -> ResponsePrediction:
    """Evaluate the affine response at a condition.

    Accepts either a CoefficientEstimate or a raw coefficient vector (with
    optional covariance).  Variance, when requested, is a' cov a for the
    design row a.
    """
    if isinstance(beta, CoefficientEstimate):
        cov = beta.cov
        beta = beta.beta
    beta = np.asarray(beta, dtype=float)
    kind = MAIN_EFFECTS if beta.size == 3 else INTERACTION
    if beta.size not in (3, 4):
        raise RegressionError(f"coefficient vector has length {beta.size}; expected 3 or 4")
    a = design_row(condition, kind)
    mean = float(a @ beta)
    if not want_variance:
        return ResponsePrediction(mean)
    if cov is None:
        raise RegressionError("variance requested but no covariance available")
    return ResponsePrediction(mean, float(max(a @ np.asarray(cov) @ a, 0.0)))


def noise_variance_for_gp(est: CoefficientEstimate, div_rc: bool = False) -> np.ndarray:
    """Per-coefficient observation-noise variances for the surrogate.

    The OLS coefficient variance already shrinks as 1/R_c, so it is used
    directly; ``div_rc`` divides by the replicate count once more (ablation
    flag).  Floored at 1e-8 to keep factorizations positive definite.
    """
    var = np.diag(est.cov).astype(float).copy()
    if div_rc:
        var /= max(est.replicates_total, 1)
    return np.maximum(var, NOISE_FLOOR)
