"""Gaussian-process surrogates over standardized county features.

Each response coefficient gets its own GP with a shared structure: an
additive kernel of RBF components over feature groups (location pair,
income, density, percent-Black by default), heteroscedastic per-county
observation noise taken from the regression covariance, and a zero mean on
per-output centered targets.  Hyperparameters maximize the log marginal
likelihood via multi-start L-BFGS with analytic gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.optimize import minimize

from .domain import FeatureScaler
from .regression import CoefficientEstimate

"""Jitter ladder: exact matrix first, then 1e-8 escalating tenfold to 1e-4."""
JITTER_LADDER = (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)

LENGTHSCALE_BOUNDS = (0.05, 20.0)       # standardized feature units
OUTPUT_SCALE_BOUNDS = (1e-4, 1e6)       # variance units

# Feature-group layout of the default kernel over the 5-dim county vector:
# {lat, lon}, {income}, {density}, {pct_black}.
DEFAULT_GROUPS = ((0, 1), (2,), (3,), (4,))

OUTPUT_NAMES_MAIN = ("mu0", "mu_n", "mu_b")
OUTPUT_NAMES_INTERACTION = ("mu0", "mu_n", "mu_b", "mu_nb")


class GprError(RuntimeError):
    pass


class FactorizationError(GprError):
    """Kernel-plus-noise matrix stayed non-PSD through jitter escalation."""


@dataclass(frozen=True)
class KernelComponent:
    group: tuple[int, ...]
    lengthscale: float = 1.0
    output_scale: float = 1.0  # marginal variance contribution s^2

    def __post_init__(self):
        if not self.group:
            raise GprError("kernel component needs a nonempty feature group")
        if self.lengthscale <= 0:
            raise GprError("lengthscale must be > 0")
        if self.output_scale < 0:
            raise GprError("output_scale must be >= 0")


@dataclass(frozen=True)
class KernelSpec:
    """Sum of RBF components, each over its own feature group with its own
    lengthscale."""

    components: tuple[KernelComponent, ...]

    def __post_init__(self):
        if not self.components:
            raise GprError("kernel needs at least one component")

    @classmethod
    def default(cls) -> "KernelSpec":
        return cls(tuple(KernelComponent(g) for g in DEFAULT_GROUPS))

    @classmethod
    def isotropic(cls, dim: int, lengthscale: float = 1.0,
                  output_scale: float = 1.0) -> "KernelSpec":
        return cls((KernelComponent(tuple(range(dim)), lengthscale, output_scale),))

    @property
    def n_params(self) -> int:
        return 2 * len(self.components)

    def max_dim(self) -> int:
        return 1 + max(max(c.group) for c in self.components)

    def prior_variance(self) -> float:
        return sum(c.output_scale for c in self.components)

    def gram(self, xa: np.ndarray, xb: np.ndarray | None = None) -> np.ndarray:
        """Covariance matrix between row sets (xb defaults to xa)."""
        xa = np.atleast_2d(xa)
        xb = xa if xb is None else np.atleast_2d(xb)
        out = np.zeros((xa.shape[0], xb.shape[0]))
        for comp in self.components:
            d2 = _sq_dist(xa[:, comp.group], xb[:, comp.group])
            out += comp.output_scale * np.exp(-0.5 * d2 / comp.lengthscale ** 2)
        return out

    def theta(self) -> np.ndarray:
        """Pack (log lengthscales, log output scales) for the optimizer."""
        ls = [np.log(c.lengthscale) for c in self.components]
        ss = [np.log(max(c.output_scale, OUTPUT_SCALE_BOUNDS[0])) for c in self.components]
        return np.array(ls + ss)

    def with_theta(self, theta: np.ndarray) -> "KernelSpec":
        j = len(self.components)
        comps = tuple(replace(c, lengthscale=float(np.exp(theta[i])),
                              output_scale=float(np.exp(theta[j + i])))
                      for i, c in enumerate(self.components))
        return KernelSpec(comps)

    def to_dict(self) -> dict:
        return {"components": [{"group": list(c.group),
                                "lengthscale": c.lengthscale,
                                "output_scale": c.output_scale}
                               for c in self.components]}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(tuple(KernelComponent(tuple(c["group"]), c["lengthscale"],
                                         c["output_scale"])
                         for c in d["components"]))


def _sq_dist(xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    diff = xa[:, None, :] - xb[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _chol_with_ladder(a: np.ndarray):
    """Cholesky factor of a (+ escalating jitter); raises FactorizationError
    when the matrix stays non-PSD through the whole ladder."""
    n = a.shape[0]
    for jitter in JITTER_LADDER:
        try:
            c, low = cho_factor(a + jitter * np.eye(n), lower=True)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(c)):
            return (c, low), jitter
    raise FactorizationError(
        f"kernel+noise matrix not PSD up to jitter {JITTER_LADDER[-1]:g}")


def kernel_eval(spec: KernelSpec, x: np.ndarray, xp: np.ndarray) -> float:
    """Covariance between two single points."""
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    if x.shape != xp.shape or x.ndim != 1:
        raise GprError(f"point shape mismatch: {x.shape} vs {xp.shape}")
    if x.size < spec.max_dim():
        raise GprError(f"points have dim {x.size}, kernel expects >= {spec.max_dim()}")
    return float(spec.gram(x[None, :], xp[None, :])[0, 0])


class GpModel:
    """One output's GP: training set, noise, and a cached factorization.

    Targets are centered internally; predictions restore the center.
    Instances are treated as immutable once constructed.
    """

    def __init__(self, kernel: KernelSpec, x: np.ndarray, y: np.ndarray,
                 noise: np.ndarray):
        self.kernel = kernel
        self.x = np.atleast_2d(np.asarray(x, dtype=float))
        self.y = np.asarray(y, dtype=float).ravel()
        self.noise = np.asarray(noise, dtype=float).ravel()
        if not (self.x.shape[0] == self.y.size == self.noise.size):
            raise GprError("X, y, and noise row counts differ")
        if np.any(self.noise < 0):
            raise GprError("noise variances must be >= 0")
        self.y_center = float(self.y.mean()) if self.y.size else 0.0
        self._chol = None
        self._alpha = None
        self._jitter_used = None

    @property
    def n(self) -> int:
        return self.y.size

    def _factorize(self):
        if self._chol is not None:
            return
        a = self.kernel.gram(self.x) + np.diag(self.noise)
        self._chol, self._jitter_used = _chol_with_ladder(a)
        self._alpha = cho_solve(self._chol, self.y - self.y_center)

    def log_marginal_likelihood(self) -> float:
        self._factorize()
        yc = self.y - self.y_center
        logdet = 2.0 * float(np.sum(np.log(np.diag(self._chol[0]))))
        return float(-0.5 * yc @ self._alpha - 0.5 * logdet
                     - 0.5 * self.n * np.log(2.0 * np.pi))

    def posterior(self, x_star: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Predictive mean and variance at each query row (variance >= 0)."""
        self._factorize()
        x_star = np.atleast_2d(np.asarray(x_star, dtype=float))
        k_star = self.kernel.gram(self.x, x_star)          # (n, m)
        mean = self.y_center + k_star.T @ self._alpha
        v = solve_triangular(self._chol[0], k_star, lower=True)
        var = self.kernel.prior_variance() - np.einsum("ij,ij->j", v, v)
        return mean, np.maximum(var, 0.0)

    def with_kernel(self, kernel: KernelSpec) -> "GpModel":
        return GpModel(kernel, self.x, self.y, self.noise)


def _lml_and_grad(kernel: KernelSpec, theta: np.ndarray, x: np.ndarray,
                  yc: np.ndarray, noise: np.ndarray) -> tuple[float, np.ndarray]:
    """Log marginal likelihood and gradient w.r.t. packed log-parameters."""
    spec = kernel.with_theta(theta)
    n = yc.size
    comps = spec.components
    d2s = [_sq_dist(x[:, c.group], x[:, c.group]) for c in comps]
    parts = [c.output_scale * np.exp(-0.5 * d2 / c.lengthscale ** 2)
             for c, d2 in zip(comps, d2s)]
    a = sum(parts) + np.diag(noise)
    chol, _ = _chol_with_ladder(a)
    alpha = cho_solve(chol, yc)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol[0]))))
    lml = -0.5 * yc @ alpha - 0.5 * logdet - 0.5 * n * np.log(2.0 * np.pi)

    a_inv = cho_solve(chol, np.eye(n))
    w = np.outer(alpha, alpha) - a_inv
    grad = np.empty(spec.n_params)
    j = len(comps)
    for i, (comp, d2, part) in enumerate(zip(comps, d2s, parts)):
        grad[i] = 0.5 * np.sum(w * (part * d2 / comp.lengthscale ** 2))
        grad[j + i] = 0.5 * np.sum(w * part)
    return float(lml), grad


def fit_hyperparameters(model: GpModel, restarts: int = 3,
                        lengthscale_bounds: tuple[float, float] = LENGTHSCALE_BOUNDS,
                        output_scale_bounds: tuple[float, float] = OUTPUT_SCALE_BOUNDS,
                        seed: int = 0) -> tuple[KernelSpec, bool]:
    """Maximize the marginal likelihood over log-lengthscales and
    log-output-scales with multi-start L-BFGS.

    Returns (best kernel, warned); warned is True when no restart improved
    on the initial parameters, which are then returned unchanged.
    """
    if model.n < 3:
        raise GprError(f"hyperparameter fitting needs >= 3 rows, have {model.n}")
    x, noise = model.x, model.noise
    yc = model.y - model.y_center
    j = len(model.kernel.components)
    bounds = ([tuple(np.log(lengthscale_bounds))] * j
              + [tuple(np.log(output_scale_bounds))] * j)

    def objective(theta):
        try:
            lml, grad = _lml_and_grad(model.kernel, theta, x, yc, noise)
        except (np.linalg.LinAlgError, FactorizationError):
            return 1e25, np.zeros_like(theta)
        return -lml, -grad

    theta0 = np.clip(model.kernel.theta(),
                     [b[0] for b in bounds], [b[1] for b in bounds])
    base_obj = objective(theta0)[0]
    rng = np.random.default_rng(seed)
    best_theta, best_obj = theta0, base_obj
    for r in range(max(restarts, 1)):
        start = theta0 if r == 0 else np.array(
            [rng.uniform(lo, hi) for lo, hi in bounds])
        res = minimize(objective, start, jac=True, method="L-BFGS-B", bounds=bounds)
        if np.isfinite(res.fun) and res.fun < best_obj:
            best_obj, best_theta = float(res.fun), res.x
    warned = best_obj >= base_obj
    return model.kernel.with_theta(best_theta), warned


@dataclass(frozen=True)
class PosteriorSummary:
    """Per-output predictive mean and variance at one query point."""

    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "means", np.asarray(self.means, dtype=float))
        object.__setattr__(self, "variances", np.asarray(self.variances, dtype=float))
        if np.any(self.variances < 0):
            raise GprError("posterior variances must be >= 0")


@dataclass
class CoefficientSurrogate:
    """The per-output GP set over counties, with replacement-update semantics.

    One row per county; updating a county's estimate supersedes its previous
    row.  Hyperparameters are refit every ``refit_every`` updates (and at
    construction); in between, updates only refresh the factorization.
    """

    scaler: FeatureScaler
    county_ids: list[str]
    x: np.ndarray                       # standardized features, (n, d)
    y: np.ndarray                       # coefficient estimates, (n, m)
    noise: np.ndarray                   # per-row, per-output variances, (n, m)
    kernels: list[KernelSpec]
    output_names: tuple[str, ...] = OUTPUT_NAMES_MAIN
    refit_every: int = 5
    updates_since_refit: int = 0
    fit_restarts: int = 2
    fit_seed: int = 0
    fit_warnings: list[bool] = field(default_factory=list)
    _models: list[GpModel] | None = field(default=None, repr=False)

    @property
    def n_outputs(self) -> int:
        return len(self.output_names)

    @property
    def n_counties(self) -> int:
        return len(self.county_ids)

    def models(self) -> list[GpModel]:
        if self._models is None:
            self._models = [GpModel(self.kernels[m], self.x, self.y[:, m],
                                    self.noise[:, m])
                            for m in range(self.n_outputs)]
        return self._models

    @classmethod
    def from_estimates(cls, scaler: FeatureScaler,
                       features_by_county: dict[str, np.ndarray],
                       estimates: Sequence[CoefficientEstimate],
                       noise_rows: Sequence[np.ndarray],
                       kernel: KernelSpec | None = None,
                       output_names: tuple[str, ...] = OUTPUT_NAMES_MAIN,
                       refit_every: int = 5, fit_restarts: int = 2,
                       fit_seed: int = 0,
                       fit_now: bool = True) -> "CoefficientSurrogate":
        kernel = kernel or KernelSpec.default()
        ids = [e.county_id for e in estimates]
        x = scaler.transform(np.vstack([features_by_county[i] for i in ids]))
        y = np.vstack([e.beta for e in estimates])
        noise = np.vstack(list(noise_rows))
        if y.shape[1] != len(output_names) or noise.shape != y.shape:
            raise GprError("estimate/noise width does not match output names")
        surr = cls(scaler, ids, x, y, noise,
                   kernels=[kernel] * len(output_names),
                   output_names=output_names, refit_every=refit_every,
                   fit_restarts=fit_restarts, fit_seed=fit_seed)
        if fit_now and len(ids) >= 3:
            surr = surr.refit_hyperparameters()
        return surr

    def refit_hyperparameters(self) -> "CoefficientSurrogate":
        kernels, warns = [], []
        for m in range(self.n_outputs):
            model = GpModel(self.kernels[m], self.x, self.y[:, m], self.noise[:, m])
            spec, warned = fit_hyperparameters(model, restarts=self.fit_restarts,
                                               seed=self.fit_seed + m)
            kernels.append(spec)
            warns.append(warned)
        return replace(self, kernels=kernels, fit_warnings=warns,
                       updates_since_refit=0, _models=None)

    def update(self, estimates: Sequence[CoefficientEstimate],
               noise_rows: Sequence[np.ndarray],
               features_by_county: dict[str, np.ndarray]) -> "CoefficientSurrogate":
        """Replace-or-append county rows and refresh the model set."""
        ids = list(self.county_ids)
        x, y, noise = self.x.copy(), self.y.copy(), self.noise.copy()
        for est, nrow in zip(estimates, noise_rows):
            row_x = self.scaler.transform(features_by_county[est.county_id][None, :])
            if est.county_id in ids:
                i = ids.index(est.county_id)
                x[i], y[i], noise[i] = row_x[0], est.beta, nrow
            else:
                ids.append(est.county_id)
                x = np.vstack([x, row_x])
                y = np.vstack([y, est.beta])
                noise = np.vstack([noise, nrow])
        out = replace(self, county_ids=ids, x=x, y=y, noise=noise,
                      updates_since_refit=self.updates_since_refit + 1,
                      _models=None)
        if out.updates_since_refit >= out.refit_every and out.n_counties >= 3:
            out = out.refit_hyperparameters()
        return out

    def standardized(self, raw_features: np.ndarray) -> np.ndarray:
        return self.scaler.transform(np.atleast_2d(raw_features))

    def posterior(self, x_std: np.ndarray) -> PosteriorSummary:
        means, variances = self.posterior_batch(np.atleast_2d(x_std))
        return PosteriorSummary(means[0], variances[0])

    def posterior_batch(self, x_std: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Means and variances for many query rows at once, (rows, outputs)."""
        x_std = np.atleast_2d(x_std)
        means = np.empty((x_std.shape[0], self.n_outputs))
        variances = np.empty_like(means)
        for m, model in enumerate(self.models()):
            means[:, m], variances[:, m] = model.posterior(x_std)
        return means, variances

    def sample_posterior(self, x_std: np.ndarray, s: int, seed: int) -> np.ndarray:
        """S independent Gaussian draws per output at one point, (S, outputs)."""
        if s < 1:
            raise GprError("sample count must be >= 1")
        summary = self.posterior(x_std)
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((s, self.n_outputs))
        return summary.means + np.sqrt(summary.variances) * z

    def log_marginal_likelihoods(self) -> list[float]:
        return [m.log_marginal_likelihood() for m in self.models()]

    def to_dict(self) -> dict:
        return {
            "scaler": self.scaler.to_dict(),
            "county_ids": list(self.county_ids),
            "x": self.x.tolist(),
            "y": self.y.tolist(),
            "noise": self.noise.tolist(),
            "kernels": [k.to_dict() for k in self.kernels],
            "output_names": list(self.output_names),
            "refit_every": self.refit_every,
            "updates_since_refit": self.updates_since_refit,
            "fit_restarts": self.fit_restarts,
            "fit_seed": self.fit_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CoefficientSurrogate":
        return cls(
            scaler=FeatureScaler.from_dict(d["scaler"]),
            county_ids=list(d["county_ids"]),
            x=np.array(d["x"], dtype=float),
            y=np.array(d["y"], dtype=float),
            noise=np.array(d["noise"], dtype=float),
            kernels=[KernelSpec.from_dict(k) for k in d["kernels"]],
            output_names=tuple(d["output_names"]),
            refit_every=int(d["refit_every"]),
            updates_since_refit=int(d["updates_since_refit"]),
            fit_restarts=int(d.get("fit_restarts", 2)),
            fit_seed=int(d.get("fit_seed", 0)),
        )
