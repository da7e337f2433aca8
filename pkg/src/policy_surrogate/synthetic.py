"""Synthetic county pools and ground-truth parameter tables.

Used by the demo configs and the verification suite: feature-linked affine
truth lets the full loop be checked against exact answers, and the cohort
parameter generator produces plausible (explicitly uncalibrated) dynamics.
"""

from __future__ import annotations

import numpy as np

from .domain import CountyFeatures
from .simulator import CountyOudParams, LinearTruthParams


def make_counties(n: int, seed: int = 0) -> list[CountyFeatures]:
    """Random county pool with mid-Atlantic-like feature ranges."""
    rng = np.random.default_rng(seed)
    counties = []
    for i in range(n):
        counties.append(CountyFeatures(
            county_id=f"C{i:03d}",
            centroid_lat=float(rng.uniform(39.7, 42.3)),
            centroid_lon=float(rng.uniform(-80.5, -74.7)),
            median_income=float(rng.uniform(38_000, 95_000)),
            pop_density=float(np.exp(rng.uniform(np.log(25), np.log(3500)))),
            pct_black=float(rng.uniform(0.005, 0.45)),
            population=int(rng.uniform(12_000, 1_300_000)),
        ))
    return counties


def _standardized(counties: list[CountyFeatures]) -> np.ndarray:
    raw = np.vstack([c.vector() for c in counties])
    return (raw - raw.mean(axis=0)) / np.where(raw.std(axis=0) == 0, 1, raw.std(axis=0))


def make_linear_truth(counties: list[CountyFeatures], seed: int = 0,
                      interaction_scale: float = 0.0,
                      noise_sd_range: tuple[float, float] = (3.0, 30.0),
                      roughness: float = 1.0,
                      ) -> dict[str, LinearTruthParams]:
    """Affine truth whose coefficients vary smoothly with county features
    plus a county-idiosyncratic component.

    ``roughness`` scales the idiosyncratic part; at 0 the coefficients are
    exactly smooth in the features and pooling across counties suffices.
    Baseline levels stay high enough that the response is positive across a
    5x5 grid; per-county noise is log-uniform over ``noise_sd_range`` so the
    replicate information content genuinely differs across counties.
    """
    rng = np.random.default_rng(seed)
    z = _standardized(counties)
    lo, hi = noise_sd_range
    truth = {}
    for i, county in enumerate(counties):
        lat, lon, inc, den, blk = z[i]
        mu0 = 120.0 + 45.0 * np.tanh(0.8 * den) + 25.0 * np.sin(0.9 * lat + 0.4 * lon) \
            - 18.0 * np.tanh(0.7 * inc) + 10.0 * blk \
            + roughness * float(rng.normal(0.0, 12.0))
        mu_n = -(2.4 + 1.2 / (1.0 + np.exp(-1.2 * den)) + 0.5 * np.sin(lat + lon)) \
            + roughness * float(rng.normal(0.0, 0.8))
        mu_b = -(2.1 + 1.0 / (1.0 + np.exp(-0.9 * inc)) + 0.5 * np.cos(0.8 * lat)) \
            + roughness * float(rng.normal(0.0, 0.8))
        mu_nb = interaction_scale * 0.25 * np.tanh(0.5 * (den + blk))
        noise_sd = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
        truth[county.county_id] = LinearTruthParams(
            mu0=float(max(mu0, 60.0)),
            mu_n=float(np.clip(mu_n, -5.0, -0.3)),
            mu_b=float(np.clip(mu_b, -5.0, -0.3)),
            mu_nb=float(mu_nb), noise_sd=noise_sd)
    return truth


def make_oud_params(counties: list[CountyFeatures], seed: int = 0,
                    ) -> dict[str, CountyOudParams]:
    """Synthetic cohort-model parameters tied loosely to county features.

    The logistic coefficients are stand-ins chosen for plausible overdose
    magnitudes (tens to a few hundred deaths per 100,000 over five years);
    they are not calibrated values.
    """
    rng = np.random.default_rng(seed)
    z = _standardized(counties)
    params = {}
    for i, county in enumerate(counties):
        _, _, inc, den, _ = z[i]
        params[county.county_id] = CountyOudParams(
            beta0=-2.9 + 0.25 * float(den) + float(rng.normal(0, 0.08)),
            beta1=0.010,
            beta2=-2.6 - 0.15 * float(inc) + float(rng.normal(0, 0.08)),
            beta3=0.018,
            beta4=-4.4 + 0.2 * float(den) + float(rng.normal(0, 0.08)),
            beta5=0.0015,
            beta6=0.022,
            baseline_opioid_rate=float(rng.uniform(55, 95)),
            baseline_bup_rate=float(rng.uniform(18, 45)),
            baseline_nal_rate=float(rng.uniform(8, 28)),
            fentanyl_rate=float(rng.uniform(120, 850)),
        )
    return params
