"""Shared value types: county features, treatment grids, observations,
and z-score standardization of the feature space.

Everything here is an immutable value object; instances can be shared
freely across threads.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

# Columns of the feature vector fed to the coefficient surrogates, in order.
# Latitude/longitude form one spatial group; the remaining columns are the
# socio-economic covariates with their own kernel components.
GP_FEATURE_NAMES = ("centroid_lat", "centroid_lon", "median_income",
                    "pop_density", "pct_black")

COUNTY_CSV_HEADER = ("county_id", "lat", "lon", "median_income",
                     "pop_density", "pct_black", "population")


class DomainError(ValueError):
    """Invalid domain value (failed invariant)."""


@dataclass(frozen=True)
class CountyFeatures:
    """Spatial and socio-economic covariates describing one county.

    ``pct_black`` is a fraction in [0, 1], not a percentage.
    """

    county_id: str
    centroid_lat: float
    centroid_lon: float
    median_income: float
    pop_density: float
    pct_black: float
    population: int

    def __post_init__(self):
        if not self.county_id:
            raise DomainError("county_id must be non-empty")
        if not -90.0 <= self.centroid_lat <= 90.0:
            raise DomainError(f"latitude {self.centroid_lat} outside [-90, 90]")
        if not -180.0 <= self.centroid_lon <= 180.0:
            raise DomainError(f"longitude {self.centroid_lon} outside [-180, 180]")
        if self.median_income <= 0:
            raise DomainError("median_income must be positive")
        if self.pop_density <= 0:
            raise DomainError("pop_density must be positive")
        if not 0.0 <= self.pct_black <= 1.0:
            raise DomainError(f"pct_black {self.pct_black} outside [0, 1]")
        if self.population <= 0:
            raise DomainError("population must be positive")

    def vector(self) -> np.ndarray:
        """Raw (unstandardized) feature vector in ``GP_FEATURE_NAMES`` order."""
        return np.array([self.centroid_lat, self.centroid_lon,
                         self.median_income, self.pop_density,
                         self.pct_black], dtype=float)


@dataclass(frozen=True, order=True)
class TreatmentCondition:
    """Integer intervention level pair. (0, 0) is baseline dispensing."""

    n: int
    b: int

    def __post_init__(self):
        if self.n < 0 or self.b < 0:
            raise DomainError(f"treatment levels must be nonnegative, got {self}")


@dataclass(frozen=True)
class TreatmentGrid:
    """An ``levels_n`` x ``levels_b`` grid of treatment conditions."""

    levels_n: int
    levels_b: int

    def __post_init__(self):
        if self.levels_n < 2 or self.levels_b < 2:
            raise DomainError("each intervention needs at least 2 levels")

    @property
    def size(self) -> int:
        return self.levels_n * self.levels_b

    def contains(self, cond: TreatmentCondition) -> bool:
        return cond.n < self.levels_n and cond.b < self.levels_b

    def corners(self) -> list[TreatmentCondition]:
        """The four extreme conditions, baseline first, deduplicated."""
        ln, lb = self.levels_n - 1, self.levels_b - 1
        seen: dict[TreatmentCondition, None] = {}
        for cond in (TreatmentCondition(0, 0), TreatmentCondition(0, lb),
                     TreatmentCondition(ln, 0), TreatmentCondition(ln, lb)):
            seen[cond] = None
        return list(seen)


def enumerate_grid(grid: TreatmentGrid) -> list[TreatmentCondition]:
    """All conditions of the grid in row-major order (n outer, b inner)."""
    return [TreatmentCondition(n, b)
            for n in range(grid.levels_n)
            for b in range(grid.levels_b)]


@dataclass(frozen=True)
class Observation:
    """One simulation replicate outcome for a (county, condition) pair.

    ``outcome`` is cumulative overdose deaths per 100,000 persons over the
    simulated horizon.
    """

    county_id: str
    condition: TreatmentCondition
    outcome: float
    replicate_seed: int

    def __post_init__(self):
        if not np.isfinite(self.outcome) or self.outcome < 0:
            raise DomainError(f"outcome must be finite and >= 0, got {self.outcome}")


class FeatureScaler:
    """Column-wise z-scoring with sample (n-1) standard deviation.

    Constant columns are flagged and mapped to 0; the inverse transform
    restores non-constant columns exactly.
    """

    def __init__(self, mean: np.ndarray, std: np.ndarray):
        self.mean = np.asarray(mean, dtype=float)
        self.std = np.asarray(std, dtype=float)
        self.constant = self.std == 0.0
        # avoid division by zero; constant columns are zeroed afterwards
        self._safe_std = np.where(self.constant, 1.0, self.std)

    @classmethod
    def fit(cls, matrix: np.ndarray) -> "FeatureScaler":
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] < 2:
            raise DomainError("standardization needs at least 2 rows")
        return cls(matrix.mean(axis=0), matrix.std(axis=0, ddof=1))

    def transform(self, matrix: np.ndarray) -> np.ndarray:
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        z = (matrix - self.mean) / self._safe_std
        z[:, self.constant] = 0.0
        return z

    def inverse(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        return z * self._safe_std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureScaler":
        return cls(np.array(d["mean"]), np.array(d["std"]))


def feature_matrix(counties: Sequence[CountyFeatures]) -> np.ndarray:
    """Stack county feature vectors into an (n_counties, 5) matrix."""
    return np.vstack([c.vector() for c in counties])


def standardize(counties: Sequence[CountyFeatures]) -> tuple[FeatureScaler, np.ndarray]:
    """Fit a z-score transform on the county set and apply it.

    Returns the fitted scaler and the standardized feature matrix, one row
    per county in input order.
    """
    if len(counties) < 2:
        raise DomainError("standardization needs at least 2 counties")
    raw = feature_matrix(counties)
    scaler = FeatureScaler.fit(raw)
    return scaler, scaler.transform(raw)


def load_county_features_csv(path: str | Path) -> list[CountyFeatures]:
    """Read county features from CSV.

    Expected header: ``county_id,lat,lon,median_income,pop_density,
    pct_black,population`` (UTF-8, comma-separated, '.' decimal).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != COUNTY_CSV_HEADER:
            raise DomainError(
                f"unexpected county CSV header {reader.fieldnames}; "
                f"expected {list(COUNTY_CSV_HEADER)}")
        counties = []
        for row in reader:
            counties.append(CountyFeatures(
                county_id=row["county_id"],
                centroid_lat=float(row["lat"]),
                centroid_lon=float(row["lon"]),
                median_income=float(row["median_income"]),
                pop_density=float(row["pop_density"]),
                pct_black=float(row["pct_black"]),
                population=int(row["population"]),
            ))
    if not counties:
        raise DomainError(f"no county rows in {path}")
    return counties


def write_county_features_csv(path: str | Path, counties: Sequence[CountyFeatures]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(COUNTY_CSV_HEADER)
        for c in counties:
            writer.writerow([c.county_id, repr(c.centroid_lat), repr(c.centroid_lon),
                             repr(c.median_income), repr(c.pop_density),
                             repr(c.pct_black), c.population])
