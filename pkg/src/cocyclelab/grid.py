"""Uniform angular grids on the projective line and measures living on them."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

UNIT_TOL = 1e-10


@dataclass(frozen=True)
class ProjectiveGrid:
    """N equal bins on [0, pi); bin b is [b h, (b+1) h) with center (b + 1/2) h."""

    N: int = 1024

    def __post_init__(self):
        if self.N < 8:
            raise ValidationError(f"grid needs at least 8 bins, got {self.N}")

    @property
    def width(self) -> float:
        return np.pi / self.N

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.N) + 0.5) * self.width

    def split(self, theta):
        """Linear two-bin deposit of points: returns ``(lo, hi, w_lo)``."""
        x = np.mod(np.asarray(theta, dtype=float) / self.width - 0.5, self.N)
        lo = np.floor(x)
        frac = x - lo
        # snap near-exact hits so centers map cleanly onto centers
        near_lo = frac < 1e-9
        near_hi = frac > 1 - 1e-9
        frac = np.where(near_lo, 0.0, np.where(near_hi, 1.0, frac))
        lo = lo.astype(np.int64) % self.N
        return lo, (lo + 1) % self.N, 1.0 - frac

    def point_mass(self, theta) -> np.ndarray:
        lo, hi, w = self.split(theta)
        m = np.zeros(self.N)
        m[lo] += w
        m[hi] += 1.0 - w
        return m


@dataclass(frozen=True)
class GridMeasure:
    """Nonnegative masses on the bins of a grid."""

    masses: np.ndarray

    def __post_init__(self):
        m = np.array(self.masses, dtype=float)
        if m.ndim != 1:
            raise ValidationError("grid measure must be one-dimensional")
        if np.any(m < 0) or not np.all(np.isfinite(m)):
            raise ValidationError("grid measure has negative or non-finite mass")
        m.setflags(write=False)
        object.__setattr__(self, "masses", m)

    @property
    def grid(self) -> ProjectiveGrid:
        return ProjectiveGrid(self.masses.size)

    @property
    def mass(self) -> float:
        return float(self.masses.sum())

    def is_unit(self) -> bool:
        return abs(self.mass - 1.0) <= UNIT_TOL

    @classmethod
    def uniform(cls, N: int) -> GridMeasure:
        return cls(np.full(N, 1.0 / N))

    @classmethod
    def dirac(cls, N: int, theta: float) -> GridMeasure:
        return cls(ProjectiveGrid(N).point_mass(theta))


@dataclass(frozen=True)
class MeasureVector:
    """One grid measure per symbol, stored as a (q, N) array."""

    masses: np.ndarray

    def __post_init__(self):
        m = np.array(self.masses, dtype=float)
        if m.ndim != 2:
            raise ValidationError("measure vector must be a (q, N) array")
        if np.any(m < 0) or not np.all(np.isfinite(m)):
            raise ValidationError("measure vector has negative or non-finite mass")
        ProjectiveGrid(m.shape[1])
        m.setflags(write=False)
        object.__setattr__(self, "masses", m)

    @property
    def q(self) -> int:
        return self.masses.shape[0]

    @property
    def N(self) -> int:
        return self.masses.shape[1]

    @property
    def grid(self) -> ProjectiveGrid:
        return ProjectiveGrid(self.N)

    def component(self, i: int) -> GridMeasure:
        return GridMeasure(self.masses[i])

    def is_unit(self) -> bool:
        return bool(np.all(np.abs(self.masses.sum(axis=1) - 1.0) <= UNIT_TOL))

    def require_unit(self):
        if not self.is_unit():
            sums = self.masses.sum(axis=1)
            raise ValidationError(f"not a unit vector: component masses {sums.tolist()}")

    @classmethod
    def broadcast(cls, q: int, measure) -> MeasureVector:
        m = measure.masses if isinstance(measure, GridMeasure) else np.asarray(measure)
        return cls(np.tile(m, (q, 1)))

    @classmethod
    def uniform(cls, q: int, N: int) -> MeasureVector:
        return cls(np.full((q, N), 1.0 / N))

    @classmethod
    def dirac(cls, q: int, N: int, theta: float) -> MeasureVector:
        return cls.broadcast(q, ProjectiveGrid(N).point_mass(theta))

    def mix(self, other: MeasureVector, a: float) -> MeasureVector:
        return MeasureVector(a * self.masses + (1 - a) * other.masses)


def total_variation(a, b) -> float:
    return 0.5 * float(np.sum(np.abs(np.asarray(a) - np.asarray(b))))


def measure_csv_text(eta: MeasureVector) -> str:
    """Columns: symbol, bin, theta_center, mass."""
    centers = eta.grid.centers
    lines = ["symbol,bin,theta_center,mass"]
    for i in range(eta.q):
        for b in range(eta.N):
            lines.append(f"{i},{b},{centers[b]:.17g},{eta.masses[i, b]:.17g}")
    return "\n".join(lines) + "\n"


def write_measure_csv(eta: MeasureVector, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(measure_csv_text(eta))


def read_measure_csv(path) -> MeasureVector:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    q = 1 + max(int(r["symbol"]) for r in rows)
    N = 1 + max(int(r["bin"]) for r in rows)
    m = np.zeros((q, N))
    for r in rows:
        m[int(r["symbol"]), int(r["bin"])] = float(r["mass"])
    return MeasureVector(m)
