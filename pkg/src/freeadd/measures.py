"""Probability measures on the real line and their Stieltjes transforms.

Every measure object in this module exposes the same small surface:

* ``stieltjes(z)``: the transform ``m(z) = int dmu(x) / (x - z)``,
* ``stieltjes_derivative(z)``: ``m'(z) = int dmu(x) / (x - z)**2``,
* ``second_moment()``: ``int x**2 dmu(x)``,
* ``is_point_mass()``.

Atomic measures hold the empirical laws of diagonal data; the continuous
families (uniform, semicircle, arcsine) only enter through closed-form
transforms, CDF evaluators and quantile atoms.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np

__all__ = [
    "AtomicMeasure",
    "SymmetrizedMeasure",
    "GridDensity",
    "TransformValue",
    "Uniform",
    "Semicircle",
    "Arcsine",
    "SymmetrizedContinuous",
    "DegenerateTransformError",
    "symmetrize",
    "stieltjes",
    "stieltjes_derivative",
    "hat_transform",
    "hat_transform_derivative",
    "quantile_atoms",
    "invert_to_density",
    "evaluate",
]

MASS_TOL = 1e-12
HAT_EPS = 1e-300


class DegenerateTransformError(ZeroDivisionError):
    """Raised when ``1/m(z)`` cannot be formed because ``m(z)`` vanishes."""


def _as_complex(z):
    return np.asarray(z, dtype=complex)


def _check_upper(z):
    z = _as_complex(z)
    if np.any(z.imag <= 0):
        raise ValueError("Stieltjes transforms are evaluated on Im z > 0 only")
    return z


# ---------------------------------------------------------------------------
# Atomic measures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AtomicMeasure:
    """Finite probability measure ``sum_k w_k delta_{x_k}``.

    Duplicate locations are allowed; they are never merged eagerly because
    every transform is linear in the atoms.
    """

    locations: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float).ravel()
        wts = np.asarray(self.weights, dtype=float).ravel()
        if loc.shape != wts.shape:
            raise ValueError("locations and weights must have the same length")
        if loc.size == 0:
            raise ValueError("an atomic measure needs at least one atom")
        if not np.all(np.isfinite(loc)):
            raise ValueError("atom locations must be finite")
        if np.any(wts <= 0):
            raise ValueError("atom weights must be positive")
        if abs(wts.sum() - 1.0) > MASS_TOL:
            raise ValueError(f"weights sum to {wts.sum()!r}, expected 1")
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "weights", wts)

    @classmethod
    def from_atoms(cls, atoms: Sequence[Tuple[float, float]]) -> "AtomicMeasure":
        loc, wts = zip(*atoms)
        return cls(np.array(loc), np.array(wts))

    @classmethod
    def empirical(cls, values) -> "AtomicMeasure":
        """Equal-weight measure ``(1/n) sum delta_{v_i}``."""
        values = np.asarray(values, dtype=float).ravel()
        return cls(values, np.full(values.size, 1.0 / values.size))

    @classmethod
    def point(cls, a: float = 0.0) -> "AtomicMeasure":
        return cls(np.array([a]), np.array([1.0]))

    @classmethod
    def bernoulli(cls, a: float = 1.0) -> "AtomicMeasure":
        """``(delta_{-a} + delta_a) / 2``."""
        return cls(np.array([-a, a]), np.array([0.5, 0.5]))

    def __len__(self):
        return self.locations.size

    def stieltjes(self, z):
        z = _as_complex(z)
        d = self.locations - z[..., None]
        return (self.weights / d).sum(axis=-1)

    def stieltjes_derivative(self, z):
        z = _as_complex(z)
        d = self.locations - z[..., None]
        return (self.weights / d**2).sum(axis=-1)

    def mean(self) -> float:
        return float(self.weights @ self.locations)

    def second_moment(self) -> float:
        return float(self.weights @ self.locations**2)

    def is_point_mass(self) -> bool:
        return bool(np.all(self.locations == self.locations[0]))

    def point_location(self) -> float:
        if not self.is_point_mass():
            raise ValueError("measure is not a point mass")
        return float(self.locations[0])

    def support(self) -> Tuple[float, float]:
        return float(self.locations.min()), float(self.locations.max())

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return (self.weights * (self.locations <= x[..., None])).sum(axis=-1)

    def merged(self) -> "AtomicMeasure":
        loc, inv = np.unique(self.locations, return_inverse=True)
        wts = np.bincount(inv.ravel(), weights=self.weights)
        return AtomicMeasure(loc, wts / wts.sum())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["location", "weight"])
            for x, w in zip(self.locations, self.weights):
                writer.writerow([repr(float(x)), repr(float(w))])

    @classmethod
    def from_csv(cls, path) -> "AtomicMeasure":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if [h.strip() for h in header] != ["location", "weight"]:
                raise ValueError(f"{path}: expected header 'location,weight'")
            rows = [(float(a), float(b)) for a, b in reader if a.strip()]
        loc = np.array([r[0] for r in rows])
        wts = np.array([r[1] for r in rows])
        # files written with rounded weights are renormalized once
        if abs(wts.sum() - 1.0) > MASS_TOL and abs(wts.sum() - 1.0) < 1e-6:
            wts = wts / wts.sum()
        return cls(loc, wts)


@dataclass(frozen=True)
class SymmetrizedMeasure(AtomicMeasure):
    """Pushforward ``(mu(A) + mu(-A)) / 2`` of an atomic measure."""

    base: Optional[AtomicMeasure] = field(default=None, compare=False)
    symmetrized: bool = True


def _symmetrize_atomic(mu: AtomicMeasure) -> SymmetrizedMeasure:
    nonzero = mu.locations != 0
    zero_mass = mu.weights[~nonzero].sum()
    loc = np.concatenate([-mu.locations[nonzero], mu.locations[nonzero]])
    wts = np.concatenate([mu.weights[nonzero], mu.weights[nonzero]]) / 2
    if zero_mass > 0:
        loc = np.append(loc, 0.0)
        wts = np.append(wts, zero_mass)
    order = np.argsort(loc, kind="stable")
    return SymmetrizedMeasure(loc[order], wts[order], base=mu)


# ---------------------------------------------------------------------------
# Continuous families
# ---------------------------------------------------------------------------

class _Continuous:
    """Shared helpers for absolutely continuous families."""

    def is_point_mass(self) -> bool:
        return False

    def ppf(self, q):
        lo, hi = self.support()
        return _bisect_quantiles(self.cdf, np.asarray(q, dtype=float), lo, hi)


@dataclass(frozen=True)
class Uniform(_Continuous):
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError("uniform law needs hi > lo")

    def support(self):
        return self.lo, self.hi

    def density(self, x):
        x = np.asarray(x, dtype=float)
        return np.where((x >= self.lo) & (x <= self.hi), 1.0 / (self.hi - self.lo), 0.0)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.clip((x - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def ppf(self, q):
        q = np.asarray(q, dtype=float)
        return self.lo + q * (self.hi - self.lo)

    def stieltjes(self, z):
        z = _as_complex(z)
        return (np.log(self.hi - z) - np.log(self.lo - z)) / (self.hi - self.lo)

    def stieltjes_derivative(self, z):
        z = _as_complex(z)
        return (1.0 / (self.lo - z) - 1.0 / (self.hi - z)) / (self.hi - self.lo)

    def second_moment(self) -> float:
        return (self.hi**3 - self.lo**3) / (3 * (self.hi - self.lo))


@dataclass(frozen=True)
class Semicircle(_Continuous):
    """Centered semicircle law with the given variance (radius ``2*sqrt(var)``)."""

    variance: float = 1.0

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError("semicircle variance must be positive")

    @property
    def radius(self) -> float:
        return 2.0 * np.sqrt(self.variance)

    def support(self):
        return -self.radius, self.radius

    def density(self, x):
        x = np.asarray(x, dtype=float)
        r2 = self.radius**2
        return np.sqrt(np.clip(r2 - x**2, 0.0, None)) / (2 * np.pi * self.variance)

    def cdf(self, x):
        u = np.clip(np.asarray(x, dtype=float) / self.radius, -1.0, 1.0)
        return 0.5 + (u * np.sqrt(1 - u**2) + np.arcsin(u)) / np.pi

    def _root(self, z):
        # principal branches of both factors give the root ~ z at infinity
        r = self.radius
        return np.sqrt(z - r) * np.sqrt(z + r)

    def stieltjes(self, z):
        z = _as_complex(z)
        return (-z + self._root(z)) / (2 * self.variance)

    def stieltjes_derivative(self, z):
        z = _as_complex(z)
        return (-1.0 + z / self._root(z)) / (2 * self.variance)

    def second_moment(self) -> float:
        return self.variance


@dataclass(frozen=True)
class Arcsine(_Continuous):
    """Arcsine law on ``[-r, r]``, density ``1/(pi sqrt(r^2 - x^2))``."""

    radius: float = 2.0

    def support(self):
        return -self.radius, self.radius

    def density(self, x):
        x = np.asarray(x, dtype=float)
        inside = np.abs(x) < self.radius
        out = np.zeros_like(x)
        out[inside] = 1.0 / (np.pi * np.sqrt(self.radius**2 - x[inside] ** 2))
        return out

    def cdf(self, x):
        u = np.clip(np.asarray(x, dtype=float) / self.radius, -1.0, 1.0)
        return 0.5 + np.arcsin(u) / np.pi

    def stieltjes(self, z):
        z = _as_complex(z)
        r = self.radius
        return -1.0 / (np.sqrt(z - r) * np.sqrt(z + r))

    def stieltjes_derivative(self, z):
        z = _as_complex(z)
        r = self.radius
        root = np.sqrt(z - r) * np.sqrt(z + r)
        return z / root**3

    def second_moment(self) -> float:
        return self.radius**2 / 2


@dataclass(frozen=True)
class SymmetrizedContinuous(_Continuous):
    """Symmetrization of a continuous family.

    Uses ``m_sym(z) = (m(z) - m(-z)) / 2`` with ``m(-z)`` obtained from the
    upper half-plane through ``m(conj w) = conj m(w)``.
    """

    base: object
    symmetrized: bool = True

    def support(self):
        lo, hi = self.base.support()
        r = max(abs(lo), abs(hi))
        return -r, r

    def density(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * (self.base.density(x) + self.base.density(-x))

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        # continuous base: P(-X <= x) = 1 - F(-x)
        return 0.5 * (self.base.cdf(x) + 1.0 - self.base.cdf(-x))

    def _reflect(self, z):
        return -np.conj(z)

    def stieltjes(self, z):
        z = _as_complex(z)
        m_minus = np.conj(self.base.stieltjes(self._reflect(z)))
        return 0.5 * (self.base.stieltjes(z) - m_minus)

    def stieltjes_derivative(self, z):
        z = _as_complex(z)
        d_minus = np.conj(self.base.stieltjes_derivative(self._reflect(z)))
        return 0.5 * (self.base.stieltjes_derivative(z) + d_minus)

    def second_moment(self) -> float:
        return self.base.second_moment()


# ---------------------------------------------------------------------------
# Gridded densities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridDensity:
    """Density values on a strictly increasing grid.

    ``tol`` declares how far the trapezoid mass may sit from 1; ``None``
    skips the check (Poisson-smoothed inversions lose their tails).
    """

    grid: np.ndarray
    values: np.ndarray
    tol: Optional[float] = None
    flags: Optional[np.ndarray] = None

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float).ravel()
        values = np.asarray(self.values, dtype=float).ravel()
        if grid.shape != values.shape:
            raise ValueError("grid and values must have the same length")
        if grid.size < 2 or np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing with >= 2 points")
        if np.any(values < 0):
            raise ValueError("density values must be nonnegative")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        if self.tol is not None and abs(self.mass() - 1.0) > self.tol:
            raise ValueError(f"grid density has mass {self.mass():.6g}, tol {self.tol}")

    def mass(self) -> float:
        return float(np.trapezoid(self.values, self.grid))

    def is_point_mass(self) -> bool:
        return False

    def support(self):
        return float(self.grid[0]), float(self.grid[-1])

    def stieltjes(self, z):
        z = _as_complex(z)
        return np.trapezoid(self.values / (self.grid - z[..., None]), self.grid, axis=-1)

    def stieltjes_derivative(self, z):
        z = _as_complex(z)
        return np.trapezoid(self.values / (self.grid - z[..., None]) ** 2, self.grid, axis=-1)

    def second_moment(self) -> float:
        return float(np.trapezoid(self.values * self.grid**2, self.grid))

    def to_csv(self, path, header=("grid", "value")) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(list(header))
            for x, v in zip(self.grid, self.values):
                writer.writerow([repr(float(x)), repr(float(v))])


@dataclass(frozen=True)
class TransformValue:
    z: complex
    m: complex


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

Measure = Union[AtomicMeasure, Uniform, Semicircle, Arcsine, SymmetrizedContinuous, GridDensity]


def symmetrize(mu):
    """Return the symmetrized measure ``(mu(A) + mu(-A)) / 2``.

    Atomic inputs give a :class:`SymmetrizedMeasure` with atoms ``+-x`` of
    half the weight; mass at the origin stays a single atom at 0.
    """
    if getattr(mu, "symmetrized", False):
        return mu
    if isinstance(mu, AtomicMeasure):
        return _symmetrize_atomic(mu)
    if isinstance(mu, _Continuous):
        return SymmetrizedContinuous(mu)
    raise TypeError(f"cannot symmetrize {type(mu).__name__}")


def stieltjes(mu, z):
    """``int dmu(x) / (x - z)`` for ``Im z > 0``."""
    z = _check_upper(z)
    out = mu.stieltjes(z)
    return complex(out) if np.ndim(out) == 0 else out


def stieltjes_derivative(mu, z):
    z = _check_upper(z)
    out = mu.stieltjes_derivative(z)
    return complex(out) if np.ndim(out) == 0 else out


def evaluate(mu, z) -> TransformValue:
    return TransformValue(complex(z), stieltjes(mu, z))


def hat_transform(mu, z):
    """``-z - 1/m(z)``, the transform of a positive measure of mass ``int t^2 dmu``."""
    z = _as_complex(z)
    if getattr(mu, "is_point_mass", lambda: False)():
        # delta_a gives exactly -a; avoid the cancellation in -z + (z - a)
        out = np.full(np.shape(z), -mu.point_location(), dtype=complex)
        return complex(out) if np.ndim(out) == 0 else out
    m = mu.stieltjes(z)
    if np.any(np.abs(m) < HAT_EPS):
        raise DegenerateTransformError("Stieltjes transform vanishes; 1/m undefined")
    out = -z - 1.0 / m
    return complex(out) if np.ndim(out) == 0 else out


def hat_transform_derivative(mu, z):
    """Derivative ``-1 + m'(z) / m(z)**2`` of :func:`hat_transform`."""
    z = _as_complex(z)
    m = mu.stieltjes(z)
    if np.any(np.abs(m) < HAT_EPS):
        raise DegenerateTransformError("Stieltjes transform vanishes; 1/m undefined")
    out = -1.0 + mu.stieltjes_derivative(z) / m**2
    return complex(out) if np.ndim(out) == 0 else out


def _bisect_quantiles(cdf, q, lo, hi, iters=200):
    a = np.full(q.shape, float(lo))
    b = np.full(q.shape, float(hi))
    for _ in range(iters):
        mid = 0.5 * (a + b)
        done = (mid == a) | (mid == b)
        if np.all(done):
            break
        above = np.asarray(cdf(mid)) >= q
        b = np.where(above & ~done, mid, b)
        a = np.where(~above & ~done, mid, a)
    return b


def quantile_atoms(mu2, N: int, bracket: Optional[Tuple[float, float]] = None) -> AtomicMeasure:
    """Equal-weight atoms at the ``N``-quantiles ``inf{s : F(s) = k/N}``, ``k = 1..N``.

    ``mu2`` is either a CDF callable (then ``bracket`` is required) or a
    family object with ``cdf`` and ``support``.
    """
    if N <= 0:
        raise ValueError("N must be a positive integer")
    q = np.arange(1, N + 1) / N
    if callable(mu2) and not hasattr(mu2, "cdf"):
        if bracket is None:
            raise ValueError("a bare CDF evaluator needs a bracket (lo, hi)")
        locs = _bisect_quantiles(mu2, q, *bracket)
    elif hasattr(mu2, "ppf") and not isinstance(mu2, AtomicMeasure):
        locs = np.asarray(mu2.ppf(q), dtype=float)
    else:
        lo, hi = bracket if bracket is not None else mu2.support()
        locs = _bisect_quantiles(mu2.cdf, q, lo, hi)
    return AtomicMeasure.empirical(locs)


def invert_to_density(m_evaluator, grid, eta: float, tol: Optional[float] = None) -> GridDensity:
    """Poisson-smoothed density ``Im m(E + i eta) / pi`` on ``grid``."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    grid = np.asarray(grid, dtype=float)
    z = grid + 1j * eta
    m = m_evaluator.stieltjes(z) if hasattr(m_evaluator, "stieltjes") else m_evaluator(z)
    values = np.clip(np.asarray(m).imag / np.pi, 0.0, None)
    return GridDensity(grid, values, tol=tol)
