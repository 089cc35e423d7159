"""Verdicts from samples: limiting laws, KS distances and spectral diagnostics."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .ensembles import (
    DiagonalData,
    ModelSample,
    green_diag,
    hermitize,
    least_singular_value,
    overlaps,
    sample_ginibre_reference,
)
from .dynamics import build_index_set, drift_matrices
from .freeconv import DEFAULT_CONFIG, SolverConfig, density_at_zero, solve_subordination
from .measures import AtomicMeasure, quantile_atoms, symmetrize
from .runner import chunk_ranges, parallel_map, sample_rng

__all__ = [
    "AssumptionError",
    "exact_law_complex",
    "exact_law_real",
    "exact_law",
    "EmpiricalCDF",
    "ks_distance",
    "ks_two_sample",
    "UniversalityReport",
    "scaling_constant",
    "sample_lsv_statistics",
    "universality_experiment",
    "density_near_zero",
    "LocalLawReport",
    "local_law_residual",
    "model_local_law",
    "DelocalizationReport",
    "delocalization_stats",
    "empirical_bound_check",
    "hat_a_growth",
    "regularity_check",
]


class AssumptionError(ValueError):
    """Input data violate a checkable hypothesis of the experiment."""


# ---------------------------------------------------------------------------
# Limiting laws and KS
# ---------------------------------------------------------------------------

def _nonneg(r):
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("r must be nonnegative")
    return r


def exact_law_complex(r):
    """``1 - exp(-r**2)``."""
    r = _nonneg(r)
    out = -np.expm1(-r ** 2)
    return float(out) if out.ndim == 0 else out


def exact_law_real(r):
    """``1 - exp(-r**2 / 2 - r)``."""
    r = _nonneg(r)
    out = -np.expm1(-r ** 2 / 2 - r)
    return float(out) if out.ndim == 0 else out


LAWS = {"complex": ("1-exp(-r^2)", exact_law_complex),
        "real": ("1-exp(-r^2/2-r)", exact_law_real)}


def exact_law(field_name: str):
    return LAWS[field_name][1]


class EmpiricalCDF:
    """Right-continuous step function of a sample."""

    def __init__(self, samples):
        x = np.sort(np.asarray(samples, dtype=float).ravel())
        if x.size == 0:
            raise ValueError("empty sample")
        self.samples = x

    def __len__(self):
        return self.samples.size

    def __call__(self, r):
        return np.searchsorted(self.samples, r, side="right") / self.samples.size


def ks_distance(ecdf, law) -> float:
    """One-sample Kolmogorov-Smirnov statistic ``sup |F_n - F|``."""
    if not isinstance(ecdf, EmpiricalCDF):
        ecdf = EmpiricalCDF(ecdf)
    x = ecdf.samples
    n = x.size
    F = np.asarray(law(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def ks_two_sample(a, b) -> float:
    """Two-sample statistic ``sup |F_a - F_b|`` over the pooled sample."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample")
    pooled = np.concatenate([a, b])
    fa = np.searchsorted(a, pooled, side="right") / a.size
    fb = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


# ---------------------------------------------------------------------------
# Universality experiment
# ---------------------------------------------------------------------------

@dataclass
class UniversalityReport:
    field: str
    N: int
    n_samples: int
    scaling: float
    ks_distance: float
    seed: int
    law_name: str
    runtime_seconds: float = 0.0
    statistics: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not 0 <= self.ks_distance <= 1:
            raise ValueError("ks_distance outside [0, 1]")
        if not self.scaling > 0:
            raise ValueError("scaling must be positive")

    def to_dict(self, config: Optional[dict] = None) -> dict:
        d = {k: getattr(self, k) for k in
             ("law_name", "field", "N", "n_samples", "scaling", "ks_distance", "seed",
              "runtime_seconds")}
        d["version"] = __version__
        if config is not None:
            d["config"] = config
        return d

    def to_json(self, path, config: Optional[dict] = None) -> None:
        with open(path, "w", newline="\n") as fh:
            json.dump(self.to_dict(config), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def cdf_table(self, grid=None):
        """Columns ``r, empirical, target`` on ``grid``."""
        if grid is None:
            grid = np.linspace(0.0, 3.0, 301)
        ecdf = EmpiricalCDF(self.statistics)
        return np.column_stack([grid, ecdf(grid), exact_law(self.field)(grid)])


def _as_atoms(mu, N: int) -> np.ndarray:
    if isinstance(mu, DiagonalData):
        x = mu.entries
    elif isinstance(mu, AtomicMeasure):
        if len(mu) == N and np.allclose(mu.weights, 1.0 / N):
            x = mu.locations
        elif mu.is_point_mass():
            x = np.full(N, mu.point_location())
        else:
            raise AssumptionError("atomic input must have N equal-weight atoms")
    elif hasattr(mu, "cdf"):
        x = quantile_atoms(mu, N).locations
    else:
        x = np.asarray(mu, dtype=float)
    x = np.sort(np.asarray(x, dtype=float))
    if x.size != N:
        raise AssumptionError(f"expected {N} atoms, got {x.size}")
    if np.any(x < 0):
        raise AssumptionError("diagonal entries must be nonnegative")
    return x


def scaling_constant(x, y, cfg: SolverConfig = DEFAULT_CONFIG) -> float:
    """``pi * rho(0)`` for the free convolution of the symmetrized inputs."""
    mx = symmetrize(AtomicMeasure.empirical(x))
    my = symmetrize(AtomicMeasure.empirical(y))
    return math.pi * density_at_zero(mx, my, cfg)


def check_assumptions(x, y) -> None:
    ux, uy = np.unique(x), np.unique(y)
    if ux.size == 1 and uy.size == 1:
        raise AssumptionError("both measures are point masses")
    if max(ux.size, uy.size) <= 2:
        raise AssumptionError("at least one measure must be supported on more than 2 points")


def _lsv_block(x, y, field_name, seed, start, stop, reference):
    out = np.empty(stop - start)
    N = x.size
    for k, i in enumerate(range(start, stop)):
        rng = sample_rng(seed, i)
        if reference:
            out[k] = sample_ginibre_reference(N, field_name, rng).least_singular_value
        else:
            out[k] = least_singular_value(x, y, field_name, rng)
    return out


def sample_lsv_statistics(x, y, N: int, n_samples: int, field_name: str, seed: int,
                          workers: int = 1, reference: bool = False) -> np.ndarray:
    """``N * lambda_1`` for ``n_samples`` draws (sample ``i`` uses stream ``i``)."""
    x = np.zeros(N) if x is None else np.asarray(x, dtype=float)
    y = np.zeros(N) if y is None else np.asarray(y, dtype=float)
    blocks = chunk_ranges(n_samples, max(1, workers) * 4)
    tasks = [(x, y, field_name, seed, a, b, reference) for a, b in blocks]
    parts = parallel_map(_lsv_block, tasks, workers)
    return N * np.concatenate(parts) if parts else np.empty(0)


def universality_experiment(mu1, mu2, N: int, n_samples: int, field: str, seed: int,
                            workers: int = 1, reference: bool = False,
                            cfg: SolverConfig = DEFAULT_CONFIG) -> UniversalityReport:
    """Rescaled least singular values against the exact law for ``field``.

    Parameters
    ----------
    mu1, mu2 : measure, DiagonalData or array
        Entries of ``X`` and ``Y``; continuous measures are replaced by their
        N-quantiles.  Ignored when ``reference`` is set.
    reference : bool
        Use the Gaussian matrix ``G / sqrt(N)`` instead of the model; its
        scaling constant is 1.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    if field not in LAWS:
        raise ValueError(f"unknown field {field!r}")
    start = time.perf_counter()
    if reference:
        x = y = None
        s = 1.0
    else:
        x, y = _as_atoms(mu1, N), _as_atoms(mu2, N)
        check_assumptions(x, y)
        s = scaling_constant(x, y, cfg)
    stats = s * sample_lsv_statistics(x, y, N, n_samples, field, seed, workers, reference)
    law_name, law = LAWS[field]
    ks = ks_distance(EmpiricalCDF(stats), law)
    return UniversalityReport(field, N, n_samples, s, ks, seed, law_name,
                              time.perf_counter() - start, stats)


def density_near_zero(stats, h: float = 0.1) -> float:
    """Histogram estimate of the density of ``stats`` on ``[0, h]``."""
    stats = np.asarray(stats)
    return float(np.mean(stats <= h) / h)


# ---------------------------------------------------------------------------
# Local law
# ---------------------------------------------------------------------------

@dataclass
class LocalLawReport:
    z_grid: np.ndarray
    max_residual: np.ndarray
    trace_residual: np.ndarray
    w_tilde: np.ndarray
    y_bar: np.ndarray

    def __post_init__(self):
        if np.any(self.max_residual < 0) or np.any(self.trace_residual < 0):
            raise ValueError("residuals must be nonnegative")


def local_law_residual(B, y_bar, mu_x_sym, z_grid, cfg: SolverConfig = DEFAULT_CONFIG) -> LocalLawReport:
    """Compare the resolvent diagonal of ``[[0, B], [B*, 0]]`` with its deterministic proxy.

    ``B`` must be written in the basis where the Y-part is ``diag(y_bar)``.
    With ``zeta = z + w`` and ``w`` the subordination function attached to
    the symmetrized ``y_bar`` measure, entry ``i`` (taken modulo N) is
    approximated by ``zeta / (y_bar_i**2 - zeta**2)`` and the normalized trace
    by the free-convolution transform.
    """
    y_bar = np.asarray(y_bar, dtype=float)
    mu_y_sym = symmetrize(AtomicMeasure.empirical(y_bar))
    op = hermitize(B)
    z_grid = np.atleast_1d(np.asarray(z_grid, dtype=complex))
    res = np.empty(z_grid.size)
    tr = np.empty(z_grid.size)
    ws = np.empty(z_grid.size, dtype=complex)
    for k, z in enumerate(z_grid):
        st = solve_subordination(mu_x_sym, mu_y_sym, z, cfg)
        zeta = z + st.w_beta
        approx = zeta / (y_bar ** 2 - zeta ** 2)
        G = green_diag(op, z)
        res[k] = np.max(np.abs(G - np.concatenate([approx, approx])))
        tr[k] = abs(G.mean() - st.m)
        ws[k] = st.w_beta
    return LocalLawReport(z_grid, res, tr, ws, y_bar)


def model_local_law(sample: ModelSample, z_grid, cfg: SolverConfig = DEFAULT_CONFIG) -> LocalLawReport:
    """Local-law residuals for a model draw at time zero (``y_bar = y``)."""
    B = sample.U @ sample.M @ sample.V.conj().T
    mu_x_sym = symmetrize(AtomicMeasure.empirical(sample.X.entries))
    return local_law_residual(B, sample.Y.entries, mu_x_sym, z_grid, cfg)


# ---------------------------------------------------------------------------
# Eigenvector statistics
# ---------------------------------------------------------------------------

@dataclass
class DelocalizationReport:
    N: int
    n_samples: int
    max_weight: float
    bulk_max_weight: float
    max_gamma: float
    gamma_scale: float
    bulk_interval: tuple
    mean_weight: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for v in (self.max_weight, self.bulk_max_weight, self.mean_weight):
            if not 0 <= v <= 2 + 1e-12:
                raise ValueError("weights must lie in [0, 2]")


def delocalization_stats(samples: Sequence[ModelSample], bulk_interval=(0.0, np.inf),
                         a_exp: float = 0.5) -> DelocalizationReport:
    """Maximal ``|w_a(i)|^2 + |z_a(i)|^2`` and off-diagonal ``gamma``.

    For model samples ``w = U j`` and ``z = V k`` and gamma uses the complement
    of the index set built from ``Y``.  For reference samples (no Haar
    factors) the singular vectors are used directly and gamma is skipped.
    ``gamma_scale`` is the Haar expectation ``|complement| / N**2``.
    """
    lo, hi = bulk_interval
    max_w = bulk_w = max_g = 0.0
    scale = 0.0
    means = []
    N = samples[0].N
    for s in samples:
        s.with_vectors()
        if s.U is not None:
            iset = build_index_set(s.Y.entries, a_exp)
            table = overlaps(s, iset.complement)
            W, Z = table.W, table.Z
            g = table.gamma.copy()
            np.fill_diagonal(g, 0.0)
            max_g = max(max_g, float(g.max()) if N > 1 else 0.0)
            scale = float(iset.complement.sum()) / N ** 2
        else:
            W, Z = s.J, s.K
        weight = np.abs(W) ** 2 + np.abs(Z) ** 2  # (i, alpha)
        max_w = max(max_w, float(weight.max()))
        inside = (s.singular_values >= lo) & (s.singular_values <= hi)
        if inside.any():
            bulk_w = max(bulk_w, float(weight[:, inside].max()))
        means.append(float((np.abs(W) ** 2).mean()))
    return DelocalizationReport(N, len(samples), max_w, bulk_w, max_g, scale,
                                (float(lo), float(hi)), float(np.mean(means)))


# ---------------------------------------------------------------------------
# Empirical bounds and regularity
# ---------------------------------------------------------------------------

def _sym_points(y, symmetrized):
    return np.concatenate([-y, y]) if symmetrized else y


def empirical_bound_check(Y, a_exp: float, E_grid, symmetrized: bool = True,
                          n_eta: int = 200, threshold: Optional[float] = None) -> dict:
    """Truncated inverse-distance sums of ``Y`` against their deterministic bounds.

    The sums are ``(1/2N) sum_{|y_i - E| >= N**(-1+a)} |y_i - E|**-p`` for
    ``p = 1, 2``, over the sign-symmetric points ``+-y_i`` (or over ``y_i``
    alone with ``symmetrized=False``).  ``C_hat`` is the largest ``|m|`` of
    the symmetrized empirical transform over ``E_grid`` and
    ``eta in [N**(-1+a), 1]``.  ``threshold`` overrides ``N**(-1+a)``.
    """
    y = Y.entries if isinstance(Y, DiagonalData) else np.asarray(Y, dtype=float)
    N = y.size
    thr = N ** (-1.0 + a_exp) if threshold is None else float(threshold)
    E = np.atleast_1d(np.asarray(E_grid, dtype=float))
    pts = _sym_points(y, symmetrized)
    dist = np.abs(pts[None, :] - E[:, None])
    keep = dist >= thr
    with np.errstate(divide="ignore"):
        inv = np.where(keep, 1.0 / np.where(keep, dist, 1.0), 0.0)
    s1 = inv.sum(axis=1) / (2 * N)
    s2 = (inv ** 2).sum(axis=1) / (2 * N)
    etas = np.geomspace(thr, 1.0, n_eta) if thr < 1 else np.array([thr])
    sym = np.concatenate([-y, y])
    Z = E[:, None] + 1j * etas[None, :]
    m = (1.0 / (sym[None, None, :] - Z[:, :, None])).mean(axis=2)
    C_hat = float(np.abs(m).max())
    bound1 = 2 * C_hat * math.log(N) + 4
    bound2 = 2 * C_hat * N ** (1 - a_exp)
    return {
        "N": N,
        "a_exp": a_exp,
        "threshold": thr,
        "E_grid": E.tolist(),
        "sum_inverse": s1.tolist(),
        "sum_inverse_squared": s2.tolist(),
        "C_hat": C_hat,
        "bound_inverse": bound1,
        "bound_inverse_squared": bound2,
        "ratio_inverse_to_logN": (s1 / math.log(N)).tolist() if N > 1 else None,
        "passed": bool(np.all(s1 <= bound1) and np.all(s2 <= bound2)),
    }


def hat_a_growth(Ns: Sequence[int], y_factory, a_exp: float = 0.5) -> dict:
    """``||A||/N**(1-a)`` and ``||A_hat||/(1 + log N)`` along ``Ns``.

    ``y_factory(N)`` returns the diagonal entries for size ``N``.
    """
    rows = []
    for N in Ns:
        y = np.asarray(y_factory(N), dtype=float)
        d = drift_matrices(y, build_index_set(y, a_exp))
        a_norm = float(np.max(np.abs(d.A)))
        h_norm = float(np.max(np.abs(d.A_hat)))
        rows.append({"N": int(N), "A_norm": a_norm, "A_hat_norm": h_norm,
                     "A_ratio": a_norm / N ** (1 - a_exp),
                     "A_hat_ratio": h_norm / (1 + math.log(N))})
    return {"a_exp": a_exp, "rows": rows,
            "max_A_ratio": max(r["A_ratio"] for r in rows),
            "max_A_hat_ratio": max(r["A_hat_ratio"] for r in rows)}


def regularity_check(V_singular_values, m3_evaluator, g: float, G: float,
                     threshold: float, n_E: int = 41, n_eta: int = 25) -> dict:
    """Largest ``|Im m_V - Im m_3|`` over ``|E| <= G``, ``eta in [g, 10]``.

    ``m_V`` is the transform of the symmetrized singular values.
    """
    s = np.asarray(V_singular_values, dtype=float)
    sym = np.concatenate([-s, s])
    f = m3_evaluator.stieltjes if hasattr(m3_evaluator, "stieltjes") else m3_evaluator
    E = np.linspace(-G, G, n_E)
    etas = np.geomspace(g, 10.0, n_eta)
    Z = E[:, None] + 1j * etas[None, :]
    mV = (1.0 / (sym[None, None, :] - Z[:, :, None])).mean(axis=2)
    m3 = np.vectorize(lambda z: complex(f(z)))(Z)
    diff = float(np.max(np.abs(mV.imag - m3.imag)))
    return {"g": g, "G": G, "threshold": threshold, "max_difference": diff,
            "passed": bool(diff < threshold)}
