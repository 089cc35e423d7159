"""Free additive convolution through subordination.

For probability measures ``mu_alpha`` and ``mu_beta`` and ``z`` in the upper
half-plane, the subordination functions solve::

    w_alpha = hat_m_beta(z + w_beta)
    w_beta  = hat_m_alpha(z + w_alpha)
    m       = -1 / (z + w_alpha + w_beta)

with ``hat_m(zeta) = -zeta - 1/m(zeta)``.  Then ``m`` is the Stieltjes
transform of ``mu_alpha [+] mu_beta`` and ``m = m_alpha(z + w_alpha) =
m_beta(z + w_beta)``.  Exchanging the two measures swaps the labels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .measures import (
    AtomicMeasure,
    GridDensity,
    Semicircle,
    Arcsine,
    SymmetrizedContinuous,
    Uniform,
    hat_transform,
    hat_transform_derivative,
)

__all__ = [
    "SolverConfig",
    "SubordinationState",
    "PhiJacobian",
    "SubordinationError",
    "DegenerateInputError",
    "SingularJacobianError",
    "VanishingDensityError",
    "phi",
    "solve_subordination",
    "solve_perturbed",
    "phi_jacobian",
    "free_convolution_density",
    "density_at_zero",
    "semicircle_flow",
]


class SubordinationError(RuntimeError):
    """The solver did not reach ``tol``; ``residual`` holds the last value."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class DegenerateInputError(ValueError):
    pass


class SingularJacobianError(ArithmeticError):
    pass


class VanishingDensityError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-12
    max_fixed_point_iters: int = 5000
    max_newton_iters: int = 60
    damping: float = 0.5
    eta_floor: float = 1e-9
    ladder_ratio: float = 0.3

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not self.eta_floor > 0:
            raise ValueError("eta_floor must be positive")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")


DEFAULT_CONFIG = SolverConfig()


@dataclass(frozen=True)
class SubordinationState:
    z: complex
    w_alpha: complex
    w_beta: complex
    m: complex
    residual: float
    iterations: int = 0


@dataclass(frozen=True)
class PhiJacobian:
    """Derivative of ``Phi`` at a solved state, ``[[1, -p], [-q, 1]]``.

    ``p_tilde`` and ``q_tilde`` integrate ``1/|x - zeta|**2`` against the
    hat measures; they dominate ``|p|`` and ``|q|``.
    """

    p: complex
    q: complex
    p_tilde: float
    q_tilde: float
    matrix: np.ndarray
    inverse: np.ndarray
    inverse_norm: float


# ---------------------------------------------------------------------------
# Phi and its derivative
# ---------------------------------------------------------------------------

def phi(w1, w2, z, mu_alpha, mu_beta):
    """``(w1 - hat_m_beta(z + w2), w2 - hat_m_alpha(z + w1))``."""
    return (
        w1 - hat_transform(mu_beta, z + w2),
        w2 - hat_transform(mu_alpha, z + w1),
    )


def _residual(w1, w2, z, mu_alpha, mu_beta, target=(0.0, 0.0)):
    f1, f2 = phi(w1, w2, z, mu_alpha, mu_beta)
    return math.hypot(abs(f1 - target[0]), abs(f2 - target[1]))


def _newton(z, w1, w2, mu_alpha, mu_beta, cfg, target=(0.0, 0.0), trace=None):
    """Newton iteration on ``Phi(w) = target`` keeping ``z + w`` in C+."""
    f1, f2 = phi(w1, w2, z, mu_alpha, mu_beta)
    f1, f2 = f1 - target[0], f2 - target[1]
    res = math.hypot(abs(f1), abs(f2))
    for it in range(cfg.max_newton_iters):
        if trace is not None:
            trace.append({"phase": "newton", "iteration": it, "residual": res})
        if res <= cfg.tol:
            return w1, w2, res, True, it
        p = hat_transform_derivative(mu_beta, z + w2)
        q = hat_transform_derivative(mu_alpha, z + w1)
        det = 1.0 - p * q
        if det == 0:
            return w1, w2, res, False, it
        d1 = -(f1 + p * f2) / det
        d2 = -(q * f1 + f2) / det
        step = 1.0
        while step > 1e-12:
            n1, n2 = w1 + step * d1, w2 + step * d2
            if (z + n1).imag > 0 and (z + n2).imag > 0:
                g1, g2 = phi(n1, n2, z, mu_alpha, mu_beta)
                g1, g2 = g1 - target[0], g2 - target[1]
                new_res = math.hypot(abs(g1), abs(g2))
                if np.isfinite(new_res) and new_res < res:
                    break
            step *= 0.5
        else:
            # stagnation at rounding level still counts
            return w1, w2, res, res <= 100 * cfg.tol, it
        w1, w2, f1, f2, res = n1, n2, g1, g2, new_res
    return w1, w2, res, res <= cfg.tol, cfg.max_newton_iters


def _fixed_point(z, w1, w2, mu_alpha, mu_beta, cfg, switch=1e-6, trace=None):
    d = cfg.damping
    res = _residual(w1, w2, z, mu_alpha, mu_beta)
    for it in range(cfg.max_fixed_point_iters):
        if res <= switch:
            break
        n1 = hat_transform(mu_beta, z + w2)
        w1 = (1 - d) * w1 + d * n1
        n2 = hat_transform(mu_alpha, z + w1)
        w2 = (1 - d) * w2 + d * n2
        res = _residual(w1, w2, z, mu_alpha, mu_beta)
        if trace is not None and it % 50 == 0:
            trace.append({"phase": "fixed_point", "iteration": it, "residual": res})
    return w1, w2, res


def _cold_solve(z, mu_alpha, mu_beta, cfg, trace=None):
    w1, w2 = 1j, 1j
    w1, w2, _ = _fixed_point(z, w1, w2, mu_alpha, mu_beta, cfg, trace=trace)
    return _newton(z, w1, w2, mu_alpha, mu_beta, cfg, trace=trace)


def _state(z, w1, w2, res, iters=0):
    return SubordinationState(complex(z), complex(w1), complex(w2),
                              complex(-1.0 / (z + w1 + w2)), float(res), iters)


def _point_mass_state(z, mu_alpha, mu_beta):
    a_pm, b_pm = mu_alpha.is_point_mass(), mu_beta.is_point_mass()
    if a_pm and b_pm:
        raise DegenerateInputError("both measures are point masses")
    if a_pm:
        a = mu_alpha.point_location()
        w_beta = complex(-a)
        w_alpha = hat_transform(mu_beta, z - a)
    else:
        b = mu_beta.point_location()
        w_alpha = complex(-b)
        w_beta = hat_transform(mu_alpha, z - b)
    res = _residual(w_alpha, w_beta, z, mu_alpha, mu_beta)
    return _state(z, w_alpha, w_beta, res)


def _valid(z, w1, w2):
    return w1.imag >= -1e-14 and w2.imag >= -1e-14


def solve_subordination(mu_alpha, mu_beta, z, cfg: SolverConfig = DEFAULT_CONFIG,
                        w0=None, trace: Optional[list] = None) -> SubordinationState:
    """Solve the subordination system at ``z``.

    Parameters
    ----------
    mu_alpha, mu_beta : measure
        Any objects from :mod:`freeadd.measures`.
    z : complex
        Spectral parameter with ``Im z >= cfg.eta_floor``.
    w0 : tuple of complex, optional
        Warm start ``(w_alpha, w_beta)``.  Without it the solver descends an
        ``eta`` ladder from ``Im z = 1``.
    trace : list, optional
        Receives ``{"phase", "iteration", "residual"}`` records.

    Raises
    ------
    SubordinationError
        If the residual never drops below ``cfg.tol``.
    """
    z = complex(z)
    if z.imag < cfg.eta_floor:
        raise ValueError(f"Im z = {z.imag:g} is below eta_floor = {cfg.eta_floor:g}")
    if mu_alpha.is_point_mass() or mu_beta.is_point_mass():
        return _point_mass_state(z, mu_alpha, mu_beta)

    if w0 is not None:
        w1, w2, res, ok, it = _newton(z, complex(w0[0]), complex(w0[1]),
                                      mu_alpha, mu_beta, cfg, trace=trace)
        if ok and _valid(z, w1, w2):
            return _state(z, w1, w2, res, it)

    E, eta = z.real, z.imag
    if eta >= 1.0:
        w1, w2, res, ok, it = _cold_solve(z, mu_alpha, mu_beta, cfg, trace)
        if ok and _valid(z, w1, w2):
            return _state(z, w1, w2, res, it)
        raise SubordinationError(f"no convergence at z={z}", res)

    n = max(2, int(math.ceil(math.log(eta) / math.log(cfg.ladder_ratio))) + 1)
    etas = np.geomspace(1.0, eta, n)
    w1, w2, res, ok, it = _cold_solve(complex(E, 1.0), mu_alpha, mu_beta, cfg, trace)
    if not ok:
        raise SubordinationError(f"no convergence at z={complex(E, 1.0)}", res)
    total = it
    for k in range(1, n):
        w1, w2, res, total = _descend(E, etas[k - 1], etas[k], w1, w2,
                                      mu_alpha, mu_beta, cfg, total, trace)
    if not _valid(z, w1, w2):
        raise SubordinationError(f"solution left the upper half-plane at z={z}", res)
    return _state(z, w1, w2, res, total)


def _descend(E, eta_from, eta_to, w1, w2, mu_alpha, mu_beta, cfg, total, trace, depth=0):
    z = complex(E, eta_to)
    n1, n2, res, ok, it = _newton(z, w1, w2, mu_alpha, mu_beta, cfg, trace=trace)
    if ok and _valid(z, n1, n2):
        return n1, n2, res, total + it
    if depth < 12:
        mid = math.sqrt(eta_from * eta_to)
        w1, w2, _, total = _descend(E, eta_from, mid, w1, w2, mu_alpha, mu_beta,
                                    cfg, total, trace, depth + 1)
        return _descend(E, mid, eta_to, w1, w2, mu_alpha, mu_beta, cfg, total,
                        trace, depth + 1)
    f1, f2, _ = _fixed_point(z, w1, w2, mu_alpha, mu_beta, cfg, trace=trace)
    n1, n2, res, ok, it = _newton(z, f1, f2, mu_alpha, mu_beta, cfg, trace=trace)
    if ok and _valid(z, n1, n2):
        return n1, n2, res, total + it
    raise SubordinationError(f"no convergence at z={z}", res)


def solve_perturbed(state: SubordinationState, r, mu_alpha, mu_beta,
                    cfg: SolverConfig = DEFAULT_CONFIG) -> SubordinationState:
    """Solve ``Phi(w') = r`` starting from a solved state.

    The returned ``residual`` is ``||Phi(w') - r||``.  When plain Newton
    stalls (nearly singular ``DPhi``, where ``w'`` moves far), the target is
    ramped from 0 to ``r`` with a tangent predictor.
    """
    z = state.z
    r = (complex(r[0]), complex(r[1]))
    w1, w2, res, ok, it = _newton(z, state.w_alpha, state.w_beta, mu_alpha, mu_beta,
                                  cfg, target=r)
    if ok:
        return _state(z, w1, w2, res, it)
    w1, w2, res, it = _ramp(z, state.w_alpha, state.w_beta, r, 0.0, 1.0,
                            mu_alpha, mu_beta, cfg)
    return _state(z, w1, w2, res, it)


def _ramp(z, w1, w2, r, t0, t1, mu_alpha, mu_beta, cfg, depth=0):
    """Solve ``Phi(w) = t1 r`` from a solution at ``t0 r``, bisecting on failure."""
    p = hat_transform_derivative(mu_beta, z + w2)
    q = hat_transform_derivative(mu_alpha, z + w1)
    det = 1.0 - p * q
    h = t1 - t0
    s1, s2 = w1, w2
    if det != 0:
        # DPhi dw = dr  with  DPhi = [[1, -p], [-q, 1]]
        p1 = w1 + h * (r[0] + p * r[1]) / det
        p2 = w2 + h * (q * r[0] + r[1]) / det
        if (z + p1).imag > 0 and (z + p2).imag > 0:
            s1, s2 = p1, p2
    n1, n2, res, ok, it = _newton(z, s1, s2, mu_alpha, mu_beta, cfg,
                                  target=(t1 * r[0], t1 * r[1]))
    if ok:
        return n1, n2, res, it
    if depth >= 30:
        raise SubordinationError("perturbed system did not converge", res)
    mid = 0.5 * (t0 + t1)
    m1, m2, _, i1 = _ramp(z, w1, w2, r, t0, mid, mu_alpha, mu_beta, cfg, depth + 1)
    n1, n2, res, i2 = _ramp(z, m1, m2, r, mid, t1, mu_alpha, mu_beta, cfg, depth + 1)
    return n1, n2, res, i1 + i2


def phi_jacobian(state: SubordinationState, mu_alpha, mu_beta) -> PhiJacobian:
    z = state.z
    zb = z + state.w_beta
    za = z + state.w_alpha
    p = complex(hat_transform_derivative(mu_beta, zb))
    q = complex(hat_transform_derivative(mu_alpha, za))
    # Im of a Stieltjes transform equals Im(zeta) * int dnu / |x - zeta|^2
    p_tilde = float(np.imag(hat_transform(mu_beta, zb)) / zb.imag)
    q_tilde = float(np.imag(hat_transform(mu_alpha, za)) / za.imag)
    p_tilde, q_tilde = max(p_tilde, 0.0), max(q_tilde, 0.0)
    det = 1.0 - p * q
    if abs(det) < 1e-14:
        raise SingularJacobianError(f"|1 - pq| = {abs(det):.3g} at z={z}")
    matrix = np.array([[1.0, -p], [-q, 1.0]], dtype=complex)
    inverse = np.array([[1.0, p], [q, 1.0]], dtype=complex) / det
    return PhiJacobian(p, q, p_tilde, q_tilde, matrix, inverse,
                       float(np.linalg.norm(inverse, 2)))


# ---------------------------------------------------------------------------
# Densities
# ---------------------------------------------------------------------------

def free_convolution_density(mu_alpha, mu_beta, grid, eta: float,
                             cfg: SolverConfig = DEFAULT_CONFIG,
                             return_states: bool = False):
    """Density ``Im m(E + i eta) / pi`` of ``mu_alpha [+] mu_beta`` on ``grid``.

    Solutions are continued along the grid by warm-starting from the left
    neighbour, falling back to a cold ladder solve.  Points that fail are
    flagged (``flags[k] = True``) and given density 0.
    """
    if eta < cfg.eta_floor:
        raise ValueError("eta below the solver floor")
    grid = np.asarray(grid, dtype=float)
    values = np.zeros_like(grid)
    flags = np.zeros(grid.shape, dtype=bool)
    states: List[Optional[SubordinationState]] = []
    prev = None
    for k, E in enumerate(grid):
        z = complex(E, eta)
        st = None
        try:
            st = solve_subordination(mu_alpha, mu_beta, z, cfg,
                                     w0=None if prev is None else (prev.w_alpha, prev.w_beta))
        except SubordinationError:
            try:
                st = solve_subordination(mu_alpha, mu_beta, z, cfg)
            except SubordinationError:
                st = None
        if st is None:
            flags[k] = True
        else:
            values[k] = max(st.m.imag / np.pi, 0.0)
        states.append(st)
        prev = st
    dens = GridDensity(grid, values, flags=flags)
    return (dens, states) if return_states else dens


def _is_symmetric(mu) -> bool:
    if isinstance(mu, AtomicMeasure):
        m = mu.merged()
        return bool(np.allclose(m.locations, -m.locations[::-1], atol=1e-12)
                    and np.allclose(m.weights, m.weights[::-1], atol=1e-12))
    if isinstance(mu, (Semicircle, Arcsine, SymmetrizedContinuous)):
        return True
    if isinstance(mu, Uniform):
        return mu.lo == -mu.hi
    if isinstance(mu, GridDensity):
        return bool(np.allclose(mu.grid, -mu.grid[::-1]) and np.allclose(mu.values, mu.values[::-1]))
    return bool(getattr(mu, "symmetrized", False))


def density_at_zero(mu_alpha, mu_beta, cfg: SolverConfig = DEFAULT_CONFIG,
                    etas: Sequence[float] = (1e-2, 1e-3, 1e-4, 1e-5),
                    floor: float = 1e-6) -> float:
    """``rho(0)`` of ``mu_alpha [+] mu_beta`` for symmetric inputs.

    Evaluates ``Im m(i eta) / pi`` down an ``eta`` ladder and linearly
    extrapolates the last two rungs to ``eta = 0``.
    """
    if not (_is_symmetric(mu_alpha) and _is_symmetric(mu_beta)):
        raise ValueError("density_at_zero expects symmetrized measures")
    rho = []
    w0 = None
    for eta in etas:
        st = solve_subordination(mu_alpha, mu_beta, complex(0.0, eta), cfg, w0=w0)
        w0 = (st.w_alpha, st.w_beta)
        rho.append(st.m.imag / np.pi)
    if len(rho) == 1:
        value = rho[0]
    else:
        e1, e2 = etas[-2], etas[-1]
        value = (e1 * rho[-1] - e2 * rho[-2]) / (e1 - e2)
    if value < floor:
        raise VanishingDensityError(f"rho(0) = {value:.3g} is below {floor:g}")
    return float(value)


# ---------------------------------------------------------------------------
# Semicircle flow
# ---------------------------------------------------------------------------

def _evaluator(m0):
    if hasattr(m0, "stieltjes"):
        return m0.stieltjes, m0.stieltjes_derivative
    h = 1e-7

    def deriv(zeta):
        return (m0(zeta + h) - m0(zeta - h)) / (2 * h)

    return m0, deriv


def semicircle_flow(m0_evaluator, t: float, z, cfg: SolverConfig = DEFAULT_CONFIG) -> complex:
    """Transform of ``mu_0 [+] semicircle(t)``: the root of ``m = m0(z + t m)``.

    ``m0_evaluator`` is a measure or a callable ``zeta -> m0(zeta)``.
    """
    z = complex(z)
    if z.imag <= 0:
        raise ValueError("Im z must be positive")
    if t < 0:
        raise ValueError("t must be nonnegative")
    f, df = _evaluator(m0_evaluator)
    m = complex(f(z))
    if t == 0:
        return m
    d = cfg.damping
    for _ in range(cfg.max_fixed_point_iters):
        new = complex(f(z + t * m))
        if abs(new - m) < 1e-6:
            m = new
            break
        m = (1 - d) * m + d * new
    for _ in range(cfg.max_newton_iters):
        g = m - complex(f(z + t * m))
        if abs(g) <= cfg.tol:
            return m
        step = -g / (1.0 - t * complex(df(z + t * m)))
        s = 1.0
        while s > 1e-12:
            cand = m + s * step
            if (z + t * cand).imag > 0 and abs(cand - complex(f(z + t * cand))) < abs(g):
                break
            s *= 0.5
        else:
            if abs(g) <= 100 * cfg.tol:
                return m
            raise SubordinationError("semicircle flow stagnated", abs(g))
        m = cand
    if abs(m - complex(f(z + t * m))) <= 100 * cfg.tol and m.imag > 0:
        return m
    raise SubordinationError("semicircle flow did not converge", abs(m - complex(f(z + t * m))))
