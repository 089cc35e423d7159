"""Matrix Brownian flow on the Haar factors and the singular-value SDE.

The matrix flow rotates ``U`` and ``V`` by correlated Brownian increments
restricted to the pairs ``|y_i - y_j| >= N**(-1 + a)``.  The particle flow
evolves the positive half of a sign-symmetric configuration
``lambda_{-i} = -lambda_i`` driven by ``B_{-i} = -B_i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, List, Optional

import numpy as np

from .ensembles import DiagonalData, ModelSample, FIELDS, overlaps

__all__ = [
    "FlowConfig",
    "IndexSet",
    "DriftMatrices",
    "FlowSetup",
    "MatrixFlowState",
    "MatrixFlowResult",
    "ParticleState",
    "Trajectory",
    "StepRejected",
    "CollisionError",
    "build_index_set",
    "drift_matrices",
    "flow_noise",
    "unitarity_deviation",
    "init_matrix_flow",
    "unitary_flow_step",
    "matrix_flow_run",
    "particle_drift",
    "sv_sde_step",
    "interpolating_step",
    "reference_step",
    "particle_run",
    "reference_dbm_run",
    "coupled_comparison",
    "gamma_table",
    "remainder_estimate",
]


class StepRejected(RuntimeError):
    pass


class CollisionError(RuntimeError):
    pass


@dataclass(frozen=True)
class FlowConfig:
    """Exponents and time stepping for both flows.

    ``tau = N**(-1 + b_exp)``; ``dt`` defaults to ``tau / n_steps``.
    """

    N: int
    field: str = "complex"
    a_exp: float = 0.5
    b_exp: float = 0.004
    c_exp: Optional[float] = None
    dt: Optional[float] = None
    n_steps: int = 100
    project: bool = True
    compensate: bool = True
    max_step_deviation: float = 0.5
    gap_fraction: float = 0.25
    max_substep_depth: int = 40
    collision_floor: float = 1e-14

    def __post_init__(self):
        if self.field not in FIELDS:
            raise ValueError(f"field must be one of {FIELDS}")
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if not 0 < self.a_exp < 1:
            raise ValueError("a_exp must lie in (0, 1)")
        if not 0 < self.b_exp < self.a_exp / 100:
            raise ValueError("b_exp must satisfy 0 < b_exp < a_exp / 100")
        if self.c_exp is None:
            object.__setattr__(self, "c_exp", 6 * self.a_exp)
        if not self.c_exp > 0:
            raise ValueError("c_exp must be positive")
        if self.dt is None:
            object.__setattr__(self, "dt", self.tau / self.n_steps)
        if not 0 < self.dt <= self.tau:
            raise ValueError("dt must lie in (0, tau]")

    @property
    def tau(self) -> float:
        return float(self.N ** (-1.0 + self.b_exp))

    @property
    def gamma_cap(self) -> float:
        return float(self.N ** (-self.c_exp))


@dataclass(frozen=True)
class IndexSet:
    """``mask[i, j]`` is True iff ``|y_i - y_j| >= threshold``."""

    mask: np.ndarray
    threshold: float

    @property
    def complement(self) -> np.ndarray:
        return ~self.mask

    def __contains__(self, pair):
        i, j = pair
        return bool(self.mask[i, j])


@dataclass(frozen=True)
class DriftMatrices:
    A: np.ndarray
    A_hat: np.ndarray


def _entries(Y):
    return Y.entries if isinstance(Y, DiagonalData) else np.asarray(Y, dtype=float)


def build_index_set(Y, a_exp: float) -> IndexSet:
    y = _entries(Y)
    N = y.size
    thr = float(N ** (-1.0 + a_exp))
    mask = np.abs(y[:, None] - y[None, :]) >= thr
    np.fill_diagonal(mask, False)
    return IndexSet(mask, thr)


def _pair_tables(y, mask):
    diff = y[:, None] - y[None, :]
    tot = y[:, None] + y[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_diff = np.where(mask, 1.0 / np.where(mask, diff, 1.0), 0.0)
        inv_tot = np.where(mask, 1.0 / np.where(mask, tot, 1.0), 0.0)
    return inv_diff, inv_tot


def drift_matrices(Y, index_set: IndexSet, N: Optional[int] = None) -> DriftMatrices:
    """Diagonals ``A`` (unitarity compensation) and ``A_hat`` (mean drift of M)."""
    y = _entries(Y)
    N = y.size if N is None else N
    inv_diff, inv_tot = _pair_tables(y, index_set.mask)
    A = (inv_diff ** 2 + inv_tot ** 2).sum(axis=1) / (2 * N)
    A_hat = (-inv_diff - inv_tot).sum(axis=1) / (2 * N)
    return DriftMatrices(A, A_hat)


def _hermitian_increment(N, dt, field, rng):
    """Hermitian (complex) or skew-symmetric (real) Brownian increment.

    Off-diagonal entries have ``E|x|^2 = dt``.
    """
    if field == "complex":
        G = (rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))) * math.sqrt(dt / 2)
        H = np.triu(G, 1)
        H = H + H.conj().T
        H[np.diag_indices(N)] = rng.standard_normal(N) * math.sqrt(dt)
        return H
    G = np.triu(rng.standard_normal((N, N)) * math.sqrt(dt), 1)
    return G - G.T


def flow_noise(setup: "FlowSetup", dt: float, rng: np.random.Generator):
    """Increments ``(dW1, dW2)`` built from two independent Brownian matrices."""
    N = setup.N
    W1 = _hermitian_increment(N, dt, setup.field, rng)
    W2 = _hermitian_increment(N, dt, setup.field, rng)
    scale = 1.0 / math.sqrt(2 * N)
    a = setup.abs_inv_diff * scale
    b = setup.inv_tot * scale
    return a * W1 + b * W2, a * W1 - b * W2


def unitarity_deviation(Q) -> float:
    return float(np.linalg.norm(Q @ Q.conj().T - np.eye(Q.shape[0]), "fro"))


def _project(Q):
    q, r = np.linalg.qr(Q)
    d = np.diagonal(r)
    return q * (d / np.abs(d))[None, :]


@dataclass(frozen=True)
class FlowSetup:
    """Quantities fixed for the whole matrix flow."""

    N: int
    field: str
    y: np.ndarray
    index_set: IndexSet
    drift: DriftMatrices
    abs_inv_diff: np.ndarray
    inv_tot: np.ndarray
    core: np.ndarray       # R* X T, untouched by the flow
    frozen: np.ndarray     # U*(0) A_hat V(0)
    tau: float


@dataclass
class MatrixFlowState:
    t: float
    U: np.ndarray
    V: np.ndarray
    M: np.ndarray
    M_hat: np.ndarray
    setup: FlowSetup
    deviation_before_projection: float = 0.0
    deviation: float = 0.0


@dataclass
class MatrixFlowResult:
    states: List[MatrixFlowState]
    final: MatrixFlowState
    max_deviation_before_projection: float
    max_deviation: float
    endpoint_error: float
    drift_remainder: float


def init_matrix_flow(sample: ModelSample, cfg: FlowConfig) -> MatrixFlowState:
    if sample.U is None or sample.X is None:
        raise ValueError("matrix flow needs a model sample with Haar factors")
    if sample.N != cfg.N or sample.field != cfg.field:
        raise ValueError("sample and config disagree on N or field")
    y = sample.Y.entries
    iset = build_index_set(y, cfg.a_exp)
    drift = drift_matrices(y, iset)
    inv_diff, inv_tot = _pair_tables(y, iset.mask)
    core = sample.R.conj().T @ (sample.X.entries[:, None] * sample.T)
    frozen = sample.U.conj().T @ (drift.A_hat[:, None] * sample.V)
    setup = FlowSetup(cfg.N, cfg.field, y, iset, drift, np.abs(inv_diff), inv_tot,
                      core, frozen, cfg.tau)
    M = core + sample.U.conj().T @ (y[:, None] * sample.V)
    return MatrixFlowState(0.0, sample.U.copy(), sample.V.copy(), M,
                           M + cfg.tau * frozen, setup)


def unitary_flow_step(state: MatrixFlowState, cfg: FlowConfig, rng: np.random.Generator,
                      dt: Optional[float] = None, noise: bool = True) -> MatrixFlowState:
    """One Euler step of ``dU = i dW1 U - A U dt / 2`` (and likewise for V).

    In the real field the increments are skew-symmetric and enter without
    the factor ``i`` so that orthogonality is the preserved structure.
    """
    s = state.setup
    dt = cfg.dt if dt is None else dt
    N = s.N
    if noise:
        dW1, dW2 = flow_noise(s, dt, rng)
    else:
        dW1 = dW2 = np.zeros((N, N))
    if s.field == "complex":
        dW1, dW2 = 1j * dW1, 1j * dW2
    half_A = 0.5 * dt * s.drift.A if cfg.compensate else np.zeros(N)
    G1 = dW1 - np.diag(half_A)
    G2 = dW2 - np.diag(half_A)
    # Frobenius norm bounds the operator norm; refine only when it is large
    size = max(np.linalg.norm(G1), np.linalg.norm(G2))
    if size >= cfg.max_step_deviation:
        size = max(np.linalg.norm(G1, 2), np.linalg.norm(G2, 2))
    if size >= cfg.max_step_deviation:
        raise StepRejected(f"step generator has norm {size:.3g}; reduce dt")
    U = state.U + G1 @ state.U
    V = state.V + G2 @ state.V
    dev = max(unitarity_deviation(U), unitarity_deviation(V))
    if cfg.project:
        U, V = _project(U), _project(V)
    t = state.t + dt
    if abs(t - s.tau) <= 1e-12 * s.tau:
        t = s.tau
    M = s.core + U.conj().T @ (s.y[:, None] * V)
    M_hat = M + (s.tau - t) * s.frozen
    return MatrixFlowState(t, U, V, M, M_hat, s, dev,
                           max(unitarity_deviation(U), unitarity_deviation(V)))


def matrix_flow_run(sample: ModelSample, cfg: FlowConfig, rng: np.random.Generator,
                    stride: int = 0, noise: bool = True,
                    track_remainder: bool = True) -> MatrixFlowResult:
    """Run the matrix flow on ``[0, tau]``.

    ``stride > 0`` keeps every ``stride``-th state (plus the endpoints).
    ``track_remainder`` accumulates ``int ||U* A_hat V - U*(0) A_hat V(0)|| dt``
    (one SVD per step); without it ``drift_remainder`` is NaN.
    """
    state = init_matrix_flow(sample, cfg)
    s = state.setup
    n = max(1, int(math.ceil(s.tau / cfg.dt - 1e-9)))
    kept = [state] if stride else []
    max_pre = max_post = 0.0
    remainder = 0.0
    for k in range(n):
        dt = min(cfg.dt, s.tau - state.t) if k < n - 1 else s.tau - state.t
        prev = state
        state = unitary_flow_step(state, cfg, rng, dt=dt, noise=noise)
        max_pre = max(max_pre, state.deviation_before_projection)
        max_post = max(max_post, state.deviation)
        if track_remainder:
            drift_now = prev.U.conj().T @ (s.drift.A_hat[:, None] * prev.V) - s.frozen
            remainder += dt * float(np.linalg.norm(drift_now, 2))
        if stride and ((k + 1) % stride == 0 or k == n - 1):
            kept.append(state)
    denom = max(np.linalg.norm(state.M), 1e-300)
    endpoint = float(np.linalg.norm(state.M_hat - state.M) / denom)
    return MatrixFlowResult(kept, state, max_pre, max_post, endpoint,
                            remainder if track_remainder else float("nan"))


def remainder_estimate(result: MatrixFlowResult, cfg: FlowConfig) -> dict:
    """Size of the neglected SDE remainder compared with the 1/N scale.

    The drift part is ``int_0^tau ||U* A_hat V - U*(0) A_hat V(0)|| dt``; the
    noise part is the standard deviation ``sqrt(tau * max_gamma / N)`` of the
    complement-restricted martingale, with gamma from the final state.
    """
    final = result.final
    s = final.setup
    sample = ModelSample(s.N, s.field, None, None, final.M, np.empty(0), U=final.U, V=final.V)
    table = overlaps(sample, s.index_set.complement)
    g = float(np.max(np.diag(table.gamma)))
    noise = math.sqrt(s.tau * g / s.N)
    return {
        "drift_remainder": result.drift_remainder,
        "noise_remainder_std": noise,
        "drift_remainder_times_N": result.drift_remainder * s.N,
        "noise_remainder_std_times_N": noise * s.N,
    }


# ---------------------------------------------------------------------------
# Particle system
# ---------------------------------------------------------------------------

@dataclass
class ParticleState:
    """Positive half ``0 < lambda_1 < ... < lambda_N`` of a symmetric system.

    ``gamma`` is a scalar or an (N, N) symmetric table; ``alpha`` scales it
    and ``cap`` (if set) clamps it from above.
    """

    t: float
    lam: np.ndarray
    field: str = "complex"
    gamma: object = 0.0
    alpha: float = 1.0
    cap: Optional[float] = None
    repairs: int = 0
    substeps: int = 0

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=float)
        if self.field not in FIELDS:
            raise ValueError(f"field must be one of {FIELDS}")

    @property
    def N(self) -> int:
        return self.lam.size

    def full(self) -> np.ndarray:
        """All ``2N`` positions ``lambda_{-N}, ..., lambda_{-1}, lambda_1, ..., lambda_N``."""
        return np.concatenate([-self.lam[::-1], self.lam])

    @property
    def gamma_source(self) -> str:
        return "table" if np.ndim(self.gamma) == 2 else "constant"


def _coefficients(state: ParticleState) -> np.ndarray:
    N = state.N
    g = np.broadcast_to(np.asarray(state.gamma, dtype=float), (N, N))
    if state.cap is not None:
        g = np.minimum(g, state.cap)
    return 1.0 - state.alpha * g


def particle_drift(lam, coef, field: str) -> np.ndarray:
    """Drift of the positive half.

    ``(1/2N) [sum_{j != i} c_ij / (l_i - l_j) + sum_{j != i} c_ij / (l_i + l_j)
    + c_ii / (2 l_i)]``, the last term only in the complex field.
    """
    N = lam.size
    diff = lam[:, None] - lam[None, :]
    np.fill_diagonal(diff, np.inf)
    tot = lam[:, None] + lam[None, :]
    np.fill_diagonal(tot, np.inf)
    s = (coef / diff).sum(axis=1) + (coef / tot).sum(axis=1)
    if field == "complex":
        s = s + np.diagonal(coef) / (2 * lam)
    return s / (2 * N)


def _gaps(lam, field):
    # without the mirror interaction lambda_1 may touch 0 and is reflected
    left = np.empty_like(lam)
    left[0] = 2 * abs(lam[0]) if field == "complex" else np.inf
    left[1:] = np.diff(lam)
    right = np.empty_like(lam)
    right[:-1] = np.diff(lam)
    right[-1] = np.inf
    return np.minimum(left, right)


def _advance(lam, dB, dt, coef, field, cfg, rng, depth, counter):
    """Euler step with Brownian increment ``dB``; bisect via bridges if too large."""
    N = lam.size
    move = particle_drift(lam, coef, field) * dt + dB / math.sqrt(2 * N)
    gaps = _gaps(lam, field)
    too_big = np.any(np.abs(move) > cfg.gap_fraction * gaps)
    if too_big and depth < cfg.max_substep_depth:
        counter[0] += 1
        half = 0.5 * dt
        first = 0.5 * dB + math.sqrt(dt / 4) * rng.standard_normal(N)
        lam = _advance(lam, first, half, coef, field, cfg, rng, depth + 1, counter)
        return _advance(lam, dB - first, half, coef, field, cfg, rng, depth + 1, counter)
    new = np.abs(lam + move)
    if np.any(np.diff(new) < 0):
        counter[1] += 1
        new = np.sort(new)
    if N > 0 and min(new[0] * 2 if field == "complex" else np.inf,
                     np.min(np.diff(new)) if N > 1 else np.inf) < cfg.collision_floor:
        raise CollisionError(f"particles collided at depth {depth}")
    return new


def _particle_step(state: ParticleState, cfg: FlowConfig, rng, dB=None, dt=None):
    dt = cfg.dt if dt is None else dt
    N = state.N
    if dB is None:
        dB = rng.standard_normal(N) * math.sqrt(dt)
    counter = [0, 0]
    lam = _advance(state.lam, dB, dt, _coefficients(state), state.field, cfg, rng, 0, counter)
    return replace(state, t=state.t + dt, lam=lam,
                   repairs=state.repairs + counter[1], substeps=state.substeps + counter[0])


def sv_sde_step(state: ParticleState, cfg: FlowConfig, rng: np.random.Generator,
                dB=None, dt=None) -> ParticleState:
    """One step of the singular-value SDE with coefficients ``1 - gamma``.

    The remainder term is not simulated.  ``dB`` (variance ``dt`` per entry)
    may be supplied to share noise between coupled runs.
    """
    return _particle_step(replace(state, alpha=1.0, cap=None), cfg, rng, dB, dt)


def interpolating_step(state: ParticleState, alpha: float, cfg: FlowConfig,
                       rng: np.random.Generator, dB=None, dt=None) -> ParticleState:
    """Step with coefficients ``1 - alpha * min(gamma, N**-c)``."""
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    return _particle_step(replace(state, alpha=alpha, cap=cfg.gamma_cap), cfg, rng, dB, dt)


def reference_step(state: ParticleState, cfg: FlowConfig, rng, dB=None, dt=None) -> ParticleState:
    return _particle_step(replace(state, gamma=0.0), cfg, rng, dB, dt)


@dataclass
class Trajectory:
    t: np.ndarray
    lam: np.ndarray          # (n_saved, N) positive halves
    repairs: int
    substeps: int

    def to_csv(self, path) -> None:
        N = self.lam.shape[1]
        header = ",".join(["t"] + [f"lambda_{i + 1}" for i in range(N)])
        with open(path, "w", newline="\n") as fh:
            fh.write(header + "\n")
            for t, row in zip(self.t, self.lam):
                fh.write(",".join([repr(float(t))] + [repr(float(v)) for v in row]) + "\n")


def particle_run(state: ParticleState, cfg: FlowConfig, rng: np.random.Generator,
                 T: Optional[float] = None, stride: int = 1, step=sv_sde_step,
                 gamma_provider: Optional[Callable[[float], np.ndarray]] = None,
                 refresh_every: int = 0) -> Trajectory:
    """Integrate a particle system up to time ``T`` (default ``tau``).

    With ``gamma_provider`` and ``refresh_every > 0`` the gamma table is
    replaced every ``refresh_every`` steps.
    """
    T = cfg.tau if T is None else T
    n = max(1, int(math.ceil(T / cfg.dt - 1e-9)))
    times, rows = [state.t], [state.lam.copy()]
    for k in range(n):
        if gamma_provider is not None and refresh_every and k % refresh_every == 0:
            state = replace(state, gamma=gamma_provider(state.t))
        dt = cfg.dt if k < n - 1 else T - cfg.dt * (n - 1)
        state = step(state, cfg, rng, dt=dt)
        if (k + 1) % stride == 0 or k == n - 1:
            times.append(state.t)
            rows.append(state.lam.copy())
    return Trajectory(np.array(times), np.array(rows), state.repairs, state.substeps)


def reference_dbm_run(initial, cfg: FlowConfig, rng: np.random.Generator,
                      T: Optional[float] = None, stride: int = 1) -> Trajectory:
    """Symmetrized Dyson Brownian motion with unit repulsion from ``initial``."""
    lam = np.asarray(initial, dtype=float)
    if lam.size > 1 and np.any(np.diff(lam) <= 0) or np.any(lam <= 0):
        raise ValueError("initial positions must be positive and strictly increasing")
    state = ParticleState(0.0, lam, cfg.field, 0.0)
    return particle_run(state, cfg, rng, T, stride, step=reference_step)


def coupled_comparison(initial, gamma, cfg: FlowConfig, rng: np.random.Generator,
                       T: Optional[float] = None) -> dict:
    """Run the gamma-weighted SDE and the reference process on shared noise.

    Returns the maximal ``|lambda_i - mu_i|`` over time and indices, also in
    units of ``1/N``.
    """
    T = cfg.tau if T is None else T
    lam = np.asarray(initial, dtype=float)
    a = ParticleState(0.0, lam, cfg.field, gamma)
    b = ParticleState(0.0, lam, cfg.field, 0.0)
    n = max(1, int(math.ceil(T / cfg.dt - 1e-9)))
    worst = 0.0
    for k in range(n):
        dt = cfg.dt if k < n - 1 else T - cfg.dt * (n - 1)
        dB = rng.standard_normal(lam.size) * math.sqrt(dt)
        seed = int(rng.integers(2 ** 63))
        a = sv_sde_step(a, cfg, np.random.default_rng(seed), dB=dB, dt=dt)
        b = reference_step(b, cfg, np.random.default_rng(seed), dB=dB, dt=dt)
        worst = max(worst, float(np.max(np.abs(a.lam - b.lam))))
    return {"max_abs_diff": worst, "max_abs_diff_times_N": worst * lam.size,
            "repairs": a.repairs + b.repairs}


def gamma_table(sample: ModelSample, index_set: IndexSet, convention: str = "symmetric") -> np.ndarray:
    """Symmetric gamma table over all singular-value pairs of ``sample``."""
    return overlaps(sample, index_set.complement, convention=convention).gamma
