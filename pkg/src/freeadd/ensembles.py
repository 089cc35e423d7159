"""Random matrix ensembles: Haar factors, the additive model, Ginibre baseline.

The model is ``M = R* X T + U* Y V`` with ``X, Y`` real nonnegative diagonal
and ``R, T, U, V`` independent Haar unitaries (or orthogonals).  Its singular
values coincide with the eigenvalues of the hermitization
``[[0, M], [M*, 0]]`` up to sign.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = [
    "FIELDS",
    "DiagonalData",
    "ModelSample",
    "HermitizedOperator",
    "OverlapTable",
    "sample_haar",
    "assemble_model",
    "least_singular_value",
    "hermitize",
    "green_diag",
    "resolvent",
    "overlaps",
    "sample_ginibre_reference",
    "min_gap",
    "regularize",
]

FIELDS = ("complex", "real")
DEGENERATE_GAP = 1e-12


def _check_field(field_name):
    if field_name not in FIELDS:
        raise ValueError(f"field must be one of {FIELDS}, got {field_name!r}")


@dataclass(frozen=True)
class DiagonalData:
    """Nonnegative diagonal entries with a declared upper bound."""

    entries: np.ndarray
    bound: Optional[float] = None

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float).ravel()
        if e.size == 0:
            raise ValueError("diagonal data must be nonempty")
        if not np.all(np.isfinite(e)) or np.any(e < 0):
            raise ValueError("diagonal entries must be finite and nonnegative")
        object.__setattr__(self, "entries", e)
        if self.bound is not None and e.max() > self.bound:
            raise ValueError(f"entry {e.max():g} exceeds declared bound {self.bound:g}")

    @classmethod
    def from_measure(cls, mu, N=None):
        """Entries from an atomic measure with ``N`` equal-weight atoms."""
        loc = np.asarray(mu.locations, dtype=float)
        if N is not None and loc.size != N:
            raise ValueError("measure does not have N atoms")
        return cls(np.sort(loc))

    def __len__(self):
        return self.entries.size

    @property
    def N(self) -> int:
        return self.entries.size


@dataclass
class ModelSample:
    N: int
    field: str
    X: Optional[DiagonalData]
    Y: Optional[DiagonalData]
    M: np.ndarray
    singular_values: np.ndarray
    R: Optional[np.ndarray] = None
    T: Optional[np.ndarray] = None
    U: Optional[np.ndarray] = None
    V: Optional[np.ndarray] = None
    J: Optional[np.ndarray] = None
    K: Optional[np.ndarray] = None

    @property
    def least_singular_value(self) -> float:
        return float(self.singular_values[0])

    def with_vectors(self) -> "ModelSample":
        """Compute ``M = J S K*`` with ascending ``S`` if not yet present."""
        if self.J is None:
            J, s, Kh = np.linalg.svd(self.M)
            order = np.argsort(s)
            self.J = J[:, order]
            self.K = Kh.conj().T[:, order]
            self.singular_values = s[order]
        return self


@dataclass(frozen=True)
class HermitizedOperator:
    """The 2N x 2N matrix ``[[0, B], [B*, 0]]`` held through ``B``."""

    B: np.ndarray

    @property
    def N(self) -> int:
        return self.B.shape[0]

    def dense(self) -> np.ndarray:
        N = self.N
        H = np.zeros((2 * N, 2 * N), dtype=np.result_type(self.B, np.float64))
        H[:N, N:] = self.B
        H[N:, :N] = self.B.conj().T
        return H

    def eigenvalues(self) -> np.ndarray:
        """Sorted ``{-s_N, ..., -s_1, s_1, ..., s_N}`` from an SVD of ``B``."""
        s = np.linalg.svd(self.B, compute_uv=False)
        return np.sort(np.concatenate([-s, s]))

    def svd(self):
        J, s, Kh = np.linalg.svd(self.B)
        return J, s, Kh.conj().T


@dataclass
class OverlapTable:
    W: np.ndarray
    Z: np.ndarray
    gamma: np.ndarray
    complement: np.ndarray
    convention: str = "symmetric"
    degenerate: bool = False


def sample_haar(N: int, field: str, rng: np.random.Generator) -> np.ndarray:
    """Haar unitary (``complex``) or orthogonal (``real``) matrix of size N.

    QR of a Gaussian matrix with the phases of ``diag(R)`` moved into ``Q``.
    """
    _check_field(field)
    if N < 1:
        raise ValueError("N must be at least 1")
    if field == "complex":
        G = (rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))) / np.sqrt(2)
    else:
        G = rng.standard_normal((N, N))
    Q, R = np.linalg.qr(G)
    d = np.diagonal(R)
    phase = d / np.abs(d)
    return Q * phase[None, :]


def _as_entries(D):
    return D.entries if isinstance(D, DiagonalData) else np.asarray(D, dtype=float)


def assemble_model(X, Y, field: str, rng: np.random.Generator,
                   vectors: bool = False) -> ModelSample:
    """Draw ``R, T, U, V`` and form ``M = R* X T + U* Y V``."""
    _check_field(field)
    X = X if isinstance(X, DiagonalData) else DiagonalData(X)
    Y = Y if isinstance(Y, DiagonalData) else DiagonalData(Y)
    if X.N != Y.N:
        raise ValueError("X and Y must have the same length")
    N = X.N
    R, T, U, V = (sample_haar(N, field, rng) for _ in range(4))
    M = R.conj().T @ (X.entries[:, None] * T) + U.conj().T @ (Y.entries[:, None] * V)
    sample = ModelSample(N, field, X, Y, M, np.empty(0), R, T, U, V)
    if vectors:
        sample.with_vectors()
    else:
        sample.singular_values = np.sort(np.linalg.svd(M, compute_uv=False))
    return sample


def least_singular_value(x, y, field: str, rng: np.random.Generator) -> float:
    """Least singular value of one model draw, using two Haar factors.

    ``R (R* X T + U* Y V) V* = X (T V*) + (R U*) Y`` and the two products are
    independent Haar, so the spectrum has the same law at half the cost.
    """
    x = _as_entries(x)
    y = _as_entries(y)
    N = x.size
    A = sample_haar(N, field, rng)
    B = sample_haar(N, field, rng)
    s = np.linalg.svd(x[:, None] * A + B * y[None, :], compute_uv=False)
    return float(s[-1])


def hermitize(B) -> HermitizedOperator:
    B = np.atleast_2d(np.asarray(B))
    if B.shape[0] != B.shape[1]:
        raise ValueError("B must be square")
    return HermitizedOperator(B)


def green_diag(op: HermitizedOperator, z) -> np.ndarray:
    """Diagonal of ``(H - z)^-1`` for the hermitization ``H``.

    Both diagonal blocks equal ``z (B B* - z^2)^-1`` and ``z (B* B - z^2)^-1``.
    """
    z = complex(z)
    if z.imag <= 0:
        raise ValueError("Im z must be positive")
    J, s, K = op.svd()
    f = z / (s ** 2 - z ** 2)
    top = (np.abs(J) ** 2) @ f
    bottom = (np.abs(K) ** 2) @ f
    return np.concatenate([top, bottom])


def resolvent(op: HermitizedOperator, z) -> np.ndarray:
    """Dense ``(H - z)^-1`` through the eigendecomposition of ``H``."""
    z = complex(z)
    if z.imag <= 0:
        raise ValueError("Im z must be positive")
    evals, vecs = np.linalg.eigh(op.dense())
    return (vecs / (evals - z)[None, :]) @ vecs.conj().T


def overlaps(sample: ModelSample, complement, indices=None,
             convention: str = "symmetric") -> OverlapTable:
    """Overlap vectors ``w = U j``, ``z = V k`` and the coefficients ``gamma``.

    Parameters
    ----------
    complement : (N, N) bool array
        ``complement[a, b]`` is True when the pair ``(a, b)`` enters the sum.
    indices : array of int, optional
        Singular-value indices (0-based, ascending order) to include.
    convention : {"symmetric", "asymmetric"}
        ``symmetric`` uses weights (1/2, 1/2) so that gamma is symmetric;
        ``asymmetric`` uses (1/2, 1).
    """
    sample.with_vectors()
    if sample.U is None or sample.V is None:
        raise ValueError("sample has no Haar factors U, V")
    C = np.asarray(complement, dtype=float)
    idx = np.arange(sample.N) if indices is None else np.asarray(indices)
    W = sample.U @ sample.J[:, idx]
    Z = sample.V @ sample.K[:, idx]
    W2 = np.abs(W) ** 2
    Z2 = np.abs(Z) ** 2
    S = W2.T @ C @ Z2  # S[al, be] = sum_ab |w_al(a)|^2 C_ab |z_be(b)|^2
    if convention == "symmetric":
        gamma = 0.5 * (S + S.T)
    elif convention == "asymmetric":
        gamma = 0.5 * S + S.T
    else:
        raise ValueError("convention must be 'symmetric' or 'asymmetric'")
    s = sample.singular_values[idx]
    degenerate = bool(min_gap(s) < DEGENERATE_GAP) if s.size > 1 else False
    return OverlapTable(W, Z, gamma, np.asarray(complement, dtype=bool), convention, degenerate)


def sample_ginibre_reference(N: int, field: str, rng: np.random.Generator,
                             vectors: bool = False) -> ModelSample:
    """``G / sqrt(N)`` with i.i.d. standard Gaussian entries (``E|g|^2 = 1``)."""
    _check_field(field)
    if N < 1:
        raise ValueError("N must be at least 1")
    if field == "complex":
        G = (rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))) / np.sqrt(2)
    else:
        G = rng.standard_normal((N, N))
    M = G / np.sqrt(N)
    sample = ModelSample(N, field, None, None, M, np.empty(0))
    if vectors:
        sample.with_vectors()
    else:
        sample.singular_values = np.sort(np.linalg.svd(M, compute_uv=False))
    return sample


def min_gap(values) -> float:
    v = np.sort(np.asarray(values, dtype=float))
    if v.size < 2:
        return float("inf")
    return float(np.min(np.diff(v)))


def regularize(X, rng: np.random.Generator, scale: float = 1e-12, force: bool = False) -> DiagonalData:
    """Split coincident entries of ``X`` with a tiny nonnegative perturbation.

    Only applied when two entries are closer than ``DEGENERATE_GAP`` (or when
    ``force`` is set); otherwise ``X`` is returned unchanged.
    """
    X = X if isinstance(X, DiagonalData) else DiagonalData(X)
    if not force and min_gap(X.entries) >= DEGENERATE_GAP:
        return X
    bump = scale * np.abs(rng.standard_normal(X.N))
    return DiagonalData(X.entries + bump, X.bound + scale * 10 if X.bound is not None else None)
