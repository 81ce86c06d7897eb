"""Jennrich's simultaneous-diagonalization algorithm for order-3 tensors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConditioningError, DegenerateSlicesError, PairingError
from .tensor import RANK_RTOL, DenseTensor, numerical_rank

#: Pairing slack for exact inputs and for noisy inputs.
PAIR_TOL_EXACT = 1e-6
PAIR_TOL_NOISY = 1e-2
#: Largest tolerated imaginary part of an eigenvalue, relative to its modulus.
IMAG_TOL = 1e-6
#: Eigenvalues closer than this (relative) cannot separate their eigenvectors.
SEPARATION_TOL = 1e-8


@dataclass
class JennrichResult:
    """Paired unit columns ``A1[:, l]`` and ``A2[:, l]`` of the recovered components.

    ``eigenvalues`` come from the mode-1 pencil and ``partner_eigenvalues``
    from the mode-2 pencil; for exact inputs their products are 1.
    """

    A1: np.ndarray
    A2: np.ndarray
    eigenvalues: np.ndarray
    partner_eigenvalues: np.ndarray
    pairing_residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def rank(self) -> int:
        return self.A1.shape[1]


def _real_eigs(M, label):
    vals, vecs = np.linalg.eig(M)
    bad = np.abs(vals.imag) > IMAG_TOL * np.maximum(np.abs(vals), np.finfo(float).tiny)
    if bad.any():
        raise ConditioningError(
            f"{label} pencil has complex eigenvalues {vals[bad].tolist()}; slices are ill-conditioned"
        )
    return vals.real, vecs.real


def _unit(A):
    return A / np.linalg.norm(A, axis=0)


def _pair(lam, mu, tol):
    """Greedy pairing of ``lam[i]`` with ``mu[j]`` minimizing ``|lam_i mu_j - 1|``."""
    cost = np.abs(np.outer(lam, mu) - 1.0)
    pairs = []
    work = cost.copy()
    for _ in range(lam.size):
        i, j = np.unravel_index(np.argmin(work), work.shape)
        if work[i, j] > tol:
            unpaired = sorted(set(range(lam.size)) - {p[0] for p in pairs})
            raise PairingError(
                f"eigenvalues {unpaired} have no reciprocal partner within {tol:g} "
                f"(best residual {work[i, j]:.3g})",
                indices=unpaired,
            )
        pairs.append((int(i), int(j), float(cost[i, j])))
        work[i, :] = np.inf
        work[:, j] = np.inf
    return pairs


def jennrich(
    X,
    r: int,
    seed=None,
    noisy: bool = False,
    pair_tol: float | None = None,
    rank_rtol: float = RANK_RTOL,
) -> JennrichResult:
    """Recover paired mode-1/mode-2 factor columns of an ``n1 x n2 x s`` tensor.

    The slices are compressed onto the top ``r'`` singular subspaces of the
    mode-1 and mode-2 unfoldings, where ``r'`` is their common numerical rank
    capped at ``r``.  Two Gaussian combinations ``X_u`` and ``X_v`` of the
    slices are formed; the eigenvectors of ``X_u X_v^+`` give the mode-1
    columns and those of ``(X_v X_u^+)^T`` the mode-2 columns, whose
    eigenvalues are reciprocal to their partners'.

    Raises
    ------
    DegenerateSlicesError
        Zero input, unfoldings of different rank, a singular compressed
        slice, or repeated eigenvalues (components that the slices cannot
        tell apart).
    PairingError
        Some eigenvalue has no reciprocal partner within ``pair_tol``.
    ConditioningError
        An eigenvalue is materially complex.
    """
    X = np.asarray(X.data if isinstance(X, DenseTensor) else X, dtype=float)
    if X.ndim != 3:
        raise ValueError(f"expected an order-3 array, got ndim={X.ndim}")
    n1, n2, s = X.shape
    if s < 2:
        raise ValueError("Jennrich's algorithm needs at least 2 slices")
    if pair_tol is None:
        pair_tol = PAIR_TOL_NOISY if noisy else PAIR_TOL_EXACT
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u = rng.standard_normal(s)
    v = rng.standard_normal(s)

    U, s1, _ = np.linalg.svd(X.reshape(n1, n2 * s), full_matrices=False)
    V, s2, _ = np.linalg.svd(X.transpose(1, 0, 2).reshape(n2, n1 * s), full_matrices=False)
    r1 = min(numerical_rank(s1, rank_rtol), r)
    r2 = min(numerical_rank(s2, rank_rtol), r)
    if r1 == 0:
        raise DegenerateSlicesError("all slices are zero")
    if r1 != r2:
        raise DegenerateSlicesError(f"mode-1 rank {r1} differs from mode-2 rank {r2}")
    rp = r1
    U, V = U[:, :rp], V[:, :rp]
    xu = U.T @ (X @ u) @ V
    xv = U.T @ (X @ v) @ V
    for name, m in (("X_u", xu), ("X_v", xv)):
        if numerical_rank(np.linalg.svd(m, compute_uv=False), rank_rtol) < rp:
            raise DegenerateSlicesError(f"compressed {name} has rank below {rp}")

    lam, P = _real_eigs(np.linalg.solve(xv.T, xu.T).T, "mode-1")
    mu, Q = _real_eigs(np.linalg.solve(xu, xv).T, "mode-2")
    if rp > 1:
        srt = np.sort(lam)
        gaps = np.diff(srt) / np.max(np.abs(srt))
        if gaps.min() < SEPARATION_TOL:
            raise DegenerateSlicesError(
                "repeated eigenvalues: some components have proportional slice weights"
            )
    pairs = _pair(lam, mu, pair_tol)
    pairs.sort(key=lambda p: lam[p[0]])
    ii = [p[0] for p in pairs]
    jj = [p[1] for p in pairs]
    return JennrichResult(
        A1=_unit(U @ P[:, ii]),
        A2=_unit(V @ Q[:, jj]),
        eigenvalues=lam[ii],
        partner_eigenvalues=mu[jj],
        pairing_residuals=np.array([p[2] for p in pairs]),
    )
