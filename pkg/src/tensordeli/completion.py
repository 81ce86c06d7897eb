"""Slice completion engines.

* :func:`adaptive_complete` grows a basis of fully observed columns and fills
  every other column from a few probed entries (column-subspace sampling).
* :func:`nnm_complete` minimizes the nuclear norm subject to the observed
  entries with a Douglas-Rachford splitting whose proximal step is singular
  value thresholding.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from math import ceil, log

import numpy as np

from .errors import RankOverflowError
from .tensor import RANK_RTOL


@dataclass
class AdaptiveMCConfig:
    """Parameters of adaptive column-subspace completion.

    The probe count is ``min(ceil(C * mu0 * r * log(r / delta)), n1)``; a
    sample budget ``gamma`` (fraction of each column) caps it further but
    never below ``r``.
    """

    mu0: float
    r: int
    delta: float = 0.05
    C: float = 8.0
    gamma: float | None = None
    tau: float = 1e-8
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.r < 0:
            raise ValueError("rank must be non-negative")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.mu0 < 1:
            raise ValueError("mu0 must be at least 1")

    def probe_count(self, n1: int) -> int:
        r = max(self.r, 1)
        w = ceil(self.C * self.mu0 * r * log(max(r / self.delta, 1.0 + 1e-12)))
        w = min(max(w, r), n1)
        if self.gamma is not None:
            w = min(w, max(min(self.r, n1), int(self.gamma * n1)))
        return max(w, min(1, n1))


@dataclass
class AdaptiveMCResult:
    matrix: np.ndarray
    basis_columns: list[int]
    probe_count: int
    samples: int


def _residual_norm(basis_rows_pinv, basis_rows, probe):
    if basis_rows is None:
        return float(np.linalg.norm(probe)), None
    coeff = basis_rows_pinv @ probe
    return float(np.linalg.norm(probe - basis_rows @ coeff)), coeff


def adaptive_complete(view, cfg: AdaptiveMCConfig, seed=None) -> AdaptiveMCResult:
    """Complete a rank-``<= r`` matrix reachable through ``view.entries(rows, cols)``.

    Each column is probed on a random row subset ``Lambda``; if the probe lies
    in the span of the basis restricted to ``Lambda`` the column is filled as
    ``B pinv(B_Lambda) probe``, otherwise the whole column is read and joins
    the basis and ``Lambda`` is redrawn.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n1, n2 = view.shape
    w = cfg.probe_count(n1)
    sigma = cfg.noise_sigma or getattr(view, "noise_sigma", 0.0)
    out = np.zeros((n1, n2))
    basis = np.zeros((n1, 0))
    basis_cols: list[int] = []
    revealed: set[tuple[int, int]] = set()

    def draw():
        return np.sort(rng.choice(n1, size=w, replace=False))

    lam = draw()
    b_lam = b_pinv = None
    all_rows = np.arange(n1)
    for j in range(n2):
        probe = view.entries(lam, j)
        revealed.update((int(i), j) for i in lam)
        resid, coeff = _residual_norm(b_pinv, b_lam, probe)
        tol = cfg.tau * float(np.linalg.norm(probe))
        if sigma > 0:
            # basis columns are noisy too, so the slack grows with the coefficients
            gain = 1.0 + (float(coeff @ coeff) if coeff is not None else 0.0)
            tol = max(tol, 3.0 * sigma * np.sqrt(w * gain))
        if resid <= tol:
            if coeff is not None:
                out[:, j] = basis @ coeff
            continue
        if basis.shape[1] >= cfg.r:
            raise RankOverflowError(
                f"column {j} is outside the span of {basis.shape[1]} basis columns (rank bound {cfg.r})"
            )
        col = view.entries(all_rows, j)
        revealed.update((int(i), j) for i in all_rows)
        basis = np.column_stack([basis, col])
        basis_cols.append(j)
        out[:, j] = col
        lam = draw()
        b_lam = basis[lam]
        b_pinv = np.linalg.pinv(b_lam, rcond=RANK_RTOL)
    return AdaptiveMCResult(out, basis_cols, w, len(revealed))


@dataclass
class NNMConfig:
    """Stopping rule and step of the nuclear-norm solver."""

    max_iters: int = 10_000
    tol: float = 1e-8
    step: float | None = None
    relaxation: float = 1.5

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if not 0 < self.relaxation < 2:
            raise ValueError("relaxation must lie in (0, 2)")
        if self.step is not None and self.step <= 0:
            raise ValueError("step must be positive")


@dataclass
class NNMResult:
    matrix: np.ndarray
    iterations: int
    converged: bool
    primal: float
    dual: float
    gap: float
    fixed_point_residuals: list[float] = field(default_factory=list)


def _svt(Z, t):
    U, s, Vt = np.linalg.svd(Z, full_matrices=False)
    s = np.maximum(s - t, 0.0)
    k = int(np.count_nonzero(s))
    return (U[:, :k] * s[:k]) @ Vt[:k], float(s.sum())


def merge_observations(observed, shape):
    """Normalize ``observed`` to ``(rows, cols, values)`` with duplicates merged.

    Accepts an iterable of ``(i, j, value)`` triples or a tuple of three
    arrays.  Equal duplicates collapse; conflicting duplicates raise.
    """
    if isinstance(observed, tuple) and len(observed) == 3 and np.ndim(observed[0]) == 1:
        rows, cols, vals = (np.asarray(a) for a in observed)
    else:
        arr = np.asarray(list(observed), dtype=float).reshape(-1, 3)
        rows, cols, vals = arr[:, 0], arr[:, 1], arr[:, 2]
    rows = rows.astype(np.int64)
    cols = cols.astype(np.int64)
    vals = vals.astype(float)
    n1, n2 = shape
    if rows.size and (rows.min() < 0 or rows.max() >= n1 or cols.min() < 0 or cols.max() >= n2):
        raise IndexError(f"observed positions fall outside shape {shape}")
    flat = rows * n2 + cols
    order = np.argsort(flat, kind="stable")
    flat, vals = flat[order], vals[order]
    keep = np.ones(flat.size, dtype=bool)
    keep[1:] = flat[1:] != flat[:-1]
    dup = ~keep
    if dup.any():
        first = np.maximum.accumulate(np.where(keep, np.arange(flat.size), 0))
        if np.any(vals[dup] != vals[first[dup]]):
            bad = int(flat[dup][np.argmax(vals[dup] != vals[first[dup]])])
            raise ValueError(f"conflicting values observed at {divmod(bad, n2)}")
    flat, vals = flat[keep], vals[keep]
    return flat // n2, flat % n2, vals


def nnm_complete(observed, shape, cfg: NNMConfig | None = None) -> NNMResult:
    """Nuclear-norm completion of an ``n1 x n2`` matrix from observed entries.

    Douglas-Rachford iteration on ``min ||X||_* + indicator(X_Omega = b)``::

        X = SVT(Z, t);  W = reflect(X) onto the constraint set;  Z += rho (W - X)

    Convergence requires the primal residual (constraint violation), the dual
    residual (change in ``X``) and the nuclear-norm gap between ``X`` and its
    data-consistent version to all fall below ``cfg.tol``.  The returned
    matrix carries the observed values exactly.
    """
    cfg = cfg or NNMConfig()
    n1, n2 = shape
    rows, cols, b = merge_observations(observed, shape)
    mask = np.zeros((n1, n2), dtype=bool)
    mask[rows, cols] = True
    if mask.all() or not b.any():
        X = np.zeros((n1, n2))
        X[rows, cols] = b
        return NNMResult(X, 0, True, 0.0, 0.0, 0.0)
    b_norm = float(np.linalg.norm(b))
    t = cfg.step if cfg.step is not None else b_norm / np.sqrt(b.size)
    rho = cfg.relaxation
    Z = np.zeros((n1, n2))
    Z[mask] = b
    X_prev = None
    history: list[float] = []
    primal = dual = gap = np.inf
    Y = Z
    it = 0
    for it in range(1, cfg.max_iters + 1):
        X, nuc = _svt(Z, t)
        W = 2.0 * X - Z
        W[mask] = b
        step = rho * (W - X)
        Z = Z + step
        history.append(float(np.linalg.norm(step)))
        Y = X.copy()
        Y[mask] = b
        primal = float(np.linalg.norm(X[mask] - b)) / b_norm
        x_norm = max(float(np.linalg.norm(X)), np.finfo(float).tiny)
        dual = np.inf if X_prev is None else float(np.linalg.norm(X - X_prev)) / x_norm
        nuc_y = float(np.linalg.svd(Y, compute_uv=False).sum())
        gap = abs(nuc - nuc_y) / max(nuc_y, np.finfo(float).tiny)
        X_prev = X
        if primal < cfg.tol and dual < cfg.tol and gap < cfg.tol:
            return NNMResult(Y, it, True, primal, dual, gap, history)
    warnings.warn(f"nuclear-norm solver stopped after {it} iterations without converging", RuntimeWarning)
    return NNMResult(Y, it, False, primal, dual, gap, history)
