"""Censored least squares for one factor matrix, and pivoted row selection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import RankError
from .sampling import SampleSet
from .tensor import RANK_RTOL, khatri_rao, numerical_rank

RECOVERED = "recovered"
RANK_DEFICIENT = "rank-deficient-system"


def select_pivot_rows(A1, A2, rtol: float = RANK_RTOL) -> SampleSet:
    """Pick ``r`` linearly independent rows of ``A1 ⊙ A2`` by pivoted QR.

    Returns the ``L`` sample set of ``(i1, i2)`` pairs in pivot order.
    """
    A1 = np.asarray(A1, dtype=float)
    A2 = np.asarray(A2, dtype=float)
    KR = khatri_rao(A1, A2)
    r = KR.shape[1]
    if r == 0:
        return SampleSet("L", np.zeros((0, 2), dtype=np.int64))
    if KR.shape[0] < r:
        raise RankError(f"A1 ⊙ A2 has {KR.shape[0]} rows, fewer than r = {r}")
    _, _, piv = scipy.linalg.qr(KR.T, mode="economic", pivoting=True)
    rows = piv[:r]
    s = np.linalg.svd(KR[rows], compute_uv=False)
    if s[-1] < rtol * s[0] or s[0] == 0:
        raise RankError(f"A1 ⊙ A2 has rank below {r} (selected block smallest singular value {s[-1]:.3g})")
    n2 = A2.shape[0]
    return SampleSet("L", np.column_stack(np.divmod(rows, n2)))


@dataclass
class CensoredLSResult:
    """Recovered factor rows, with a status per row.

    Rows whose design has rank below ``r`` are left at zero (unless the
    minimum-norm option was requested) and flagged ``rank-deficient-system``.
    """

    factor: np.ndarray
    recovered: np.ndarray
    residuals: np.ndarray
    distinct_systems: int

    @property
    def status(self) -> list[str]:
        return [RECOVERED if ok else RANK_DEFICIENT for ok in self.recovered]

    @property
    def all_recovered(self) -> bool:
        return bool(self.recovered.all())


def _as_arrays(obs):
    if isinstance(obs, tuple) and len(obs) == 2:
        idx, vals = obs
        idx = np.asarray(idx, dtype=np.int64).reshape(-1, 3)
        return idx, np.asarray(vals, dtype=float).ravel()
    arr = np.asarray(list(obs), dtype=float).reshape(-1, 4)
    return arr[:, :3].astype(np.int64), arr[:, 3]


def censored_least_squares(obs, A1, A2, n3: int, min_norm: bool = False, rtol: float = RANK_RTOL) -> CensoredLSResult:
    """Solve ``sum_l A1[i1,l] A2[i2,l] C[i3,l] = x`` for every row of ``C``.

    Parameters
    ----------
    obs : ``((N, 3) indices, (N,) values)`` or iterable of ``(i1, i2, i3, value)``
        Observed entries of the order-3 view.
    A1, A2 : array_like
        Known factors, ``(n1, r)`` and ``(n2, r)``.
    n3 : int
        Number of rows of the unknown factor.
    min_norm : bool
        Return the minimum-norm solution for rank-deficient rows (still
        flagged) instead of leaving them at zero.

    Slices sharing the same observed ``(i1, i2)`` pattern share one
    factorized design, so the pivot pattern ``L x [n3]`` costs one SVD.
    """
    A1 = np.asarray(A1, dtype=float)
    A2 = np.asarray(A2, dtype=float)
    r = A1.shape[1]
    if A2.shape[1] != r:
        raise ValueError(f"A1 has {r} columns, A2 has {A2.shape[1]}")
    n1, n2 = A1.shape[0], A2.shape[0]
    idx, vals = _as_arrays(obs)
    if idx.size:
        bad = (idx < 0) | (idx >= np.array([n1, n2, n3]))
        if bad.any():
            raise IndexError(f"observation {tuple(idx[bad.any(axis=1)][0])} outside {(n1, n2, n3)}")
    flat12 = idx[:, 0] * n2 + idx[:, 1]
    order = np.lexsort((flat12, idx[:, 2]))
    flat12, slices, vals = flat12[order], idx[order, 2], vals[order]
    bounds = np.searchsorted(slices, np.arange(n3 + 1))

    factor = np.zeros((n3, r))
    recovered = np.zeros(n3, dtype=bool)
    residuals = np.full(n3, np.nan)
    cache: dict[bytes, tuple[np.ndarray, int, np.ndarray]] = {}
    for i3 in range(n3):
        lo, hi = bounds[i3], bounds[i3 + 1]
        pattern = flat12[lo:hi]
        key = pattern.tobytes()
        if key not in cache:
            design = A1[pattern // n2] * A2[pattern % n2]
            if design.shape[0] == 0 or r == 0:
                cache[key] = (np.zeros((r, design.shape[0])), 0 if r else r, design)
            else:
                U, s, Vt = np.linalg.svd(design, full_matrices=False)
                k = numerical_rank(s, rtol)
                pinv = (Vt[:k].T / s[:k]) @ U[:, :k].T
                cache[key] = (pinv, k, design)
        pinv, rank, design = cache[key]
        b = vals[lo:hi]
        if rank == r:
            row = pinv @ b
            recovered[i3] = True
        elif min_norm:
            row = pinv @ b
        else:
            continue
        factor[i3] = row
        scale = max(float(np.linalg.norm(b)), np.finfo(float).tiny)
        residuals[i3] = float(np.linalg.norm(design @ row - b)) / scale if b.size else 0.0
    return CensoredLSResult(factor, recovered, residuals, len(cache))
