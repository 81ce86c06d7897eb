"""Dense tensors, CP decompositions and the shared linear algebra around them.

Indices are 0-based throughout the code base.  A CP decomposition stores
``d`` factor matrices of shape ``(n_k, r)`` plus a length-``r`` weight vector,
so that

    T[i_1, ..., i_d] = sum_l  w[l] * A1[i_1, l] * ... * Ad[i_d, l].
"""
from __future__ import annotations

from dataclasses import dataclass
from math import prod
from typing import Sequence

import numpy as np

from .errors import CapacityError, RankError, ShapeError, UndefinedCoherenceError

#: Largest number of entries :func:`materialize` will allocate.
MAX_DENSE_ENTRIES = 10**8

#: Relative singular-value cutoff used for every numerical rank decision.
RANK_RTOL = 1e-10
#: Below this many entries relative errors are computed on the materialized
#: difference, which avoids the cancellation floor of the Gram formula.
EXACT_ERROR_ENTRIES = 10**6


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DenseTensor:
    """An order-``d`` (``d >= 2``) real array held in memory."""

    data: np.ndarray

    def __post_init__(self):
        data = _frozen(self.data)
        if data.ndim < 2:
            raise ShapeError(f"a tensor needs at least 2 modes, got {data.ndim}")
        if any(n < 1 for n in data.shape):
            raise ShapeError(f"all dimensions must be positive, got {data.shape}")
        object.__setattr__(self, "data", data)

    @classmethod
    def from_values(cls, shape: Sequence[int], values) -> "DenseTensor":
        """Build from a flat row-major value list."""
        values = np.asarray(values, dtype=float).ravel()
        if values.size != prod(shape):
            raise ShapeError(
                f"{values.size} values do not fill a tensor of shape {tuple(shape)}"
            )
        return cls(values.reshape(tuple(int(n) for n in shape)))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def values(self) -> np.ndarray:
        """Row-major flat view of the entries."""
        return self.data.ravel()

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


@dataclass(frozen=True, eq=False)
class CPDecomposition:
    """Factor matrices and weights of a CP (CANDECOMP/PARAFAC) model.

    Instances are immutable; the arrays are copied and marked read-only.
    Use :func:`canonicalize` to obtain the canonical representative
    (unit columns, magnitude in the weights, weights sorted by magnitude).
    """

    factors: tuple
    weights: np.ndarray

    def __post_init__(self):
        factors = tuple(_frozen(A) for A in self.factors)
        if len(factors) < 2:
            raise ShapeError(f"a CP decomposition needs at least 2 factors, got {len(factors)}")
        for k, A in enumerate(factors):
            if A.ndim != 2:
                raise ShapeError(f"factor {k} is not a matrix (ndim={A.ndim})")
        r = factors[0].shape[1]
        if any(A.shape[1] != r for A in factors):
            cols = [A.shape[1] for A in factors]
            raise ShapeError(f"factor matrices disagree on the number of columns: {cols}")
        weights = _frozen(self.weights).ravel()
        weights.setflags(write=False)
        if weights.shape != (r,):
            raise ShapeError(f"expected {r} weights, got {weights.shape[0]}")
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_factors(cls, factors, weights=None) -> "CPDecomposition":
        factors = [np.asarray(A, dtype=float) for A in factors]
        if weights is None:
            weights = np.ones(factors[0].shape[1] if factors else 0)
        return cls(tuple(factors), weights)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(A.shape[0] for A in self.factors)

    @property
    def ndim(self) -> int:
        return len(self.factors)

    @property
    def rank(self) -> int:
        return int(self.weights.shape[0])

    @property
    def size(self) -> int:
        return prod(self.shape)

    def entries(self, indices) -> np.ndarray:
        return cp_entries(self, indices)

    def to_dense(self, max_entries: int = MAX_DENSE_ENTRIES) -> DenseTensor:
        return materialize(self, max_entries=max_entries)

    def canonical(self) -> "CPDecomposition":
        return canonicalize(self)

    def norm(self) -> float:
        return float(np.sqrt(max(cp_inner(self, self), 0.0)))


def _check_index(shape, idx):
    idx = tuple(int(i) for i in idx)
    if len(idx) != len(shape):
        raise IndexError(f"index {idx} has {len(idx)} coordinates, tensor has {len(shape)} modes")
    for k, (i, n) in enumerate(zip(idx, shape)):
        if not 0 <= i < n:
            raise IndexError(f"coordinate {i} out of range [0, {n}) in mode {k}")
    return idx


def check_indices(shape, indices) -> np.ndarray:
    """Validate an ``(N, d)`` integer index array against ``shape``."""
    indices = np.asarray(indices)
    if indices.ndim == 1:
        indices = indices.reshape(1, -1) if indices.size else indices.reshape(0, len(shape))
    if indices.shape[1] != len(shape):
        raise IndexError(f"indices have {indices.shape[1]} columns, tensor has {len(shape)} modes")
    indices = indices.astype(np.int64, copy=False)
    if indices.size:
        bad = (indices < 0) | (indices >= np.asarray(shape))
        if bad.any():
            row = int(np.argwhere(bad.any(axis=1))[0, 0])
            raise IndexError(f"index {tuple(indices[row])} out of range for shape {tuple(shape)}")
    return indices


def cp_entry(dec: CPDecomposition, idx) -> float:
    """Single entry ``sum_l w_l prod_k A_k[i_k, l]``."""
    idx = _check_index(dec.shape, idx)
    term = dec.weights.copy()
    for A, i in zip(dec.factors, idx):
        term = term * A[i]
    return float(term.sum())


def cp_entries(dec: CPDecomposition, indices) -> np.ndarray:
    """Vectorized :func:`cp_entry` over an ``(N, d)`` index array."""
    indices = check_indices(dec.shape, indices)
    prods = np.broadcast_to(dec.weights, (indices.shape[0], dec.rank)).copy()
    for k, A in enumerate(dec.factors):
        prods *= A[indices[:, k]]
    return prods.sum(axis=1)


def materialize(dec: CPDecomposition, max_entries: int = MAX_DENSE_ENTRIES) -> DenseTensor:
    """Expand a decomposition into a :class:`DenseTensor`."""
    size = dec.size
    if size > max_entries:
        raise CapacityError(f"tensor of shape {dec.shape} has {size} entries (limit {max_entries})")
    if dec.rank == 0:
        return DenseTensor(np.zeros(dec.shape))
    out = dec.factors[0] * dec.weights
    for A in dec.factors[1:]:
        # (prefix, r) x (n, r) -> (prefix * n, r), row-major
        out = (out[:, None, :] * A[None, :, :]).reshape(-1, dec.rank)
    return DenseTensor(out.sum(axis=1).reshape(dec.shape))


def khatri_rao(A, B) -> np.ndarray:
    """Column-wise Kronecker product; row ``i1 * n2 + i2`` holds ``A[i1] * B[i2]``."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise ShapeError(f"khatri_rao needs matrices with equal column counts, got {A.shape} and {B.shape}")
    return (A[:, None, :] * B[None, :, :]).reshape(-1, A.shape[1])


def numerical_rank(s, rtol: float = RANK_RTOL) -> int:
    """Count singular values above ``rtol * max(s)``."""
    s = np.asarray(s)
    if s.size == 0 or s[0] <= 0:
        return 0
    return int(np.count_nonzero(s > rtol * s.max()))


def coherence(M, rtol: float = RANK_RTOL) -> float:
    """Coherence ``(n / r) * max_i ||P_U e_i||^2`` of the column space of ``M``.

    Rank-deficient inputs use their numerical rank in place of the column count.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    rank = numerical_rank(s, rtol)
    if rank == 0:
        raise UndefinedCoherenceError("coherence of the zero matrix is undefined")
    leverage = np.sum(U[:, :rank] ** 2, axis=1)
    return float(M.shape[0] / rank * leverage.max())


def _check_same_shape(a: CPDecomposition, b: CPDecomposition):
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def cp_inner(a: CPDecomposition, b: CPDecomposition) -> float:
    """Frobenius inner product of two CP tensors without materializing them."""
    _check_same_shape(a, b)
    if a.rank == 0 or b.rank == 0:
        return 0.0
    gram = np.ones((a.rank, b.rank))
    for A, B in zip(a.factors, b.factors):
        gram *= A.T @ B
    return float(a.weights @ gram @ b.weights)


def cp_rel_error(truth: CPDecomposition, est: CPDecomposition) -> float:
    """Relative Frobenius error ``||T - T_hat|| / ||T||``.

    Small tensors are compared entrywise.  Larger ones use the Gram identity
    ``||T||^2 - 2<T, T_hat> + ||T_hat||^2``, which is accurate only down to
    about ``sqrt(eps)`` relative error.
    """
    tt = cp_inner(truth, truth)
    if tt <= 0.0:
        raise ZeroDivisionError("relative error against a zero tensor")
    if truth.size <= EXACT_ERROR_ENTRIES:
        if truth.shape != est.shape:
            raise ShapeError(f"shape mismatch: {truth.shape} vs {est.shape}")
        diff = materialize(truth).data - materialize(est).data
        return float(np.linalg.norm(diff) / np.sqrt(tt))
    radicand = tt - 2.0 * cp_inner(truth, est) + cp_inner(est, est)
    return float(np.sqrt(max(radicand, 0.0) / tt))


def dense_rel_error(truth: DenseTensor, est: CPDecomposition) -> float:
    """Relative error of a CP estimate against an in-memory tensor."""
    if truth.shape != est.shape:
        raise ShapeError(f"shape mismatch: {truth.shape} vs {est.shape}")
    ref = truth.norm()
    if ref == 0.0:
        raise ZeroDivisionError("relative error against a zero tensor")
    return float(np.linalg.norm(truth.data - materialize(est).data) / ref)


def canonicalize(dec: CPDecomposition) -> CPDecomposition:
    """Unit-norm columns, signs and magnitudes pushed into the weights.

    Within each column the largest-magnitude entry is made positive, then
    components are sorted by non-increasing ``|weight|`` with ties broken
    lexicographically on the first factor's column.
    """
    r = dec.rank
    weights = dec.weights.copy()
    factors = []
    for A in dec.factors:
        A = A.copy()
        if r:
            norms = np.linalg.norm(A, axis=0)
            nz = norms > 0
            A[:, nz] /= norms[nz]
            weights = np.where(nz, weights * norms, 0.0)
            A[:, ~nz] = 0.0
            pivot = A[np.argmax(np.abs(A), axis=0), np.arange(r)]
            signs = np.where(pivot < 0, -1.0, 1.0)
            A *= signs
            weights = weights * signs
        factors.append(A)
    if r:
        keys = [factors[0][i] for i in range(factors[0].shape[0] - 1, -1, -1)]
        order = np.lexsort(keys + [-np.abs(weights)])
        factors = [A[:, order] for A in factors]
        weights = weights[order]
    return CPDecomposition(tuple(factors), weights)


def _unit_columns(A):
    A = np.asarray(A, dtype=float)
    norms = np.linalg.norm(A, axis=0)
    return A / np.where(norms > 0, norms, 1.0)


def greedy_column_matching(true_factors, est_factors) -> list[tuple[int, int]]:
    """Pair columns by greedily taking the largest product of |cosines| across modes."""
    r = true_factors[0].shape[1]
    score = np.ones((r, est_factors[0].shape[1]))
    for A, B in zip(true_factors, est_factors):
        score *= np.abs(_unit_columns(A).T @ _unit_columns(B))
    pairs = []
    score = score.copy()
    for _ in range(min(score.shape)):
        i, j = np.unravel_index(np.argmax(score), score.shape)
        pairs.append((int(i), int(j)))
        score[i, :] = -1.0
        score[:, j] = -1.0
    return sorted(pairs)


def column_match_error(true_factors, est_factors) -> float:
    """Largest ``||a_l - s * a_hat_pi(l)||`` over modes and matched columns.

    Columns are unit-normalized and each matched column's sign is aligned,
    so only directions are compared.  Used for partial results such as the
    ``(A1, A2)`` output of Jennrich's algorithm.
    """
    true_factors = [np.asarray(A, dtype=float) for A in true_factors]
    est_factors = [np.asarray(B, dtype=float) for B in est_factors]
    if len(true_factors) != len(est_factors):
        raise ShapeError("different number of factor matrices")
    for A, B in zip(true_factors, est_factors):
        if A.shape != B.shape:
            raise ShapeError(f"factor shape mismatch: {A.shape} vs {B.shape}")
    if true_factors[0].shape[1] == 0:
        return 0.0
    worst = 0.0
    for i, j in greedy_column_matching(true_factors, est_factors):
        for A, B in zip(true_factors, est_factors):
            a = _unit_columns(A[:, [i]])[:, 0]
            b = _unit_columns(B[:, [j]])[:, 0]
            s = 1.0 if a @ b >= 0 else -1.0
            worst = max(worst, float(np.linalg.norm(a - s * b)))
    return worst


def factor_match_error(truth: CPDecomposition, est: CPDecomposition) -> float:
    """Distance between two decompositions modulo permutation and rescaling.

    Both inputs are canonicalized, components are matched greedily by
    normalized correlation, per-mode signs are aligned, and the result is the
    largest of ``||a_l - a_hat_pi(l)||`` over modes and columns and the
    relative weight discrepancy ``|w_l - w_hat_pi(l)| / |w_l|``.  An optimal
    assignment could give a smaller value when columns are nearly tied.
    """
    if truth.rank != est.rank:
        raise RankError(f"rank mismatch: {truth.rank} vs {est.rank}")
    _check_same_shape(truth, est)
    if truth.rank == 0:
        return 0.0
    t = canonicalize(truth)
    e = canonicalize(est)
    worst = 0.0
    for i, j in greedy_column_matching(t.factors, e.factors):
        parity = 1.0
        for A, B in zip(t.factors, e.factors):
            s = 1.0 if A[:, i] @ B[:, j] >= 0 else -1.0
            parity *= s
            worst = max(worst, float(np.linalg.norm(A[:, i] - s * B[:, j])))
        w, w_hat = t.weights[i], parity * e.weights[j]
        scale = abs(w) if w != 0 else 1.0
        worst = max(worst, abs(w - w_hat) / scale)
    return worst
