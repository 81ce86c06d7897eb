"""Masked alternating least squares over revealed entries."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse

from .tensor import CPDecomposition, canonicalize, check_indices

INITS = ("deli", "masked-svd")


@dataclass
class ALSConfig:
    iterations: int = 10
    init: str = "deli"
    ridge: float = 0.0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}, got {self.init!r}")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")


@dataclass
class ALSResult:
    decomposition: CPDecomposition
    objective: list[float] = field(default_factory=list)
    unobserved_rows: dict = field(default_factory=dict)


def _obs_arrays(obs, d):
    idx, vals = obs
    idx = np.asarray(idx, dtype=np.int64).reshape(-1, d)
    return idx, np.asarray(vals, dtype=float).ravel()


def masked_objective(factors, idx, vals) -> float:
    """Sum of squared residuals of the CP model on the observed entries."""
    pred = np.ones((idx.shape[0], factors[0].shape[1]))
    for k, A in enumerate(factors):
        pred = pred * A[idx[:, k]]
    return float(np.sum((pred.sum(axis=1) - vals) ** 2))


def masked_als_detailed(obs, init: CPDecomposition, cfg: ALSConfig | None = None) -> ALSResult:
    """Masked ALS returning the objective after every sweep (entry 0 is the start).

    Each factor row solves its own normal equations built from the observed
    entries in that row; rows without observations keep their current value
    and are listed in ``unobserved_rows``.
    """
    cfg = cfg or ALSConfig()
    d = init.ndim
    idx, vals = _obs_arrays(obs, d)
    idx = check_indices(init.shape, idx)
    r = init.rank
    factors = [A.copy() for A in init.factors]
    # weights ride along with the last factor during the sweeps
    factors[-1] = factors[-1] * init.weights
    history = [masked_objective(factors, idx, vals)]
    unobserved = {}
    for k in range(d):
        counts = np.bincount(idx[:, k], minlength=init.shape[k])
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            unobserved[k] = empty.tolist()
    for _ in range(cfg.iterations):
        for k in range(d):
            H = np.ones((idx.shape[0], r))
            for t, A in enumerate(factors):
                if t != k:
                    H *= A[idx[:, t]]
            nk = init.shape[k]
            G = np.zeros((nk, r, r))
            np.add.at(G, idx[:, k], H[:, :, None] * H[:, None, :])
            b = np.zeros((nk, r))
            np.add.at(b, idx[:, k], H * vals[:, None])
            if cfg.ridge:
                G += cfg.ridge * np.eye(r)
            rows = np.bincount(idx[:, k], minlength=nk) > 0
            sol = np.einsum("nij,nj->ni", np.linalg.pinv(G[rows], rcond=1e-12, hermitian=True), b[rows])
            factors[k][rows] = sol
        history.append(masked_objective(factors, idx, vals))
    dec = canonicalize(CPDecomposition.from_factors(factors, np.ones(r)))
    return ALSResult(dec, history, unobserved)


def masked_als(obs, init: CPDecomposition, cfg: ALSConfig | None = None) -> CPDecomposition:
    """Refine ``init`` by masked ALS on ``obs = (indices, values)``; canonical output."""
    return masked_als_detailed(obs, init, cfg).decomposition


def masked_svd_init(obs, shape, r: int) -> CPDecomposition:
    """Top-``r`` left singular vectors of each zero-filled unfolding, unit weights.

    The unfoldings stay sparse; only the ``n_k x n_k`` Gram matrices are formed.
    """
    shape = tuple(int(n) for n in shape)
    d = len(shape)
    idx, vals = _obs_arrays(obs, d)
    idx = check_indices(shape, idx)
    factors = []
    for k in range(d):
        if r > shape[k]:
            raise ValueError(f"rank {r} exceeds dimension {shape[k]} of mode {k + 1}")
        others = [t for t in range(d) if t != k]
        cols = np.ravel_multi_index(tuple(idx[:, others].T), tuple(shape[t] for t in others)) if idx.size else idx[:, 0]
        ncols = int(np.prod([shape[t] for t in others]))
        S = scipy.sparse.csr_matrix((vals, (idx[:, k], cols)), shape=(shape[k], ncols))
        gram = (S @ S.T).toarray()
        _, vecs = np.linalg.eigh(gram)
        factors.append(vecs[:, ::-1][:, :r].copy())
    return CPDecomposition.from_factors(factors, np.ones(r))
