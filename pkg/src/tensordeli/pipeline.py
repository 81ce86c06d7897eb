"""End-to-end completion pipelines.

Both pipelines share one skeleton:

1. complete ``s`` dense mode-(1,2) slices per ``Z_3`` tuple and run
   Jennrich's algorithm on them, pooling distinct ``(a1, a2)`` pairs until
   ``r`` components are known;
2. pick ``r`` pivot rows of ``A1 ⊙ A2``;
3. for every later mode ``k`` and every ``Z_k`` tuple, solve censored least
   squares on fibers through that tuple, filling only columns that are still
   unrecovered;
4. rescale the last mode so the per-column scales multiply to the weights.

The adaptive variant samples slices column by column and reads the pivot
fibers exactly; the nonadaptive variant draws every sample location up
front and uses nuclear-norm completion plus Bernoulli-sampled fibers.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import ceil, log
from pathlib import Path

import numpy as np

from .censored import censored_least_squares, select_pivot_rows
from .completion import AdaptiveMCConfig, NNMConfig, adaptive_complete, nnm_complete
from .errors import DeliError, OverRankError, RankOverflowError
from .io import write_cp
from .jennrich import JennrichResult, jennrich
from .sampling import (
    EntryOracle,
    SampleSet,
    SliceView,
    anchor_z_sets,
    draw_bernoulli_region,
    draw_slice_set,
    draw_z_sets,
    fiber_probability,
    slice_probability,
    truth_mu0,
)
from .tensor import CPDecomposition, canonicalize

VARIANTS = ("adaptive", "nonadaptive")

#: Fiber oversampling factor the nonadaptive variant uses when none is given.
NONADAPTIVE_OVERSAMPLE = 8.0


@dataclass
class DeliConfig:
    """Settings shared by both pipelines.

    ``gamma`` caps each dense slice at roughly ``gamma * n1 * n2`` samples.
    ``delta_oversample`` sets the fiber budget at about
    ``delta_oversample * r`` fibers: the adaptive variant reads that many
    ``(i1, i2)`` fibers (the ``r`` pivots plus random extras) and the
    nonadaptive variant caps its fiber probability at
    ``delta_oversample * r / (n1 * n2)``.  Left unset it means exactly ``r``
    pivot fibers (adaptive) and a factor of 8 (nonadaptive).  ``mu0 = None`` takes the coherence from the oracle's ground
    truth when it has one and the worst case ``max(n1, n2) / r`` otherwise.
    """

    r: int
    variant: str = "adaptive"
    s: int = 2
    m: int = 1
    z: float = 0.0
    mu0: float | None = None
    delta: float = 0.05
    c0: float = 2.0
    c3: float = 2.0
    probe_constant: float = 8.0
    seed: int | None = 0
    gamma: float | None = None
    delta_oversample: float | None = None
    zero_free: bool = False
    anchors: tuple | None = None
    slices: tuple | None = None
    noise_sigma: float | None = None
    merge_cos: float = 0.999
    zero_tol: float = 1e-6
    raw_output: bool = False
    workers: int = 1
    nnm: NNMConfig = field(default_factory=NNMConfig)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.s < 2:
            raise ValueError("s must be at least 2")
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if not 0 <= self.z < 1:
            raise ValueError("z must lie in [0, 1)")
        if self.r < 1:
            raise ValueError("r must be positive")
        if self.gamma is not None and not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")


def recommended_m(d: int, r: int, z: float, delta: float = 0.05) -> int:
    """Retry count keeping ``(d-2) r (1 - (1-z)^(d-3))^m`` below ``delta``."""
    if d <= 3 or z <= 0:
        return 1
    miss = 1.0 - (1.0 - z) ** (d - 3)
    return max(1, ceil(log((d - 2) * r / delta) / -log(miss)))


@dataclass
class CompletionReport:
    """Outcome of one pipeline run.

    ``column_recovered[k][l]`` says whether column ``l`` of factor ``k`` was
    recovered; ``provenance[k][l]`` is the ``Z_k`` tuple that recovered it
    (modes 3 onward only).  ``success`` holds only when all ``r`` components
    were found and every column of every factor was recovered.
    """

    decomposition: CPDecomposition
    variant: str
    r: int
    components_found: int
    column_recovered: list
    provenance: dict
    ledger: dict
    diagnostics: dict
    mu0: float
    mu0_source: str
    success: bool

    @property
    def samples_total(self) -> int:
        return int(self.ledger["total"])

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "r": self.r,
            "shape": list(self.decomposition.shape),
            "components_found": self.components_found,
            "success": self.success,
            "mu0": self.mu0,
            "mu0_source": self.mu0_source,
            "ledger": self.ledger,
            "column_recovered": self.column_recovered,
            "provenance": {str(k): v for k, v in self.provenance.items()},
            "weights": self.decomposition.weights.tolist(),
            "diagnostics": self.diagnostics,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    def write(self, directory) -> None:
        """Write ``report.json`` and the factor files into ``directory``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_cp(self.decomposition, directory)
        (directory / "report.json").write_text(self.to_json(indent=2) + "\n")


# --------------------------------------------------------------------------
# component pooling


def _merge(batches, r, cos_tol):
    pool1, pool2, source = [], [], []
    for b, res in enumerate(batches):
        for l in range(res.rank):
            a1, a2 = res.A1[:, l], res.A2[:, l]
            dup = any(
                abs(a1 @ p1) >= cos_tol * np.linalg.norm(a1) * np.linalg.norm(p1)
                and abs(a2 @ p2) >= cos_tol * np.linalg.norm(a2) * np.linalg.norm(p2)
                for p1, p2 in zip(pool1, pool2)
            )
            if dup:
                continue
            if len(pool1) >= r:
                raise OverRankError(f"more than r = {r} distinct components found; is r too small?")
            pool1.append(a1)
            pool2.append(a2)
            source.append(b)
    n1 = batches[0].A1.shape[0] if batches else 0
    n2 = batches[0].A2.shape[0] if batches else 0
    A1 = np.column_stack(pool1) if pool1 else np.zeros((n1, 0))
    A2 = np.column_stack(pool2) if pool2 else np.zeros((n2, 0))
    return A1, A2, source


def merge_components(batches: list[JennrichResult], r: int, cos_tol: float = 0.999):
    """Pool paired columns from several Jennrich runs, dropping duplicates.

    A pair is a duplicate when both of its columns have ``|cos| >= cos_tol``
    with the corresponding columns of a pair already pooled.
    """
    A1, A2, _ = _merge(batches, r, cos_tol)
    return A1, A2


# --------------------------------------------------------------------------
# shared helpers


def _resolve_mu0(oracle: EntryOracle, cfg: DeliConfig):
    if cfg.mu0 is not None:
        return float(cfg.mu0), "user"
    if oracle.truth is not None:
        return truth_mu0(oracle.truth), "truth"
    n1, n2 = oracle.shape[:2]
    return max(n1, n2) / cfg.r, "worst-case"


def _z_sets(shape, cfg, rng):
    d = len(shape)
    if cfg.zero_free:
        anchors = cfg.anchors if cfg.anchors is not None else (0,) * (d - 2)
        return anchor_z_sets(shape, anchors)
    return draw_z_sets(shape, cfg.m, rng)


def _full_index(k, ik, z, d):
    """Coordinates of modes 3..d given mode ``k``'s index and the Z_k tuple."""
    rest = list(z)
    rest.insert(k - 2, ik)
    assert len(rest) == d - 2
    return rest


def _jennrich_rounds(slice_stacks, cfg, rng, noisy, diag):
    """Run Jennrich on successive slice stacks until ``r`` components are pooled."""
    results: list[JennrichResult] = []
    rounds = []
    pooled = (None, None, [])
    for b, get_stack in enumerate(slice_stacks):
        jseed = rng.integers(2**63)
        entry = {"round": b}
        try:
            X = get_stack()
            res = jennrich(X, cfg.r, seed=jseed, noisy=noisy, rank_rtol=1e-6 if noisy else 1e-10)
        except (DeliError, np.linalg.LinAlgError) as exc:
            entry["error"] = f"{type(exc).__name__}: {exc}"
            rounds.append(entry)
            continue
        entry["components"] = res.rank
        entry["max_pairing_residual"] = float(res.pairing_residuals.max()) if res.rank else 0.0
        rounds.append(entry)
        results.append(res)
        pooled = _merge(results, cfg.r, cfg.merge_cos)
        if pooled[0].shape[1] >= cfg.r:
            break
    diag["jennrich_rounds"] = rounds
    return pooled


def _recover_modes(shape, A1, A2, L, z_sets, solve, cfg, sigma):
    """Censored-least-squares sweep over modes 3..d with R-set bookkeeping.

    ``solve(k, z)`` returns a :class:`CensoredLSResult` for mode ``k`` and
    tuple ``z``.
    """
    d = len(shape)
    rp = A1.shape[1]
    factors, recovered, provenance = {}, {}, {}
    for zs in z_sets:
        k = zs.mode - 1
        B = np.zeros((shape[k], rp))
        done = np.zeros(rp, dtype=bool)
        prov = [None] * rp
        for z in zs.tuples():
            if done.all():
                break
            res = solve(k, z)
            norms = np.linalg.norm(res.factor, axis=0)
            floor = cfg.zero_tol * norms.max() if norms.size else 0.0
            if sigma > 0 and res.noise_gain is not None:
                floor = max(floor, 3.0 * sigma * res.noise_gain * np.sqrt(shape[k]))
            ok = res.all_recovered & (norms > floor) & ~done
            B[:, ok] = res.factor[:, ok]
            for l in np.flatnonzero(ok):
                prov[l] = list(z)
            done |= ok
        factors[k], recovered[k], provenance[k] = B, done, prov
    # last-mode rescale: divide by the recovering tuple's entries in modes 3..d-1
    last = d - 1
    if d > 3:
        B = factors[last]
        for l in range(rp):
            if not recovered[last][l]:
                continue
            z = provenance[last][l]
            scale = np.prod([factors[t][z[t - 2], l] for t in range(2, last)])
            if scale != 0 and all(recovered[t][l] for t in range(2, last)):
                B[:, l] = B[:, l] / scale
            else:
                B[:, l] = 0.0
                recovered[last][l] = False
    return factors, recovered, provenance


def _finish(oracle, cfg, A1, A2, factors, recovered, provenance, mu0, mu0_source, diag):
    d = len(oracle.shape)
    rp = A1.shape[1]
    mats = [A1, A2] + [factors[k] for k in range(2, d)]
    dec = CPDecomposition.from_factors(mats, np.ones(rp))
    if not cfg.raw_output:
        dec = canonicalize(dec)
        # keep the recovery flags aligned with the canonical column order
        order = _canonical_order(mats, dec)
    else:
        order = list(range(rp))
    flags = [[True] * rp, [True] * rp] + [[bool(recovered[k][l]) for l in range(rp)] for k in range(2, d)]
    flags = [[f[l] for l in order] for f in flags]
    prov = {k + 1: [provenance[k][l] for l in order] for k in range(2, d)}
    success = rp == cfg.r and all(all(f) for f in flags)
    return CompletionReport(
        decomposition=dec,
        variant=cfg.variant,
        r=cfg.r,
        components_found=rp,
        column_recovered=flags,
        provenance=prov,
        ledger=oracle.ledger.snapshot(),
        diagnostics=diag,
        mu0=mu0,
        mu0_source=mu0_source,
        success=success,
    )


def _canonical_order(mats, dec):
    """Map canonical column positions back to the raw column indices."""
    raw = [A / np.where(np.linalg.norm(A, axis=0) > 0, np.linalg.norm(A, axis=0), 1.0) for A in mats]
    order, used = [], set()
    for j in range(dec.rank):
        score = np.ones(dec.rank)
        for A, C in zip(raw, dec.factors):
            score = score * np.abs(A.T @ C[:, j])
        for l in np.argsort(-score, kind="stable"):
            if int(l) not in used:
                used.add(int(l))
                order.append(int(l))
                break
    return order


def _empty_report(oracle, cfg, mu0, mu0_source, diag):
    d = len(oracle.shape)
    A1 = np.zeros((oracle.shape[0], 0))
    A2 = np.zeros((oracle.shape[1], 0))
    factors = {k: np.zeros((oracle.shape[k], 0)) for k in range(2, d)}
    recovered = {k: np.zeros(0, dtype=bool) for k in range(2, d)}
    provenance = {k: [] for k in range(2, d)}
    return _finish(oracle, cfg, A1, A2, factors, recovered, provenance, mu0, mu0_source, diag)


class _FiberSolve:
    """Censored-LS result plus the noise gain ``||pinv(design)||`` of the pivot design."""

    def __init__(self, res, noise_gain=None):
        self.factor = res.factor
        self.all_recovered = res.all_recovered
        self.noise_gain = noise_gain
        self.distinct_systems = res.distinct_systems


def _map(fn, items, workers):
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# --------------------------------------------------------------------------
# adaptive


def _oversample_pairs(L: SampleSet, shape, cfg: DeliConfig, rng) -> SampleSet:
    """Extend the pivot pairs with random distinct pairs up to ``delta_oversample * r``."""
    factor = cfg.delta_oversample if cfg.delta_oversample is not None else 1.0
    n1, n2 = shape[:2]
    target = min(n1 * n2, max(len(L), ceil(factor * len(L))))
    if target == len(L):
        return L
    taken = set((L.indices[:, 0] * n2 + L.indices[:, 1]).tolist())
    rest = np.array([f for f in range(n1 * n2) if f not in taken], dtype=np.int64)
    extra = np.sort(rng.choice(rest, size=target - len(L), replace=False))
    rows = np.concatenate([L.indices, np.column_stack(np.divmod(extra, n2))])
    return SampleSet("L", rows)


def adaptive_deli(oracle: EntryOracle, cfg: DeliConfig) -> CompletionReport:
    """Adaptive completion of an order-``d >= 3`` tensor behind ``oracle``.

    With ``cfg.zero_free`` the ``Z_k`` sets are the single anchor tuple
    (``cfg.anchors``, default all zeros), which is the variant for factors
    without zero entries; otherwise ``m`` random tuples per mode are used.
    """
    shape = oracle.shape
    d = len(shape)
    if d < 3:
        raise ValueError("the pipelines need a tensor of order at least 3")
    rng = np.random.default_rng(cfg.seed)
    mu0, mu0_source = _resolve_mu0(oracle, cfg)
    sigma = cfg.noise_sigma if cfg.noise_sigma is not None else oracle.noise_sigma
    noisy = sigma > 0
    S = draw_slice_set(shape[2], cfg.s, rng, explicit=cfg.slices)
    z_sets = _z_sets(shape, cfg, rng)
    mc = AdaptiveMCConfig(
        mu0=max(mu0, 1.0), r=cfg.r, delta=cfg.delta, C=cfg.probe_constant, gamma=cfg.gamma, noise_sigma=sigma
    )
    diag = {"probe_count": mc.probe_count(shape[0]), "slices": S.indices.ravel().tolist()}

    def stack_for(z, seeds):
        def complete(job):
            i3, sd = job
            view = SliceView(oracle, [i3, *z], phase="slice-completion")
            return adaptive_complete(view, mc, seed=sd).matrix

        def build():
            mats = _map(complete, list(zip(S.indices.ravel().tolist(), seeds)), cfg.workers)
            return np.stack(mats, axis=2)

        return build

    z3 = z_sets[0].tuples()
    stacks = [stack_for(z, rng.integers(2**63, size=cfg.s)) for z in z3]
    try:
        A1, A2, _ = _jennrich_rounds(stacks, cfg, rng, noisy, diag)
    except RankOverflowError as exc:
        diag["error"] = str(exc)
        return _empty_report(oracle, cfg, mu0, mu0_source, diag)
    if A1 is None or A1.shape[1] == 0:
        return _empty_report(oracle, cfg, mu0, mu0_source, diag)

    L = select_pivot_rows(A1, A2)
    diag["pivots"] = L.indices.tolist()
    L = _oversample_pairs(L, shape, cfg, rng)
    design = A1[L.indices[:, 0]] * A2[L.indices[:, 1]]
    gain = 1.0 / np.linalg.svd(design, compute_uv=False)[-1]

    def solve(k, z):
        nk = shape[k]
        ik = np.repeat(np.arange(nk), len(L))
        pairs = np.tile(L.indices, (nk, 1))
        rest = np.array([_full_index(k, i, z, d) for i in range(nk)], dtype=np.int64)
        rest = np.repeat(rest, len(L), axis=0)
        idx = np.column_stack([pairs, rest])
        vals = oracle.query_many(idx, phase="censored-ls")
        res = censored_least_squares((np.column_stack([pairs, ik]), vals), A1, A2, nk)
        return _FiberSolve(res, gain)

    factors, recovered, provenance = _recover_modes(shape, A1, A2, L, z_sets, solve, cfg, sigma)
    return _finish(oracle, cfg, A1, A2, factors, recovered, provenance, mu0, mu0_source, diag)


# --------------------------------------------------------------------------
# nonadaptive


def sampling_probabilities(shape, r, mu0, cfg: DeliConfig) -> tuple[float, dict]:
    """Dense-slice probability and per-mode fiber probabilities after caps."""
    n1, n2 = shape[:2]
    p_slice = slice_probability(mu0, r, n1, n2, cfg.c0)
    if cfg.gamma is not None:
        p_slice = min(p_slice, cfg.gamma)
    p_fiber = {}
    for k in range(2, len(shape)):
        p = fiber_probability(mu0, r, n1, n2, shape[k], cfg.c3)
        oversample = cfg.delta_oversample if cfg.delta_oversample is not None else NONADAPTIVE_OVERSAMPLE
        p = min(p, oversample * r / (n1 * n2))
        p_fiber[k] = p
    return p_slice, p_fiber


def draw_nonadaptive_plan(shape, cfg: DeliConfig, mu0: float, rng) -> dict:
    """Draw every sample location used by the nonadaptive pipeline.

    Returns a dict with the slice set ``S``, the ``Z`` sets, the dense-slice
    locations (``Omega_M``) and the fiber-region locations per mode
    (``Omega``), each as full ``d``-coordinate index arrays.
    """
    d = len(shape)
    n1, n2 = shape[:2]
    S = draw_slice_set(shape[2], cfg.s, rng, explicit=cfg.slices)
    z_sets = _z_sets(shape, cfg, rng)
    p_slice, p_fiber = sampling_probabilities(shape, cfg.r, mu0, cfg)
    omega_m = []
    for z in z_sets[0].tuples():
        for i3 in S.indices.ravel():
            fixed = [[c] for c in [int(i3), *z]]
            omega_m.append(draw_bernoulli_region([n1, n2, *fixed], p_slice, rng, label="Omega_M"))
    omega = []
    for zs in z_sets:
        k = zs.mode - 1
        for z in zs.tuples():
            region = [n1, n2] + [[c] for c in _full_index(k, -1, z, d)]
            region[k] = shape[k]
            omega.append(draw_bernoulli_region(region, p_fiber[k], rng, label="Omega", mode=zs.mode))
    return {"S": S, "Z": z_sets, "Omega_M": omega_m, "Omega": omega, "p_slice": p_slice, "p_fiber": p_fiber}


def nonadaptive_deli(oracle: EntryOracle, cfg: DeliConfig) -> CompletionReport:
    """Nonadaptive completion: all locations are drawn before any entry is read.

    Dense-slice samples are recorded under the ``jennrich-region`` phase and
    fiber samples under ``censored-ls``.  Every later step works only with
    the values read at those locations; ``diagnostics["audit_passed"]``
    confirms that the ledger equals the predrawn set.
    """
    shape = oracle.shape
    d = len(shape)
    if d < 3:
        raise ValueError("the pipelines need a tensor of order at least 3")
    rng = np.random.default_rng(cfg.seed)
    mu0, mu0_source = _resolve_mu0(oracle, cfg)
    sigma = cfg.noise_sigma if cfg.noise_sigma is not None else oracle.noise_sigma
    plan = draw_nonadaptive_plan(shape, cfg, mu0, rng)
    dense_idx = np.concatenate([ss.indices for ss in plan["Omega_M"]])
    fiber_idx = np.concatenate([ss.indices for ss in plan["Omega"]])
    oracle.query_many(dense_idx, phase="jennrich-region")
    oracle.query_many(fiber_idx, phase="censored-ls")
    planned = np.unique(np.ravel_multi_index(tuple(np.concatenate([dense_idx, fiber_idx]).T), shape))
    obs_idx, obs_val = oracle.revealed()
    revealed_flat = np.ravel_multi_index(tuple(obs_idx.T), shape)
    diag = {
        "p_slice": plan["p_slice"],
        "p_fiber": {str(k + 1): p for k, p in plan["p_fiber"].items()},
        "slices": plan["S"].indices.ravel().tolist(),
        "planned_samples": int(planned.size),
        "audit_passed": bool(np.array_equal(np.sort(revealed_flat), planned)),
        "nnm": [],
    }
    # index the revealed entries by their coordinates in modes 3..d
    by_rest: dict[tuple, list[int]] = {}
    for row, rest in enumerate(map(tuple, obs_idx[:, 2:].tolist())):
        by_rest.setdefault(rest, []).append(row)

    nnm_cfg = cfg.nnm

    def slice_obs(rest):
        rows = by_rest.get(tuple(rest), [])
        return obs_idx[rows, 0], obs_idx[rows, 1], obs_val[rows]

    def stack_for(z):
        def complete(i3):
            res = nnm_complete(slice_obs([i3, *z]), shape[:2], nnm_cfg)
            diag["nnm"].append({"slice": [i3, *z], "iterations": res.iterations, "converged": res.converged})
            return res.matrix

        def build():
            mats = _map(complete, plan["S"].indices.ravel().tolist(), cfg.workers)
            return np.stack(mats, axis=2)

        return build

    stacks = [stack_for(z) for z in plan["Z"][0].tuples()]
    A1, A2, _ = _jennrich_rounds(stacks, cfg, rng, True, diag)
    if A1 is None or A1.shape[1] == 0:
        return _empty_report(oracle, cfg, mu0, mu0_source, diag)

    def solve(k, z):
        nk = shape[k]
        trip_idx, trip_val = [], []
        for ik in range(nk):
            i1, i2, v = slice_obs(_full_index(k, ik, z, d))
            trip_idx.append(np.column_stack([i1, i2, np.full(i1.size, ik)]))
            trip_val.append(v)
        res = censored_least_squares((np.concatenate(trip_idx), np.concatenate(trip_val)), A1, A2, nk)
        return _FiberSolve(res)

    factors, recovered, provenance = _recover_modes(shape, A1, A2, None, plan["Z"], solve, cfg, sigma)
    return _finish(oracle, cfg, A1, A2, factors, recovered, provenance, mu0, mu0_source, diag)


def run_pipeline(oracle: EntryOracle, cfg: DeliConfig) -> CompletionReport:
    """Dispatch on ``cfg.variant``."""
    return adaptive_deli(oracle, cfg) if cfg.variant == "adaptive" else nonadaptive_deli(oracle, cfg)


__all__ = [
    "DeliConfig",
    "CompletionReport",
    "adaptive_deli",
    "nonadaptive_deli",
    "run_pipeline",
    "merge_components",
    "recommended_m",
    "sampling_probabilities",
    "draw_nonadaptive_plan",
]
