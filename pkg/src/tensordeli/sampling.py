"""Entry oracles with sample accounting, plus the sampling-pattern generators.

Every algorithm in this package reads tensor entries exclusively through an
:class:`EntryOracle`.  The oracle records each distinct index the first time
it is revealed, per phase label, so sample counts can be compared against the
bounds the algorithms promise.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from math import log, prod
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError
from .tensor import CPDecomposition, DenseTensor, check_indices, coherence, cp_entries, cp_inner

PHASES = ("slice-completion", "jennrich-region", "censored-ls", "als")

#: Tensors up to this many entries get an exact noise-norm correction.
EXACT_NOISE_LIMIT = 2_000_000


class SampleLedger:
    """Thread-safe record of revealed indices, per phase and overall."""

    def __init__(self):
        self._lock = threading.Lock()
        self._by_phase: dict[str, set[int]] = {}
        self._union: set[int] = set()

    def record(self, flat: Iterable[int], phase: str) -> None:
        flat = [int(i) for i in flat]
        with self._lock:
            self._by_phase.setdefault(phase, set()).update(flat)
            self._union.update(flat)

    @property
    def total(self) -> int:
        with self._lock:
            return len(self._union)

    def counts(self) -> dict[str, int]:
        with self._lock:
            return {phase: len(s) for phase, s in self._by_phase.items()}

    def flat_indices(self, phase: str | None = None) -> np.ndarray:
        with self._lock:
            chosen = self._union if phase is None else self._by_phase.get(phase, set())
            return np.array(sorted(chosen), dtype=np.int64)

    def snapshot(self) -> dict:
        counts = self.counts()
        return {"total": self.total, "by_phase": counts}


@dataclass(frozen=True)
class NoiseSpec:
    """Additive i.i.d. Gaussian noise scaled to a signal-to-noise ratio.

    ``snr_db = 20 * log10(||T|| / ||N||)``; ``None`` means noise-free.
    """

    snr_db: float | None = None
    seed: int = 0


_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = x + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def standard_normal_field(seed: int, flat: np.ndarray) -> np.ndarray:
    """Standard normal values that are a pure function of ``(seed, flat index)``."""
    flat = np.asarray(flat, dtype=np.uint64)
    key = _splitmix64(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))[0]
    with np.errstate(over="ignore"):
        h1 = _splitmix64(key ^ (flat * np.uint64(2)))
        h2 = _splitmix64(key ^ (flat * np.uint64(2) + np.uint64(1)))
    u1 = (h1 >> np.uint64(11)).astype(np.float64) * 2.0**-53
    u2 = (h2 >> np.uint64(11)).astype(np.float64) * 2.0**-53
    return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)


class EntryOracle:
    """Base class: the only channel through which tensor entries are read.

    Subclasses implement :meth:`_clean_values`.  Noise, when configured, is a
    deterministic function of the noise seed and the index, so repeated reads
    agree and re-reading a revealed entry is not counted again.
    """

    truth: CPDecomposition | None = None

    def __init__(self, shape: Sequence[int], signal_norm: float, noise: NoiseSpec | None = None):
        self._shape = tuple(int(n) for n in shape)
        self.noise = noise or NoiseSpec()
        self._ledger = SampleLedger()
        self.noise_scale = 0.0
        if self.noise.snr_db is not None:
            target = signal_norm * 10.0 ** (-self.noise.snr_db / 20.0)
            size = prod(self._shape)
            if size <= EXACT_NOISE_LIMIT:
                z = standard_normal_field(self.noise.seed, np.arange(size))
                self.noise_scale = target / float(np.linalg.norm(z))
            else:
                self.noise_scale = target / np.sqrt(size)

    @property
    def shape(self) -> tuple[int, ...]:
        return self._shape

    @property
    def ledger(self) -> SampleLedger:
        return self._ledger

    @property
    def noise_sigma(self) -> float:
        """Per-entry noise standard deviation (0 when noise-free)."""
        return self.noise_scale

    def _clean_values(self, indices: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _flat(self, indices: np.ndarray) -> np.ndarray:
        if indices.shape[0] == 0:
            return np.zeros(0, dtype=np.int64)
        return np.ravel_multi_index(tuple(indices.T), self._shape)

    def values(self, indices) -> np.ndarray:
        """Entry values without touching the ledger (internal use)."""
        indices = check_indices(self._shape, indices)
        vals = self._clean_values(indices)
        if self.noise_scale:
            vals = vals + self.noise_scale * standard_normal_field(self.noise.seed, self._flat(indices))
        return vals

    def query_many(self, indices, phase: str = "slice-completion") -> np.ndarray:
        indices = check_indices(self._shape, indices)
        vals = self.values(indices)
        self._ledger.record(self._flat(indices), phase)
        return vals

    def query(self, idx, phase: str = "slice-completion") -> float:
        return float(self.query_many(np.asarray([idx]), phase)[0])

    def revealed(self, phase: str | None = None) -> tuple[np.ndarray, np.ndarray]:
        """All revealed ``(indices, values)`` so far, sorted by flat index."""
        flat = self._ledger.flat_indices(phase)
        if flat.size == 0:
            return np.zeros((0, len(self._shape)), dtype=np.int64), np.zeros(0)
        indices = np.stack(np.unravel_index(flat, self._shape), axis=1)
        return indices, self.values(indices)


class CPOracle(EntryOracle):
    """Lazily evaluates a CP model; nothing is ever materialized."""

    def __init__(self, truth: CPDecomposition, noise: NoiseSpec | None = None):
        self.truth = truth
        super().__init__(truth.shape, np.sqrt(max(cp_inner(truth, truth), 0.0)), noise)

    def _clean_values(self, indices):
        return cp_entries(self.truth, indices)


class DenseOracle(EntryOracle):
    """Looks entries up in an in-memory :class:`DenseTensor`."""

    def __init__(self, tensor: DenseTensor, noise: NoiseSpec | None = None):
        self.tensor = tensor
        super().__init__(tensor.shape, tensor.norm(), noise)

    def _clean_values(self, indices):
        return self.tensor.data[tuple(indices.T)]


def cp_oracle(truth: CPDecomposition, noise: NoiseSpec | None = None) -> CPOracle:
    return CPOracle(truth, noise)


def dense_oracle(tensor: DenseTensor, noise: NoiseSpec | None = None) -> DenseOracle:
    return DenseOracle(tensor, noise)


# --------------------------------------------------------------------------
# sample sets

SAMPLE_LABELS = ("S", "Z", "Omega_M", "Omega", "L")


@dataclass
class SampleSet:
    """A labelled collection of index tuples.

    ``label`` is one of ``S`` (slice indices), ``Z`` (sub-tuples over the
    non-(1,2,k) modes, ``mode`` = k), ``Omega_M`` (dense-slice locations),
    ``Omega`` (fiber-region locations, ``mode`` = k) or ``L`` (pivot pairs).
    ``mode`` uses 1-based mode numbers, as written in files.
    """

    label: str
    indices: np.ndarray
    mode: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.label not in SAMPLE_LABELS:
            raise ValueError(f"unknown sample-set label {self.label!r}")
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim == 1:
            idx = idx.reshape(-1, 1)
        self.indices = idx

    def __len__(self):
        return self.indices.shape[0]

    def tuples(self) -> list[tuple[int, ...]]:
        return [tuple(int(v) for v in row) for row in self.indices]

    def to_lines(self) -> list[str]:
        prefix = self.label if self.mode is None else f"{self.label} {self.mode}"
        return [" ".join([prefix, *(str(int(v)) for v in row)]).rstrip() for row in self.indices]


def write_sample_sets(sets: Iterable[SampleSet], path) -> None:
    with open(path, "w") as fh:
        for ss in sets:
            if len(ss) == 0:
                fh.write(f"# empty {ss.label} {'' if ss.mode is None else ss.mode}\n")
            for line in ss.to_lines():
                fh.write(line + "\n")


def read_sample_sets(path) -> list[SampleSet]:
    """Parse the line format ``label [k] i1 i2 ...`` (0-based coordinates)."""
    groups: dict[tuple[str, int | None], list[list[int]]] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            label = parts[0]
            if label not in SAMPLE_LABELS:
                raise ParseError(f"unknown label {label!r}", line=lineno, offset=0)
            try:
                nums = [int(p) for p in parts[1:]]
            except ValueError:
                raise ParseError("non-integer coordinate", line=lineno) from None
            mode = None
            if label in ("Z", "Omega"):
                if not nums:
                    raise ParseError("missing mode number", line=lineno)
                mode, nums = nums[0], nums[1:]
            groups.setdefault((label, mode), []).append(nums)
    out = []
    for (label, mode), rows in groups.items():
        width = {len(r) for r in rows}
        if len(width) != 1:
            raise ParseError(f"ragged tuples in {label} {mode}")
        out.append(SampleSet(label, np.array(rows, dtype=np.int64).reshape(len(rows), width.pop()), mode))
    return out


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def draw_slice_set(n3: int, s: int, seed=None, explicit: Sequence[int] | None = None) -> SampleSet:
    """Pick ``s`` distinct mode-3 slice indices (or validate an explicit list)."""
    if explicit is not None:
        chosen = [int(i) for i in explicit]
        if len(set(chosen)) != len(chosen):
            raise ValueError(f"slice indices must be distinct: {chosen}")
        for i in chosen:
            if not 0 <= i < n3:
                raise IndexError(f"slice index {i} out of range [0, {n3})")
        return SampleSet("S", np.array(chosen, dtype=np.int64))
    if not 1 <= s <= n3:
        raise IndexError(f"cannot pick {s} slices out of {n3}")
    chosen = np.sort(_rng(seed).choice(n3, size=s, replace=False))
    return SampleSet("S", chosen)


def _distinct_tuples(dims: Sequence[int], m: int, rng: np.random.Generator) -> np.ndarray:
    total = prod(dims)
    if m > total:
        raise IndexError(f"cannot draw {m} distinct tuples from a product of size {total}")
    flat = rng.choice(total, size=m, replace=False)
    if not dims:
        return np.zeros((m, 0), dtype=np.int64)
    return np.stack(np.unravel_index(flat, tuple(dims)), axis=1).astype(np.int64)


def draw_z_sets(shape: Sequence[int], m: int, seed=None) -> list[SampleSet]:
    """Draw ``Z_k`` for every mode ``k >= 3``.

    ``Z_k`` holds ``m`` distinct tuples over the modes ``3..d`` except ``k``.
    For an order-3 tensor the product is empty and ``Z_3`` is the single empty
    tuple, so ``m`` is forced to 1.
    """
    d = len(shape)
    if d < 3:
        raise ValueError("Z sets need a tensor of order >= 3")
    if m < 1:
        raise ValueError("m must be positive")
    rng = _rng(seed)
    out = []
    for k in range(2, d):
        dims = [shape[t] for t in range(2, d) if t != k]
        count = 1 if not dims else m
        out.append(SampleSet("Z", _distinct_tuples(dims, count, rng), mode=k + 1))
    return out


def anchor_z_sets(shape: Sequence[int], anchors: Sequence[int]) -> list[SampleSet]:
    """Single-tuple ``Z_k`` sets built from fixed anchor indices ``i*_3..i*_d``."""
    d = len(shape)
    anchors = list(anchors)
    if len(anchors) != d - 2:
        raise ValueError(f"need {d - 2} anchor indices, got {len(anchors)}")
    for t, a in enumerate(anchors, start=2):
        if not 0 <= a < shape[t]:
            raise IndexError(f"anchor {a} out of range for mode {t + 1}")
    out = []
    for k in range(2, d):
        row = [anchors[t - 2] for t in range(2, d) if t != k]
        out.append(SampleSet("Z", np.array([row], dtype=np.int64).reshape(1, len(row)), mode=k + 1))
    return out


def draw_bernoulli_region(region: Sequence, p: float, seed=None, label: str = "Omega", mode=None) -> SampleSet:
    """Include each index of a product region independently with probability ``p``.

    ``region`` lists, per mode, the admissible coordinates (an int ``n`` means
    ``range(n)``).  ``p`` is clamped to ``[0, 1]``.
    """
    axes = [np.arange(a) if np.isscalar(a) else np.asarray(a, dtype=np.int64) for a in region]
    p = min(max(float(p), 0.0), 1.0)
    total = prod(len(a) for a in axes)
    rng = _rng(seed)
    if p >= 1.0:
        flat = np.arange(total)
    else:
        count = rng.binomial(total, p) if total else 0
        flat = np.sort(rng.choice(total, size=count, replace=False)) if count else np.zeros(0, dtype=np.int64)
    if total == 0 or flat.size == 0:
        return SampleSet(label, np.zeros((0, len(axes)), dtype=np.int64), mode, {"p": p, "region_size": total})
    local = np.unravel_index(flat, tuple(len(a) for a in axes))
    indices = np.stack([a[i] for a, i in zip(axes, local)], axis=1)
    return SampleSet(label, indices, mode, {"p": p, "region_size": total})


def slice_probability(mu0: float, r: int, n1: int, n2: int, c0: float = 2.0) -> float:
    """Dense-slice inclusion probability ``c0 mu0 r log^2(n1 + n2) / min(n1, n2)``, clamped."""
    return min(1.0, c0 * mu0 * r * log(n1 + n2) ** 2 / min(n1, n2))


def fiber_probability(mu0: float, r: int, n1: int, n2: int, nk: int, c3: float = 2.0) -> float:
    """Sparse-region inclusion probability ``c3 mu0^2 r^2 log(n_k) / (n1 n2)``, clamped."""
    return min(1.0, c3 * mu0**2 * r**2 * log(nk) / (n1 * n2))


def truth_mu0(truth: CPDecomposition) -> float:
    """Coherence bound from ground truth: the larger of mu(A1) and mu(A2)."""
    return max(coherence(truth.factors[0]), coherence(truth.factors[1]))


class SliceView:
    """Two-dimensional window onto an oracle: modes 1 and 2 free, the rest fixed.

    ``fixed`` lists the coordinates of modes ``3..d`` (empty for matrices).
    Reads go through the oracle under ``phase`` so they are counted.
    """

    def __init__(self, oracle: EntryOracle, fixed: Sequence[int] = (), phase: str = "slice-completion"):
        if len(fixed) != len(oracle.shape) - 2:
            raise ValueError(f"need {len(oracle.shape) - 2} fixed coordinates, got {len(fixed)}")
        self.oracle = oracle
        self.fixed = tuple(int(i) for i in fixed)
        self.phase = phase

    @property
    def shape(self) -> tuple[int, int]:
        return self.oracle.shape[0], self.oracle.shape[1]

    @property
    def noise_sigma(self) -> float:
        return self.oracle.noise_sigma

    def full_indices(self, rows, cols) -> np.ndarray:
        rows, cols = np.broadcast_arrays(np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))
        rest = np.broadcast_to(np.asarray(self.fixed, dtype=np.int64), (rows.size, len(self.fixed)))
        return np.column_stack([rows.ravel(), cols.ravel(), rest])

    def entries(self, rows, cols) -> np.ndarray:
        """Values at the paired positions ``(rows[j], cols[j])`` (broadcast)."""
        return self.oracle.query_many(self.full_indices(rows, cols), self.phase)
