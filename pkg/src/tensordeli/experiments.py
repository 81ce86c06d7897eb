"""Synthetic experiment harness and the file-completion entry point."""
from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .als import ALSConfig, masked_als, masked_svd_init
from .errors import DeliError
from .io import is_cp_directory, read_cp, read_dense
from .pipeline import CompletionReport, DeliConfig, run_pipeline
from .sampling import NoiseSpec, cp_oracle, dense_oracle
from .tensor import CPDecomposition, cp_rel_error, dense_rel_error, factor_match_error

CSV_COLUMNS = (
    "variant", "n", "d", "r", "alpha", "snr_db", "gamma", "delta_oversample", "s", "m", "seed",
    "rel_error", "factor_error", "samples_total", "samples_fraction", "runtime_ms", "success",
)
#: Columns identifying one grid point; everything before ``seed``.
KEY_COLUMNS = CSV_COLUMNS[:10]


def generate_synthetic(n: int, d: int, r: int, alpha: float = 0.0, seed=None) -> CPDecomposition:
    """Random CP tensor with unit-norm Gaussian factor columns and weights ``l^-alpha``."""
    if min(n, d, r) < 1:
        raise ValueError("n, d and r must be positive")
    rng = np.random.default_rng(seed)
    factors = []
    for _ in range(d):
        A = rng.standard_normal((n, r))
        factors.append(A / np.linalg.norm(A, axis=0))
    weights = np.arange(1, r + 1, dtype=float) ** -float(alpha)
    return CPDecomposition.from_factors(factors, weights)


@dataclass
class RunConfig:
    """One experiment: generator, noise, pipeline and refinement settings.

    ``sweep`` maps field names to lists of values; every combination is a
    grid point run for ``trials`` trials.  Trial ``t`` always uses the random
    stream derived from ``(seed_base, t)``, so grid points share their
    synthetic tensors whenever the generator settings agree.
    """

    n: int = 30
    d: int = 3
    r: int = 3
    alpha: float = 0.0
    snr_db: float | None = None
    variant: str = "adaptive"
    s: int = 2
    m: int = 1
    z: float = 0.0
    mu0: float | None = None
    delta: float = 0.05
    c0: float = 2.0
    c3: float = 2.0
    gamma: float | None = None
    delta_oversample: float | None = None
    zero_free: bool = False
    als_iters: int = 0
    als_init: str = "deli"
    trials: int = 10
    seed_base: int = 0
    workers: int = 1
    timing: bool = True
    sweep: dict = field(default_factory=dict)
    output: str | None = None
    summary: str | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        names = {f.name for f in dataclasses.fields(self)} - {"sweep", "output", "summary"}
        for key, values in self.sweep.items():
            if key not in names:
                raise ValueError(f"cannot sweep unknown setting {key!r}")
            if not isinstance(values, list) or not values:
                raise ValueError(f"sweep values for {key!r} must be a non-empty list")
        if self.als_init not in ("deli", "masked-svd"):
            raise ValueError(f"als_init must be 'deli' or 'masked-svd', got {self.als_init!r}")
        # fail fast on settings the pipeline would reject
        for point in self.grid() if self.sweep else ():
            point.deli_config(0)
        if not self.sweep:
            self.deli_config(0)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown configuration keys: {unknown}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def grid(self) -> list["RunConfig"]:
        """Expand ``sweep`` into one config per grid point (sweep order preserved)."""
        if not self.sweep:
            return [self]
        keys = list(self.sweep)
        points = []
        for combo in itertools.product(*(self.sweep[k] for k in keys)):
            points.append(dataclasses.replace(self, sweep={}, **dict(zip(keys, combo))))
        return points

    def deli_config(self, seed) -> DeliConfig:
        return DeliConfig(
            r=self.r, variant=self.variant, s=self.s, m=self.m, z=self.z, mu0=self.mu0, delta=self.delta,
            c0=self.c0, c3=self.c3, seed=seed, gamma=self.gamma, delta_oversample=self.delta_oversample,
            zero_free=self.zero_free,
        )


def _trial_seeds(seed_base: int, trial: int) -> tuple[int, int, int]:
    gen, noise, pipe = np.random.SeedSequence([seed_base, trial]).generate_state(3)
    return int(gen), int(noise), int(pipe)


def refine(oracle, report: CompletionReport, iterations: int, init: str = "deli") -> CPDecomposition:
    """Masked ALS over the oracle's revealed entries, starting from the report or a masked SVD."""
    obs = oracle.revealed()
    if init == "masked-svd":
        start = masked_svd_init(obs, oracle.shape, report.r)
    else:
        start = report.decomposition
    if start.rank == 0:
        return start
    return masked_als(obs, start, ALSConfig(iterations=iterations, init=init))


def run_trial(cfg: RunConfig, trial: int) -> dict:
    """Run one trial and return its CSV row; failures become rows with ``success = false``."""
    gen_seed, noise_seed, pipe_seed = _trial_seeds(cfg.seed_base, trial)
    row = {key: getattr(cfg, key) for key in KEY_COLUMNS}
    row["seed"] = gen_seed
    truth = generate_synthetic(cfg.n, cfg.d, cfg.r, cfg.alpha, gen_seed)
    oracle = cp_oracle(truth, NoiseSpec(cfg.snr_db, noise_seed))
    start = time.perf_counter()
    try:
        report = run_pipeline(oracle, cfg.deli_config(pipe_seed))
        est = report.decomposition
        if cfg.als_iters > 0:
            est = refine(oracle, report, cfg.als_iters, cfg.als_init)
        success = report.success
    except (DeliError, ValueError, np.linalg.LinAlgError):
        est, success = None, False
    elapsed = (time.perf_counter() - start) * 1000.0
    total = oracle.ledger.total
    row.update(
        rel_error=cp_rel_error(truth, est) if est is not None else float("nan"),
        factor_error=factor_match_error(truth, est) if est is not None and est.rank == cfg.r else float("nan"),
        samples_total=total,
        samples_fraction=total / truth.size,
        runtime_ms=elapsed if cfg.timing else None,
        success=success,
    )
    return row


def run_trials(cfg: RunConfig) -> list[dict]:
    """All trials of every grid point, ordered by grid point then trial index."""
    jobs = [(point, t) for point in cfg.grid() for t in range(cfg.trials)]
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(lambda job: run_trial(*job), jobs))
    return [run_trial(point, t) for point, t in jobs]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_rows(rows, path, columns=CSV_COLUMNS) -> None:
    """Write rows as CSV to a path or an open text stream."""
    if hasattr(path, "write"):
        _write_csv(rows, path, columns)
        return
    with open(path, "w", newline="") as fh:
        _write_csv(rows, fh, columns)


def _write_csv(rows, fh, columns):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])


def _parse(value: str):
    if value == "":
        return None
    if value in ("true", "false"):
        return value == "true"
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in CSV_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        return [{k: _parse(v) for k, v in row.items()} for row in reader]


SUMMARY_COLUMNS = KEY_COLUMNS + (
    "trials", "median_rel_error", "mean_rel_error", "median_factor_error",
    "mean_samples_fraction", "success_rate", "median_runtime_ms",
)


def _median(values):
    values = [v for v in values if v is not None and not (isinstance(v, float) and np.isnan(v))]
    return statistics.median(values) if values else float("nan")


def _mean(values):
    values = [v for v in values if v is not None and not (isinstance(v, float) and np.isnan(v))]
    return statistics.fmean(values) if values else float("nan")


def aggregate(rows) -> list[dict]:
    """Median/mean summary per grid point, in first-appearance order."""
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in KEY_COLUMNS), []).append(row)
    out = []
    for key, members in groups.items():
        summary = dict(zip(KEY_COLUMNS, key))
        times = [m["runtime_ms"] for m in members]
        summary.update(
            trials=len(members),
            median_rel_error=_median([m["rel_error"] for m in members]),
            mean_rel_error=_mean([m["rel_error"] for m in members]),
            median_factor_error=_median([m["factor_error"] for m in members]),
            mean_samples_fraction=_mean([m["samples_fraction"] for m in members]),
            success_rate=sum(bool(m["success"]) for m in members) / len(members),
            median_runtime_ms=None if all(t is None for t in times) else _median(times),
        )
        out.append(summary)
    return out


def complete_file(
    path,
    cfg: DeliConfig,
    out_dir=None,
    als_iters: int = 0,
    noise: NoiseSpec | None = None,
) -> CompletionReport:
    """Complete the tensor stored at ``path`` and optionally write the results.

    ``path`` is a dense tensor file (text or binary) or a CP directory, which
    is read lazily.  For dense input the report's diagnostics include the
    relative error of the completion against the file contents.
    """
    if is_cp_directory(path):
        truth = read_cp(path)
        oracle = cp_oracle(truth, noise)
        dense = None
    else:
        dense = read_dense(path)
        if dense.ndim < 3:
            raise ValueError(f"completion needs an order-3 or higher tensor, got shape {dense.shape}")
        oracle = dense_oracle(dense, noise)
        truth = None
    report = run_pipeline(oracle, cfg)
    if als_iters > 0:
        report.decomposition = refine(oracle, report, als_iters)
        report.diagnostics["als_iterations"] = als_iters
    if dense is not None and dense.norm() > 0:
        report.diagnostics["rel_error_vs_input"] = dense_rel_error(dense, report.decomposition)
    elif truth is not None and truth.norm() > 0:
        report.diagnostics["rel_error_vs_input"] = cp_rel_error(truth, report.decomposition)
    if out_dir is not None:
        report.write(out_dir)
    return report
