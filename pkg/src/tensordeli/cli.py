"""Command-line interface: ``tensordeli generate | complete | sweep | report``.

Exit codes: 0 success, 1 usage error, 2 completion failure, 3 I/O error.
Indices given on the command line are 0-based, like every file format here.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

from .errors import DeliError, ParseError
from .experiments import (
    SUMMARY_COLUMNS,
    RunConfig,
    aggregate,
    complete_file,
    generate_synthetic,
    read_rows,
    run_trials,
    write_rows,
)
from .io import write_cp, write_dense
from .pipeline import DeliConfig
from .sampling import NoiseSpec

EXIT_OK, EXIT_USAGE, EXIT_FAILED, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("tensordeli")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_pipeline_flags(p, defaults: bool):
    # sweep reads its defaults from the config file, so flags default to None there
    d = (lambda v: v) if defaults else (lambda v: None)
    p.add_argument("--variant", choices=("adaptive", "nonadaptive"), default=d("adaptive"))
    p.add_argument("--r", type=int, default=None, help="target CP rank")
    p.add_argument("--s", type=int, default=d(2), help="number of dense slices")
    p.add_argument("--m", type=int, default=d(1), help="retry tuples per mode")
    p.add_argument("--z", type=float, default=d(0.0), help="assumed zero fraction of the factors")
    p.add_argument("--mu0", type=float, default=None, help="coherence bound (default: worst case)")
    p.add_argument("--delta", type=float, default=d(0.05), help="per-slice failure budget")
    p.add_argument("--c0", type=float, default=d(2.0))
    p.add_argument("--c3", type=float, default=d(2.0))
    p.add_argument("--gamma", type=float, default=None, help="per-slice sample budget fraction")
    p.add_argument("--delta-oversample", type=float, default=None, help="fiber oversampling factor")
    p.add_argument("--zero-free", action="store_true", default=d(False), help="use fixed anchor tuples")
    p.add_argument("--snr-db", type=float, default=None, help="add Gaussian noise at this SNR")
    p.add_argument("--als-iters", type=int, default=d(0), help="masked-ALS refinement sweeps")
    p.add_argument("--seed", type=int, default=d(0))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tensordeli", description="Low CP-rank tensor completion by sandwich sampling.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic CP tensor")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--r", type=int, required=True)
    g.add_argument("--alpha", type=float, default=0.0, help="weight decay exponent")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="directory for factor_k.csv and weights.csv")
    g.add_argument("--dense", help="also write the materialized tensor to this file")
    g.add_argument("--binary", action="store_true", help="binary dense format")

    c = sub.add_parser("complete", help="complete a dense tensor file or CP directory")
    c.add_argument("input")
    c.add_argument("--out", required=True, help="output directory for report.json and factors")
    c.add_argument("--slices", type=_int_list, default=None, help="explicit 0-based slice indices")
    c.add_argument("--anchors", type=_int_list, default=None, help="0-based anchor indices for modes 3..d")
    c.add_argument("--noise-seed", type=int, default=0)
    c.add_argument("--config", help="JSON file with pipeline settings (flags override)")
    _add_pipeline_flags(c, defaults=False)

    w = sub.add_parser("sweep", help="run synthetic trials and write a CSV")
    w.add_argument("--config", help="JSON run configuration")
    w.add_argument("--out", help="CSV of per-trial rows")
    w.add_argument("--summary", help="CSV of per-grid-point aggregates")
    w.add_argument("--n", type=int)
    w.add_argument("--d", type=int)
    w.add_argument("--alpha", type=float)
    w.add_argument("--trials", type=int)
    w.add_argument("--seed-base", type=int)
    w.add_argument("--workers", type=int)
    w.add_argument("--no-timing", action="store_true", help="leave runtime_ms blank (byte-stable output)")
    _add_pipeline_flags(w, defaults=False)

    rp = sub.add_parser("report", help="aggregate trial CSVs into a summary table")
    rp.add_argument("csv", nargs="+")
    rp.add_argument("--out", help="write the summary here instead of stdout")
    return parser


_PIPELINE_KEYS = (
    "variant", "r", "s", "m", "z", "mu0", "delta", "c0", "c3", "gamma", "delta_oversample", "zero_free",
)


def _overrides(args, keys) -> dict:
    out = {}
    for key in keys:
        value = getattr(args, key, None)
        if value is not None and not (key == "zero_free" and value is False):
            out[key] = value
    return out


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", line=exc.lineno, offset=exc.colno) from None
    if not isinstance(data, dict):
        raise UsageError(f"{path}: configuration must be a JSON object")
    return data


def cmd_generate(args) -> int:
    truth = generate_synthetic(args.n, args.d, args.r, args.alpha, args.seed)
    write_cp(truth, args.out)
    if args.dense:
        write_dense(truth.to_dense(), args.dense, binary=args.binary)
    print(f"wrote rank-{args.r} tensor of shape {truth.shape} to {args.out}")
    return EXIT_OK


def cmd_complete(args) -> int:
    settings = {"seed": 0}
    als_iters = 0
    snr_db = None
    if args.config:
        data = _load_json(args.config)
        als_iters = int(data.pop("als_iters", 0))
        snr_db = data.pop("snr_db", None)
        settings.update(data)
    settings.update(_overrides(args, _PIPELINE_KEYS + ("seed",)))
    if args.als_iters is not None:
        als_iters = args.als_iters
    if args.snr_db is not None:
        snr_db = args.snr_db
    if args.slices is not None:
        settings["slices"] = args.slices
    if args.anchors is not None:
        settings["anchors"] = args.anchors
    if "r" not in settings:
        raise UsageError("--r is required (in flags or the config file)")
    known = {f.name for f in dataclasses.fields(DeliConfig)}
    unknown = sorted(set(settings) - known)
    if unknown:
        raise UsageError(f"unknown configuration keys: {unknown}")
    try:
        cfg = DeliConfig(**settings)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    noise = NoiseSpec(snr_db, args.noise_seed) if snr_db is not None else None
    report = complete_file(args.input, cfg, args.out, als_iters=als_iters, noise=noise)
    err = report.diagnostics.get("rel_error_vs_input")
    print(
        f"success={str(report.success).lower()} components={report.components_found}/{report.r} "
        f"samples={report.samples_total}" + (f" rel_error={err:.3e}" if err is not None else "")
    )
    return EXIT_OK if report.success else EXIT_FAILED


def cmd_sweep(args) -> int:
    data = _load_json(args.config) if args.config else {}
    data.update(_overrides(args, _PIPELINE_KEYS + ("n", "d", "alpha", "trials", "seed_base", "workers")))
    if args.snr_db is not None:
        data["snr_db"] = args.snr_db
    if args.als_iters is not None:
        data["als_iters"] = args.als_iters
    if args.no_timing:
        data["timing"] = False
    if args.out:
        data["output"] = args.out
    if args.summary:
        data["summary"] = args.summary
    try:
        cfg = RunConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    rows = run_trials(cfg)
    write_rows(rows, cfg.output or sys.stdout)
    if cfg.summary:
        write_rows(aggregate(rows), cfg.summary, SUMMARY_COLUMNS)
    failed = sum(not r["success"] for r in rows)
    log.info("%d trials, %d failed", len(rows), failed)
    return EXIT_OK


def cmd_report(args) -> int:
    rows = []
    for path in args.csv:
        try:
            rows.extend(read_rows(path))
        except ValueError as exc:
            raise ParseError(str(exc)) from None
    write_rows(aggregate(rows), args.out or sys.stdout, SUMMARY_COLUMNS)
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "complete": cmd_complete, "sweep": cmd_sweep, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"tensordeli: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ParseError) as exc:
        print(f"tensordeli: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DeliError as exc:
        print(f"tensordeli: completion failed: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
