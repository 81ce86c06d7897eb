"""File formats for dense tensors and CP decompositions.

Dense tensors come in two flavours:

* text: a header line ``dims: n1 n2 ... nd`` followed by whitespace-separated
  values in row-major order;
* binary: magic ``TDL1``, little-endian ``u64`` order ``d``, ``d`` ``u64``
  dimensions, then ``float64`` values in row-major order.

A CP decomposition is a directory holding ``factor_1.csv`` ... ``factor_d.csv``
(``n_k`` rows by ``r`` comma-separated columns) and ``weights.csv`` (one
weight per line).
"""
from __future__ import annotations

import os
import re
import struct
from math import prod
from pathlib import Path

import numpy as np

from .errors import ParseError
from .tensor import CPDecomposition, DenseTensor

MAGIC = b"TDL1"


def _parse_float(token: str, line: int, offset: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise ParseError(f"not a number: {token!r}", line=line, offset=offset) from None


def parse_dense_text(text: str) -> DenseTensor:
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise ParseError("missing 'dims:' header", line=1, offset=0)
    header = lines[0]
    m = re.match(r"\s*dims\s*:\s*(.*)$", header)
    if not m:
        raise ParseError("header must start with 'dims:'", line=1, offset=0)
    dims = []
    for tok in re.finditer(r"\S+", m.group(1)):
        try:
            n = int(tok.group())
        except ValueError:
            n = 0
        if n < 1:
            raise ParseError(f"bad dimension {tok.group()!r}", line=1, offset=m.start(1) + tok.start())
        dims.append(n)
    if len(dims) < 2:
        raise ParseError(f"need at least 2 dimensions, got {len(dims)}", line=1, offset=len(header))
    expected = prod(dims)
    values = []
    for lineno, line in enumerate(lines[1:], start=2):
        for tok in re.finditer(r"\S+", line):
            if len(values) == expected:
                raise ParseError(f"more than {expected} values", line=lineno, offset=tok.start())
            values.append(_parse_float(tok.group(), lineno, tok.start()))
    if len(values) != expected:
        raise ParseError(f"expected {expected} values, found {len(values)}", line=len(lines), offset=None)
    return DenseTensor.from_values(dims, values)


def parse_dense_binary(blob: bytes) -> DenseTensor:
    if blob[:4] != MAGIC:
        raise ParseError("bad magic bytes", offset=0)
    if len(blob) < 12:
        raise ParseError("truncated header", offset=len(blob))
    (d,) = struct.unpack_from("<Q", blob, 4)
    if d < 2 or 12 + 8 * d > len(blob):
        raise ParseError(f"bad tensor order {d}", offset=4)
    dims = struct.unpack_from(f"<{d}Q", blob, 12)
    start = 12 + 8 * d
    expected = prod(dims)
    if any(n < 1 for n in dims):
        raise ParseError(f"bad dimensions {dims}", offset=12)
    if len(blob) - start != 8 * expected:
        raise ParseError(
            f"expected {expected} float64 values, payload has {len(blob) - start} bytes", offset=start
        )
    values = np.frombuffer(blob, dtype="<f8", offset=start, count=expected)
    return DenseTensor.from_values(dims, values)


def read_dense(path) -> DenseTensor:
    """Read a dense tensor, detecting the binary variant by its magic bytes."""
    blob = Path(path).read_bytes()
    if blob[:4] == MAGIC:
        return parse_dense_binary(blob)
    try:
        text = blob.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError("file is neither TDL1 binary nor UTF-8 text", offset=exc.start) from None
    return parse_dense_text(text)


def write_dense(tensor: DenseTensor, path, binary: bool = False) -> None:
    path = Path(path)
    if binary:
        header = MAGIC + struct.pack(f"<Q{tensor.ndim}Q", tensor.ndim, *tensor.shape)
        path.write_bytes(header + tensor.values.astype("<f8").tobytes())
        return
    with open(path, "w") as fh:
        fh.write("dims: " + " ".join(str(n) for n in tensor.shape) + "\n")
        # one mode-d fiber per line keeps files readable
        rows = tensor.values.reshape(-1, tensor.shape[-1])
        for row in rows:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def _read_csv_matrix(path: Path, ncols=None) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            row = []
            pos = 0
            for tok in line.rstrip("\n").split(","):
                row.append(_parse_float(tok.strip(), lineno, pos))
                pos += len(tok) + 1
            if rows and len(row) != len(rows[0]):
                raise ParseError(f"{path.name}: ragged row", line=lineno)
            rows.append(row)
    if not rows:
        return np.zeros((0, ncols or 0))
    return np.array(rows, dtype=float)


def write_cp(dec: CPDecomposition, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for k, A in enumerate(dec.factors, start=1):
        with open(directory / f"factor_{k}.csv", "w") as fh:
            for row in A:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    with open(directory / "weights.csv", "w") as fh:
        for w in dec.weights:
            fh.write(repr(float(w)) + "\n")


def read_cp(directory) -> CPDecomposition:
    directory = Path(directory)
    weights_path = directory / "weights.csv"
    if not weights_path.exists():
        raise FileNotFoundError(weights_path)
    weights = _read_csv_matrix(weights_path).ravel()
    r = weights.size
    factors = []
    k = 1
    while (directory / f"factor_{k}.csv").exists():
        A = _read_csv_matrix(directory / f"factor_{k}.csv", ncols=r)
        if A.size and A.shape[1] != r:
            raise ParseError(f"factor_{k}.csv has {A.shape[1]} columns, weights.csv has {r} entries")
        factors.append(A.reshape(A.shape[0], r) if A.size else A)
        k += 1
    if len(factors) < 2:
        raise ParseError(f"{directory}: need factor_1.csv and factor_2.csv at least")
    return CPDecomposition(tuple(factors), weights)


def is_cp_directory(path) -> bool:
    return os.path.isdir(path) and os.path.exists(os.path.join(path, "weights.csv"))
