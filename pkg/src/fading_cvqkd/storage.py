"""File formats: runs, estimates, transmittance traces, reports.

CSV throughout (RFC 4180, comma, header row), JSON sidecars for
configuration.  Floats are written with repr so a rerun of the same
seed produces byte-identical files.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from .channel import Package, ProtocolParams, Run
from .distributions import TransmittanceDistribution, from_descriptor
from .errors import ValidationError
from .estimation import PackageEstimate

__all__ = [
    "write_run", "read_run", "write_estimates", "read_estimates",
    "read_trace", "write_trace", "write_json", "read_json", "write_table",
    "protocol_descriptor", "protocol_from_descriptor",
    "RUN_CSV", "RUN_JSON", "TRUE_T_CSV", "ESTIMATES_CSV",
]

RUN_CSV = "run.csv"
RUN_JSON = "run.json"
TRUE_T_CSV = "true_T.csv"
ESTIMATES_CSV = "estimates.csv"

_ESTIMATE_HEADER = ["package", "sqrtT_hat", "T_hat", "sigma_sqrtT",
                    "sigma_T", "vN_hat", "k"]


def _fmt(x: float) -> str:
    return repr(float(x))


def jsonable(obj):
    """Recursively convert dataclasses/arrays/non-finite floats to
    plain JSON-safe values (inf and nan become strings)."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: jsonable(getattr(obj, f.name))
                for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(float(v)) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def write_table(path, header: Sequence[str], rows) -> None:
    """Write a CSV table; floats go through repr, everything else as-is."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(header))
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v
                        for v in row])


def write_json(obj, path) -> None:
    Path(path).write_text(
        json.dumps(jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON: {exc}")


def protocol_descriptor(p: ProtocolParams) -> dict:
    return {f.name: getattr(p, f.name) for f in dataclasses.fields(p)}


def protocol_from_descriptor(d: dict) -> ProtocolParams:
    known = {f.name for f in dataclasses.fields(ProtocolParams)}
    extra = set(d) - known
    if extra:
        raise ValidationError(f"unknown protocol keys: {sorted(extra)}")
    return ProtocolParams(**d)


def write_run(run: Run, out_dir) -> None:
    """Write a run as run.csv (package,j,M,B), true_T.csv and a JSON
    sidecar carrying the distribution, protocol and seed."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / RUN_CSV, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["package", "j", "M", "B"])
        for i, pkg in enumerate(run.packages):
            for j in range(pkg.n):
                w.writerow([i, j, _fmt(pkg.M[j]), _fmt(pkg.B[j])])
    with open(out / TRUE_T_CSV, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["package", "T_true"])
        for i, pkg in enumerate(run.packages):
            w.writerow([i, _fmt(pkg.true_T)])
    sidecar = {
        "format": "fading-cvqkd-run-v1",
        "dist": run.dist.descriptor(),
        "protocol": protocol_descriptor(run.protocol),
        "n": run.n,
        "m": run.m,
        "seed": run.seed,
    }
    write_json(sidecar, out / RUN_JSON)


def _float_field(row_no: int, name: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ValidationError(f"row {row_no}: field {name} is not a number: {raw!r}")


def _int_field(row_no: int, name: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ValidationError(f"row {row_no}: field {name} is not an integer: {raw!r}")


def read_run(in_dir) -> Run:
    """Rebuild a Run from a directory written by write_run, validating
    structure row by row."""
    src = Path(in_dir)
    sidecar = read_json(src / RUN_JSON)
    for key in ("dist", "protocol", "n", "m", "seed"):
        if key not in sidecar:
            raise ValidationError(f"{RUN_JSON}: missing key {key!r}")
    dist = from_descriptor(sidecar["dist"])
    protocol = protocol_from_descriptor(sidecar["protocol"])
    n, m = int(sidecar["n"]), int(sidecar["m"])

    true_T = {}
    with open(src / TRUE_T_CSV, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header != ["package", "T_true"]:
            raise ValidationError(f"{TRUE_T_CSV}: bad header {header}")
        for row_no, row in enumerate(rd, start=2):
            if len(row) != 2:
                raise ValidationError(f"{TRUE_T_CSV} row {row_no}: expected 2 fields")
            i = _int_field(row_no, "package", row[0])
            t = _float_field(row_no, "T_true", row[1])
            if not (0.0 <= t <= 1.0):
                raise ValidationError(f"{TRUE_T_CSV} row {row_no}: T_true outside [0, 1]")
            true_T[i] = t
    if sorted(true_T) != list(range(m)):
        raise ValidationError(f"{TRUE_T_CSV}: package indices are not 0..{m - 1}")

    M = np.zeros((m, n))
    B = np.zeros((m, n))
    seen = np.zeros((m, n), dtype=bool)
    with open(src / RUN_CSV, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header != ["package", "j", "M", "B"]:
            raise ValidationError(f"{RUN_CSV}: bad header {header}")
        for row_no, row in enumerate(rd, start=2):
            if len(row) != 4:
                raise ValidationError(f"{RUN_CSV} row {row_no}: expected 4 fields")
            i = _int_field(row_no, "package", row[0])
            j = _int_field(row_no, "j", row[1])
            if not (0 <= i < m and 0 <= j < n):
                raise ValidationError(f"{RUN_CSV} row {row_no}: index ({i}, {j}) out of range")
            if seen[i, j]:
                raise ValidationError(f"{RUN_CSV} row {row_no}: duplicate index ({i}, {j})")
            seen[i, j] = True
            M[i, j] = _float_field(row_no, "M", row[2])
            B[i, j] = _float_field(row_no, "B", row[3])
    if not seen.all():
        missing = int((~seen).sum())
        raise ValidationError(f"{RUN_CSV}: {missing} state(s) missing")

    packages = []
    for i in range(m):
        Mi, Bi = M[i].copy(), B[i].copy()
        Mi.flags.writeable = False
        Bi.flags.writeable = False
        packages.append(Package(true_T=true_T[i], M=Mi, B=Bi))
    return Run(packages=tuple(packages), dist=dist, protocol=protocol,
               seed=int(sidecar["seed"]))


def write_estimates(estimates: Sequence[PackageEstimate], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_ESTIMATE_HEADER)
        for i, e in enumerate(estimates):
            w.writerow([i, _fmt(e.sqrtT_hat), _fmt(e.T_hat), _fmt(e.sigma_sqrtT),
                        _fmt(e.sigma_T), _fmt(e.vN_hat), e.k])


def read_estimates(path) -> list[PackageEstimate]:
    out = []
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header != _ESTIMATE_HEADER:
            raise ValidationError(f"{path}: bad header {header}")
        expect = 0
        for row_no, row in enumerate(rd, start=2):
            if len(row) != len(_ESTIMATE_HEADER):
                raise ValidationError(f"{path} row {row_no}: expected "
                                      f"{len(_ESTIMATE_HEADER)} fields")
            i = _int_field(row_no, "package", row[0])
            if i != expect:
                raise ValidationError(f"{path} row {row_no}: package index {i}, "
                                      f"expected {expect}")
            expect += 1
            k = _int_field(row_no, "k", row[6])
            if k < 2:
                raise ValidationError(f"{path} row {row_no}: k must be >= 2")
            sqrtT_hat = _float_field(row_no, "sqrtT_hat", row[1])
            out.append(PackageEstimate(
                sqrtT_hat=sqrtT_hat,
                T_hat=_float_field(row_no, "T_hat", row[2]),
                sigma_sqrtT=_float_field(row_no, "sigma_sqrtT", row[3]),
                sigma_T=_float_field(row_no, "sigma_T", row[4]),
                vN_hat=_float_field(row_no, "vN_hat", row[5]),
                k=k, sign_anomaly=sqrtT_hat < 0.0))
    if not out:
        raise ValidationError(f"{path}: no estimate rows")
    return out


def write_trace(values, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["T"])
        for v in values:
            w.writerow([_fmt(v)])


def read_trace(path) -> np.ndarray:
    """Read a measured transmittance trace.

    Accepts a bare single-column file with header T, or a wider table
    holding a T or T_true column (the true-T sidecar of a simulated
    run), in which case that column is extracted.
    """
    vals = []
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        col = None
        if header is not None:
            for name in ("T", "T_true"):
                if name in header:
                    col = header.index(name)
                    break
        if col is None:
            raise ValidationError(
                f"{path}: bad header {header}, expected a T or T_true column")
        width = len(header)
        for row_no, row in enumerate(rd, start=2):
            if len(row) != width:
                raise ValidationError(
                    f"{path} row {row_no}: expected {width} fields, got {len(row)}")
            t = _float_field(row_no, header[col], row[col])
            if not (0.0 <= t <= 1.0):
                raise ValidationError(f"{path} row {row_no}: T outside [0, 1]")
            vals.append(t)
    if not vals:
        raise ValidationError(f"{path}: empty trace")
    return np.array(vals)
