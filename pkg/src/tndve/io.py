"""Dataset CSV import/export, results tables and plot data.

Every file is written atomically: content goes to a temporary file in the
target directory, which is then renamed over the destination, so an
interrupted run never leaves a partial file behind.
"""
from __future__ import annotations

import contextlib
import csv
import io
import json
import math
import os
import tempfile
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Sequence

import numpy as np

from .errors import DataWarning, IoError, ParseError, SchemaError
from .montecarlo import CurveSummary, McSummary
from .simulate import Dataset, Reason

DATASET_HEADER = ("x1", "x2", "h", "v", "c", "i", "reason", "tested")
RESULTS_HEADER = ("scenario", "estimator", "bias", "empirical_se", "avg_se", "coverage", "relative_efficiency")
PLOT_HEADER = ("x1", "estimate", "ci_low", "ci_high", "truth")
_BINARY = ("x2", "v", "c", "i", "tested")


@contextlib.contextmanager
def atomic_open(path, mode="w", encoding="utf-8", newline=""):
    """Open a temporary sibling of ``path`` and rename it into place on success."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    try:
        with os.fdopen(fd, mode, encoding=encoding, newline=newline) as fh:
            yield fh
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException as exc:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        if isinstance(exc, OSError):
            raise IoError(f"cannot write {path}: {exc}") from exc
        raise


def write_text_atomic(path, text: str):
    with atomic_open(path) as fh:
        fh.write(text)


def _fmt(x) -> str:
    """Shortest round-tripping text for a float; empty for NaN."""
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def save_dataset_csv(data: Dataset, path):
    """Write ``data`` with header ``x1,x2,h,v,c,i,reason,tested``.

    Unknown ``h`` (stored as -1) is written as an empty field.
    """
    with atomic_open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DATASET_HEADER)
        tokens = {int(r): r.token for r in Reason}
        for x1, x2, h, v, c, i, reason, tested in zip(
                data.x1, data.x2, data.h, data.v, data.c, data.i, data.reason, data.tested):
            w.writerow((repr(float(x1)), int(x2), "" if h < 0 else int(h), int(v), int(c), int(i),
                        tokens[int(reason)], int(tested)))


@dataclass
class LoadReport:
    n_rows: int = 0
    unknown_reasons: int = 0
    x1_out_of_range: int = 0


def _parse_binary(text, name, line):
    text = text.strip()
    if text in ("0", "1"):
        return int(text)
    raise ParseError(f"{name} must be 0 or 1, got {text!r}", line)


def _read_columns(fh, report):
    reader = csv.reader(fh)
    try:
        header = [c.strip().lower() for c in next(reader)]
    except StopIteration:
        raise SchemaError("empty file, no header") from None
    if len(set(header)) != len(header):
        raise SchemaError(f"duplicated columns in header {header}")
    missing = [c for c in DATASET_HEADER if c != "h" and c not in header]
    if missing:
        raise SchemaError(f"missing required columns {missing}")
    pos = {name: header.index(name) for name in DATASET_HEADER if name in header}
    cols = {name: [] for name in DATASET_HEADER}
    for row in reader:
        line = reader.line_num
        if not row or all(not f.strip() for f in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line)
        try:
            x1 = float(row[pos["x1"]])
        except ValueError:
            raise ParseError(f"x1 is not a number: {row[pos['x1']]!r}", line) from None
        if not math.isfinite(x1):
            raise ParseError("x1 must be finite", line)
        if not 0.5 <= x1 <= 1.0:
            report.x1_out_of_range += 1
        values = {name: _parse_binary(row[pos[name]], name, line) for name in _BINARY}
        if "h" in pos and row[pos["h"]].strip() != "":
            h = _parse_binary(row[pos["h"]], "h", line)
        else:
            h = -1
        try:
            reason = Reason.from_token(row[pos["reason"]])
        except ValueError:
            reason = Reason.MISSING
            report.unknown_reasons += 1
        if reason == Reason.NOT_TESTED and values["tested"] == 1:
            raise ParseError("reason 'nottested' with tested=1", line)
        if values["tested"] == 0 and reason not in (Reason.NOT_TESTED, Reason.CCT, Reason.MISSING):
            raise ParseError(f"untested subject with reason {reason.token!r}", line)
        cols["x1"].append(x1)
        cols["h"].append(h)
        cols["reason"].append(int(reason))
        for name in _BINARY:
            cols[name].append(values[name])
    return cols


def load_dataset_csv(path, report: LoadReport = None) -> Dataset:
    """Read a dataset written by :func:`save_dataset_csv` or collected elsewhere.

    The ``h`` column is optional. Unknown reason tokens become
    ``Reason.MISSING`` and x1 outside [0.5, 1] is accepted; both are counted
    in ``report`` and announced with a :class:`DataWarning`.

    Raises
    ------
    SchemaError
        Missing or duplicated required columns.
    ParseError
        A malformed value; the message carries the line number.
    """
    report = report if report is not None else LoadReport()
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    with fh:
        try:
            cols = _read_columns(fh, report)
        except (UnicodeDecodeError, csv.Error) as exc:
            raise ParseError(f"unreadable CSV: {exc}") from None
    report.n_rows = len(cols["x1"])
    if report.unknown_reasons:
        warnings.warn(f"{report.unknown_reasons} unknown reason tokens recorded as missing", DataWarning,
                      stacklevel=2)
    if report.x1_out_of_range:
        warnings.warn(f"{report.x1_out_of_range} x1 values outside [0.5, 1]", DataWarning, stacklevel=2)
    arrays = {name: np.asarray(cols[name], dtype=np.int8) for name in DATASET_HEADER if name != "x1"}
    return Dataset(x1=np.asarray(cols["x1"], dtype=float), **arrays)


def results_rows(label: str, summaries: Iterable[McSummary]) -> List[tuple]:
    return [(label, s.estimator, s.bias, s.empirical_se, s.avg_estimated_se, s.coverage, s.relative_efficiency)
            for s in summaries]


def results_csv_text(rows: Sequence[tuple]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULTS_HEADER)
    for label, name, *nums in rows:
        w.writerow([label, name, *(_fmt(x) for x in nums)])
    return buf.getvalue()


def results_json_text(rows: Sequence[tuple], extra: dict = None) -> str:
    records = [dict(zip(RESULTS_HEADER, (label, name, *(None if math.isnan(x) else x for x in nums))))
               for label, name, *nums in rows]
    payload = {"results": records}
    if extra:
        payload.update(extra)
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def write_results(rows: Sequence[tuple], path, fmt: str = "csv", extra: dict = None):
    text = results_csv_text(rows) if fmt == "csv" else results_json_text(rows, extra)
    write_text_atomic(path, text)


def format_table(rows: Sequence[tuple]) -> str:
    """Fixed-width summary for the terminal."""
    lines = [f"{'scenario':<18}{'estimator':<16}{'bias':>8}{'emp.se':>8}{'avg.se':>8}{'cover':>8}{'RE':>8}"]
    for label, name, bias, ese, ase, cov, re in rows:
        lines.append(f"{label:<18}{name:<16}{bias:>8.3f}{ese:>8.3f}{ase:>8.3f}{cov:>8.3f}{re:>8.2f}")
    return "\n".join(lines)


def plot_data_text(x1, estimate, ci_low, ci_high, truth) -> str:
    cols = [np.atleast_1d(np.asarray(c, dtype=float)) for c in (x1, estimate, ci_low, ci_high, truth)]
    n = len(cols[0])
    if n == 0:
        raise ValueError("curve is empty")
    if any(len(c) != n for c in cols):
        raise ValueError("curve columns differ in length")
    order = np.argsort(cols[0], kind="stable")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PLOT_HEADER)
    for k in order:
        w.writerow([_fmt(c[k]) for c in cols])
    return buf.getvalue()


def emit_plot_data(curve, path, truth=None):
    """Write ``x1,estimate,ci_low,ci_high,truth`` rows sorted by x1.

    ``curve`` is a :class:`CurveSummary` (mean estimate and averaged
    interval) or a single-dataset ``VeCurve`` together with ``truth``.
    Unavailable values are written as empty fields.
    """
    if isinstance(curve, CurveSummary):
        text = plot_data_text(curve.grid, curve.mean_estimate, curve.mean_ci_low, curve.mean_ci_high, curve.truth)
    else:
        if truth is None:
            truth = np.full(len(curve.grid), np.nan)
        text = plot_data_text(curve.grid, curve.point, curve.ci_low, curve.ci_high,
                              np.broadcast_to(np.asarray(truth, dtype=float), np.shape(curve.grid)))
    write_text_atomic(path, text)
