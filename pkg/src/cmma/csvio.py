"""CSV readers and writers for unit data, trial covariates and trial summaries.

Floats are written with ``repr`` so that a write/read round trip is exact.
"""

from __future__ import annotations

import csv
import math
from collections.abc import Mapping, Sequence
from pathlib import Path

import numpy as np

from .errors import DataError, ParseError
from .model import Dataset, TrialRegistry, TrialSummary

UNIT_COLUMNS = ("unit_id", "trial_id", "treatment", "mediator", "outcome")


def _fmt(x: float) -> str:
    return repr(float(x))


def _float(text: str, what: str, line: int, path) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"{what} {text!r} is not a number", line, path) from None
    if not math.isfinite(value):
        raise ParseError(f"{what} {text!r} is not finite", line, path)
    return value


def _read_rows(path):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file (header row required)", 1, path) from None
        rows = []
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", reader.line_num, path)
            rows.append((reader.line_num, [c.strip() for c in row]))
    return header, rows


def _column_index(header, name, path) -> int:
    try:
        return header.index(name)
    except ValueError:
        raise ParseError(f"missing column {name!r}", 1, path) from None


def load_covariates(path) -> tuple[list[str], np.ndarray, tuple[str, ...]]:
    """Read the trial covariate file: ``trial_id`` then one column per covariate."""
    header, rows = _read_rows(path)
    if not header or header[0] != "trial_id" or len(header) < 2:
        raise ParseError("covariate header must be 'trial_id' followed by covariate columns", 1, path)
    labels, values = [], []
    for line, row in rows:
        if row[0] in labels:
            raise ParseError(f"duplicate trial_id {row[0]!r}", line, path)
        labels.append(row[0])
        values.append([_float(c, header[j + 1], line, path) for j, c in enumerate(row[1:])])
    if not labels:
        raise ParseError("covariate file has no rows", 2, path)
    return labels, np.array(values), tuple(header[1:])


def load_units(path, covariates_path, schema: Mapping[str, str] | None = None) -> Dataset:
    """Read a unit CSV plus a trial covariate CSV into a validated :class:`Dataset`.

    ``schema`` maps canonical column names (``unit_id``, ``trial_id``,
    ``treatment``, ``mediator``, ``outcome``) to the names used in the file.
    Trial ids are re-indexed densely in covariate-file order.
    """
    schema = dict(schema or {})
    header, rows = _read_rows(path)
    idx = {c: _column_index(header, schema.get(c, c), path) for c in UNIT_COLUMNS}
    labels, H, names = load_covariates(covariates_path)
    index_of = {lab: k for k, lab in enumerate(labels)}
    n = len(rows)
    ids = np.empty(n, dtype=object)
    trial = np.empty(n, dtype=np.int64)
    treat = np.empty(n, dtype=np.int8)
    med = np.empty(n)
    out = np.empty(n)
    for i, (line, row) in enumerate(rows):
        ids[i] = row[idx["unit_id"]]
        tid = row[idx["trial_id"]]
        if tid not in index_of:
            raise ParseError(f"trial_id {tid!r} not present in covariate file", line, path)
        trial[i] = index_of[tid]
        t = row[idx["treatment"]]
        if t not in ("0", "1"):
            raise ParseError(f"treatment must be 0 or 1, got {t!r}", line, path)
        treat[i] = int(t)
        med[i] = _float(row[idx["mediator"]], "mediator", line, path)
        out[i] = _float(row[idx["outcome"]], "outcome", line, path)
    registry = TrialRegistry(H, tuple(labels), names)
    return Dataset(ids, trial, treat, med, out, registry)


def write_units(data: Dataset, path) -> None:
    path = Path(path)
    labels = data.registry.labels
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(UNIT_COLUMNS)
        for i in range(data.n_units):
            w.writerow(
                [
                    data.unit_id[i],
                    labels[data.trial[i]],
                    int(data.treatment[i]),
                    _fmt(data.mediator[i]),
                    _fmt(data.outcome[i]),
                ]
            )


def write_covariates(registry: TrialRegistry, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("trial_id", *registry.covariate_names))
        for k, label in enumerate(registry.labels):
            w.writerow([label, *(_fmt(x) for x in registry.covariates[k])])


def write_summaries(summaries: Sequence[TrialSummary], path, covariate_names: Sequence[str] | None = None) -> None:
    """Write ``trial_id, n_treat, n_control, ate_y, ate_m_1..ate_m_P, <covariates>``."""
    if not summaries:
        raise DataError("no summaries to write")
    P = summaries[0].order
    J = len(summaries[0].covariates)
    names = list(covariate_names or [f"h{j + 1}" for j in range(J)])
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial_id", "n_treat", "n_control", "ate_y", *(f"ate_m_{p}" for p in range(1, P + 1)), *names])
        for s in summaries:
            w.writerow(
                [
                    s.label if s.label is not None else s.trial_id,
                    s.n_treat,
                    s.n_control,
                    _fmt(s.ate_y),
                    *(_fmt(a) for a in s.ate_m),
                    *(_fmt(h) for h in s.covariates),
                ]
            )


def load_summaries(path) -> tuple[list[TrialSummary], tuple[str, ...]]:
    """Read a summary CSV. Optional ``var_ate_y`` / ``var_ate_m_<p>`` columns are
    picked up as sampling variances; every other trailing column is a covariate.
    """
    header, rows = _read_rows(path)
    for j, name in enumerate(("trial_id", "n_treat", "n_control", "ate_y")):
        if len(header) <= j or header[j] != name:
            raise ParseError(f"summary column {j + 1} must be {name!r}", 1, path)
    ate_cols = [j for j, h in enumerate(header) if h.startswith("ate_m_")]
    P = len(ate_cols)
    if P == 0 or [header[j] for j in ate_cols] != [f"ate_m_{p}" for p in range(1, P + 1)]:
        raise ParseError("summary file needs columns ate_m_1..ate_m_P", 1, path)
    var_y = header.index("var_ate_y") if "var_ate_y" in header else None
    var_m = [header.index(f"var_ate_m_{p}") for p in range(1, P + 1) if f"var_ate_m_{p}" in header]
    if var_m and len(var_m) != P:
        raise ParseError("var_ate_m_<p> columns must cover every power", 1, path)
    reserved = {0, 1, 2, 3, *ate_cols, *var_m} | ({var_y} if var_y is not None else set())
    cov_cols = [j for j in range(len(header)) if j not in reserved]
    if not cov_cols:
        raise ParseError("summary file has no covariate columns", 1, path)
    out = []
    seen = set()
    for k, (line, row) in enumerate(rows):
        label = row[0]
        if label in seen:
            raise ParseError(f"duplicate trial_id {label!r}", line, path)
        seen.add(label)
        try:
            n1, n0 = int(row[1]), int(row[2])
        except ValueError:
            raise ParseError("n_treat and n_control must be integers", line, path) from None
        try:
            out.append(
                TrialSummary(
                    trial_id=k + 1,
                    n_treat=n1,
                    n_control=n0,
                    ate_y=_float(row[3], "ate_y", line, path),
                    ate_m=tuple(_float(row[j], header[j], line, path) for j in ate_cols),
                    covariates=tuple(_float(row[j], header[j], line, path) for j in cov_cols),
                    var_ate_y=_float(row[var_y], "var_ate_y", line, path) if var_y is not None else None,
                    var_ate_m=tuple(_float(row[j], header[j], line, path) for j in var_m) if var_m else None,
                    label=label,
                )
            )
        except DataError as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(str(exc), line, path) from None
    if not out:
        raise ParseError("summary file has no rows", 2, path)
    return out, tuple(header[j] for j in cov_cols)
