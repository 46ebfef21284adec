"""Machine-readable and aligned human-readable renderings of results."""

from __future__ import annotations

import csv
import json
from collections.abc import Sequence
from pathlib import Path

import numpy as np

from .drf import OrderSelection, WaldRow
from .estimators import DrfEstimate
from .model import RelevanceReport
from .simulate import BenchmarkReport, SelectionReport


def g6(x) -> str:
    """Six significant digits, as used for every human-readable number."""
    if x is None:
        return "NA"
    x = float(x)
    if np.isnan(x):
        return "NA"
    return f"{x:.6g}"


def align(rows: Sequence[Sequence[str]], header: Sequence[str]) -> str:
    cols = [list(header)] + [list(r) for r in rows]
    widths = [max(len(str(r[j])) for r in cols) for j in range(len(header))]
    lines = []
    for i, r in enumerate(cols):
        cells = [str(c).ljust(w) if j == 0 else str(c).rjust(w) for j, (c, w) in enumerate(zip(r, widths))]
        lines.append("  ".join(cells).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def write_csv(path, header, rows) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(c)) if isinstance(c, (float, np.floating)) else c for c in r])


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n", encoding="utf-8")


def _floats(a) -> list[float]:
    return [float(x) for x in np.asarray(a).ravel()]


# --- estimates -----------------------------------------------------------


def wald_dict(row: WaldRow) -> dict:
    return {
        "hypothesis": row.hypothesis,
        "lowest_power": row.lowest_power,
        "statistic": row.result.statistic,
        "df": row.result.rank,
        "p_value": row.result.p_value,
        "rejected": row.rejected,
    }


def relevance_dict(rel: RelevanceReport | None) -> dict | None:
    if rel is None:
        return None
    return {
        "status": rel.status,
        "residual_variance": rel.residual_variance,
        "threshold": rel.threshold,
        "sampling_variance": rel.sampling_variance,
        "f_statistic": rel.f_statistic,
        "p_value": rel.p_value,
        "n_trials": rel.n_trials,
        "n_covariates": rel.n_covariates,
    }


def estimate_dict(est: DrfEstimate, covariate_names: Sequence[str] = ()) -> dict:
    fit = est.fit
    names = list(covariate_names) or [f"h{j + 1}" for j in range(len(est.pi))]
    pi_se = []
    if fit is not None and len(est.pi):
        se = fit.standard_errors
        pi_se = _floats(se[est.order : est.order + len(est.pi)])
    return {
        "estimator": est.estimator_name,
        "order": est.order,
        "n_trials": est.n_trials,
        "n_units": est.n_units,
        "drf": {
            "beta": _floats(est.beta),
            "se": _floats(est.beta_se),
            "covariance": [_floats(r) for r in est.beta_covariance],
        },
        "pi": dict(zip(names, _floats(est.pi))),
        "pi_se": dict(zip(names, pi_se)),
        "residual_variance": None if fit is None else fit.residual_variance,
        "degrees_of_freedom": None if fit is None else fit.degrees_of_freedom,
        "zero_residual": None if fit is None else bool(fit.zero_residual or fit.residual_variance == 0.0),
    }


def estimate_text(est: DrfEstimate, tests: Sequence[WaldRow], rel: RelevanceReport | None, names=()) -> str:
    d = estimate_dict(est, names)
    rows = [(f"beta{p + 1}", g6(b), g6(s)) for p, (b, s) in enumerate(zip(d["drf"]["beta"], d["drf"]["se"]))]
    rows += [(f"pi[{k}]", g6(v), g6(d["pi_se"].get(k))) for k, v in d["pi"].items()]
    out = [f"{est.estimator_name} estimate (order {est.order}, {est.n_trials} trials)"]
    out.append(align(rows, ("term", "estimate", "se")))
    if d["residual_variance"] is not None:
        flag = "  [zero residual]" if d["zero_residual"] else ""
        out.append(f"residual variance {g6(d['residual_variance'])}, df {d['degrees_of_freedom']}{flag}")
    if tests:
        out.append("")
        out.append("Wald tests")
        out.append(
            align(
                [(r.hypothesis, g6(r.result.statistic), str(r.result.rank), f"{r.result.p_value:.5f}") for r in tests],
                ("null hypothesis", "statistic", "df", "p-value"),
            )
        )
    if rel is not None:
        out.append("")
        out.append(
            f"relevance: {rel.status} (residual variance {g6(rel.residual_variance)}"
            f" vs threshold {g6(rel.threshold)}"
            + (f", F {g6(rel.f_statistic)}" if rel.f_statistic is not None else "")
            + ")"
        )
    return "\n".join(out)


def selection_dict(sel: OrderSelection) -> dict:
    return {"selected_order": sel.selected, "max_order": sel.estimate.order, "alpha": sel.alpha}


# --- benchmarks ------------------------------------------------------------


BENCH_HEADER = ("table", "scenario", "n_per_trial", "estimator", "mean_bias", "coverage", "n_ok", "n_failed", "replications")


def benchmark_rows(reports: Sequence[BenchmarkReport], table: str):
    for rep in reports:
        for r in rep.rows:
            yield (table, rep.label, rep.n_per_trial, r.estimator, r.mean_bias, r.coverage, r.n_ok, r.n_failed, r.replications)


def size_grid_text(reports: Sequence[BenchmarkReport], row_key: str = "estimator") -> str:
    """Rows = estimators (or scenarios), column pairs = N_per."""
    sizes = sorted({r.n_per_trial for r in reports})
    if row_key == "estimator":
        keys = list(dict.fromkeys(row.estimator for rep in reports for row in rep.rows))
        cell = {(rep.n_per_trial, row.estimator): row for rep in reports for row in rep.rows}
    else:
        keys = list(dict.fromkeys(rep.label for rep in reports))
        cell = {(rep.n_per_trial, rep.label): rep.rows[0] for rep in reports}
    header = [row_key.capitalize()]
    for n in sizes:
        header += [f"Bias N={n}", f"Cov N={n}"]
    rows = []
    for k in keys:
        line = [k]
        for n in sizes:
            r = cell.get((n, k))
            line += [f"{r.mean_bias:.3f}", f"{100 * r.coverage:.0f}%"] if r else ["", ""]
        rows.append(line)
    return align(rows, header)


SELECTION_HEADER = (
    "scenario",
    "reject_beta3",
    "reject_beta2_beta3",
    "reject_all",
    "selected_order",
    "order_counts",
    "mean_beta",
    "n_failed",
    "replications",
)


def selection_rows(reports: Sequence[SelectionReport]):
    for s in reports:
        rates = [s.rejection_rate.get(p, float("nan")) for p in (3, 2, 1)]
        yield (
            s.label,
            *rates,
            s.selected_order,
            ";".join(f"{k}:{v}" for k, v in s.order_counts.items()),
            ";".join(repr(b) for b in s.mean_beta),
            s.n_failed,
            s.replications,
        )


def selection_text(reports: Sequence[SelectionReport]) -> str:
    rows = []
    for s in reports:
        rates = [f"{100 * s.rejection_rate.get(p, float('nan')):.0f}%" for p in (3, 2, 1)]
        rows.append((s.label, *rates, str(s.selected_order), ", ".join(f"{b:.3f}" for b in s.mean_beta)))
    return align(
        rows,
        ("mu(m)", "H0: b3=0", "H0: b2=b3=0", "H0: b1=b2=b3=0", "Highest order", "Estimated betas"),
    )
