"""Command-line front end: simulate, estimate, elasticity, benchmark, validate.

Every command writes its outputs plus ``manifest.json`` into ``--output``.
Exit status is 0 when all outputs were written and nothing failed, 1 on a
data or estimation failure, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__, csvio, report
from . import estimators as est
from .drf import PolynomialDrf, elasticity_curve, select_order, wald_battery
from .errors import CmmaError
from .model import check_relevance, summarize_trials
from .simulate import (
    DEFAULT_SEED,
    SimulationConfig,
    draw,
    run_size_sweep,
    run_table4,
    run_violation_suite,
)

log = logging.getLogger("cmma")

CONFIG_KEYS = {f for f in SimulationConfig.__dataclass_fields__}


class UsageError(Exception):
    pass


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Collects outputs and writes the manifest on success."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.command = command
        self.outdir = Path(args.output)
        self.outdir.mkdir(parents=True, exist_ok=True)
        self.start = time.perf_counter()
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.config: dict = {}
        self.seed: int | None = None

    def input(self, path) -> Path:
        if path is not None:
            self.inputs[str(path)] = _digest(path)
        return path

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.outdir / name

    def finish(self) -> None:
        missing = [o for o in self.outputs if not (self.outdir / o).exists()]
        if missing:
            raise CmmaError(f"outputs not written: {missing}")
        report.write_json(
            self.outdir / "manifest.json",
            {
                "command": self.command,
                "tool_version": __version__,
                "seed": self.seed,
                "config": self.config,
                "inputs": self.inputs,
                "outputs": self.outputs,
                "wall_time_seconds": round(time.perf_counter() - self.start, 3),
            },
        )


# --- config ----------------------------------------------------------------


def load_config(path, args) -> SimulationConfig:
    values: dict = {}
    if path is not None:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        if not isinstance(raw, dict):
            raise UsageError("config file must be a key/value mapping")
        unknown = sorted(set(raw) - CONFIG_KEYS)
        if unknown:
            raise UsageError(f"unknown config keys: {unknown}")
        values.update(raw)
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    n_per = getattr(args, "n_per", None)
    if isinstance(n_per, int):
        values["n_per_trial"] = n_per
    if getattr(args, "fixed_trial_sizes", False):
        values["fixed_trial_sizes"] = True
    values.setdefault("seed", DEFAULT_SEED)
    for key in ("beta", "pi", "tau_loading", "theta_range", "phi_range", "tau_range"):
        if key in values:
            values[key] = tuple(values[key])
    return SimulationConfig(**values)


# --- commands --------------------------------------------------------------


def cmd_simulate(args) -> int:
    run = Run("simulate", args)
    cfg = load_config(run.input(args.config), args)
    run.config, run.seed = cfg.to_dict(), cfg.seed
    data = draw(cfg, args.replication).dataset
    csvio.write_units(data, run.path("units.csv"))
    csvio.write_covariates(data.registry, run.path("covariates.csv"))
    run.finish()
    print(f"wrote {data.n_units} units in {data.n_trials} trials to {run.outdir}")
    return 0


def _read_inputs(args, run):
    """(summaries, covariate names, dataset or None) from --units or --summaries."""
    if args.units:
        if not args.covariates:
            raise UsageError("--units requires --covariates")
        data = csvio.load_units(run.input(args.units), run.input(args.covariates))
        order = max(args.max_order if args.order_auto else args.order, 1)
        return summarize_trials(data, order), data.registry.covariate_names, data
    summaries, names = csvio.load_summaries(run.input(args.summaries))
    return summaries, names, None


def _parse_order(args) -> None:
    if args.order == "auto":
        args.order_auto = True
        args.order = 1
    else:
        try:
            args.order = int(args.order)
        except ValueError:
            raise UsageError("--order must be a positive integer or 'auto'") from None
        if args.order < 1:
            raise UsageError("--order must be >= 1")


def cmd_estimate(args) -> int:
    _parse_order(args)
    run = Run("estimate", args)
    run.config = {
        "order": "auto" if args.order_auto else args.order,
        "max_order": args.max_order,
        "alpha": args.alpha,
        "with_comparators": args.with_comparators,
        "force": args.force,
        "relevance_threshold": args.relevance_threshold,
    }
    summaries, names, data = _read_inputs(args, run)
    rel = check_relevance(summaries, args.relevance_threshold)
    if not rel.passed and not args.force:
        print(
            f"relevance check FAILED: residual variance {report.g6(rel.residual_variance)}"
            f" <= threshold {report.g6(rel.threshold)}; rerun with --force to estimate anyway",
            file=sys.stderr,
        )
        return 1
    kw = {"require_relevance": False, "relevance_threshold": args.relevance_threshold}
    selection = None
    if args.order_auto:
        selection = select_order(summaries, args.max_order, args.alpha, **kw)
        order = selection.selected
        tests = selection.tests
        if order == 0:
            fit = selection.estimate
        else:
            fit = est.cmma(summaries, order, **kw)
    else:
        order = args.order
        fit = est.cmma(summaries, order, **kw)
        tests = wald_battery(fit, args.alpha)

    if data is not None:
        csvio.write_summaries(summaries, run.path("summaries.csv"), names)

    doc = {
        "estimate": report.estimate_dict(fit, names),
        "selected_order": order,
        "order_selection": report.selection_dict(selection) if selection else None,
        "wald_tests": [report.wald_dict(r) for r in tests],
        "relevance": report.relevance_dict(rel),
        "comparators": None,
    }
    coef_rows = [(fit.estimator_name, f"beta{p + 1}", b, s) for p, (b, s) in enumerate(zip(fit.beta, fit.beta_se))]

    comparators = []
    if args.with_comparators:
        if data is None:
            raise UsageError("--with-comparators needs unit-level input (--units)")
        P = fit.order
        for name in (est.LIML, est.CMMA, est.FULL_2SLS, est.SOBEL, est.LSEM):
            c = fit if name == est.CMMA else est.UNIT_ESTIMATORS[name](data, P)
            comparators.append(c)
        doc["comparators"] = [report.estimate_dict(c, names) for c in comparators]
        for c in comparators:
            if c is not fit:
                coef_rows += [(c.estimator_name, f"beta{p + 1}", b, s) for p, (b, s) in enumerate(zip(c.beta, c.beta_se))]

    report.write_json(run.path("estimate.json"), doc)
    report.write_csv(run.path("coefficients.csv"), ("estimator", "term", "estimate", "se"), coef_rows)
    report.write_csv(
        run.path("wald.csv"),
        ("hypothesis", "statistic", "df", "p_value", "rejected"),
        [(r.hypothesis, r.result.statistic, r.result.rank, r.result.p_value, int(r.rejected)) for r in tests],
    )
    run.finish()

    print(report.estimate_text(fit, tests, rel, names))
    if selection is not None:
        print(f"\nselected order: {order} (alpha {args.alpha})")
    if comparators:
        print()
        print(
            report.align(
                [(c.estimator_name, *(report.g6(b) for b in c.beta), *(report.g6(s) for s in c.beta_se)) for c in comparators],
                ("estimator", *(f"beta{p + 1}" for p in range(fit.order)), *(f"se{p + 1}" for p in range(fit.order))),
            )
        )
    return 0


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _parse_grid(text: str) -> np.ndarray:
    parts = text.split(":")
    if len(parts) != 3:
        raise UsageError("--grid must be start:stop:count")
    try:
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise UsageError("--grid must be start:stop:count") from None
    if count < 2:
        raise UsageError("--grid count must be >= 2")
    return np.linspace(start, stop, count)


def cmd_elasticity(args) -> int:
    run = Run("elasticity", args)
    if (args.estimate is None) == (args.coefficients is None):
        raise UsageError("give exactly one of --estimate or --coefficients")
    if args.estimate is not None:
        import json

        doc = json.loads(Path(run.input(args.estimate)).read_text(encoding="utf-8"))
        beta = doc["estimate"]["drf"]["beta"] if "estimate" in doc else doc["drf"]["beta"]
    else:
        beta = _parse_floats(args.coefficients)
    drf = PolynomialDrf(tuple(beta))
    points = _parse_floats(args.points) if args.points else []
    run.config = {"beta": list(drf.beta), "points": points, "delta": args.delta, "grid": args.grid}
    rows, text_rows = [], []
    for m in points:
        (m_, mu, el), = elasticity_curve(drf, [m], args.delta)
        err = "" if np.isfinite(el) else "undefined: mu(m) = 0"
        rows.append((m_, mu, el if not err else "NA", err))
        text_rows.append((report.g6(m_), report.g6(mu), report.g6(el) if not err else "NA", err))
    report.write_csv(run.path("elasticity.csv"), ("m", "mu_hat", "elasticity_pct", "error"), rows)
    if args.grid:
        grid = elasticity_curve(drf, _parse_grid(args.grid), args.delta)
        report.write_csv(
            run.path("elasticity_grid.csv"),
            ("m", "mu_hat", "elasticity_pct"),
            [(m, mu, el if np.isfinite(el) else "NA") for m, mu, el in grid],
        )
    run.finish()
    if text_rows:
        print(report.align(text_rows, ("m", "mu_hat", f"elasticity % (+{100 * args.delta:g}%)", "note")))
    return 0


def cmd_benchmark(args) -> int:
    if args.replications < 1:
        raise UsageError("--replications must be >= 1")
    run = Run("benchmark", args)
    sizes = args.n_per or None
    args.n_per = None
    cfg = load_config(run.input(args.config), args)
    run.config = {**cfg.to_dict(), "table": args.table, "replications": args.replications, "n_per": sizes}
    run.seed = cfg.seed
    R, jobs = args.replications, args.jobs
    if args.table == "2":
        reports = run_size_sweep(cfg, sizes or (200, 500, 1000), replications=R, n_jobs=jobs)
        rows = list(report.benchmark_rows(reports, "2"))
        text = "Finite-sample performance\n" + report.size_grid_text(reports, "estimator")
        failed = sum(r.n_failed for r in reports)
    elif args.table == "3":
        reports = []
        for n in sizes or (200, 500, 1000):
            reports += run_violation_suite(cfg.replace(n_per_trial=n), R, n_jobs=jobs).values()
        rows = list(report.benchmark_rows(reports, "3"))
        text = "Assumption violation (CMMA)\n" + report.size_grid_text(reports, "violation")
        failed = sum(r.n_failed for r in reports)
    else:
        n_per = sizes[0] if sizes else 1000
        sel = run_table4(cfg, R, args.alpha, n_jobs=jobs, n_per_trial=n_per)
        rows = list(report.selection_rows(sel))
        text = "Model selection and Wald tests\n" + report.selection_text(sel)
        failed = sum(s.n_failed for s in sel)
    header = report.SELECTION_HEADER if args.table == "4" else report.BENCH_HEADER
    report.write_csv(run.path(f"table{args.table}.csv"), header, rows)
    run.path(f"table{args.table}.txt").write_text(text + "\n", encoding="utf-8")
    run.finish()
    print(text)
    if failed:
        print(f"{failed} estimator failures across replications", file=sys.stderr)
        return 1
    return 0


def cmd_validate(args) -> int:
    args.order, args.order_auto, args.max_order = 1, False, 1
    run = Run("validate", args)
    summaries, _, data = _read_inputs(args, run)
    rel = check_relevance(summaries, args.relevance_threshold)
    run.config = {"relevance_threshold": args.relevance_threshold}
    report.write_json(
        run.path("validation.json"),
        {
            "schema": "ok",
            "n_trials": len(summaries),
            "n_units": None if data is None else data.n_units,
            "relevance": report.relevance_dict(rel),
        },
    )
    run.finish()
    size = f", {data.n_units} units" if data is not None else ""
    print(f"schema ok: {len(summaries)} trials{size}")
    print(
        f"relevance: {rel.status} (residual variance {report.g6(rel.residual_variance)}"
        f" vs threshold {report.g6(rel.threshold)})"
    )
    return 0 if rel.passed else 1


# --- parser ----------------------------------------------------------------


def _add_input_args(p) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--units", help="unit-level CSV")
    src.add_argument("--summaries", help="trial summary CSV")
    p.add_argument("--covariates", help="trial covariate CSV (required with --units)")
    p.add_argument("--relevance-threshold", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmma", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write one simulated dataset")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-per", type=int)
    p.add_argument("--fixed-trial-sizes", action="store_true")
    p.add_argument("--replication", type=int, default=0)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate the dose-response function")
    _add_input_args(p)
    p.add_argument("--order", default="1", help="polynomial order or 'auto'")
    p.add_argument("--order-auto", action="store_true")
    p.add_argument("--max-order", type=int, default=3)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--with-comparators", action="store_true")
    p.add_argument("--force", action="store_true")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("elasticity", help="elasticities of an estimated DRF")
    p.add_argument("--estimate", help="estimate.json written by 'estimate'")
    p.add_argument("--coefficients", help="comma-separated beta_1..beta_P")
    p.add_argument("--points", help="comma-separated evaluation points")
    p.add_argument("--delta", type=float, default=0.10)
    p.add_argument("--grid", help="start:stop:count grid for a plot-ready curve")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_elasticity)

    p = sub.add_parser("benchmark", help="Monte Carlo tables")
    p.add_argument("--table", choices=("2", "3", "4"), required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--replications", type=int, default=100)
    p.add_argument("--n-per", type=int, nargs="+")
    p.add_argument("--fixed-trial-sizes", action="store_true")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("validate", help="schema and relevance checks only")
    _add_input_args(p)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (CmmaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
