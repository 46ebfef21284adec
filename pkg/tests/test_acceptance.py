"""End-to-end acceptance checks, one PASS/FAIL line per criterion.

The Monte Carlo criteria (2-4) run 100 replications each and take a few
minutes in total. Run alone with ``pytest tests/test_acceptance.py -s``.
"""

import json

import numpy as np
import pytest

import oracles
from cmma import estimators as est
from cmma.cli import main
from cmma.drf import PolynomialDrf, elasticity
from cmma.model import summarize_trials
from cmma.regress import chi2_sf, ols
from cmma.simulate import SimulationConfig, draw, run_size_sweep, run_table4, run_violation_suite
from conftest import random_dataset

R = 100
BASE = SimulationConfig()


def verdict(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
    assert ok, detail


def within(x, target, tol):
    return abs(x - target) <= tol


# --- 1 ---------------------------------------------------------------------------


def test_criterion_1_exact_equivalence(capsys):
    worst = 0.0
    for i in range(50):
        P = 1 + i % 2
        d = random_dataset(np.random.default_rng(1000 + i), K=5, n_per=20, J=2, order=P)
        a = est.cmma(summarize_trials(d, P), P, require_relevance=False).beta
        b = est.weight_adjusted_2sls(d, P).beta
        worst = max(worst, float(np.max(np.abs(a - b) / np.abs(a))))
    verdict(capsys, 1, worst <= 1e-8, f"max relative gap CMMA vs weight-adjusted 2SLS over 50 datasets = {worst:.2e}")


# --- 2 ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def table2():
    reports = run_size_sweep(BASE, (200, 500, 1000), replications=R)
    return {rep.n_per_trial: rep for rep in reports}


def test_criterion_2_table2(capsys, table2):
    problems, cells = [], []
    for n, bias0, cov0 in ((200, 0.058, 0.67), (500, 0.020, 0.88), (1000, 0.011, 0.88)):
        rep = table2[n]
        c, lm, sb, ls = (rep.row(e) for e in (est.CMMA, est.LIML, est.SOBEL, est.LSEM))
        cells.append(f"N={n}: CMMA {c.mean_bias:.3f}/{100 * c.coverage:.0f}%")
        checks = {
            f"CMMA bias {c.mean_bias:.3f} vs {bias0}±0.02": within(c.mean_bias, bias0, 0.02),
            f"CMMA coverage {100 * c.coverage:.0f}% vs {100 * cov0:.0f}±8": within(c.coverage, cov0, 0.08 + 1e-12),
            f"LIML bias {lm.mean_bias:.3f}": abs(lm.mean_bias) <= 0.01,
            f"Sobel bias {sb.mean_bias:.3f} cov {100 * sb.coverage:.0f}%": 0.22 <= sb.mean_bias <= 0.37
            and sb.coverage <= 0.10,
            f"LSEM bias {ls.mean_bias:.3f} cov {100 * ls.coverage:.0f}%": 0.85 <= ls.mean_bias <= 1.02
            and ls.coverage <= 0.02,
            f"failures {rep.n_failed}": rep.n_failed == 0,
        }
        problems += [f"N={n} {k}" for k, ok in checks.items() if not ok]
    detail = "; ".join(cells) + ("" if not problems else " | out of tolerance: " + "; ".join(problems))
    verdict(capsys, 2, not problems, detail)


def test_estimator_ranking_at_1000(table2):
    rep = table2[1000]
    b = {e: abs(rep.row(e).mean_bias) for e in (est.LIML, est.CMMA, est.SOBEL, est.LSEM)}
    assert b[est.LIML] <= b[est.CMMA] < b[est.SOBEL] < b[est.LSEM]


def test_cmma_bias_decreases_with_size(table2):
    biases = [table2[n].row(est.CMMA).mean_bias for n in (200, 500, 1000)]
    assert biases[0] > biases[1] > biases[2]


# --- 3 ---------------------------------------------------------------------------


def test_criterion_3_table3(capsys):
    suite = run_violation_suite(BASE.replace(n_per_trial=1000), R)
    row = {v: rep.row(est.CMMA) for v, rep in suite.items()}
    b = {v: r.mean_bias for v, r in row.items()}
    ok = (
        within(b["A2"], b["none"], 0.03)
        and b["A3"] >= 0.2
        and row["A3"].coverage <= 0.10
        and b["A4"] >= 0.5
        and row["A4"].coverage == 0.0
        and abs(b["A4"]) > abs(b["A3"]) > abs(b["A2"])
        and all(rep.n_failed == 0 for rep in suite.values())
    )
    detail = ", ".join(f"{v} {r.mean_bias:.3f}/{100 * r.coverage:.0f}%" for v, r in row.items())
    verdict(capsys, 3, ok, detail)


# --- 4 ---------------------------------------------------------------------------

TABLE4 = (
    ((3, 5, 100), 1, (4.016,)),
    ((3, 100, 100), 2, (4.019, 1.999)),
    ((100, 100, 100), 3, (4.022, -0.001, 5.0)),
)


def test_criterion_4_table4(capsys):
    reports = run_table4(BASE, R)
    problems, cells = [], []
    for rep, (rates, order, beta) in zip(reports, TABLE4):
        got = [100 * rep.rejection_rate[p] for p in (3, 2, 1)]
        cells.append(f"{rep.label}: {'/'.join(f'{g:.0f}' for g in got)}% order {rep.selected_order} beta {', '.join(f'{b:.3f}' for b in rep.mean_beta)}")
        if any(abs(g - t) > 5 + 1e-9 for g, t in zip(got, rates)):
            problems.append(f"{rep.label} rejection rates")
        if rep.selected_order != order:
            problems.append(f"{rep.label} selected order")
        elif any(abs(g - t) > 0.1 for g, t in zip(rep.mean_beta, beta)):
            problems.append(f"{rep.label} coefficients")
        if rep.n_failed:
            problems.append(f"{rep.label} failures")
    detail = "; ".join(cells) + ("" if not problems else " | out of tolerance: " + ", ".join(problems))
    verdict(capsys, 4, not problems, detail)


# --- 5 ---------------------------------------------------------------------------

GOLDEN = (
    ("NDCG", (3369.9, -18593.8, 16733.0), 0.0021, 9.87),
    ("NDCG", (3369.9, -18593.8, 16733.0), 0.006, 9.63),
    ("MAP", (2113.3, -17254.4, 16191.1), 0.00156, 9.86),
    ("MRR", (3227.6, -21411.1, 19229.7), 0.00153, 9.89),
)


def test_criterion_5_elasticity(capsys):
    ok, parts = True, []
    for name, beta, m, want in GOLDEN:
        got = elasticity(PolynomialDrf(beta), m)
        ref = oracles.arc_elasticity(beta, m)
        ok &= abs(got - want) <= 0.05 and abs(got - ref) <= 1e-10
        parts.append(f"{name}@{m} {got:.4f} (oracle gap {abs(got - ref):.1e})")
    verdict(capsys, 5, ok, "; ".join(parts))


# --- 6 ---------------------------------------------------------------------------


def _eq10_design(d):
    """Stage-two regressors [Z tau, S, Z H] and the structural error at the true parameters."""
    data = d.dataset
    k, t = data.trial, data.treatment.astype(float)
    K, beta = data.n_trials, BASE.beta[0]
    H = data.registry.covariates
    S = np.zeros((data.n_units, K))
    S[np.arange(data.n_units), k] = 1.0
    z_tau = d.tau[k] * t
    ZH = H[k] * t[:, None]
    X = np.column_stack([z_tau, S, ZH])
    fitted = beta * z_tau + (d.theta + beta * d.phi)[k] + ZH @ np.array(BASE.pi)
    return X, data.outcome - fitted


def test_criterion_6_moments(capsys):
    d = draw(BASE.replace(n_per_trial=5000), 0)
    X, eps = _eq10_design(d)
    n = eps.size
    std = (X * eps[:, None]).mean(axis=0) / np.sqrt((X**2).mean(axis=0) * (eps**2).mean())
    moment = float(np.max(np.abs(std)))

    probes = [(r, x) for r in (1, 2, 3) for x in (0.1, 1.0, 5.0, 10.0)]
    tail = max(abs(chi2_sf(x, r) - oracles.chi2_upper_tail(x, r)) for r, x in probes)

    small = draw(BASE.replace(n_per_trial=200), 1)
    Xs, _ = _eq10_design(small)
    Xs = Xs / np.linalg.norm(Xs, axis=0)
    y = small.dataset.outcome / np.linalg.norm(small.dataset.outcome)
    orth = float(np.max(np.abs(Xs.T @ ols(Xs, y).residuals)))

    ok = moment <= 4 / np.sqrt(n) and tail <= 1e-6 and orth <= 1e-8
    detail = (
        f"max standardized moment {moment:.2e} (bound {4 / np.sqrt(n):.2e}, {X.shape[1]} regressors); "
        f"chi-square tail gap {tail:.1e} at 12 probes; OLS orthogonality {orth:.1e}"
    )
    verdict(capsys, 6, ok, detail)


# --- 7 ---------------------------------------------------------------------------


def _snapshot(d):
    manifest = json.loads((d / "manifest.json").read_text())
    files = {o: (d / o).read_bytes() for o in manifest["outputs"]}
    manifest.pop("wall_time_seconds")
    manifest["inputs"] = sorted(manifest["inputs"].values())
    return files, manifest


def test_criterion_7_determinism(capsys, tmp_path):
    sim = tmp_path / "sim"
    main(["simulate", "--n-per", "100", "--output", str(sim)])
    units = ["--units", str(sim / "units.csv"), "--covariates", str(sim / "covariates.csv")]
    commands = {
        "simulate": ["simulate", "--n-per", "100"],
        "validate": ["validate", *units],
        "estimate": ["estimate", *units, "--order", "auto", "--with-comparators"],
        "elasticity": ["elasticity", "--coefficients", "3227.6,-21411.1,19229.7", "--points", "0.00153", "--grid", "0.001:0.01:20"],
        "benchmark 2": ["benchmark", "--table", "2", "--replications", "3", "--n-per", "60", "100"],
        "benchmark 3": ["benchmark", "--table", "3", "--replications", "3", "--n-per", "60"],
        "benchmark 4": ["benchmark", "--table", "4", "--replications", "3", "--n-per", "60"],
    }
    differing = []
    for i, (name, cmd) in enumerate(commands.items()):
        snaps = []
        for run, jobs in enumerate((1, 2)):
            out = tmp_path / f"{i}_{run}"
            extra = ["--jobs", str(jobs)] if cmd[0] == "benchmark" else []
            main([*cmd, *extra, "--output", str(out)])
            snaps.append(_snapshot(out))
        if not snaps[0][0] or snaps[0] != snaps[1]:
            differing.append(name)
    detail = f"{len(commands)} commands run twice (benchmarks with 1 and 2 workers)"
    detail += "; all outputs byte-identical" if not differing else f"; differing: {differing}"
    verdict(capsys, 7, not differing, detail)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
