"""Polynomial dose-response functions, elasticities and Wald-based order selection."""

from __future__ import annotations

from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .estimators import DrfEstimate, cmma
from .model import TrialSummary
from .regress import LinearFit, WaldResult, select_rows, wald_test


@dataclass(frozen=True)
class PolynomialDrf:
    """mu(m) = sum_p beta[p-1] * m**p; no constant term."""

    beta: tuple[float, ...]
    covariance: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if not self.beta:
            raise ValueError("a DRF needs at least one coefficient")

    @classmethod
    def from_estimate(cls, est: DrfEstimate) -> PolynomialDrf:
        return cls(tuple(est.beta), np.array(est.beta_covariance))

    @property
    def order(self) -> int:
        return len(self.beta)


def evaluate(drf: PolynomialDrf, m: float) -> float:
    acc = 0.0
    for b in reversed(drf.beta):
        acc = acc * m + b
    return acc * m


def elasticity(drf: PolynomialDrf, m: float, delta: float = 0.10) -> float:
    """Percent change of mu for a ``delta`` relative increase of m (forward arc)."""
    base = evaluate(drf, m)
    if base == 0.0:
        raise NumericError(f"elasticity undefined at m={m!r}: mu(m) = 0")
    return 100.0 * (evaluate(drf, m * (1.0 + delta)) - base) / base


def elasticity_curve(drf: PolynomialDrf, grid, delta: float = 0.10) -> list[tuple[float, float, float]]:
    """(m, mu_hat, elasticity_pct) rows; elasticity is NaN where mu(m) = 0."""
    rows = []
    for m in np.asarray(grid, dtype=float):
        mu = evaluate(drf, float(m))
        el = elasticity(drf, float(m), delta) if mu != 0.0 else float("nan")
        rows.append((float(m), mu, el))
    return rows


@dataclass(frozen=True)
class WaldRow:
    lowest_power: int
    highest_power: int
    result: WaldResult
    rejected: bool

    @property
    def hypothesis(self) -> str:
        terms = [f"beta{p}" for p in range(self.lowest_power, self.highest_power + 1)]
        return "H0: " + " = ".join(terms) + " = 0"


@dataclass(frozen=True)
class OrderSelection:
    selected: int
    tests: tuple[WaldRow, ...]
    estimate: DrfEstimate
    alpha: float


def wald_battery(est: DrfEstimate, alpha: float = 0.05) -> tuple[WaldRow, ...]:
    """Nested tests H0: beta_p = ... = beta_P = 0 for p = P down to 1."""
    P = est.order
    beta_fit = LinearFit(est.beta, est.beta_covariance, 0.0, 1, 0)
    rows = []
    for p in range(P, 0, -1):
        res = wald_test(beta_fit, select_rows(P, range(p - 1, P)))
        rows.append(WaldRow(p, P, res, res.p_value < alpha))
    return tuple(rows)


def order_from_tests(tests: Sequence[WaldRow]) -> int:
    """Largest p whose joint test of powers p..P rejects; 0 if none does."""
    rejected = [row.lowest_power for row in tests if row.rejected]
    return max(rejected) if rejected else 0


def select_order(
    summaries: Sequence[TrialSummary],
    max_order: int = 3,
    alpha: float = 0.05,
    **cmma_kwargs,
) -> OrderSelection:
    est = cmma(summaries, max_order, **cmma_kwargs)
    tests = wald_battery(est, alpha)
    return OrderSelection(order_from_tests(tests), tests, est, alpha)


def modal_order(orders: Sequence[int]) -> int:
    """Most frequent order; ties go to the smaller order."""
    counts = Counter(orders)
    best = max(counts.values())
    return min(o for o, c in counts.items() if c == best)
