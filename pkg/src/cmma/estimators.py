"""Dose-response estimators sharing the :class:`DrfEstimate` output type.

Unit-level layouts use S (trial one-hot), Z = S*T (trial-by-treatment
dummies) and Z @ H (treatment interacted with trial covariates).
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from . import regress
from .errors import InsufficientTrialsError, RankDeficiencyError, RelevanceError
from .model import Dataset, TrialSummary, check_relevance, summary_arrays
from .regress import LinearFit

log = logging.getLogger(__name__)

CMMA = "CMMA"
FULL_2SLS = "Full Sample 2SLS"
WEIGHTED_2SLS = "Weight-Adjusted 2SLS"
SOBEL = "Sobel"
LSEM = "LSEM"
LIML = "LIML"


@dataclass(frozen=True)
class DrfEstimate:
    order: int
    beta: np.ndarray
    beta_covariance: np.ndarray
    pi: np.ndarray
    estimator_name: str
    n_trials: int
    n_units: int | None = None
    fit: LinearFit | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("order must be >= 1")

    @property
    def beta_se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.beta_covariance), 0.0, None))

    def covers(self, truth, level_z: float = 1.96, index: int = 0) -> bool:
        """Whether ``beta[index] +- level_z * se`` contains ``truth``."""
        se = self.beta_se[index]
        return bool(abs(self.beta[index] - truth) <= level_z * se)


def _estimate(fit: LinearFit, name: str, P: int, pi_slice: slice | None, K: int, n: int | None) -> DrfEstimate:
    pi = fit.coefficients[pi_slice] if pi_slice is not None else np.zeros(0)
    return DrfEstimate(
        order=P,
        beta=fit.coefficients[:P].copy(),
        beta_covariance=fit.covariance[:P, :P].copy(),
        pi=np.array(pi, copy=True),
        estimator_name=name,
        n_trials=K,
        n_units=n,
        fit=fit,
    )


def cmma(
    summaries: Sequence[TrialSummary],
    order: int | None = None,
    *,
    require_relevance: bool = True,
    relevance_threshold: float | None = None,
) -> DrfEstimate:
    """Trial-level regression of ATE on Y on the ATEs of mediator powers and H.

    No intercept and no weights. ``order`` defaults to the number of powers
    the summaries carry. With ``require_relevance=False`` a failing relevance
    check only logs a warning.
    """
    ate_y, ate_m, H = summary_arrays(summaries, order)
    K, P = ate_m.shape
    J = H.shape[1]
    if K <= P + J:
        raise InsufficientTrialsError(f"CMMA needs more than {P + J} trials, got {K}")
    if K > J + 1:
        rel = check_relevance(summaries, relevance_threshold)
        if not rel.passed:
            msg = (
                f"relevance check failed: residual variance {rel.residual_variance:.6g}"
                f" <= threshold {rel.threshold:.6g}"
            )
            if require_relevance:
                raise RelevanceError(msg)
            log.warning(msg)
    X = np.hstack([ate_m, H])
    try:
        fit = regress.ols(X, ate_y)
    except RankDeficiencyError as exc:
        names = [f"ate_m_{p}" for p in range(1, P + 1)] + [f"h{j + 1}" for j in range(J)]
        raise RankDeficiencyError(exc.column, exc.stage, names[exc.column]) from None
    return _estimate(fit, CMMA, P, slice(P, P + J), K, None)


def unit_design(data: Dataset, order: int):
    """(y, mediator powers, Z, Z @ H) arrays; S is left implicit in ``data.trial``."""
    n, K = data.n_units, data.n_trials
    T = data.treatment.astype(float)
    Z = np.zeros((n, K))
    Z[np.arange(n), data.trial] = T
    ZH = data.registry.covariates[data.trial] * T[:, None]
    powers = data.mediator[:, None] ** np.arange(1, order + 1)
    return data.outcome, powers, Z, ZH


def trial_dummies(data: Dataset) -> np.ndarray:
    S = np.zeros((data.n_units, data.n_trials))
    S[np.arange(data.n_units), data.trial] = 1.0
    return S


def _first_stage_tau(powers, Z, trial) -> np.ndarray:
    """Per-trial treatment effects on each mediator power (K x P): coefficients
    on Z from regressing each power on [Z, S]."""
    return np.column_stack(
        [regress.ols(Z, powers[:, p], stage="first", absorb=trial).coefficients for p in range(powers.shape[1])]
    )


def full_sample_2sls(data: Dataset, order: int = 1) -> DrfEstimate:
    """Unit-level two-step procedure: tau-hat per power from Y-free first
    stages, then Y on [Z tau-hat, S, Z H].

    The covariance is the second-stage OLS formula with structural residuals
    (observed mediator powers in place of the fitted terms).
    """
    y, powers, Z, ZH = unit_design(data, order)
    tau = _first_stage_tau(powers, Z, data.trial)
    X = np.hstack([Z @ tau, ZH])
    (Xd, yd, structural), n_groups = regress._absorb(data.trial, data.n_units, X, y, np.hstack([powers, ZH]))
    coef, Rinv = regress._lstsq(Xd, yd, "second")
    resid = yd - structural @ coef
    n, q = X.shape
    fit = regress._finish(coef, Rinv, resid, n, n - q - n_groups)
    K, J = data.n_trials, data.registry.n_covariates
    return _estimate(fit, FULL_2SLS, order, slice(order, order + J), K, data.n_units)


def annihilator(S: np.ndarray) -> np.ndarray:
    """Explicit M_S = I - S (S'S)^{-1} S'. Dense n x n: small data only."""
    return np.eye(S.shape[0]) - S @ np.linalg.solve(S.T @ S, S.T)


def _apply_annihilator(S: np.ndarray, X: np.ndarray) -> np.ndarray:
    return X - S @ np.linalg.solve(S.T @ S, S.T @ X)


def weight_adjusted_2sls(data: Dataset, order: int = 1) -> DrfEstimate:
    """2SLS on the residualized design weighted by W'W, W = (Z'M_S Z)^{-1} Z'.

    beta = (Zbar' M_S W'W M_S Zbar)^{-1} Zbar' M_S W'W M_S Y with
    Zbar = [Z tau-hat, Z H]. The products W M_S Zbar and W M_S Y are formed
    first so no n x n matrix is materialized.
    """
    y, powers, Z, ZH = unit_design(data, order)
    S = trial_dummies(data)
    tau = _first_stage_tau(powers, Z, data.trial)
    zbar = np.hstack([Z @ tau, ZH])
    ms_zbar = _apply_annihilator(S, zbar)
    ms_y = _apply_annihilator(S, y[:, None])[:, 0]
    ms_z = _apply_annihilator(S, Z)
    W = np.linalg.solve(Z.T @ ms_z, Z.T)
    A = W @ ms_zbar
    b = W @ ms_y
    K, q = A.shape
    gram = A.T @ A
    coef = np.linalg.solve(gram, A.T @ b)
    resid = b - A @ coef
    dof = K - q
    s2 = float(resid @ resid) / dof if dof > 0 else float("nan")
    cov = s2 * np.linalg.inv(gram)
    fit = LinearFit(coef, 0.5 * (cov + cov.T), s2, max(dof, 0), K, resid)
    J = data.registry.n_covariates
    return _estimate(fit, WEIGHTED_2SLS, order, slice(order, order + J), K, data.n_units)


def sobel_iv(data: Dataset, order: int = 1, fixed_effects: bool = False) -> DrfEstimate:
    """IV-2SLS of Y on mediator powers instrumented by Z, no direct-effect terms.

    By default the only exogenous regressor is an intercept; with
    ``fixed_effects=True`` trial dummies S are included instead.
    """
    y, powers, Z, _ = unit_design(data, order)
    if fixed_effects:
        fit = regress.tsls(y, powers, None, Z, absorb=data.trial)
    else:
        fit = regress.tsls(y, powers, np.ones(data.n_units), Z)
    return _estimate(fit, SOBEL, order, None, data.n_trials, data.n_units)


def lsem(data: Dataset, order: int = 1) -> DrfEstimate:
    """Pooled OLS of Y on [mediator powers, Z, S]; Z and S enter through
    trial-by-arm cell effects, which span the same space."""
    y, powers, _, _ = unit_design(data, order)
    fit = regress.ols(powers, y, absorb=2 * data.trial + data.treatment)
    return _estimate(fit, LSEM, order, None, data.n_trials, data.n_units)


def liml_estimator(data: Dataset, order: int = 1) -> DrfEstimate:
    """LIML on Y = powers*beta + S + Z H pi, instrumenting powers with Z."""
    y, powers, Z, ZH = unit_design(data, order)
    fit = regress.liml(y, powers, ZH, Z, absorb=data.trial)
    J = data.registry.n_covariates
    return _estimate(fit, LIML, order, slice(order, order + J), data.n_trials, data.n_units)


UNIT_ESTIMATORS = {
    LIML: liml_estimator,
    FULL_2SLS: full_sample_2sls,
    WEIGHTED_2SLS: weight_adjusted_2sls,
    SOBEL: sobel_iv,
    LSEM: lsem,
}
