"""Least-squares core: OLS, two-stage least squares, LIML and Wald tests.

All solves go through orthogonal factorizations. A column is declared
linearly dependent when the magnitude of its R-factor diagonal falls below
``RANK_TOL`` times the largest diagonal entry.

Every fitter accepts ``absorb``: integer group codes whose indicator columns
belong to the exogenous regressors. They are partialled out exactly by
within-group demeaning (Frisch-Waugh-Lovell) instead of being materialized,
and the residual degrees of freedom are reduced by the number of groups.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.special import gammaincc

from .errors import NumericError, RankDeficiencyError, UnderIdentificationError

RANK_TOL = 1e-10
KAPPA_TOL = 1e-8
# residual norm, relative to the response norm, below which a fit counts as exact
EXACT_FIT_TOL = 1e-12


@dataclass(frozen=True)
class LinearFit:
    coefficients: np.ndarray
    covariance: np.ndarray
    residual_variance: float
    degrees_of_freedom: int
    n_observations: int
    residuals: np.ndarray | None = field(default=None, repr=False, compare=False)
    kappa: float | None = None
    zero_residual: bool = False

    @property
    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    @property
    def n_coefficients(self) -> int:
        return int(self.coefficients.shape[0])


@dataclass(frozen=True)
class WaldResult:
    statistic: float
    rank: int
    p_value: float


def chi2_sf(x: float, df: int) -> float:
    """Upper tail probability of a chi-square(df) variable at ``x``."""
    if df < 1:
        raise ValueError("degrees of freedom must be >= 1")
    if x <= 0.0:
        return 1.0
    return float(gammaincc(0.5 * df, 0.5 * x))


def _as_matrix(a, n: int | None = None) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError("expected a 1-D or 2-D array")
    if n is not None and a.shape[0] != n:
        raise ValueError(f"expected {n} rows, got {a.shape[0]}")
    return a


def demean(X: np.ndarray, groups: np.ndarray) -> np.ndarray:
    """Subtract group means from each column of ``X``."""
    counts = np.bincount(groups)
    if X.ndim == 1:
        return X - (np.bincount(groups, weights=X, minlength=counts.size) / counts)[groups]
    out = np.empty_like(X, dtype=float)
    for j in range(X.shape[1]):
        col = X[:, j]
        out[:, j] = col - (np.bincount(groups, weights=col, minlength=counts.size) / counts)[groups]
    return out


def _absorb(groups, n: int, *arrays):
    """Demean ``arrays`` within groups; returns (arrays, number of groups)."""
    if groups is None:
        return arrays, 0
    groups = np.asarray(groups)
    if groups.shape != (n,):
        raise ValueError("absorb must hold one group code per observation")
    _, codes = np.unique(groups, return_inverse=True)
    n_groups = int(codes.max()) + 1 if n else 0
    return tuple(demean(a, codes) for a in arrays), n_groups


def _check_rank(R: np.ndarray, stage: str | None) -> None:
    d = np.abs(np.diag(R))
    scale = d.max() if d.size else 0.0
    if scale == 0.0:
        raise RankDeficiencyError(0, stage)
    bad = np.flatnonzero(d <= RANK_TOL * scale)
    if bad.size:
        raise RankDeficiencyError(int(bad[0]), stage)


def _lstsq(X: np.ndarray, y: np.ndarray, stage: str | None = None):
    """Coefficients and R^{-1} from the R factor of [X y]; Q is never formed."""
    q = X.shape[1]
    Raug = np.linalg.qr(np.column_stack([X, y]), mode="r")
    R = Raug[:q, :q]
    _check_rank(R, stage)
    coef = sla.solve_triangular(R, Raug[:q, q])
    Rinv = sla.solve_triangular(R, np.eye(q))
    return coef, Rinv


def column_basis(A: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the column space of ``A`` (redundant columns allowed)."""
    if A.shape[1] == 0:
        return np.zeros((A.shape[0], 0))
    Q, R, _ = sla.qr(A, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0.0:
        return np.zeros((A.shape[0], 0))
    rank = int(np.count_nonzero(d > RANK_TOL * d[0]))
    return Q[:, :rank]


def residualize(basis: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Residuals of X after projection onto an orthonormal ``basis``."""
    if basis.shape[1] == 0:
        return X.copy()
    return X - basis @ (basis.T @ X)


def _finish(coef, Rinv, resid, n, dof, robust=False, design=None, y=None) -> LinearFit:
    if dof < 1:
        raise ValueError(f"no residual degrees of freedom (n={n})")
    rss = float(resid @ resid)
    exact = y is not None and rss <= EXACT_FIT_TOL**2 * float(y @ y)
    s2 = rss / dof
    if robust:
        Q = design @ Rinv
        meat = (Q * resid[:, None] ** 2).T @ Q
        cov = Rinv @ meat @ Rinv.T * (n / dof)
    else:
        cov = s2 * (Rinv @ Rinv.T)
    return LinearFit(coef, 0.5 * (cov + cov.T), s2, dof, n, resid, zero_residual=exact)


def ols(X, y, robust: bool = False, stage: str | None = None, absorb=None) -> LinearFit:
    """Least squares of ``y`` on the columns of ``X`` (no intercept added).

    With ``robust=True`` the covariance is the HC1 sandwich instead of the
    homoskedastic ``s^2 (X'X)^{-1}``.
    """
    y = np.asarray(y, dtype=float).ravel()
    X = _as_matrix(X, y.shape[0])
    n, q = X.shape
    (X, y), n_groups = _absorb(absorb, n, X, y)
    if n <= q + n_groups:
        raise ValueError(f"need more observations than regressors (n={n}, q={q + n_groups})")
    coef, Rinv = _lstsq(X, y, stage)
    resid = y - X @ coef
    return _finish(coef, Rinv, resid, n, n - q - n_groups, robust, X, y)


def _prepare_iv(y, endog, exog, instruments, absorb):
    y = np.asarray(y, dtype=float).ravel()
    n = y.shape[0]
    endog = _as_matrix(endog, n)
    exog = _as_matrix(exog, n) if exog is not None else np.zeros((n, 0))
    instruments = _as_matrix(instruments, n)
    E, G, Z = endog.shape[1], exog.shape[1], instruments.shape[1]
    if Z < E:
        raise UnderIdentificationError(f"{Z} instruments for {E} endogenous regressors")
    (y, endog, exog, instruments), n_groups = _absorb(absorb, n, y, endog, exog, instruments)
    if n <= E + G + n_groups:
        raise ValueError(f"need more observations than regressors (n={n}, q={E + G + n_groups})")
    return y, endog, exog, instruments, n_groups


def _identification_basis(exog: np.ndarray, instruments: np.ndarray, n_endog: int):
    """Bases for exog alone and for [instruments, exog]; checks the rank condition."""
    b_exog = column_basis(exog)
    b_all = column_basis(np.hstack([instruments, exog]))
    excluded = b_all.shape[1] - b_exog.shape[1]
    if excluded < n_endog:
        raise RankDeficiencyError(
            exog.shape[1] + instruments.shape[1] - 1,
            "first",
            f"only {excluded} instruments independent of exogenous regressors for {n_endog} endogenous",
        )
    return b_exog, b_all


def tsls(y, endog, exog, instruments, robust: bool = False, absorb=None, residuals: str = "structural") -> LinearFit:
    """Two-stage least squares; coefficients ordered ``[endog..., exog...]``.

    The covariance is the second-stage OLS formula without any correction for
    the generated regressors. Its residual variance comes from the structural
    residuals ``y - [endog, exog] b`` by default; ``residuals="second_stage"``
    uses the residuals of the fitted-value regression instead.
    """
    if residuals not in ("structural", "second_stage"):
        raise ValueError("residuals must be 'structural' or 'second_stage'")
    y, endog, exog, instruments, n_groups = _prepare_iv(y, endog, exog, instruments, absorb)
    _, b_all = _identification_basis(exog, instruments, endog.shape[1])
    fitted = np.hstack([b_all @ (b_all.T @ endog), exog])
    coef, Rinv = _lstsq(fitted, y, "second")
    if residuals == "structural":
        resid = y - np.hstack([endog, exog]) @ coef
    else:
        resid = y - fitted @ coef
    n, q = fitted.shape
    return _finish(coef, Rinv, resid, n, n - q - n_groups, robust, fitted, y)


def liml(y, endog, exog, instruments, absorb=None) -> LinearFit:
    """Limited-information maximum likelihood as a k-class estimator.

    kappa is the smallest root of det(W'M1W - k W'MW) = 0 with W = [y, endog],
    M1 annihilating ``exog`` and M annihilating ``[exog, instruments]``.
    """
    y, endog, exog, instruments, n_groups = _prepare_iv(y, endog, exog, instruments, absorb)
    b_exog, b_all = _identification_basis(exog, instruments, endog.shape[1])
    W = np.column_stack([y, endog])
    m1w = residualize(b_exog, W)
    mw = residualize(b_all, W)
    try:
        kappas = sla.eigh(m1w.T @ m1w, mw.T @ mw, eigvals_only=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"LIML eigenproblem failed: {exc}") from exc
    kappa = float(kappas[0])
    if not np.isfinite(kappa) or kappa < 1.0 - KAPPA_TOL:
        raise NumericError(f"LIML kappa={kappa!r} is below 1")

    X = np.hstack([endog, exog])
    n, q = X.shape
    _check_rank(np.linalg.qr(X, mode="r"), "second")
    mx = residualize(b_all, X)
    my = mw[:, 0]
    G = X.T @ X - kappa * (mx.T @ mx)
    rhs = X.T @ y - kappa * (mx.T @ my)
    try:
        cho = sla.cho_factor(G)
    except np.linalg.LinAlgError as exc:
        raise NumericError("k-class cross-product matrix is not positive definite") from exc
    coef = sla.cho_solve(cho, rhs)
    resid = y - X @ coef
    dof = n - q - n_groups
    s2 = float(resid @ resid) / dof
    cov = s2 * sla.cho_solve(cho, np.eye(q))
    return LinearFit(coef, 0.5 * (cov + cov.T), s2, dof, n, resid, kappa=kappa)


def wald_test(fit: LinearFit, R, r0=None) -> WaldResult:
    """Wald test of the linear restrictions ``R @ beta == r0``."""
    R = np.atleast_2d(np.asarray(R, dtype=float))
    r = R.shape[0]
    if R.shape[1] != fit.n_coefficients:
        raise ValueError(f"R has {R.shape[1]} columns, fit has {fit.n_coefficients} coefficients")
    r0 = np.zeros(r) if r0 is None else np.asarray(r0, dtype=float).ravel()
    if np.linalg.matrix_rank(R) < r:
        raise ValueError("restriction matrix R must have full row rank")
    d = R @ fit.coefficients - r0
    if not np.any(d):
        return WaldResult(0.0, r, 1.0)
    V = R @ fit.covariance @ R.T
    V = 0.5 * (V + V.T)
    try:
        cho = sla.cho_factor(V)
    except np.linalg.LinAlgError as exc:
        raise NumericError(
            "R·cov·R' is singular; remove redundant restrictions or check the fit"
        ) from exc
    stat = float(max(d @ sla.cho_solve(cho, d), 0.0))
    return WaldResult(stat, r, chi2_sf(stat, r))


def select_rows(q: int, idx) -> np.ndarray:
    """Restriction matrix selecting coefficients ``idx`` out of ``q``."""
    idx = list(idx)
    R = np.zeros((len(idx), q))
    R[np.arange(len(idx)), idx] = 1.0
    return R
