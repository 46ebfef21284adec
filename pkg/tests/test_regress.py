import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from cmma import regress
from cmma.errors import NumericError, RankDeficiencyError, UnderIdentificationError
from cmma.regress import chi2_sf, liml, ols, select_rows, tsls, wald_test

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


# --- ols -------------------------------------------------------------------


def test_ols_constant_fit():
    fit = ols([[1.0], [1.0], [1.0]], [2.0, 2.0, 2.0])
    assert fit.coefficients == pytest.approx([2.0])
    assert fit.residual_variance == pytest.approx(0.0, abs=1e-28)
    assert fit.degrees_of_freedom == 2
    assert fit.zero_residual


def test_ols_exact_system():
    fit = ols([[1, 0], [0, 1], [1, 1]], [1, 2, 3])
    np.testing.assert_allclose(fit.coefficients, [1, 2], rtol=1e-12)


def test_ols_matches_extended_precision_normal_equations(rng):
    X = rng.normal(size=(50, 3))
    y = X @ [1.5, -2.0, 0.25] + rng.normal(size=50)
    want = oracles.normal_equations(X, y)
    np.testing.assert_allclose(ols(X, y).coefficients, want, rtol=1e-10)


def test_ols_covariance_formula(rng):
    X = rng.normal(size=(40, 2))
    y = rng.normal(size=40)
    fit = ols(X, y)
    resid = y - X @ fit.coefficients
    s2 = resid @ resid / 38
    np.testing.assert_allclose(fit.covariance, s2 * np.linalg.inv(X.T @ X), rtol=1e-10)
    assert fit.residual_variance == pytest.approx(s2, rel=1e-12)
    assert fit.degrees_of_freedom == fit.n_observations - fit.n_coefficients


def test_ols_names_first_dependent_column(rng):
    X = rng.normal(size=(20, 3))
    X = np.column_stack([X[:, 0], X[:, 1], X[:, 0] + X[:, 1], X[:, 2]])
    with pytest.raises(RankDeficiencyError) as info:
        ols(X, rng.normal(size=20))
    assert info.value.column == 2
    assert "column 2" in str(info.value)


def test_ols_needs_more_rows_than_columns():
    with pytest.raises(ValueError):
        ols(np.eye(3), [1.0, 2.0, 3.0])


def test_absorb_equals_explicit_dummies(rng):
    g = rng.integers(0, 4, 60)
    X = rng.normal(size=(60, 2))
    y = X @ [1.0, -1.0] + g * 0.7 + rng.normal(size=60)
    D = np.eye(4)[g]
    full = ols(np.hstack([X, D]), y)
    fwl = ols(X, y, absorb=g)
    np.testing.assert_allclose(fwl.coefficients, full.coefficients[:2], rtol=1e-10)
    np.testing.assert_allclose(fwl.covariance, full.covariance[:2, :2], rtol=1e-9)
    assert fwl.degrees_of_freedom == full.degrees_of_freedom


def test_robust_covariance_is_hc1(rng):
    X = rng.normal(size=(30, 2))
    y = rng.normal(size=30) * (1 + np.abs(X[:, 0]))
    fit = ols(X, y, robust=True)
    e = y - X @ fit.coefficients
    bread = np.linalg.inv(X.T @ X)
    want = bread @ (X.T * e**2) @ X @ bread * 30 / 28
    np.testing.assert_allclose(fit.covariance, want, rtol=1e-10)


@given(arrays(float, (12, 3), elements=finite), arrays(float, 12, elements=finite))
def test_ols_residuals_orthogonal(X, y):
    X = X / np.maximum(np.linalg.norm(X, axis=0), 1e-300)
    try:
        fit = ols(X, y)
    except RankDeficiencyError:
        return
    assert np.max(np.abs(X.T @ fit.residuals)) <= 1e-8 * 12 * max(1.0, np.abs(y).max())


@given(arrays(float, (10, 2), elements=st.floats(-3, 3)), st.floats(0.1, 10))
def test_covariance_symmetric(X, scale):
    X = X + np.eye(10, 2) * 5
    fit = ols(X * scale, np.arange(10.0))
    C = fit.covariance
    assert np.max(np.abs(C - C.T)) <= 1e-10 * np.max(np.abs(C))


# --- tsls / liml -------------------------------------------------------------


def _iv_data(rng, n=400, n_inst=3):
    Z = rng.normal(size=(n, n_inst))
    u = rng.normal(size=n)
    x = Z @ np.linspace(1, 2, n_inst) + 0.8 * u + rng.normal(size=n)
    w = rng.normal(size=n)
    y = 2.0 * x + 0.5 * w + u
    return y, x, w, Z


def test_tsls_identity_instruments_equals_ols(rng):
    X = rng.normal(size=(50, 2))
    w = np.ones(50)
    y = X @ [1.0, 2.0] + rng.normal(size=50)
    iv = tsls(y, X, w, X)
    o = ols(np.column_stack([X, w]), y)
    np.testing.assert_allclose(iv.coefficients, o.coefficients, rtol=1e-10)


def test_tsls_constant_first_stage_is_rank_error(rng):
    n = 60
    Z = np.ones((n, 1))
    x = rng.normal(size=n)
    with pytest.raises(RankDeficiencyError) as info:
        tsls(rng.normal(size=n), x, np.ones(n), Z)
    assert info.value.stage in ("first", "second")


def test_tsls_under_identified(rng):
    with pytest.raises(UnderIdentificationError):
        tsls(rng.normal(size=30), rng.normal(size=(30, 2)), None, rng.normal(size=(30, 1)))


def test_tsls_recovers_coefficient(rng):
    y, x, w, Z = _iv_data(rng, n=20000)
    fit = tsls(y, x, w, Z)
    assert abs(fit.coefficients[0] - 2.0) < 4 * fit.standard_errors[0]


def test_tsls_second_stage_residual_option(rng):
    y, x, w, Z = _iv_data(rng)
    a = tsls(y, x, w, Z)
    b = tsls(y, x, w, Z, residuals="second_stage")
    np.testing.assert_allclose(a.coefficients, b.coefficients)
    assert a.residual_variance != b.residual_variance
    with pytest.raises(ValueError):
        tsls(y, x, w, Z, residuals="other")


def test_liml_exactly_identified_equals_tsls(rng):
    y, x, w, Z = _iv_data(rng, n_inst=1)
    a = liml(y, x, w, Z)
    b = tsls(y, x, w, Z)
    np.testing.assert_allclose(a.coefficients, b.coefficients, rtol=1e-8)
    assert a.kappa == pytest.approx(1.0, abs=1e-8)


def test_liml_kappa_at_least_one(rng):
    for _ in range(5):
        y, x, w, Z = _iv_data(rng, n_inst=4)
        assert liml(y, x, w, Z).kappa >= 1.0 - regress.KAPPA_TOL


def test_liml_kappa_matches_determinant_root(rng):
    y, x, w, Z = _iv_data(rng, n=300, n_inst=3)
    k = liml(y, x, w, Z).kappa
    # explicit annihilators on a small problem
    n = y.size
    X1 = w[:, None]
    XA = np.column_stack([w, Z])
    M1 = np.eye(n) - X1 @ np.linalg.pinv(X1)
    M = np.eye(n) - XA @ np.linalg.pinv(XA)
    W = np.column_stack([y, x])
    A, B = W.T @ M1 @ W, W.T @ M @ W
    assert abs(np.linalg.det(A - k * B)) <= 1e-8 * abs(np.linalg.det(A))


def test_kclass_formula(rng):
    """LIML coefficients solve (X'(I - kM)X) b = X'(I - kM) y."""
    y, x, w, Z = _iv_data(rng, n=200, n_inst=3)
    fit = liml(y, x, w, Z)
    X = np.column_stack([x, w])
    XA = np.column_stack([w, Z])
    M = np.eye(200) - XA @ np.linalg.pinv(XA)
    A = X.T @ (np.eye(200) - fit.kappa * M)
    np.testing.assert_allclose(fit.coefficients, np.linalg.solve(A @ X, A @ y), rtol=1e-8)


def test_liml_absorb_matches_dummies(rng):
    y, x, w, Z = _iv_data(rng, n=300)
    g = rng.integers(0, 5, 300)
    D = np.eye(5)[g]
    a = liml(y, x, w, Z, absorb=g)
    b = liml(y, x, np.column_stack([w, D]), Z)
    np.testing.assert_allclose(a.coefficients, b.coefficients[:2], rtol=1e-8)
    np.testing.assert_allclose(a.covariance, b.covariance[:2, :2], rtol=1e-7)


# --- wald / chi-square -------------------------------------------------------


PROBES = [(r, x) for r in (1, 2, 3) for x in (0.1, 1.0, 5.0, 10.0)]


@pytest.mark.parametrize("df,x", PROBES)
def test_chi2_tail_matches_quadrature(df, x):
    assert abs(chi2_sf(x, df) - oracles.chi2_upper_tail(x, df)) <= 1e-6


def test_chi2_critical_value():
    assert chi2_sf(3.841, 1) == pytest.approx(0.05, abs=5e-4)


def test_chi2_edges():
    assert chi2_sf(0.0, 2) == 1.0
    with pytest.raises(ValueError):
        chi2_sf(1.0, 0)


def _fit(coef, cov):
    return regress.LinearFit(np.asarray(coef, float), np.asarray(cov, float), 1.0, 10, 12)


def test_wald_exact_null_gives_zero():
    res = wald_test(_fit([1.0, 2.0], np.eye(2)), [[0, 1]], [2.0])
    assert res.statistic == 0.0 and res.p_value == 1.0 and res.rank == 1


def test_wald_statistic_formula():
    cov = np.array([[2.0, 0.3], [0.3, 1.0]])
    fit = _fit([1.0, -1.0], cov)
    res = wald_test(fit, np.eye(2))
    b = fit.coefficients
    assert res.statistic == pytest.approx(b @ np.linalg.solve(cov, b), rel=1e-12)
    assert res.p_value == pytest.approx(chi2_sf(res.statistic, 2))


def test_wald_singular_restriction_covariance():
    fit = _fit([1.0, 1.0], [[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(NumericError, match="redundant"):
        wald_test(fit, np.eye(2))


def test_wald_requires_full_row_rank():
    with pytest.raises(ValueError):
        wald_test(_fit([1.0, 1.0], np.eye(2)), [[1, 0], [2, 0]])


@given(st.lists(st.floats(0.1, 100), min_size=2, max_size=2), st.floats(-5, 5), st.floats(-5, 5))
def test_wald_row_scaling_invariant(scales, b0, b1):
    fit = _fit([b0, b1], [[1.5, 0.2], [0.2, 0.7]])
    R = np.array([[1.0, 0.0], [1.0, -1.0]])
    r0 = np.array([0.5, 0.0])
    D = np.diag(scales)
    a = wald_test(fit, R, r0).statistic
    b = wald_test(fit, D @ R, D @ r0).statistic
    assert b == pytest.approx(a, rel=1e-10, abs=1e-12)


def test_select_rows():
    np.testing.assert_array_equal(select_rows(3, [2]), [[0, 0, 1]])
