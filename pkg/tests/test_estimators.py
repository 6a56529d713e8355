import numpy as np
import pytest

from saeboot.errors import SingularDesignError
from saeboot.estimators import (
    eblup,
    fh_estimate,
    fh_estimate_many,
    fh_objective,
    fit_model,
    leverage,
    mspe,
    pr_estimate,
    pr_estimate_many,
    wls_beta,
)
from saeboot.model import AreaLevelModel, LinkingDistribution, sample_population
from saeboot.streams import substream

PATTERN1 = (4.0, 0.6, 0.5, 0.4, 0.2)


def _pattern_data(m, seed, A=1.0, G=None):
    D = np.repeat(PATTERN1, m // 5)
    model = AreaLevelModel(
        X=np.ones((m, 1)), D=D, beta=[0.0], A=A, G=G or LinkingDistribution("t", 9)
    )
    pop = sample_population(model, substream(seed))
    return model.X, pop.y, D


def _bisect_root(X, Y, D, lo=0.0, hi=100.0, tol=1e-10):
    # independent bracketing oracle for the moment equation
    if fh_objective(lo, X, Y, D) <= 0 or fh_objective(hi, X, Y, D) >= 0:
        return None
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if fh_objective(mid, X, Y, D) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------- wls_beta


def test_wls_intercept_equal_weights_is_mean():
    X = np.ones((3, 1))
    beta = wls_beta(X, [1.0, 2.0, 3.0], 0.5, np.full(3, 1.5))
    assert beta[0] == pytest.approx(2.0, abs=1e-12)


def test_wls_weighted_mean_closed_form():
    # weights (1, 3) on observations (1, 3): (1*1 + 3*3) / 4 = 2.5
    X = np.ones((2, 1))
    D = np.array([1.0, 1.0 / 3.0])  # 1/(A=0 + D) gives weights (1, 3)
    beta = wls_beta(X, [1.0, 3.0], 0.0, D)
    assert beta[0] == pytest.approx(2.5, abs=1e-12)


def test_wls_matches_dense_normal_equations():
    rng = substream(21)
    X = rng.standard_normal((50, 3))
    Y = rng.standard_normal(50)
    D = rng.uniform(0.5, 2.0, 50)
    A = 0.7
    w = 1.0 / (A + D)
    brute = np.linalg.solve((X * w[:, None]).T @ X, (X * w[:, None]).T @ Y)
    got = wls_beta(X, Y, A, D)
    np.testing.assert_allclose(got, brute, rtol=1e-10)


def test_wls_equals_ols_when_total_variance_constant():
    rng = substream(22)
    X = rng.standard_normal((40, 2))
    Y = rng.standard_normal(40)
    D = np.full(40, 1.3)
    ols, *_ = np.linalg.lstsq(X, Y, rcond=None)
    np.testing.assert_allclose(wls_beta(X, Y, 0.9, D), ols, rtol=1e-10)


def test_wls_singular_design_raises():
    X = np.column_stack([np.ones(10), np.ones(10)])
    with pytest.raises(SingularDesignError):
        wls_beta(X, np.arange(10.0), 1.0, np.ones(10))


# ------------------------------------------------------------ fh_objective


def test_objective_zero_residuals():
    X = np.ones((12, 1))
    Y = np.full(12, 3.7)  # exactly in col(X): all residuals vanish
    for A in (0.0, 0.5, 2.0, 10.0):
        assert fh_objective(A, X, Y, np.ones(12)) == pytest.approx(-(12 - 1), abs=1e-12)


def test_objective_sign_change_bracket_exists():
    hits = 0
    for r in range(1000):
        X, Y, D = _pattern_data(50, seed=2300 + r)
        if fh_objective(0.0, X, Y, D) > 0 and fh_objective(20.0, X, Y, D) < 0:
            hits += 1
    assert hits / 1000 > 0.95


def test_objective_strictly_decreasing_on_grid():
    for r in range(5):
        X, Y, D = _pattern_data(25, seed=2400 + r)
        grid = np.linspace(0.0, 10.0, 50)
        vals = [fh_objective(a, X, Y, D) for a in grid]
        assert all(v1 > v2 for v1, v2 in zip(vals, vals[1:]))


# ------------------------------------------------------------- fh_estimate


def test_fh_truncates_on_exact_fit():
    X = np.ones((15, 1))
    Y = np.zeros(15)
    est = fh_estimate(X, Y, np.ones(15))
    assert est.A_hat == 0.01 and est.was_truncated


def test_fh_interior_matches_bisection():
    checked = 0
    for r in range(40):
        X, Y, D = _pattern_data(50, seed=2500 + r)
        est = fh_estimate(X, Y, D)
        if est.was_truncated:
            continue
        root = _bisect_root(X, Y, D)
        if root is None:
            continue
        checked += 1
        assert est.f_abs <= 1e-8
        assert abs(est.A_hat - root) <= 1e-6
    assert checked >= 30


def test_fh_truncation_rate_m15():
    # t9, pattern (i): about 1.6% of datasets have no positive root
    rngs = [substream(26, r) for r in range(1000)]
    D = np.repeat(PATTERN1, 3)
    model = AreaLevelModel(X=np.ones((15, 1)), D=D, beta=[0.0], A=1.0, G=LinkingDistribution("t", 9))
    Y = np.stack([sample_population(model, rng).y for rng in rngs])
    _, trunc = fh_estimate_many(model.X, Y, D)
    rate = 100.0 * trunc.mean()
    assert abs(rate - 1.6) <= 1.5


def test_fh_deterministic():
    X, Y, D = _pattern_data(25, seed=27)
    a = fh_estimate(X, Y, D)
    b = fh_estimate(X, Y, D)
    assert a.A_hat == b.A_hat and a.was_truncated == b.was_truncated


# ------------------------------------------------------------- pr_estimate


def test_pr_truncates_when_response_in_column_space():
    X = np.ones((15, 1))
    Y = np.full(15, 2.0)
    est = pr_estimate(X, Y, np.ones(15))
    assert est.was_truncated and est.A_hat == 0.01
    assert est.A_raw < 0


def test_pr_unbiasedness_oracle():
    # E(A_raw) = A under the model; 4000 normal-linking populations at A = 1
    m = 50
    D = np.repeat(PATTERN1, 10)
    model = AreaLevelModel(X=np.ones((m, 1)), D=D, beta=[0.0], A=1.0, G=LinkingDistribution("normal"))
    Y = np.stack([sample_population(model, substream(28, r)).y for r in range(4000)])
    _, _, A_raw = pr_estimate_many(model.X, Y, D)
    assert abs(A_raw.mean() - 1.0) < 0.05


def test_pr_negative_rate_m15():
    D = np.repeat(PATTERN1, 3)
    model = AreaLevelModel(X=np.ones((15, 1)), D=D, beta=[0.0], A=1.0, G=LinkingDistribution("t", 9))
    Y = np.stack([sample_population(model, substream(29, r)).y for r in range(1000)])
    _, trunc, _ = pr_estimate_many(model.X, Y, D)
    assert abs(100.0 * trunc.mean() - 13.1) <= 3.0


# ------------------------------------------------------------------ eblup


def test_eblup_no_shrinkage_limit():
    X = np.ones((5, 1))
    Y = np.arange(5.0)
    fit = eblup(X, Y, np.ones(5), beta_hat=[0.0], A_hat=1e9)
    np.testing.assert_allclose(fit.eblup, Y, atol=1e-6)


def test_eblup_half_shrinkage():
    fit = eblup(np.zeros((2, 1)) + 1.0, [2.0, 2.0], [1.0, 1.0], beta_hat=[0.0], A_hat=1.0)
    assert fit.eblup[0] == pytest.approx(1.0)
    assert fit.g1_hat[0] == pytest.approx(0.5)
    assert fit.B_hat[0] == pytest.approx(0.5)


def test_eblup_direct_substitution():
    fit = eblup(np.ones((1, 1)), [0.0], [4.0], beta_hat=[0.0], A_hat=1.0)
    assert fit.B_hat[0] == pytest.approx(0.8)
    assert fit.g1_hat[0] == pytest.approx(0.8)


def test_eblup_between_y_and_synthetic():
    for r in range(10):
        X, Y, D = _pattern_data(25, seed=3000 + r)
        fit = fit_model(X, Y, D, "FH")
        synth = fit.synthetic(X)
        lo = np.minimum(Y, synth)
        hi = np.maximum(Y, synth)
        assert np.all(fit.eblup >= lo - 1e-12) and np.all(fit.eblup <= hi + 1e-12)
        assert np.all((fit.B_hat > 0) & (fit.B_hat < 1))
        assert np.all(fit.g1_hat > 0)
        assert np.all(fit.g1_hat <= np.minimum(fit.A_hat, D) + 1e-12)


# ------------------------------------------------------------------- mspe


def test_mspe_exceeds_g1():
    for method in ("FH", "PR"):
        X, Y, D = _pattern_data(25, seed=31)
        fit = fit_model(X, Y, D, method)
        est = mspe(fit, X, D)
        assert np.all(est.mspe > fit.g1_hat)


def test_mspe_second_order_terms_vanish_with_m():
    X, Y, D = _pattern_data(500, seed=32)
    fit = fit_model(X, Y, D, "FH")
    est = mspe(fit, X, D)
    ratio = (est.mspe - fit.g1_hat) / fit.g1_hat
    assert np.all(ratio < 0.1)


def test_mspe_g2_hand_computation():
    # p=1, m=50, D=1, A_hat=1: g2 = B^2 (A+D)/m = 0.25 * 2/50 = 0.01
    m = 50
    X = np.ones((m, 1))
    D = np.ones(m)
    fit = eblup(X, np.zeros(m), D, beta_hat=[0.0], A_hat=1.0)
    est = mspe(fit, X, D)
    g2 = est.mspe - fit.g1_hat - 2.0 * (D**2 / (1.0 + D) ** 3) * (2.0 / np.sum((1.0 + D) ** -2))
    np.testing.assert_allclose(g2, 0.01, rtol=1e-10)


def test_mspe_flavors():
    X, Y, D = _pattern_data(25, seed=33)
    assert mspe(fit_model(X, Y, D, "FH"), X, D).flavor == "DattaRaoSmith"
    assert mspe(fit_model(X, Y, D, "PR"), X, D).flavor == "PrasadRao"


# --------------------------------------------------------------- leverage


def test_leverage_balanced():
    np.testing.assert_allclose(leverage(np.ones((10, 1))), 0.1)


def test_leverage_trace_identity():
    rng = substream(34)
    X = np.column_stack([np.ones(30), rng.standard_normal((30, 2))])
    assert leverage(X).sum() == pytest.approx(3.0, abs=1e-10)


def test_leverage_outlier_and_projection_oracle():
    rng = substream(35)
    x = rng.standard_normal(20)
    x[0] = 50.0  # far outlier dominates its own fit
    X = np.column_stack([np.ones(20), x])
    h = leverage(X)
    hat = X @ np.linalg.solve(X.T @ X, X.T)  # brute-force projection matrix
    np.testing.assert_allclose(h, np.diag(hat), atol=1e-10)
    assert h[0] > 0.95
