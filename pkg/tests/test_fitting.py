import numpy as np
import pytest

from miwreg.fitting import (
    FittingError,
    SeparationError,
    expit,
    fit_logistic,
    fit_wls,
)


def logistic_loglik(h, z, alpha):
    eta = h @ alpha
    return float(np.sum(z * eta - np.logaddexp(0.0, eta)))


class TestFitLogistic:
    def test_intercept_only_balanced(self):
        h = np.ones((10, 1))
        z = np.array([0, 1] * 5, dtype=float)
        fit = fit_logistic(h, z)
        assert fit.converged
        assert abs(fit.alpha[0]) < 1e-10
        np.testing.assert_allclose(fit.fitted, 0.5, atol=1e-10)

    def test_intercept_only_closed_form(self):
        # logit of the sample mean, mean 0.73 over 100 observations
        h = np.ones((100, 1))
        z = np.array([1.0] * 73 + [0.0] * 27)
        fit = fit_logistic(h, z)
        assert fit.alpha[0] == pytest.approx(0.9946225751440619, abs=1e-8)

    def test_constant_treatment_errors(self):
        with pytest.raises(FittingError, match="degenerate treatment"):
            fit_logistic(np.ones((4, 1)), np.ones(4))

    def test_perfect_separation_errors(self):
        h = np.column_stack([np.ones(4), [0.0, 1.0, 2.0, 3.0]])
        z = np.array([0.0, 0.0, 1.0, 1.0])
        with pytest.raises(SeparationError, match="separation suspected"):
            fit_logistic(h, z)

    def test_deviance_monotone(self):
        rng = np.random.default_rng(3)
        h = np.column_stack([np.ones(200), rng.standard_normal(200)])
        z = (rng.random(200) < expit(h @ np.array([-0.3, 0.9]))).astype(float)
        fit = fit_logistic(h, z)
        path = np.array(fit.deviance_path)
        assert np.all(np.diff(path) <= 1e-12)

    def test_score_zero_at_solution(self):
        rng = np.random.default_rng(11)
        h = np.column_stack([np.ones(500), rng.standard_normal(500),
                             rng.random(500)])
        z = (rng.random(500) < expit(h @ np.array([0.2, -0.7, 1.1]))).astype(float)
        fit = fit_logistic(h, z)
        assert np.max(np.abs(fit.score.sum(axis=0))) < 1e-5 * 500

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        h = np.column_stack([np.ones(300), rng.standard_normal(300)])
        z = (rng.random(300) < expit(h @ np.array([0.4, -1.2]))).astype(float)
        fit = fit_logistic(h, z)
        analytic = fit.score.sum(axis=0)
        for j in range(2):
            step = 1e-6 * max(1.0, abs(fit.alpha[j]))
            up = fit.alpha.copy()
            up[j] += step
            dn = fit.alpha.copy()
            dn[j] -= step
            fd = (logistic_loglik(h, z, up) - logistic_loglik(h, z, dn)) / (2 * step)
            assert fd == pytest.approx(analytic[j], abs=1e-5 * max(1.0, abs(fd)))

    def test_recovers_generating_coefficients(self):
        rng = np.random.default_rng(19)
        n = 60_000
        h = np.column_stack([np.ones(n), (rng.random(n) < 0.5).astype(float)])
        truth = np.array([-0.5, 1.2])
        z = (rng.random(n) < expit(h @ truth)).astype(float)
        fit = fit_logistic(h, z)
        np.testing.assert_allclose(fit.alpha, truth, atol=0.06)


class TestFitWls:
    def test_saturated_design_interpolates(self):
        x = np.array([[1.0, 0.0], [1.0, 1.0]])
        y = np.array([2.0, 5.0])
        fit = fit_wls(x, y, np.ones(2))
        np.testing.assert_allclose(fit.residuals, 0.0, atol=1e-12)

    def test_exact_linear_data(self):
        x = np.column_stack([np.ones(6), np.arange(6.0)])
        y = 2.0 * np.arange(6.0)
        fit = fit_wls(x, y, np.ones(6))
        np.testing.assert_allclose(fit.coef, [0.0, 2.0], atol=1e-12)

    def test_weighted_toy_matches_dense_oracle(self):
        # oracle: direct solve of (X'WX) b = X'Wy, frozen from a dense solve
        x = np.array([[1.0, 0.2], [1.0, 1.1], [1.0, 2.3], [1.0, 3.1], [1.0, 4.7]])
        y = np.array([0.5, 1.9, 2.2, 4.4, 5.1])
        w = np.array([1.0, 2.0, 1.0, 2.0, 1.0])
        fit = fit_wls(x, y, w)
        np.testing.assert_allclose(
            fit.coef, [0.5558664801119325, 1.0582650409754149], atol=1e-10)

    def test_weight_scale_invariance(self):
        rng = np.random.default_rng(8)
        x = np.column_stack([np.ones(30), rng.standard_normal(30)])
        y = rng.standard_normal(30)
        w = rng.random(30) + 0.1
        a = fit_wls(x, y, w)
        b = fit_wls(x, y, 17.3 * w)
        np.testing.assert_allclose(a.coef, b.coef, atol=1e-10)

    def test_unit_weights_equal_ols(self):
        rng = np.random.default_rng(21)
        x = np.column_stack([np.ones(40), rng.standard_normal((40, 2))])
        y = rng.standard_normal(40)
        fit = fit_wls(x, y, np.ones(40))
        ols, *_ = np.linalg.lstsq(x, y, rcond=None)
        np.testing.assert_allclose(fit.coef, ols, atol=1e-12)

    def test_all_zero_weights_error(self):
        with pytest.raises(FittingError, match="zero"):
            fit_wls(np.ones((3, 1)), np.zeros(3), np.zeros(3))

    def test_negative_weights_error(self):
        with pytest.raises(FittingError, match="nonnegative"):
            fit_wls(np.ones((3, 1)), np.zeros(3), np.array([1.0, -1.0, 1.0]))

    def test_weighted_rank_deficiency_error(self):
        # second column only varies on rows whose weight is zero
        x = np.column_stack([np.ones(4), [0.0, 0.0, 1.0, 2.0]])
        y = np.arange(4.0)
        w = np.array([1.0, 1.0, 0.0, 0.0])
        with pytest.raises(FittingError, match="rank deficient"):
            fit_wls(x, y, w)
