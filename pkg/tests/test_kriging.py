import numpy as np
import pytest

from bcgp.kriging import (KrigingModel, _profile, basis_matrix, fit_kriging, kriging_interval,
                          kriging_predict, kriging_predict_unit, profile_neg_loglik)
from bcgp.kernels import sq_diffs
from bcgp.model import TrainingSet
from bcgp.testbed import bjx, equispaced_design, rmspe, sobol_points
from conftest import scaled_data, unit_data


@pytest.fixture(scope="module")
def bjx_data():
    X = equispaced_design(17)
    return TrainingSet.from_arrays(X, bjx(X[:, 0]), bounds=(np.zeros(1), np.ones(1)))


class TestProfile:
    def test_independent_limit_is_ols(self, rng):
        Xu = np.linspace(0, 1, 12)[:, None]
        y = rng.normal(size=12)
        F = basis_matrix(Xu, "linear")
        beta, sigma2, _ = _profile(np.array([1e-300]), sq_diffs(Xu), F, y, 16.0, 0.0)
        ols, *_ = np.linalg.lstsq(F, y, rcond=None)
        np.testing.assert_allclose(beta, ols, rtol=1e-9)
        assert sigma2 == pytest.approx(np.mean((y - F @ ols) ** 2), rel=1e-9)

    def test_constant_basis_gives_mean(self, rng):
        Xu = np.linspace(0, 1, 9)[:, None]
        y = rng.normal(size=9)
        beta, _, _ = _profile(np.array([1e-300]), sq_diffs(Xu), basis_matrix(Xu, "constant"),
                              y, 16.0, 0.0)
        assert beta[0] == pytest.approx(y.mean(), rel=1e-10)

    def test_neg_loglik_dense(self, rng):
        Xu = rng.uniform(size=(6, 2))
        data = scaled_data(Xu, rng.normal(size=6))
        rho = np.array([0.3, 0.7])
        R = rho[0] ** (16 * (Xu[:, None, 0] - Xu[None, :, 0]) ** 2) * \
            rho[1] ** (16 * (Xu[:, None, 1] - Xu[None, :, 1]) ** 2)
        one = np.ones(6)
        b = one @ np.linalg.solve(R, data.y) / (one @ np.linalg.solve(R, one))
        r = data.y - b
        s2 = r @ np.linalg.solve(R, r) / 6
        want = 0.5 * (6 * np.log(s2) + np.linalg.slogdet(R)[1])
        assert profile_neg_loglik(rho, data) == pytest.approx(want, rel=1e-10)


class TestBasis:
    def test_shapes(self):
        Xu = np.zeros((5, 3))
        assert basis_matrix(Xu, "constant").shape == (5, 1)
        assert basis_matrix(Xu, "linear").shape == (5, 4)

    def test_cubic_one_dimensional(self):
        F = basis_matrix(np.array([[2.0]]), "cubic")
        np.testing.assert_array_equal(F, [[1, 2, 4, 8]])
        with pytest.raises(ValueError):
            basis_matrix(np.zeros((4, 2)), "cubic")

    def test_unknown(self):
        with pytest.raises(ValueError):
            basis_matrix(np.zeros((4, 1)), "quadratic")


class TestFit:
    def test_too_few_points(self):
        data = unit_data([[0.0], [0.5], [1.0]], [1.0, 0.0, 2.0])
        with pytest.raises(ValueError):
            fit_kriging(data, "cubic")

    def test_duplicates_need_nugget(self):
        data = unit_data([[0.0], [0.5], [0.5], [1.0]], [1.0, 0.0, 0.1, 2.0])
        with pytest.raises(ValueError):
            fit_kriging(data)
        assert fit_kriging(data, nugget=1e-3).nugget == 1e-3

    def test_singular_basis(self):
        X = np.column_stack([np.linspace(0, 1, 6), np.linspace(0, 1, 6)])
        data = unit_data(X, np.arange(6.0))
        with pytest.raises(np.linalg.LinAlgError):
            fit_kriging(data, "linear")

    def test_not_worse_than_any_start(self, bjx_data):
        model = fit_kriging(bjx_data)
        for rho0 in 0.05 + 0.9 * sobol_points(16, 1):
            assert model.neg_loglik <= profile_neg_loglik(rho0, bjx_data) + 1e-12

    def test_invariants(self, bjx_data):
        m = fit_kriging(bjx_data, "cubic")
        assert 0 < m.rho_hat[0] < 1 and m.sigma2_hat > 0
        with pytest.raises(ValueError):
            KrigingModel("constant", m.beta_hat, 1.0, np.array([1.0]), 0.0, bjx_data)

    def test_bjx_constant_rmspe(self, bjx_data):
        model = fit_kriging(bjx_data, "constant")
        grid = np.linspace(0, 1, 101)
        err = rmspe(kriging_predict(model, grid[:, None])[0], bjx(grid))
        assert abs(err - 0.067) <= 0.03


class TestPredict:
    def test_interpolation(self, bjx_data):
        model = fit_kriging(bjx_data)
        mean, var = kriging_predict(model, bjx_data.X)
        np.testing.assert_allclose(mean, bjx_data.y_raw, atol=1e-8)
        np.testing.assert_allclose(var, 0.0, atol=1e-10)
        _, var_mid = kriging_predict(model, bjx_data.X[:-1] + 1 / 32)
        assert np.all(var_mid > 0)

    def test_reverts_to_trend(self, bjx_data):
        model = fit_kriging(bjx_data, "linear")
        mean, _ = kriging_predict_unit(model, [[40.0]])
        assert mean[0] == pytest.approx(model.beta_hat[0] + 40.0 * model.beta_hat[1], rel=1e-12)

    def test_two_point_dense_oracle(self):
        data = scaled_data([[0.1], [0.4]], [1.0, -0.5])
        model = KrigingModel("constant", np.array([0.2]), 1.7, np.array([0.6]), 0.0, data)
        R = np.array([[1.0, 0.6 ** (16 * 0.09)], [0.6 ** (16 * 0.09), 1.0]])
        x = 0.25
        r = 0.6 ** (16 * (x - np.array([0.1, 0.4])) ** 2)
        one = np.ones(2)
        mean = 0.2 + r @ np.linalg.solve(R, data.y - 0.2)
        u = 1 - one @ np.linalg.solve(R, r)
        var = 1.7 * (1 - r @ np.linalg.solve(R, r) + u * u / (one @ np.linalg.solve(R, one)))
        got = kriging_predict_unit(model, [[x]])
        assert got[0][0] == pytest.approx(mean, rel=1e-10)
        assert got[1][0] == pytest.approx(var, rel=1e-10)

    def test_interval(self, bjx_data):
        model = fit_kriging(bjx_data)
        X = np.array([[0.33], [0.71]])
        lo, hi = kriging_interval(model, X, 0.95)
        mean, var = kriging_predict(model, X)
        np.testing.assert_allclose((hi - lo) / 2, 1.959963984540054 * np.sqrt(var), rtol=1e-12)
        np.testing.assert_allclose((hi + lo) / 2, mean, rtol=1e-12)
        with pytest.raises(ValueError):
            kriging_interval(model, X, 1.0)
