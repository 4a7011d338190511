import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from bcgp import HyperParams, TrainingSet
from bcgp.model import (DegenerateDataError, default_state, destandardize, log_latent_variance_density,
                        log_likelihood, log_posterior, log_prior, log_prior_scalars,
                        sample_prior_state, simulate_response, standardize)
from conftest import make_state, scaled_data, unit_data

EXACT = HyperParams(latent_nugget=0.0)
LOG_2PI = math.log(2 * math.pi)


def two_point():
    data = unit_data([[0.0], [0.25]], [0.5, -0.5])
    state = make_state(n=2, V=[1.0, 4.0], omega=0.6, rho_G=[0.9], rho_L=[0.5], sigma2_eps=0.01)
    return data, state


class TestStandardize:
    def test_symmetric_triple(self):
        y, c, s = standardize([1.0, 2.0, 3.0])
        np.testing.assert_allclose(y, [-1.0, 0.0, 1.0])
        assert (c, s) == (2.0, 1.0)

    def test_two_values(self):
        y, c, s = standardize([0.0, 10.0])
        np.testing.assert_allclose(y, [-math.sqrt(2) / 2, math.sqrt(2) / 2], rtol=1e-14)
        assert s == pytest.approx(7.0711, abs=1e-4)

    def test_destandardize_center(self):
        assert destandardize(0.0, 3.5, 2.0) == 3.5

    @given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=30).filter(
        lambda v: np.std(v) > 1e-3))
    def test_round_trip(self, values):
        y, c, s = standardize(values)
        assert abs(y.mean()) < 1e-10 and y.std(ddof=1) == pytest.approx(1.0, rel=1e-10)
        np.testing.assert_allclose(destandardize(y, c, s), values, rtol=1e-10, atol=1e-9)

    def test_interval_endpoints_map_affinely(self):
        data = TrainingSet.from_arrays(np.linspace(0, 1, 4), [3.0, 1.0, 4.0, 1.5])
        lo, hi = np.array([-1.2]), np.array([0.7])
        out = data.destandardize(np.stack([lo, hi]))
        np.testing.assert_allclose(out[:, 0], data.center + data.scale * np.array([-1.2, 0.7]))

    @pytest.mark.parametrize("y", [[1.0], [2.0, 2.0, 2.0]])
    def test_degenerate(self, y):
        with pytest.raises(DegenerateDataError):
            standardize(y)


class TestTrainingSet:
    def test_unit_scaling(self):
        X = np.array([[10.0, -1.0], [20.0, 1.0], [15.0, 0.0]])
        data = TrainingSet.from_arrays(X, [1.0, 2.0, 4.0])
        np.testing.assert_allclose(data.Xu, [[0, 0], [1, 1], [0.5, 0.5]])
        np.testing.assert_allclose(data.to_unit([[12.5, 0.5]]), [[0.25, 0.75]])

    def test_bad_bounds(self):
        with pytest.raises(DegenerateDataError):
            TrainingSet.from_arrays([[0.0], [0.0]], [1.0, 2.0])

    def test_row_mismatch(self):
        with pytest.raises(ValueError):
            TrainingSet.from_arrays([[0.0], [1.0]], [1.0, 2.0, 3.0])

    def test_latent_points(self):
        data = unit_data([[0.0], [1.0]], [0.0, 1.0])
        ext = data.with_latent_points([[0.5]])
        assert (ext.n, ext.n_latent) == (2, 3)
        assert ext.fingerprint() == data.fingerprint()

    def test_fingerprint_sensitive(self):
        a = unit_data([[0.0], [1.0]], [0.0, 1.0])
        b = unit_data([[0.0], [1.0]], [0.0, 1.0 + 1e-12])
        assert a.fingerprint() != b.fingerprint()


class TestLikelihood:
    def test_standard_normal(self):
        data = scaled_data([[0.5]], [0.0])
        s = make_state(V=[1.0], sigma2_eps=0.0)
        assert log_likelihood(s, data, EXACT) == pytest.approx(-0.5 * LOG_2PI, rel=1e-14)

    def test_zero_quadratic_form(self):
        data = scaled_data([[0.0], [0.5], [1.0]], [0.3, 0.3, 0.3])
        # rho_G tiny makes G numerically the identity
        s = make_state(n=3, omega=1.0, rho_G=[1e-300], rho_L=[1e-301], sigma2_eps=0.0)
        s = s.replace(beta0=0.3)
        assert log_likelihood(s, data, EXACT) == pytest.approx(-1.5 * LOG_2PI, rel=1e-12)

    def test_two_point_dense_oracle(self):
        data, s = two_point()
        off = 2 * (0.6 * 0.9 + 0.4 * 0.5)
        C = np.array([[1.01, off], [off, 4.01]])
        expect = stats.multivariate_normal(np.zeros(2), C).logpdf(data.y)
        assert log_likelihood(s, data, EXACT) == pytest.approx(expect, rel=1e-12)

    @given(shift=st.floats(-5, 5))
    def test_location_shift(self, shift):
        data, s = two_point()
        moved = scaled_data(data.Xu, data.y + shift)
        assert log_likelihood(s.replace(beta0=shift), moved, EXACT) == pytest.approx(
            log_likelihood(s, data, EXACT), rel=1e-12)

    def test_stationary_textbook(self, rng):
        """Constant V and omega = 1 reduce to an ordinary stationary GP."""
        X = rng.uniform(size=(8, 2))
        data = TrainingSet.from_arrays(X, rng.normal(size=8), bounds=([0, 0], [1, 1]))
        c, eps = 1.7, 0.03
        s = make_state(d=2, n=8, V=np.full(8, c), omega=1.0, rho_G=[0.3, 0.6],
                       rho_L=[0.1, 0.2], sigma2_eps=eps, beta0=0.2)
        K = np.empty((8, 8))
        for i in range(8):
            for j in range(8):
                K[i, j] = c * 0.3 ** (16 * (X[i, 0] - X[j, 0]) ** 2) * 0.6 ** (16 * (X[i, 1] - X[j, 1]) ** 2)
        K += eps * np.eye(8)
        r = data.y - 0.2
        sign, logdet = np.linalg.slogdet(K)
        expect = -0.5 * (8 * LOG_2PI + logdet + r @ np.linalg.inv(K) @ r)
        assert log_likelihood(s, data, EXACT) == pytest.approx(expect, rel=1e-8)


class TestLatentDensity:
    def test_single_point(self):
        data = scaled_data([[0.2]], [0.0])
        s = make_state(V=[math.exp(0.4)], mu_V=0.4, sigma2_V=1.0)
        assert log_latent_variance_density(s, data, EXACT) == pytest.approx(-0.5 * LOG_2PI,
                                                                            rel=1e-12)

    def test_maximal_at_mean(self, rng):
        data = unit_data([[0.0], [0.4], [0.9]], [0.0, 1.0, 3.0])
        s = make_state(n=3, V=np.exp(np.full(3, -0.1)), mu_V=-0.1, sigma2_V=0.2, rho_V=[0.6])
        top = log_latent_variance_density(s, data, EXACT)
        for _ in range(20):
            W = -0.1 + 0.3 * rng.normal(size=3)
            assert log_latent_variance_density(s.replace(V=np.exp(W)), data, EXACT) < top

    def test_two_point_dense_oracle(self):
        data = unit_data([[0.0], [0.25]], [0.0, 1.0])
        W = np.array([0.3, -0.2])
        s = make_state(n=2, V=np.exp(W), mu_V=-0.1, sigma2_V=0.5, rho_V=[0.9])
        r = 0.9 ** (16 * 0.0625)
        cov = 0.5 * np.array([[1.0, r], [r, 1.0]])
        expect = stats.multivariate_normal([-0.1, -0.1], cov).logpdf(W)
        assert log_latent_variance_density(s, data, EXACT) == pytest.approx(expect, rel=1e-12)

    def test_stabilizing_nugget_is_negligible(self):
        data = unit_data([[0.0], [0.25]], [0.0, 1.0])
        s = make_state(n=2, V=np.exp([0.3, -0.2]), mu_V=-0.1, sigma2_V=0.5, rho_V=[0.9])
        a = log_latent_variance_density(s, data, EXACT)
        b = log_latent_variance_density(s, data, HyperParams())
        assert abs(a - b) < 1e-6


class TestPrior:
    def test_support_boundary(self, hp):
        assert log_prior_scalars(make_state(rho_G=[0.4], rho_L=[0.4], sigma2_eps=0.01), hp) == -math.inf

    @pytest.mark.parametrize("change", [dict(omega=0.4), dict(omega=1.0), dict(rho_G=[1.0]),
                                        dict(rho_V=[0.0]), dict(sigma2_V=-1.0),
                                        dict(sigma2_eps=0.0), dict(sigma2_eps=-0.1)])
    def test_outside_support(self, hp, change):
        data = scaled_data([[0.3]], [0.0])
        s = make_state(sigma2_eps=0.01).replace(**change)
        assert log_posterior(s, data, hp) == -math.inf

    def test_no_nugget_requires_zero(self):
        hp = HyperParams(include_nugget=False)
        assert math.isfinite(log_prior_scalars(make_state(sigma2_eps=0.0), hp))
        assert log_prior_scalars(make_state(sigma2_eps=0.01), hp) == -math.inf

    def test_scalar_terms_hand_sum(self):
        hp = HyperParams()
        s = make_state(omega=0.72, rho_G=[0.8], rho_L=[0.3], sigma2_eps=0.002, mu_V=0.05,
                       sigma2_V=0.02, rho_V=[0.6])
        expect = (stats.beta(4, 6, loc=0.5, scale=0.5).logpdf(0.72)
                  + stats.beta(1, 0.4).logpdf(0.8)
                  + stats.uniform(0, 0.8).logpdf(0.3)
                  + stats.uniform(0, 1).logpdf(0.6)
                  + stats.gamma(1, scale=1e-3).logpdf(0.002)
                  + stats.norm(-0.1, math.sqrt(0.1)).logpdf(0.05)
                  + stats.invgamma(2 + math.sqrt(0.1), scale=(1 + math.sqrt(0.1)) / 100).logpdf(0.02))
        assert log_prior_scalars(s, hp) == pytest.approx(expect, rel=1e-12)

    def test_posterior_is_sum_of_parts(self):
        data, s = two_point()
        s = s.replace(sigma2_V=0.3, mu_V=0.0)
        total = log_posterior(s, data, EXACT)
        parts = (log_prior_scalars(s, EXACT) + log_latent_variance_density(s, data, EXACT)
                 + log_likelihood(s, data, EXACT))
        assert total == pytest.approx(parts, rel=1e-14)
        assert log_prior(s, EXACT, data) + log_likelihood(s, data, EXACT) == pytest.approx(total)

    def test_prior_draws_have_finite_posterior(self, hp):
        rng = np.random.default_rng(3)
        X = rng.uniform(size=(6, 2))
        data = TrainingSet.from_arrays(X, rng.normal(size=6), bounds=([0, 0], [1, 1]))
        for _ in range(1000):
            s = sample_prior_state(hp, data.Xu, rng)
            assert math.isfinite(log_posterior(s, data, hp))

    def test_default_hyperparameters(self, hp):
        assert hp.omega_prior().mean == pytest.approx(0.7)
        assert math.sqrt(hp.omega_prior().variance) == pytest.approx(0.074, abs=5e-4)
        assert hp.sigma2_V_prior().mean == pytest.approx(0.01, rel=1e-12)
        assert hp.sigma2_eps_prior().mean == pytest.approx(1e-3)

    @pytest.mark.parametrize("bad", [dict(L_omega=0.8, U_omega=0.6), dict(a_eps=0.0),
                                     dict(K_G=-1.0), dict(latent_nugget=-1e-9)])
    def test_invalid_hyperparameters(self, bad):
        with pytest.raises(ValueError):
            HyperParams(**bad)


class TestStates:
    def test_default_state(self, hp):
        data = unit_data([[0.0], [0.5], [1.0]], [0.0, 1.0, 0.5])
        s = default_state(data, hp)
        s.check(hp)
        np.testing.assert_array_equal(s.W, 0.0)
        assert (s.omega, s.rho_G[0], s.rho_L[0], s.rho_V[0]) == pytest.approx((0.7, 0.7, 0.35, 0.8))
        assert s.mu_V == hp.beta_V
        assert math.isfinite(log_posterior(s, data, hp))

    def test_arrays_frozen(self):
        s = make_state()
        with pytest.raises(ValueError):
            s.rho_G[0] = 0.1

    def test_with_component(self):
        s = make_state(d=2)
        t = s.with_component("rho_G", 0.9, 1)
        np.testing.assert_array_equal(t.rho_G, [0.7, 0.9])
        np.testing.assert_array_equal(s.rho_G, [0.7, 0.7])

    @pytest.mark.parametrize("change", [dict(omega=0.2), dict(rho_L=[0.9]), dict(V=[-1.0])])
    def test_check(self, hp, change):
        with pytest.raises(ValueError):
            make_state().replace(**change).check(hp)

    def test_simulated_response_covariance(self, hp):
        rng = np.random.default_rng(11)
        Xu = np.array([[0.0], [0.3]])
        s = make_state(n=2, V=[1.0, 2.0], sigma2_eps=0.1, beta0=1.0)
        Y = np.array([simulate_response(Xu, s, hp, rng) for _ in range(20_000)])
        from bcgp.kernels import build_cov_matrix
        C = build_cov_matrix(Xu, s, hp).entries
        np.testing.assert_allclose(Y.mean(axis=0), 1.0, atol=0.04)
        np.testing.assert_allclose(np.cov(Y.T), C, atol=0.06)
