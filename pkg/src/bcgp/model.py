"""Model state, training data and the log densities of the hierarchical model."""
from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import (IllConditionedCovarianceError, build_cov_matrix, corr_matrix,
                      factorize, sq_diffs)
from .priors import LOG_2PI, Gamma, InverseGamma, Normal, TruncatedBeta, trbeta_logpdf


class DegenerateDataError(ValueError):
    """Training responses or inputs that cannot be standardized."""


@dataclass(frozen=True)
class HyperParams:
    """Fixed prior hyperparameters and structural constants.

    Correlation shapes may be scalars (shared across inputs) or length-d
    sequences. ``b_sigma2V`` enters the inverse gamma as in
    :class:`bcgp.priors.InverseGamma`.
    """

    alpha_omega: float = 4.0
    beta_omega: float = 6.0
    L_omega: float = 0.5
    U_omega: float = 1.0
    alpha_G: float = 1.0
    beta_G: float = 0.4
    alpha_L: float = 1.0
    beta_L: float = 1.0
    a_eps: float = 1.0
    b_eps: float = 1e-3
    beta_V: float = -0.1
    tau2_V: float = 0.1
    a_sigma2V: float = 2.0 + math.sqrt(0.1)
    b_sigma2V: float = 100.0 / (1.0 + math.sqrt(0.1))
    alpha_rhoV: float = 1.0
    beta_rhoV: float = 1.0
    K_G: float = 16.0
    K_L: float = 16.0
    K_V: float = 16.0
    include_nugget: bool = True
    # added to the log-variance correlation diagonal; smooth latent fields on
    # dense designs are otherwise numerically singular
    latent_nugget: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.L_omega < self.U_omega <= 1.0:
            raise ValueError("need 0 <= L_omega < U_omega <= 1")
        for name in ("alpha_omega", "beta_omega", "alpha_G", "beta_G", "alpha_L", "beta_L",
                     "a_eps", "b_eps", "tau2_V", "a_sigma2V", "b_sigma2V",
                     "alpha_rhoV", "beta_rhoV", "K_G", "K_L", "K_V"):
            if np.any(np.asarray(getattr(self, name), dtype=float) <= 0):
                raise ValueError(f"{name} must be positive")
        if self.latent_nugget < 0:
            raise ValueError("latent_nugget must be non-negative")

    def omega_prior(self) -> TruncatedBeta:
        return TruncatedBeta(self.alpha_omega, self.beta_omega, self.L_omega, self.U_omega)

    def sigma2_eps_prior(self) -> Gamma:
        return Gamma(self.a_eps, self.b_eps)

    def mu_V_prior(self) -> Normal:
        return Normal(self.beta_V, self.tau2_V)

    def sigma2_V_prior(self) -> InverseGamma:
        return InverseGamma(self.a_sigma2V, self.b_sigma2V)

    def shape(self, name, d):
        return np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (d,))


@dataclass(frozen=True)
class ModelState:
    """One draw of every unknown. ``V`` holds the latent variances at the
    training inputs; ``W = log V`` is derived."""

    beta0: float
    omega: float
    rho_G: np.ndarray
    rho_L: np.ndarray
    sigma2_eps: float
    V: np.ndarray
    mu_V: float
    sigma2_V: float
    rho_V: np.ndarray

    def __post_init__(self):
        for name in ("rho_G", "rho_L", "rho_V", "V"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name in ("beta0", "omega", "sigma2_eps", "mu_V", "sigma2_V"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def W(self) -> np.ndarray:
        return np.log(self.V)

    @property
    def d(self) -> int:
        return self.rho_G.shape[0]

    def replace(self, **changes) -> "ModelState":
        return dataclasses.replace(self, **changes)

    def with_component(self, name, value, index=None) -> "ModelState":
        """Copy with scalar ``name`` (or ``name[index]``) set to ``value``."""
        if index is None:
            return self.replace(**{name: value})
        arr = np.array(getattr(self, name))
        arr[index] = value
        return self.replace(**{name: arr})

    def check(self, hp: HyperParams) -> None:
        """Raise ``ValueError`` if a structural invariant fails."""
        if not hp.L_omega <= self.omega <= hp.U_omega:
            raise ValueError(f"omega={self.omega} outside [{hp.L_omega}, {hp.U_omega}]")
        if np.any(self.rho_L >= self.rho_G):
            raise ValueError("rho_L must be below rho_G elementwise")
        if np.any(self.V <= 0) or self.sigma2_V <= 0:
            raise ValueError("variances must be positive")
        if self.sigma2_eps < 0:
            raise ValueError("sigma2_eps must be non-negative")


@dataclass(frozen=True)
class TrainingSet:
    """Inputs in original units, raw and standardized responses, and the
    affine maps to the unit cube (inputs) and unit variance (response)."""

    X: np.ndarray
    y_raw: np.ndarray
    y: np.ndarray
    center: float
    scale: float
    input_lo: np.ndarray
    input_hi: np.ndarray
    Xu: np.ndarray = field(repr=False)
    sqd: np.ndarray = field(repr=False)
    Xl: np.ndarray = field(default=None, repr=False)
    lsqd: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        # latent-variance locations default to the training inputs
        if self.Xl is None:
            object.__setattr__(self, "Xl", self.Xu)
            object.__setattr__(self, "lsqd", self.sqd)

    @classmethod
    def from_arrays(cls, X, y_raw, bounds=None) -> "TrainingSet":
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y_raw = np.asarray(y_raw, dtype=float).ravel()
        if X.shape[0] != y_raw.shape[0]:
            raise ValueError("X and y have different numbers of rows")
        if bounds is None:
            lo, hi = X.min(axis=0), X.max(axis=0)
        else:
            lo, hi = (np.asarray(b, dtype=float).ravel() for b in bounds)
        if lo.shape[0] != X.shape[1] or np.any(lo >= hi):
            raise DegenerateDataError("input bounds must satisfy lo < hi in every dimension")
        y, center, scale = standardize(y_raw)
        Xu = (X - lo) / (hi - lo)
        return cls(X, y_raw, y, center, scale, lo, hi, Xu, sq_diffs(Xu))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def n_latent(self) -> int:
        """Number of latent-variance locations (training inputs first)."""
        return self.Xl.shape[0]

    def with_latent_points(self, X_extra) -> "TrainingSet":
        """Copy whose latent-variance process is also carried at ``X_extra``
        (original units), e.g. prediction inputs known before sampling."""
        Xl = np.vstack([self.Xu, self.to_unit(X_extra)])
        return dataclasses.replace(self, Xl=Xl, lsqd=sq_diffs(Xl))

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def to_unit(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, self.d)
        return (X - self.input_lo) / (self.input_hi - self.input_lo)

    def destandardize(self, value):
        return self.center + self.scale * np.asarray(value, dtype=float)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.X, self.y_raw, self.input_lo, self.input_hi):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()


def standardize(y_raw):
    """Center by the sample mean and scale by the sample sd (``ddof=1``)."""
    y_raw = np.asarray(y_raw, dtype=float).ravel()
    if y_raw.size < 2:
        raise DegenerateDataError("need at least two responses to standardize")
    center = float(np.mean(y_raw))
    scale = float(np.std(y_raw, ddof=1))
    if not scale > 0:
        raise DegenerateDataError("response is constant; cannot scale to unit variance")
    return (y_raw - center) / scale, center, scale


def destandardize(value, center, scale):
    return center + scale * np.asarray(value, dtype=float)


def _stabilized_corr(sqd, rho_V, hp):
    R = corr_matrix(sqd, rho_V, hp.K_V)
    R[np.diag_indices_from(R)] += hp.latent_nugget
    return factorize(R)


def latent_corr(data: TrainingSet, rho_V, hp: HyperParams):
    """Factorized correlation matrix of the log-variance process.

    The diagonal carries ``hp.latent_nugget`` so that quadratic forms stay
    accurate when ``rho_V`` is close to one.
    """
    return _stabilized_corr(data.lsqd, rho_V, hp)


def mvn_logpdf(resid, cov) -> float:
    """Zero-mean multivariate normal log density for a factorized ``cov``."""
    z = cov.half_solve(resid)
    return -0.5 * (resid.shape[0] * LOG_2PI + cov.logdet() + float(z @ z))


def log_likelihood(state: ModelState, data: TrainingSet, hp: HyperParams) -> float:
    """``log N(y; beta0 1, C)``."""
    C = build_cov_matrix(data.Xu, state, hp, sqd=data.sqd)
    return mvn_logpdf(data.y - state.beta0, C)


def log_latent_variance_density(state: ModelState, data: TrainingSet,
                                hp: HyperParams | None = None, Rt=None) -> float:
    """``log N(W; mu_V 1, sigma2_V R_t)``; no Jacobian for the log map."""
    hp = hp or HyperParams()
    if Rt is None:
        Rt = latent_corr(data, state.rho_V, hp)
    r = state.W - state.mu_V
    z = Rt.half_solve(r)
    n = r.shape[0]
    return -0.5 * (n * LOG_2PI + n * math.log(state.sigma2_V) + Rt.logdet()
                   + float(z @ z) / state.sigma2_V)


def log_prior_scalars(state: ModelState, hp: HyperParams) -> float:
    """Every prior term except the latent-variance density of ``V``."""
    d = state.d
    if np.any(state.rho_G <= 0) or np.any(state.rho_G >= 1):
        return -math.inf
    if np.any(state.rho_L <= 0) or np.any(state.rho_L >= state.rho_G):
        return -math.inf
    if np.any(state.rho_V <= 0) or np.any(state.rho_V >= 1) or state.sigma2_V <= 0:
        return -math.inf
    if not hp.L_omega < state.omega < hp.U_omega:
        return -math.inf
    lp = trbeta_logpdf(state.omega, hp.alpha_omega, hp.beta_omega, hp.L_omega, hp.U_omega)
    lp += float(np.sum(trbeta_logpdf(state.rho_G, hp.shape("alpha_G", d), hp.shape("beta_G", d),
                                     0.0, 1.0)))
    lp += float(np.sum(trbeta_logpdf(state.rho_L, hp.shape("alpha_L", d), hp.shape("beta_L", d),
                                     0.0, state.rho_G)))
    lp += float(np.sum(trbeta_logpdf(state.rho_V, hp.shape("alpha_rhoV", d),
                                     hp.shape("beta_rhoV", d), 0.0, 1.0)))
    if hp.include_nugget:
        if state.sigma2_eps <= 0:
            return -math.inf
        lp += hp.sigma2_eps_prior().logpdf(state.sigma2_eps)
    elif state.sigma2_eps != 0.0:
        return -math.inf
    lp += hp.mu_V_prior().logpdf(state.mu_V)
    lp += hp.sigma2_V_prior().logpdf(state.sigma2_V)
    return float(lp)


def log_prior(state: ModelState, hp: HyperParams, data: TrainingSet) -> float:
    """Joint log prior, including the latent-variance density of ``V``."""
    lp = log_prior_scalars(state, hp)
    if not math.isfinite(lp):
        return -math.inf
    if np.any(state.V <= 0):
        return -math.inf
    return lp + log_latent_variance_density(state, data, hp)


def log_posterior(state: ModelState, data: TrainingSet, hp: HyperParams) -> float:
    """Unnormalized log posterior; ``-inf`` outside the prior support."""
    lp = log_prior(state, hp, data)
    if not math.isfinite(lp):
        return -math.inf
    return lp + log_likelihood(state, data, hp)


def default_state(data: TrainingSet, hp: HyperParams) -> ModelState:
    """Starting point with positive posterior density for any data set."""
    d = data.d
    return ModelState(
        beta0=0.0,
        omega=hp.omega_prior().mean,
        rho_G=np.full(d, 0.7),
        rho_L=np.full(d, 0.35),
        sigma2_eps=hp.sigma2_eps_prior().mean if hp.include_nugget else 0.0,
        V=np.ones(data.n_latent),
        mu_V=hp.beta_V,
        sigma2_V=hp.sigma2_V_prior().mean,
        rho_V=np.full(d, 0.8),
    )


def sample_prior_state(hp: HyperParams, Xu, rng, beta0=0.0) -> ModelState:
    """Draw every unknown except ``beta0`` (flat prior) from the prior.

    ``Xu`` are the training inputs on the unit-cube scale.
    """
    Xu = np.atleast_2d(np.asarray(Xu, dtype=float))
    d = Xu.shape[1]
    rho_G = np.array([TruncatedBeta(a, b).sample(rng) for a, b in
                      zip(hp.shape("alpha_G", d), hp.shape("beta_G", d))])
    rho_L = np.array([TruncatedBeta(a, b, 0.0, g).sample(rng) for a, b, g in
                      zip(hp.shape("alpha_L", d), hp.shape("beta_L", d), rho_G)])
    rho_V = np.array([TruncatedBeta(a, b).sample(rng) for a, b in
                      zip(hp.shape("alpha_rhoV", d), hp.shape("beta_rhoV", d))])
    mu_V = hp.mu_V_prior().sample(rng)
    sigma2_V = hp.sigma2_V_prior().sample(rng)
    R = _stabilized_corr(sq_diffs(Xu), rho_V, hp)
    W = mu_V + math.sqrt(sigma2_V) * (R.chol @ rng.standard_normal(Xu.shape[0]))
    return ModelState(
        beta0=beta0,
        omega=hp.omega_prior().sample(rng),
        rho_G=rho_G,
        rho_L=rho_L,
        sigma2_eps=hp.sigma2_eps_prior().sample(rng) if hp.include_nugget else 0.0,
        V=np.exp(W),
        mu_V=mu_V,
        sigma2_V=sigma2_V,
        rho_V=rho_V,
    )


def simulate_response(Xu, state: ModelState, hp: HyperParams, rng) -> np.ndarray:
    """Draw ``Y ~ N(beta0 1, C)`` at unit-cube inputs ``Xu`` for a fixed state.

    ``state.V`` must already hold the latent variances at ``Xu``.
    """
    C = build_cov_matrix(Xu, state, hp)
    return state.beta0 + C.chol @ rng.standard_normal(C.n)


__all__ = [
    "DegenerateDataError", "HyperParams", "IllConditionedCovarianceError", "ModelState",
    "TrainingSet", "default_state", "destandardize", "latent_corr", "log_latent_variance_density",
    "log_likelihood", "log_posterior", "log_prior", "log_prior_scalars", "mvn_logpdf",
    "sample_prior_state", "simulate_response", "standardize",
]
