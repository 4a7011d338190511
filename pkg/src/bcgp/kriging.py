"""Universal kriging with Gaussian correlation and maximum-likelihood fitting.

Correlation uses the same ``prod_j rho_j ** (K h_j**2)`` form as the BCGP
kernels (``K = 16`` on the unit cube). The regression coefficients and
process variance are profiled out analytically; ``rho`` is found by a
multi-start bounded quasi-Newton search on the logit scale.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logit
from scipy.stats import norm

from .kernels import IllConditionedCovarianceError, corr_matrix, factorize, sq_diffs
from .model import TrainingSet
from .testbed import sobol_points

BASES = ("constant", "linear", "cubic")
N_STARTS = 16
START_LO, START_HI = 0.05, 0.95
# keeps the optimizer away from rho = 0 or 1 exactly
LOGIT_BOUND = 12.0


class KrigingFitError(RuntimeError):
    """Raised when no multi-start run produces a finite likelihood."""


def basis_matrix(Xu, basis: str) -> np.ndarray:
    """Regression functions at unit-cube inputs.

    ``"linear"`` is ``{1, x_1, ..., x_d}``; ``"cubic"`` is the 1-d basis
    ``{1, x, x^2, x^3}``.
    """
    Xu = np.atleast_2d(np.asarray(Xu, dtype=float))
    ones = np.ones((Xu.shape[0], 1))
    if basis == "constant":
        return ones
    if basis == "linear":
        return np.hstack([ones, Xu])
    if basis == "cubic":
        if Xu.shape[1] != 1:
            raise ValueError("the cubic basis is only defined for d = 1")
        x = Xu[:, :1]
        return np.hstack([ones, x, x ** 2, x ** 3])
    raise ValueError(f"unknown basis {basis!r}; choose from {BASES}")


@dataclass(frozen=True)
class KrigingModel:
    """A fitted kriging predictor; everything is on the standardized response scale."""

    basis: str
    beta_hat: np.ndarray
    sigma2_hat: float
    rho_hat: np.ndarray
    nugget: float
    data: TrainingSet
    scale_constant: float = 16.0
    neg_loglik: float = float("nan")

    def __post_init__(self):
        if np.any(self.rho_hat <= 0) or np.any(self.rho_hat >= 1):
            raise ValueError("rho_hat must lie in (0, 1)")
        if not self.sigma2_hat > 0:
            raise ValueError("sigma2_hat must be positive")

    def _factor(self):
        R = corr_matrix(self.data.sqd, self.rho_hat, self.scale_constant)
        R[np.diag_indices_from(R)] += self.nugget
        return factorize(R)


def _profile(rho, sqd, F, y, K, nugget):
    """GLS ``beta``, ML ``sigma2`` and the negative profile log-likelihood."""
    R = corr_matrix(sqd, rho, K)
    R[np.diag_indices_from(R)] += nugget
    Rf = factorize(R)
    RiF = Rf.solve(F)
    beta = np.linalg.solve(F.T @ RiF, RiF.T @ y)
    resid = y - F @ beta
    n = y.shape[0]
    sigma2 = float(resid @ Rf.solve(resid)) / n
    if not sigma2 > 0:
        raise IllConditionedCovarianceError("non-positive variance estimate")
    nll = 0.5 * (n * np.log(sigma2) + Rf.logdet())
    return beta, sigma2, nll


def profile_neg_loglik(rho, data: TrainingSet, basis="constant", nugget=0.0, K=16.0) -> float:
    """Negative profile log-likelihood (constants dropped) at ``rho``."""
    F = basis_matrix(data.Xu, basis)
    return _profile(np.atleast_1d(rho), data.sqd, F, data.y, K, nugget)[2]


def fit_kriging(data: TrainingSet, basis: str = "constant", nugget: float = 0.0,
                scale_constant: float = 16.0, n_starts: int = N_STARTS) -> KrigingModel:
    """Maximum-likelihood kriging fit.

    Parameters
    ----------
    data : TrainingSet
    basis : {"constant", "linear", "cubic"}
    nugget : float
        Fixed value added to the correlation diagonal.
    n_starts : int
        Quasi-random starting points for ``rho`` in ``(0.05, 0.95)^d``.
    """
    if nugget < 0:
        raise ValueError("nugget must be non-negative")
    F = basis_matrix(data.Xu, basis)
    n, p = F.shape
    if n <= p:
        raise ValueError(f"need more than {p} training points for the {basis} basis")
    if np.linalg.matrix_rank(F) < p:
        raise np.linalg.LinAlgError("regression basis matrix is singular")
    if nugget == 0 and np.unique(data.Xu, axis=0).shape[0] < n:
        raise ValueError("duplicated design rows need a positive nugget")
    d = data.d
    y = data.y

    def objective(z):
        try:
            return _profile(expit(z), data.sqd, F, y, scale_constant, nugget)[2]
        except (IllConditionedCovarianceError, np.linalg.LinAlgError):
            return np.inf

    starts = START_LO + (START_HI - START_LO) * sobol_points(n_starts, d)
    bounds = [(-LOGIT_BOUND, LOGIT_BOUND)] * d
    best = None
    for rho0 in starts:
        z0 = logit(rho0)
        f0 = objective(z0)
        if not np.isfinite(f0):
            continue
        res = minimize(objective, z0, method="L-BFGS-B", bounds=bounds)
        z, f = (res.x, res.fun) if np.isfinite(res.fun) and res.fun <= f0 else (z0, f0)
        if best is None or f < best[1]:
            best = (z, f)
    if best is None:
        raise KrigingFitError("likelihood was not finite at any starting point")
    rho = expit(best[0])
    beta, sigma2, nll = _profile(rho, data.sqd, F, y, scale_constant, nugget)
    return KrigingModel(basis, beta, sigma2, rho, float(nugget), data, scale_constant, float(nll))


def kriging_predict_unit(model: KrigingModel, Xu_star):
    """Mean and variance at unit-cube inputs, standardized scale."""
    data = model.data
    Xu_star = np.atleast_2d(np.asarray(Xu_star, dtype=float))
    Rf = model._factor()
    F = basis_matrix(data.Xu, model.basis)
    f_star = basis_matrix(Xu_star, model.basis)
    r = corr_matrix(sq_diffs(Xu_star, data.Xu), model.rho_hat, model.scale_constant)
    resid = data.y - F @ model.beta_hat
    mean = f_star @ model.beta_hat + r @ Rf.solve(resid)
    Z = Rf.half_solve(r.T)
    RiF = Rf.solve(F)
    # GLS inflation for estimating beta
    u = f_star.T - F.T @ Rf.solve(r.T)
    FtRiF = F.T @ RiF
    inflation = np.sum(u * np.linalg.solve(FtRiF, u), axis=0)
    var = model.sigma2_hat * (1.0 + model.nugget - np.sum(Z * Z, axis=0) + inflation)
    return mean, np.maximum(var, 0.0)


def kriging_predict(model: KrigingModel, X_star):
    """Plug-in BLUP mean and variance at ``X_star`` (original units)."""
    data = model.data
    X_star = np.asarray(X_star, dtype=float).reshape(-1, data.d)
    mean, var = kriging_predict_unit(model, data.to_unit(X_star))
    return data.destandardize(mean), var * data.scale ** 2


def kriging_interval(model: KrigingModel, X_star, level=0.95):
    """``mean -/+ z sd`` in original units."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie strictly between 0 and 1")
    mean, var = kriging_predict(model, X_star)
    half = norm.ppf(0.5 + level / 2) * np.sqrt(var)
    return mean - half, mean + half


__all__ = ["BASES", "KrigingFitError", "KrigingModel", "basis_matrix", "fit_kriging",
           "kriging_interval", "kriging_predict", "kriging_predict_unit", "profile_neg_loglik"]
