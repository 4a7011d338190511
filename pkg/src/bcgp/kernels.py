"""Gaussian correlation functions and covariance assembly.

All correlation evaluations assume inputs already rescaled to the unit
hypercube; the exponent of each factor is ``K * h_j**2``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack

JITTER_START = 1e-10
JITTER_MAX = 1e-6


class IllConditionedCovarianceError(np.linalg.LinAlgError):
    """Raised when a covariance matrix cannot be factorized even with jitter."""


@dataclass(frozen=True)
class CorrelationParams:
    """Per-dimension correlations ``rho`` in (0, 1) and the exponent scale ``K``."""

    rho: np.ndarray
    scale_constant: float = 16.0

    def __post_init__(self):
        rho = np.atleast_1d(np.asarray(self.rho, dtype=float))
        if rho.ndim != 1 or np.any(rho <= 0.0) or np.any(rho >= 1.0):
            raise ValueError(f"rho must lie strictly inside (0, 1), got {rho}")
        if not self.scale_constant > 0:
            raise ValueError("scale_constant must be positive")
        object.__setattr__(self, "rho", rho)


def gauss_corr(h, params: CorrelationParams) -> float:
    """Product-form Gaussian correlation ``prod_j rho_j ** (K * h_j**2)``."""
    h = np.atleast_1d(np.asarray(h, dtype=float))
    if h.shape != params.rho.shape:
        raise ValueError("displacement and rho have different lengths")
    return float(np.exp(params.scale_constant * np.dot(np.log(params.rho), h * h)))


def sq_diffs(X1, X2=None) -> np.ndarray:
    """Squared coordinate differences, shape ``(d, n1, n2)``."""
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = X1 if X2 is None else np.atleast_2d(np.asarray(X2, dtype=float))
    diff = X1.T[:, :, None] - X2.T[:, None, :]
    return diff * diff


def corr_matrix(sqd: np.ndarray, rho, scale_constant: float) -> np.ndarray:
    """Gaussian correlation matrix from precomputed squared differences."""
    log_rho = np.log(np.atleast_1d(np.asarray(rho, dtype=float)))
    return np.exp(scale_constant * np.tensordot(log_rho, sqd, axes=1))


@dataclass(frozen=True)
class CovMatrix:
    """A symmetric positive-definite matrix together with its Cholesky factor.

    ``chol`` is the lower factor of ``entries + jitter_applied * I``.
    """

    entries: np.ndarray
    chol: np.ndarray = field(repr=False)
    jitter_applied: float = 0.0

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def solve(self, B) -> np.ndarray:
        return pd_solve(self, B)

    def logdet(self) -> float:
        return pd_logdet(self)

    def half_solve(self, B) -> np.ndarray:
        """Return ``L^{-1} B`` for the lower factor ``L``."""
        B = np.asarray(B, dtype=float)
        out, info = lapack.dtrtrs(self.chol, B, lower=1)
        if info != 0:
            raise IllConditionedCovarianceError("triangular solve failed")
        return out


def factorize(A, max_jitter: float = JITTER_MAX) -> CovMatrix:
    """Cholesky-factorize ``A``, escalating diagonal jitter if needed.

    Jitter is ``eps * mean(diag(A))`` with ``eps`` running 1e-10, 1e-9, ...,
    ``max_jitter``.
    """
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise IllConditionedCovarianceError("covariance has non-finite entries")
    L, info = lapack.dpotrf(A, lower=1, clean=1)
    if info == 0:
        return CovMatrix(A, L, 0.0)
    scale = float(np.mean(np.diag(A)))
    if not scale > 0:
        raise IllConditionedCovarianceError("non-positive mean diagonal")
    eps = JITTER_START
    while eps <= max_jitter * (1 + 1e-9):
        jitter = eps * scale
        L, info = lapack.dpotrf(A + jitter * np.eye(A.shape[0]), lower=1, clean=1)
        if info == 0:
            return CovMatrix(A, L, jitter)
        eps *= 10.0
    raise IllConditionedCovarianceError(
        f"matrix of size {A.shape[0]} not positive definite with jitter up to "
        f"{max_jitter:g} * mean(diag)"
    )


def pd_solve(C: CovMatrix, B) -> np.ndarray:
    """``C^{-1} B`` through the stored Cholesky factor."""
    B = np.asarray(B, dtype=float)
    out, info = lapack.dpotrs(C.chol, B, lower=1)
    if info != 0:
        raise IllConditionedCovarianceError("Cholesky solve failed")
    return out


def pd_logdet(C: CovMatrix) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(C.chol))))


def weighted_corr(sqd, state, hp) -> np.ndarray:
    """``omega * G + (1 - omega) * L`` evaluated on squared differences."""
    G = corr_matrix(sqd, state.rho_G, hp.K_G)
    L = corr_matrix(sqd, state.rho_L, hp.K_L)
    return state.omega * G + (1.0 - state.omega) * L


def build_cov_matrix(X, state, hp, sqd=None) -> CovMatrix:
    """Data covariance at the training inputs.

    ``C_ij = s_i s_j (omega G_ij + (1 - omega) L_ij) + delta_ij sigma2_eps``
    with ``s = sqrt(V)``. ``X`` must be on the unit-cube scale.
    """
    if sqd is None:
        sqd = sq_diffs(X)
    # V may carry extra latent-only locations after the n training inputs
    V = np.asarray(state.V, dtype=float)[: sqd.shape[1]]
    s = np.sqrt(V)
    C = s[:, None] * weighted_corr(sqd, state, hp) * s[None, :]
    # G = L = 1 at zero displacement, so the diagonal is exactly V + nugget
    np.fill_diagonal(C, V + state.sigma2_eps)
    return factorize(C)


def cross_cov_parts(X_star, sigma_star, X, state, hp):
    """Global and local cross-covariances between test and training inputs.

    Returns two arrays of shape ``(m, n)``; no nugget contribution.
    """
    X_star = np.atleast_2d(np.asarray(X_star, dtype=float))
    sigma_star = np.atleast_1d(np.asarray(sigma_star, dtype=float))
    sqd = sq_diffs(X_star, X)
    V = np.asarray(state.V, dtype=float)[: sqd.shape[2]]
    scale = sigma_star[:, None] * np.sqrt(V)[None, :]
    CG = scale * state.omega * corr_matrix(sqd, state.rho_G, hp.K_G)
    CL = scale * (1.0 - state.omega) * corr_matrix(sqd, state.rho_L, hp.K_L)
    return CG, CL


def build_cross_cov(x_star, sigma_star, X, state, hp) -> np.ndarray:
    """Covariance vector between ``Y(x_star)`` and ``Y(x_i)``, without nugget."""
    CG, CL = cross_cov_parts(np.reshape(x_star, (1, -1)), [sigma_star], X, state, hp)
    return (CG + CL)[0]
