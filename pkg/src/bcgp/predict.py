"""Pointwise posterior prediction and its global/local/error decomposition.

Everything below works on the standardized response scale except
:func:`predict`, which reports in original units.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .kernels import build_cov_matrix, corr_matrix, cross_cov_parts, sq_diffs
from .model import HyperParams, ModelState, TrainingSet, latent_corr

COINCIDENCE_TOL = 1e-12


def _states(chain):
    return chain.states if hasattr(chain, "states") else list(chain)


def _as_points(x_star, d):
    return np.asarray(x_star, dtype=float).reshape(-1, d)


def W_star_moments(Xu_star, state: ModelState, data: TrainingSet, hp: HyperParams, Rt=None):
    """Conditional mean and variance of the log-variance at unit-cube inputs.

    Conditions on ``state.W`` at every latent location of ``data``. Negative
    variances from round-off are clamped to zero.
    """
    Xu_star = _as_points(Xu_star, data.d)
    if Rt is None:
        Rt = latent_corr(data, state.rho_V, hp)
    R_star = corr_matrix(sq_diffs(Xu_star, data.Xl), state.rho_V, hp.K_V)
    mean = state.mu_V + R_star @ Rt.solve(state.W - state.mu_V)
    Z = Rt.half_solve(R_star.T)
    var = state.sigma2_V * (1.0 - np.sum(Z * Z, axis=0))
    return mean, np.maximum(var, 0.0)


def sample_W_star(Xu_star, state, data, hp, rng, Rt=None):
    mean, var = W_star_moments(Xu_star, state, data, hp, Rt)
    return mean + np.sqrt(var) * rng.standard_normal(mean.shape)


def coincidence(Xu_star, data: TrainingSet) -> np.ndarray:
    """Boolean ``(m, n)`` matrix marking test inputs equal to training inputs."""
    gap = np.max(np.abs(Xu_star[:, None, :] - data.Xu[None, :, :]), axis=2)
    return gap <= COINCIDENCE_TOL


@dataclass
class DrawTerms:
    """Per-draw conditional quantities at ``m`` test inputs (standardized scale)."""

    global_: np.ndarray
    local: np.ndarray
    error: np.ndarray
    var: np.ndarray

    @property
    def mean(self):
        return self.global_ + self.local + self.error


def draw_terms(Xu_star, sigma2_star, state, data, hp, C=None) -> DrawTerms:
    """Conditional moments of ``Y(x_*)`` for one posterior draw, split by component.

    ``sigma2_star`` is the latent variance at each test input. The error
    cross-covariance is ``sigma2_eps`` for a test input equal to a training
    input and zero otherwise.
    """
    Xu_star = _as_points(Xu_star, data.d)
    sigma2_star = np.atleast_1d(np.asarray(sigma2_star, dtype=float))
    if C is None:
        C = build_cov_matrix(data.Xu, state, hp, sqd=data.sqd)
    CG, CL = cross_cov_parts(Xu_star, np.sqrt(sigma2_star), data.Xu, state, hp)
    CE = coincidence(Xu_star, data) * state.sigma2_eps
    alpha = C.solve(data.y - state.beta0)
    C_star = CG + CL + CE
    Z = C.half_solve(C_star.T)
    var = sigma2_star + state.sigma2_eps - np.sum(Z * Z, axis=0)
    return DrawTerms(state.beta0 + CG @ alpha, CL @ alpha, CE @ alpha, np.maximum(var, 0.0))


def cond_pred_moments(x_star, sigma2_star, state, data, hp=None):
    """``(mean, variance)`` of ``Y(x_*) | state, y``; ``x_star`` on the unit cube."""
    terms = draw_terms(x_star, sigma2_star, state, data, hp or HyperParams())
    mean, var = terms.mean, terms.var
    if mean.size == 1:
        return float(mean[0]), float(var[0])
    return mean, var


def _point_streams(Xu_star, seed):
    """One generator per test input, keyed by the input's coordinates so that
    results do not depend on point order."""
    out = []
    for x in Xu_star:
        digest = hashlib.sha256(np.ascontiguousarray(x, dtype="<f8").tobytes()).digest()
        key = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
        out.append(np.random.default_rng([int(seed)] + key))
    return out


@dataclass
class PosteriorTerms:
    """Stacked ``(T, m)`` per-draw terms plus predictive draws, standardized scale."""

    global_: np.ndarray
    local: np.ndarray
    error: np.ndarray
    var: np.ndarray
    W_star: np.ndarray
    samples: np.ndarray

    @property
    def mean(self):
        return self.global_ + self.local + self.error


def posterior_terms(Xu_star, chain, data, hp=None, seed=0, W_star=None) -> PosteriorTerms:
    """Evaluate every posterior draw at unit-cube inputs ``Xu_star``.

    Each draw gets its own latent log-variance ``W_*`` (conditional draw) and
    one predictive sample of ``Y(x_*)``. ``W_star`` may be supplied as a
    ``(T, m)`` array to bypass the conditional draw.
    """
    hp = hp or HyperParams()
    Xu_star = _as_points(Xu_star, data.d)
    states = _states(chain)
    if not states:
        raise ValueError("chain has no draws")
    T, m = len(states), Xu_star.shape[0]
    streams = _point_streams(Xu_star, seed)
    zW = np.stack([g.standard_normal(T) for g in streams], axis=1) if m else np.empty((T, 0))
    zY = np.stack([g.standard_normal(T) for g in streams], axis=1) if m else np.empty((T, 0))
    shape = (T, m)
    G, L, E, var, Ws = (np.empty(shape) for _ in range(5))
    for t, state in enumerate(states):
        if W_star is None:
            mean_W, var_W = W_star_moments(Xu_star, state, data, hp)
            Ws[t] = mean_W + np.sqrt(var_W) * zW[t]
        else:
            Ws[t] = W_star[t]
        terms = draw_terms(Xu_star, np.exp(Ws[t]), state, data, hp)
        G[t], L[t], E[t], var[t] = terms.global_, terms.local, terms.error, terms.var
    samples = G + L + E + np.sqrt(var) * zY
    return PosteriorTerms(G, L, E, var, Ws, samples)


def rb_mean(x_star, chain, data, hp=None, seed=0):
    """Rao-Blackwellized predictive mean in original units; ``x_star`` in original units."""
    pt = posterior_terms(data.to_unit(_as_points(x_star, data.d)), chain, data, hp, seed)
    out = data.destandardize(pt.mean.mean(axis=0))
    return float(out[0]) if out.size == 1 else out


def predictive_draws(x_star, chain, data, hp=None, seed=0):
    """One predictive draw per posterior state, original units, shape ``(T, m)``."""
    pt = posterior_terms(data.to_unit(_as_points(x_star, data.d)), chain, data, hp, seed)
    return data.destandardize(pt.samples)


def predictive_interval(samples, level=0.95, axis=0):
    """Equal-tailed interval from empirical percentiles.

    Uses midpoint plotting positions (``(k - 0.5) / T``) with linear
    interpolation between neighbouring order statistics.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie strictly between 0 and 1")
    alpha = 1.0 - level
    q = np.percentile(np.asarray(samples, dtype=float), [100 * alpha / 2, 100 * (1 - alpha / 2)],
                      axis=axis, method="hazen")
    return q[0], q[1]


def decompose_prediction(x_star, chain, data, hp=None, seed=0):
    """Posterior-mean global, local and error components in original units.

    The global part carries the overall mean, so the three add up to the
    Rao-Blackwellized mean.
    """
    pt = posterior_terms(data.to_unit(_as_points(x_star, data.d)), chain, data, hp, seed)
    return (data.destandardize(pt.global_.mean(axis=0)),
            data.scale * pt.local.mean(axis=0),
            data.scale * pt.error.mean(axis=0))


@dataclass
class PredictionResult:
    """Pointwise predictions at ``m`` inputs, original units."""

    x_star: np.ndarray
    mean: np.ndarray
    draw_mean: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    global_: np.ndarray
    local: np.ndarray
    error: np.ndarray
    level: float
    samples: np.ndarray | None = None

    def __len__(self):
        return self.mean.shape[0]

    @property
    def width(self):
        return self.hi - self.lo


def predict(X_star, chain, data: TrainingSet, hp: HyperParams | None = None, level=0.95,
            seed=0, keep_samples=False) -> PredictionResult:
    """Predict at ``X_star`` (original units) from posterior draws."""
    X_star = _as_points(X_star, data.d)
    pt = posterior_terms(data.to_unit(X_star), chain, data, hp, seed)
    samples = data.destandardize(pt.samples)
    lo, hi = predictive_interval(samples, level)
    return PredictionResult(
        x_star=X_star,
        mean=data.destandardize(pt.mean.mean(axis=0)),
        draw_mean=samples.mean(axis=0),
        lo=lo,
        hi=hi,
        global_=data.destandardize(pt.global_.mean(axis=0)),
        local=data.scale * pt.local.mean(axis=0),
        error=data.scale * pt.error.mean(axis=0),
        level=level,
        samples=samples if keep_samples else None,
    )


def predict_batched(X_star, chain, data, hp=None, level=0.95, seed=0, batch=256):
    """:func:`predict` over chunks of inputs, to bound memory for long chains."""
    X_star = _as_points(X_star, data.d)
    parts = [predict(X_star[i:i + batch], chain, data, hp, level, seed)
             for i in range(0, max(X_star.shape[0], 1), batch)]
    if len(parts) == 1:
        return parts[0]
    cat = {name: np.concatenate([getattr(p, name) for p in parts])
           for name in ("x_star", "mean", "draw_mean", "lo", "hi", "global_", "local", "error")}
    return PredictionResult(level=level, **cat)


def interpolation_error(chain, data, hp=None) -> float:
    """Largest standardized gap between the predictive mean and ``y`` at the training inputs."""
    pt = posterior_terms(data.Xu, chain, data, hp)
    return float(np.max(np.abs(pt.mean.mean(axis=0) - data.y)))


__all__ = [
    "DrawTerms", "PosteriorTerms", "PredictionResult", "W_star_moments", "coincidence",
    "cond_pred_moments", "decompose_prediction", "draw_terms", "interpolation_error",
    "posterior_terms", "predict", "predict_batched", "predictive_draws", "predictive_interval",
    "rb_mean", "sample_W_star",
]
