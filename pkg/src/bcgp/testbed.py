"""Benchmark functions, space-filling designs and accuracy metrics."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.spatial.distance import pdist
from scipy.stats import qmc

SOBOL_MAX_DIM = 21201

WING_WEIGHT_INPUTS = ("S_w", "W_fw", "A", "Lambda", "q", "lambda", "t_c", "N_z", "W_dg", "W_p")
WING_WEIGHT_BOUNDS = np.array([
    [150.0, 200.0],
    [220.0, 300.0],
    [6.0, 10.0],
    [-10.0, 10.0],
    [16.0, 45.0],
    [0.5, 1.0],
    [0.08, 0.18],
    [2.5, 6.0],
    [1700.0, 2500.0],
    [0.025, 0.08],
])


def bjx(x):
    """``sin(30 (x - 0.9)^4) cos(2 (x - 0.9)) + (x - 0.9) / 2`` on [0, 1]."""
    x = np.asarray(x, dtype=float)
    if np.any((x < 0.0) | (x > 1.0)):
        raise ValueError("bjx is defined on [0, 1]")
    u = x - 0.9
    out = np.sin(30.0 * u ** 4) * np.cos(2.0 * u) + u / 2.0
    return float(out) if out.ndim == 0 else out


def wing_weight(x):
    """Light-aircraft wing weight (lb) for the ten inputs of ``WING_WEIGHT_INPUTS``.

    The sweep angle is given in degrees. Accepts one point or an ``(m, 10)``
    array.
    """
    x = np.asarray(x, dtype=float)
    pts = np.atleast_2d(x)
    if pts.shape[1] != 10:
        raise ValueError("wing_weight takes 10 inputs")
    lo, hi = WING_WEIGHT_BOUNDS[:, 0], WING_WEIGHT_BOUNDS[:, 1]
    tol = 1e-9 * (hi - lo)
    if np.any(pts < lo - tol) or np.any(pts > hi + tol):
        raise ValueError("wing_weight input outside its tabulated range")
    Sw, Wfw, A, sweep, q, taper, tc, Nz, Wdg, Wp = pts.T
    cos_sweep = np.cos(np.deg2rad(sweep))
    y = (0.036 * Sw ** 0.758 * Wfw ** 0.0035 * (A / cos_sweep ** 2) ** 0.6 * q ** 0.006
         * taper ** 0.04 * (100.0 * tc / cos_sweep) ** -0.3 * (Nz * Wdg) ** 0.49 + Sw * Wp)
    return float(y[0]) if x.ndim == 1 else y


@dataclass(frozen=True)
class TestFunction:
    name: str
    d: int
    bounds: np.ndarray
    evaluator: Callable

    __test__ = False

    def __call__(self, X):
        return self.evaluator(X)

    def from_unit(self, U):
        U = np.atleast_2d(np.asarray(U, dtype=float))
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return lo + U * (hi - lo)


def _bjx_rows(X):
    return bjx(np.asarray(X, dtype=float).reshape(-1))


TEST_FUNCTIONS = {
    "bjx": TestFunction("bjx", 1, np.array([[0.0, 1.0]]), _bjx_rows),
    "wingweight": TestFunction("wingweight", 10, WING_WEIGHT_BOUNDS,
                               lambda X: np.atleast_1d(wing_weight(np.atleast_2d(X)))),
}


def get_function(name: str) -> TestFunction:
    try:
        return TEST_FUNCTIONS[name]
    except KeyError:
        raise KeyError(f"unknown test function {name!r}; choose from {sorted(TEST_FUNCTIONS)}")


def lhs_maximin(n: int, d: int, seed=0, n_candidates: int = 1000) -> np.ndarray:
    """Best of ``n_candidates`` random Latin hypercubes by minimum pairwise distance.

    Each point sits uniformly inside its stratum, so every column holds one
    value in each ``[(i-1)/n, i/n)``.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    rng = np.random.default_rng(seed)
    best, best_score = None, -math.inf
    for _ in range(n_candidates):
        perms = np.argsort(rng.uniform(size=(n, d)), axis=0)
        design = (perms + rng.uniform(size=(n, d))) / n
        score = pdist(design).min()
        if score > best_score:
            best, best_score = design, score
    return best


def sobol_points(n: int, d: int) -> np.ndarray:
    """First ``n`` points of the unscrambled Sobol' sequence in ``[0, 1)^d``."""
    if not 1 <= d <= SOBOL_MAX_DIM:
        raise ValueError(f"Sobol' dimension must be in [1, {SOBOL_MAX_DIM}]")
    engine = qmc.Sobol(d, scramble=False)
    with warnings.catch_warnings():
        # balance properties need n a power of two; a prefix is still valid
        warnings.simplefilter("ignore", UserWarning)
        return engine.random(n)


def rmspe(pred, truth) -> float:
    pred, truth = np.asarray(pred, dtype=float), np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError("prediction and truth lengths differ")
    if pred.size == 0:
        raise ValueError("empty input")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def relative_errors(pred, truth) -> np.ndarray:
    pred, truth = np.asarray(pred, dtype=float), np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError("prediction and truth lengths differ")
    return np.abs(pred - truth) / np.abs(truth)


def group_by_bins(inputs, values, n_bins: int = 8, lo=None, hi=None) -> list:
    """Split ``values`` by equal-width bins of ``inputs``.

    Bins cover ``[lo, hi]`` (defaults: the data range); the last bin is
    closed on the right. Returns one dict per bin with its edges, count,
    median and quartiles (``nan`` for empty bins).
    """
    inputs = np.asarray(inputs, dtype=float).ravel()
    values = np.asarray(values, dtype=float).ravel()
    if inputs.size == 0 or inputs.shape != values.shape:
        raise ValueError("inputs and values must be nonempty and of equal length")
    lo = inputs.min() if lo is None else lo
    hi = inputs.max() if hi is None else hi
    if hi <= lo:
        idx = np.zeros(inputs.size, dtype=int)
        edges = np.linspace(lo, lo + 1.0, n_bins + 1)
    else:
        edges = np.linspace(lo, hi, n_bins + 1)
        idx = np.clip(np.floor((inputs - lo) / (hi - lo) * n_bins).astype(int), 0, n_bins - 1)
    out = []
    for b in range(n_bins):
        v = values[idx == b]
        if v.size:
            q1, med, q3 = np.percentile(v, [25, 50, 75])
        else:
            q1 = med = q3 = math.nan
        out.append({"bin": b, "lo": float(edges[b]), "hi": float(edges[b + 1]),
                    "count": int(v.size), "q1": float(q1), "median": float(med), "q3": float(q3),
                    "min": float(v.min()) if v.size else math.nan,
                    "max": float(v.max()) if v.size else math.nan})
    return out


def equispaced_design(n: int) -> np.ndarray:
    """``n`` equally spaced points on [0, 1], as a column."""
    return np.linspace(0.0, 1.0, n)[:, None]
