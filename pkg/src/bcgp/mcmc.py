"""Metropolis-within-Gibbs sampler for the composite GP posterior.

One sweep updates, in order: ``beta0`` (Gibbs), ``omega``, each ``rho_G[j]``,
each ``rho_L[j]``, ``sigma2_eps`` (uniform-window Metropolis), ``mu_V`` and
``sigma2_V`` (Gibbs), each ``rho_V[j]`` (Metropolis) and finally the latent
log-variances ``W`` (either one full-vector move or ``m`` focal-point block
moves).
"""
from __future__ import annotations

import logging
import math
import re
from collections import defaultdict
from dataclasses import dataclass, fields, replace

import numpy as np

from .kernels import IllConditionedCovarianceError, build_cov_matrix, factorize
from .model import (HyperParams, ModelState, TrainingSet, default_state, latent_corr,
                    log_latent_variance_density, log_prior_scalars, mvn_logpdf)
from .priors import InverseGamma

log = logging.getLogger(__name__)

LIKELIHOOD_PARAMS = ("omega", "rho_G", "rho_L", "sigma2_eps")
# proposal widths never need to exceed the length of the support
_WIDTH_CAP = {"omega": 1.0, "rho_G": 1.0, "rho_L": 1.0, "rho_V": 1.0}
_KEY_RE = re.compile(r"^(\w+?)(?:\[(\d+)\])?$")


@dataclass(frozen=True)
class ChainConfig:
    """Run protocol and proposal settings.

    ``m=None`` means ``ceil(2 n / n_prop)`` focal points per sweep.
    ``use_likelihood=False`` samples the prior (``beta0`` is then held fixed,
    its flat prior being improper). ``tau2_proposal`` is the starting
    variance scale of the latent log-variance proposals; with ``adapt_tau2``
    its square root is calibrated like the other widths.
    """

    n_adapt: int = 1000
    num_updates: int = 60
    n_burn: int = 4000
    n_mcmc: int = 5000
    target_lo: float = 0.25
    target_hi: float = 0.40
    target_c: float = 0.325
    tau2_proposal: float = 0.1
    adapt_tau2: bool = True
    n_prop: int = 15
    m: int | None = None
    small_n_threshold: int = 20
    seed: int = 0
    thin: int = 1
    zero_accept_factor: float = 0.3
    use_likelihood: bool = True
    log_every: int = 0

    def __post_init__(self):
        if not 0 < self.target_lo < self.target_c < self.target_hi < 1:
            raise ValueError("need 0 < target_lo < target_c < target_hi < 1")
        if self.n_prop < 1 or (self.m is not None and self.m < 1):
            raise ValueError("n_prop and m must be at least 1")
        if min(self.n_adapt, self.num_updates, self.n_burn, self.n_mcmc) < 0 or self.thin < 1:
            raise ValueError("phase lengths must be non-negative and thin >= 1")
        if self.tau2_proposal < 0:
            raise ValueError("tau2_proposal must be non-negative")

    def clusters(self, n: int) -> int:
        return self.m if self.m is not None else math.ceil(2 * n / self.n_prop)


@dataclass(frozen=True)
class ProposalWidths:
    delta_omega: float
    delta_rho_G: np.ndarray
    delta_rho_L: np.ndarray
    delta_sigma2_eps: float
    delta_rho_V: np.ndarray
    tau_W: float = math.sqrt(0.1)

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if np.ndim(value):
                value = np.array(value, dtype=float)
                value.setflags(write=False)
                object.__setattr__(self, f.name, value)
            if np.any(np.asarray(value) <= 0):
                raise ValueError(f"{f.name} must be positive")

    @classmethod
    def default(cls, d: int) -> "ProposalWidths":
        return cls(0.05, np.full(d, 0.05), np.full(d, 0.05), 1e-4, np.full(d, 0.05))

    @property
    def tau2(self) -> float:
        return self.tau_W ** 2

    def get(self, key: str) -> float:
        if key == "V":
            return self.tau_W
        name, index = parse_key(key)
        value = getattr(self, "delta_" + name)
        return float(value if index is None else value[index])

    def as_dict(self) -> dict:
        out = {"omega": self.delta_omega}
        for name in ("rho_G", "rho_L"):
            out.update({f"{name}[{j}]": float(v) for j, v in enumerate(getattr(self, "delta_" + name))})
        out["sigma2_eps"] = self.delta_sigma2_eps
        out.update({f"rho_V[{j}]": float(v) for j, v in enumerate(self.delta_rho_V)})
        out["V"] = self.tau_W
        return out

    @classmethod
    def from_dict(cls, values: dict, d: int) -> "ProposalWidths":
        vec = {name: np.array([values[f"{name}[{j}]"] for j in range(d)], dtype=float)
               for name in ("rho_G", "rho_L", "rho_V")}
        return cls(values["omega"], vec["rho_G"], vec["rho_L"], values["sigma2_eps"], vec["rho_V"],
                   values.get("V", math.sqrt(0.1)))


def parse_key(key: str):
    match = _KEY_RE.match(key)
    if match is None:
        raise KeyError(key)
    name, index = match.groups()
    return name, None if index is None else int(index)


def mh_keys(d: int, include_nugget: bool = True) -> list:
    """Names of the uniform-window Metropolis updates in sweep order."""
    keys = ["omega"]
    keys += [f"rho_G[{j}]" for j in range(d)]
    keys += [f"rho_L[{j}]" for j in range(d)]
    if include_nugget:
        keys.append("sigma2_eps")
    keys += [f"rho_V[{j}]" for j in range(d)]
    return keys


@dataclass
class ChainOutput:
    states: list
    acceptance_log: dict
    final_widths: ProposalWidths
    config: ChainConfig = None

    def acceptance_rates(self, phase: str = "production") -> dict:
        return {k: (a / p if p else float("nan"))
                for k, (a, p) in self.acceptance_log.get(phase, {}).items()}

    def __len__(self):
        return len(self.states)


class _Sampler:
    """Current state plus cached density terms and factorizations.

    The log posterior is ``lik + latent + scalars``; each update recomputes
    only the terms its parameter enters.
    """

    def __init__(self, state: ModelState, data: TrainingSet, hp: HyperParams,
                 cfg: ChainConfig, rng):
        self.data, self.hp, self.cfg, self.rng = data, hp, cfg, rng
        self.counts = defaultdict(lambda: [0, 0])
        self._set_state(state)

    def _set_state(self, state):
        self.state = state
        self.scalars = log_prior_scalars(state, self.hp)
        if not math.isfinite(self.scalars) or np.any(state.V <= 0):
            raise ValueError("initial state has zero prior density")
        self.Rt = latent_corr(self.data, state.rho_V, self.hp)
        self.latent = log_latent_variance_density(state, self.data, self.hp, Rt=self.Rt)
        if self.cfg.use_likelihood:
            self.C = build_cov_matrix(self.data.Xu, state, self.hp, sqd=self.data.sqd)
            self.lik = mvn_logpdf(self.data.y - state.beta0, self.C)
        else:
            self.C, self.lik = None, 0.0
        if not math.isfinite(self.lik + self.latent):
            raise ValueError("initial state has zero posterior density")

    @property
    def log_post(self) -> float:
        return self.lik + self.latent + self.scalars

    def _lik_terms(self, state):
        """(C, lik) for ``state``; ``None`` if the covariance cannot be factorized."""
        if not self.cfg.use_likelihood:
            return None, 0.0
        try:
            C = build_cov_matrix(self.data.Xu, state, self.hp, sqd=self.data.sqd)
        except IllConditionedCovarianceError:
            return None
        return C, mvn_logpdf(self.data.y - state.beta0, C)

    def _accept(self, log_ratio: float) -> bool:
        return log_ratio >= 0 or math.log(self.rng.uniform()) < log_ratio

    # Step 1
    def beta0(self):
        if not self.cfg.use_likelihood:
            return
        value = gibbs_beta0(self.state, self.data, self.hp, self.rng, C=self.C)
        self.state = self.state.replace(beta0=value)
        self.lik = mvn_logpdf(self.data.y - value, self.C)

    # Steps 2-5 and 8
    def mh(self, key: str, width: float) -> bool:
        name, index = parse_key(key)
        current = getattr(self.state, name)
        current = current if index is None else current[index]
        proposal = current + self.rng.uniform(-width, width)
        new = self.state.with_component(name, proposal, index)
        self.counts[key][1] += 1
        scalars = log_prior_scalars(new, self.hp)
        if not math.isfinite(scalars):
            return False
        C, lik, Rt, latent = self.C, self.lik, self.Rt, self.latent
        if name in LIKELIHOOD_PARAMS:
            terms = self._lik_terms(new)
            if terms is None:
                return False
            C, lik = terms
        elif name == "rho_V":
            try:
                Rt = latent_corr(self.data, new.rho_V, self.hp)
            except IllConditionedCovarianceError:
                return False
            latent = log_latent_variance_density(new, self.data, self.hp, Rt=Rt)
        else:
            raise KeyError(f"no Metropolis update for {key}")
        if not self._accept(lik + latent + scalars - self.log_post):
            return False
        self.state, self.C, self.lik, self.Rt, self.latent, self.scalars = (
            new, C, lik, Rt, latent, scalars)
        self.counts[key][0] += 1
        return True

    # Steps 6-7
    def mu_V(self):
        value = gibbs_mu_V(self.state, self.data, self.hp, self.rng, Rt=self.Rt)
        self._set_latent_hyper(mu_V=value)

    def sigma2_V(self):
        value = gibbs_sigma2_V(self.state, self.data, self.hp, self.rng, Rt=self.Rt)
        self._set_latent_hyper(sigma2_V=value)

    def _set_latent_hyper(self, **change):
        self.state = self.state.replace(**change)
        self.scalars = log_prior_scalars(self.state, self.hp)
        self.latent = log_latent_variance_density(self.state, self.data, self.hp, Rt=self.Rt)

    # Step 9
    def propose_W(self, W_new) -> bool:
        """Metropolis accept/reject of a symmetric proposal for the full ``W``."""
        self.counts["V"][1] += 1
        new = self.state.replace(V=np.exp(W_new))
        if np.any(new.V <= 0) or not np.all(np.isfinite(new.V)):
            return False
        terms = self._lik_terms(new)
        if terms is None:
            return False
        C, lik = terms
        latent = log_latent_variance_density(new, self.data, self.hp, Rt=self.Rt)
        if not self._accept(lik + latent - self.lik - self.latent):
            return False
        self.state, self.C, self.lik, self.latent = new, C, lik, latent
        self.counts["V"][0] += 1
        return True

    def V_small(self, tau2):
        z = self.rng.standard_normal(self.data.n_latent)
        self.propose_W(self.state.W + math.sqrt(tau2) * (self.Rt.chol @ z))

    def V_clustered(self, tau2):
        for _ in range(self.cfg.clusters(self.data.n_latent)):
            block, rest = focal_block(self.data.Xl, self.cfg.n_prop, self.rng)
            W = self.state.W
            W_new = W.copy()
            W_new[block] = W[block] + clustered_proposal_noise(
                self.Rt.entries, block, rest, tau2, self.rng)
            self.propose_W(W_new)

    def sweep(self, widths: ProposalWidths, keys):
        self.beta0()
        for key in keys:
            if key.startswith("rho_V"):
                continue
            self.mh(key, widths.get(key))
        self.mu_V()
        self.sigma2_V()
        for key in keys:
            if key.startswith("rho_V"):
                self.mh(key, widths.get(key))
        if self.data.n_latent < self.cfg.small_n_threshold:
            self.V_small(widths.tau2)
        else:
            self.V_clustered(widths.tau2)

    def take_counts(self) -> dict:
        out = {k: tuple(v) for k, v in self.counts.items()}
        self.counts.clear()
        return out


def _default_cfg(cfg):
    return cfg if cfg is not None else ChainConfig()


def gibbs_beta0(state: ModelState, data: TrainingSet, hp: HyperParams, rng, C=None) -> float:
    """Draw ``beta0`` from ``N((1'C^-1 1)^-1 1'C^-1 y, (1'C^-1 1)^-1)``."""
    mean, var = beta0_conditional(state, data, hp, C)
    return mean + math.sqrt(var) * rng.standard_normal()


def beta0_conditional(state, data, hp, C=None):
    if C is None:
        C = build_cov_matrix(data.Xu, state, hp, sqd=data.sqd)
    ones = np.ones(data.n)
    Cinv1 = C.solve(ones)
    prec = float(ones @ Cinv1)
    return float(Cinv1 @ data.y) / prec, 1.0 / prec


def mu_V_conditional(state, data, hp, Rt=None):
    if Rt is None:
        Rt = latent_corr(data, state.rho_V, hp)
    Rinv1 = Rt.solve(np.ones(data.n_latent))
    prec = 1.0 / hp.tau2_V + float(Rinv1.sum()) / state.sigma2_V
    var = 1.0 / prec
    mean = var * (hp.beta_V / hp.tau2_V + float(Rinv1 @ state.W) / state.sigma2_V)
    return mean, var


def gibbs_mu_V(state: ModelState, data: TrainingSet, hp: HyperParams, rng, Rt=None) -> float:
    """Draw ``mu_V`` from its normal full conditional."""
    mean, var = mu_V_conditional(state, data, hp, Rt)
    return mean + math.sqrt(var) * rng.standard_normal()


def sigma2_V_conditional(state, data, hp, Rt=None) -> InverseGamma:
    """Full conditional ``IG(n/2 + a, (Q/2 + 1/b)^-1)`` with ``Q`` the
    ``R_t``-quadratic form of ``W - mu_V``."""
    if Rt is None:
        Rt = latent_corr(data, state.rho_V, hp)
    z = Rt.half_solve(state.W - state.mu_V)
    quad = float(z @ z)
    return InverseGamma(data.n_latent / 2.0 + hp.a_sigma2V, 1.0 / (0.5 * quad + 1.0 / hp.b_sigma2V))


def gibbs_sigma2_V(state: ModelState, data: TrainingSet, hp: HyperParams, rng, Rt=None) -> float:
    return float(sigma2_V_conditional(state, data, hp, Rt).sample(rng))


def mh_uniform_step(key: str, width: float, state: ModelState, data: TrainingSet,
                    hp: HyperParams, rng, cfg: ChainConfig | None = None):
    """Single uniform-window Metropolis update of parameter ``key``.

    ``key`` is ``"omega"``, ``"sigma2_eps"`` or an indexed vector component
    such as ``"rho_L[0]"``. Returns ``(new_state, accepted)``.
    """
    if not width > 0:
        raise ValueError("width must be positive")
    sampler = _Sampler(state, data, hp, _default_cfg(cfg), rng)
    accepted = sampler.mh(key, width)
    return sampler.state, accepted


def update_V_small(state, data, hp, cfg, rng):
    """Full-vector move ``W' ~ N(W, tau2 R_t)``. Returns ``(new_state, accepted)``."""
    sampler = _Sampler(state, data, hp, cfg, rng)
    sampler.V_small(cfg.tau2_proposal)
    return sampler.state, bool(sampler.counts["V"][0])


def update_V_clustered(state, data, hp, cfg, rng):
    """``m`` focal-point block moves. Returns ``(new_state, n_accepted)``."""
    sampler = _Sampler(state, data, hp, cfg, rng)
    sampler.V_clustered(cfg.tau2_proposal)
    return sampler.state, sampler.counts["V"][0]


def focal_block(Xu, n_prop, rng):
    """Indices of the ``n_prop`` inputs nearest a uniform focal point, and the rest.

    Ties go to the lowest index.
    """
    n, d = Xu.shape
    focal = rng.uniform(size=d)
    dist = np.sum((Xu - focal) ** 2, axis=1)
    order = np.argsort(dist, kind="stable")
    k = min(n_prop, n)
    return np.sort(order[:k]), np.sort(order[k:])


def clustered_proposal_noise(R, block, rest, tau2, rng):
    """Zero-mean draw with covariance ``tau2 (R_bb - R_rb' R_rr^-1 R_rb)``,
    ``R`` being the latent correlation matrix at all training inputs."""
    cov = R[np.ix_(block, block)]
    if rest.size:
        R_rr = factorize(R[np.ix_(rest, rest)])
        R_rb = R[np.ix_(rest, block)]
        cov = cov - R_rb.T @ R_rr.solve(R_rb)
        cov = 0.5 * (cov + cov.T)
    chol = factorize(cov).chol
    return math.sqrt(tau2) * (chol @ rng.standard_normal(block.size))


def calibrate_widths(widths: ProposalWidths, counts: dict, cfg: ChainConfig) -> ProposalWidths:
    """Rescale each width whose acceptance rate left ``[target_lo, target_hi]``.

    ``delta <- delta * rate / target_c``; a period with no acceptances
    multiplies by ``cfg.zero_accept_factor`` instead of collapsing to zero.
    """
    values = widths.as_dict()
    for key, (accepted, proposed) in counts.items():
        if key not in values or proposed == 0:
            continue
        if key == "V" and not cfg.adapt_tau2:
            continue
        rate = accepted / proposed
        if cfg.target_lo <= rate <= cfg.target_hi:
            continue
        if accepted == 0:
            new = values[key] * cfg.zero_accept_factor
        else:
            new = values[key] * rate / cfg.target_c
        cap = _WIDTH_CAP.get(key if key == "V" else parse_key(key)[0])
        values[key] = min(new, cap) if cap is not None else new
    return ProposalWidths.from_dict(values, len(widths.delta_rho_G))


def run_chain(data: TrainingSet, hp: HyperParams | None = None, cfg: ChainConfig | None = None,
              init: ModelState | None = None, widths: ProposalWidths | None = None) -> ChainOutput:
    """Calibrate proposal widths, burn in, then collect ``n_mcmc`` draws.

    Calibration runs ``num_updates`` periods of ``n_adapt`` sweeps, adapting
    the widths after each period; its draws are discarded. Burn-in and
    production restart from the final calibration state with frozen widths.
    """
    hp = hp or HyperParams()
    cfg = _default_cfg(cfg)
    rng = np.random.default_rng(cfg.seed)
    state = init if init is not None else default_state(data, hp)
    if state.V.shape[0] != data.n_latent or state.d != data.d:
        raise ValueError("initial state does not match the training data shape")
    sampler = _Sampler(state, data, hp, cfg, rng)
    if widths is None:
        widths = replace(ProposalWidths.default(data.d), tau_W=math.sqrt(cfg.tau2_proposal))
    keys = mh_keys(data.d, hp.include_nugget)
    acceptance = {}

    def merge(phase, counts):
        book = acceptance.setdefault(phase, {})
        for key, (a, p) in counts.items():
            a0, p0 = book.get(key, (0, 0))
            book[key] = (a0 + a, p0 + p)

    for period in range(cfg.num_updates):
        for _ in range(cfg.n_adapt):
            sampler.sweep(widths, keys)
        counts = sampler.take_counts()
        merge("calibration", counts)
        widths = calibrate_widths(widths, counts, cfg)
        if cfg.log_every and (period + 1) % cfg.log_every == 0:
            log.info("calibration period %d/%d widths %s", period + 1, cfg.num_updates,
                     widths.as_dict())

    sampler.take_counts()
    for _ in range(cfg.n_burn):
        sampler.sweep(widths, keys)
    merge("burn_in", sampler.take_counts())

    states = []
    for it in range(cfg.n_mcmc * cfg.thin):
        sampler.sweep(widths, keys)
        if (it + 1) % cfg.thin == 0:
            states.append(sampler.state)
        if cfg.log_every and (it + 1) % (cfg.log_every * 100) == 0:
            log.info("production iteration %d", it + 1)
    merge("production", sampler.take_counts())
    return ChainOutput(states, acceptance, widths, cfg)


__all__ = [
    "ChainConfig", "ChainOutput", "ProposalWidths", "beta0_conditional", "calibrate_widths",
    "clustered_proposal_noise", "focal_block", "gibbs_beta0", "gibbs_mu_V", "gibbs_sigma2_V",
    "mh_keys", "mh_uniform_step", "mu_V_conditional", "run_chain", "sigma2_V_conditional",
    "update_V_clustered", "update_V_small",
]
