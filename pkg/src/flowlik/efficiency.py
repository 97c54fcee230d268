"""Fisher-information efficiency bound: how many NetFlows match the full-data
MLE to a target relative efficiency.

The bound compares the determinant of the packet model's per-observation
information H with the information I carried by one (possibly thinned) flow
duration under the marginal mixture density, and applies a Chernoff bound to
the per-flow inter-renewal count:

    n_min = k * (|H| / |I| / (1 + eps)^2)^(1/d) * log((2 / eta) E[e^{Mbar}])

I is estimated by Monte Carlo: durations are drawn from the generative
mixture and the Hessian of the averaged marginal log-density is taken by
central finite differences (the averaged surface shares draws across the
stencil, so the determinant's near-cancellation is handled by common random
numbers rather than sample size).  The moment generating function of the
mean inter-renewal count is estimated in the log domain, so heavy supports
cannot overflow; unbounded size distributions are rejected.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import _numdiff
from .likelihood import (LikelihoodConfig, marginal_duration_logdensity,
                         marginal_duration_weights)
from .models import PacketModel
from .simulate import derive_rng

__all__ = ["EfficiencyRequest", "InfoSummary", "marginal_fisher_info",
           "log_mgf_mean_count", "n_min", "efficiency_bound"]


@dataclass(frozen=True)
class EfficiencyRequest:
    """Inputs of the session-size bound.

    epsilon: relative-efficiency slack; eta: failure probability;
    k_flows: flows behind the reference full-data MLE (k = 1 often
    suffices); mc_samples: Monte-Carlo draws for the information and MGF
    estimates; fd_step: relative finite-difference step.
    """

    epsilon: float = 0.1
    eta: float = 0.1
    k_flows: int = 1
    mc_samples: int = 200_000
    fd_step: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must be in (0, 1)")
        if not 0 < self.eta < 1:
            raise ValueError("eta must be in (0, 1)")
        if self.k_flows < 1:
            raise ValueError("k_flows must be >= 1")
        if self.mc_samples < 100_000:
            raise ValueError("mc_samples must be >= 1e5")


@dataclass
class InfoSummary:
    """Information matrices and MGF estimates behind a bound evaluation."""

    H: np.ndarray
    I: np.ndarray
    log_det_H: float
    log_det_I: float
    log_mgf_plus: float   # log E[exp(+Mbar)]
    log_mgf_minus: float  # log E[exp(-Mbar)]

    @property
    def det_ratio(self) -> float:
        return float(np.exp(self.log_det_H - self.log_det_I))

    def to_dict(self):
        return {"H": self.H.tolist(), "I": self.I.tolist(),
                "log_det_H": self.log_det_H, "log_det_I": self.log_det_I,
                "det_ratio": self.det_ratio,
                "log_mgf_plus": self.log_mgf_plus,
                "log_mgf_minus": self.log_mgf_minus}


def _log_det_pd(M, what):
    sign, logdet = np.linalg.slogdet(M)
    if sign <= 0:
        raise FloatingPointError(
            f"{what} is not positive definite; increase mc_samples")
    return float(logdet)


def marginal_fisher_info(model: PacketModel, cfg: LikelihoodConfig,
                         req: EfficiencyRequest) -> np.ndarray:
    """Monte-Carlo Fisher information of the (thinned) flow-duration marginal.

    Draws durations from the generative mixture (span k from the
    theta-free mixture weights, duration as an exact k-fold sum), then takes
    the negative central-difference Hessian of the mean marginal log-density
    at the model's parameters.  Deterministic for a fixed request seed.
    """
    if not cfg.pmf.is_bounded():
        raise ValueError("marginal information requires a bounded-support pmf")
    ks, log_w = marginal_duration_weights(cfg)
    rng = derive_rng(req.seed, 0xEFF)
    w = np.exp(log_w - logsumexp(log_w))
    w = w / w.sum()
    draw_ks = rng.choice(ks, size=req.mc_samples, p=w)
    x = np.sort(model.sample_sum(draw_ks, rng))  # shared draws; order is free
    weights = (ks, log_w)

    def mean_logdens(params):
        m = model.with_params(params)
        vals = marginal_duration_logdensity(x, m, cfg, weights=weights,
                                            assume_sorted=True)
        return float(np.mean(vals))

    H = -_numdiff.hessian(mean_logdens, model.params, rel_step=req.fd_step)
    H = 0.5 * (H + H.T)
    eig = np.linalg.eigvalsh(H)
    if np.any(eig <= 0):
        raise FloatingPointError(
            "marginal information estimate is not positive definite after "
            "symmetrisation; increase mc_samples")
    return H


def log_mgf_mean_count(pmf, k_flows, mc_samples, rng, sign=+1):
    """log E[exp(sign * Mbar)] with Mbar the mean per-flow inter-renewal
    count over k flows, by Monte Carlo in the log domain."""
    if not pmf.is_bounded():
        raise ValueError(
            "E[exp(Mbar)] requires a bounded-support flow-size pmf; "
            f"unbounded kind {pmf.kind!r} has no finite MGF")
    sizes = pmf.sample((mc_samples, k_flows), rng).astype(float)
    mbar = (sizes - 1.0).mean(axis=1)
    return float(logsumexp(sign * mbar) - math.log(mc_samples))


def efficiency_bound(model, cfg, req, info: InfoSummary | None = None):
    """Bound interval on the number of NetFlows for (1 +- eps) relative
    efficiency with probability 1 - eta; returns (n_lower, n_upper, info).
    The upper bound can be empty (negative); a warning is emitted then."""
    if info is None:
        info = summarize_information(model, cfg, req)
    d = model.dim
    log_ratio = info.log_det_H - info.log_det_I
    log_lower = (math.log(req.k_flows)
                 + (log_ratio - 2.0 * math.log1p(req.epsilon)) / d
                 + math.log(math.log(2.0 / req.eta) + info.log_mgf_plus))
    n_lower = math.exp(log_lower)
    inner_upper = math.log(2.0 / req.eta) + info.log_mgf_minus
    if inner_upper >= 0:
        warnings.warn("the bound interval is empty (the upper Chernoff bound "
                      "is vacuous for this configuration)", UserWarning,
                      stacklevel=2)
        n_upper = math.inf
    else:
        n_upper = req.k_flows * math.exp(
            (log_ratio - 2.0 * math.log1p(-req.epsilon)) / d) * (-inner_upper)
        if n_upper < n_lower:
            warnings.warn("the bound interval is empty (upper < lower)",
                          UserWarning, stacklevel=2)
    return n_lower, n_upper, info


def joint_bound_condition(req: EfficiencyRequest, info: InfoSummary, dim):
    """Reported-only check that the lower and upper Chernoff bounds can hold
    jointly: E[e^{Mbar}] E[e^{-Mbar}]^A < (eta/2)^{A+1} with
    A = ((1 + eps)/(1 - eps))^{2/d}.  Never enforced."""
    A = ((1.0 + req.epsilon) / (1.0 - req.epsilon)) ** (2.0 / dim)
    lhs_log = info.log_mgf_plus + A * info.log_mgf_minus
    rhs_log = (A + 1.0) * math.log(req.eta / 2.0)
    return {"satisfied": bool(lhs_log < rhs_log), "A": A,
            "lhs_log": lhs_log, "rhs_log": rhs_log}


def summarize_information(model, cfg, req) -> InfoSummary:
    H = model.fisher_information()
    I = marginal_fisher_info(model, cfg, req)
    rng = derive_rng(req.seed, 0x36F)
    lp = log_mgf_mean_count(cfg.pmf, req.k_flows, req.mc_samples, rng, +1)
    lm = log_mgf_mean_count(cfg.pmf, req.k_flows, req.mc_samples, rng, -1)
    return InfoSummary(H, I, _log_det_pd(H, "H"), _log_det_pd(I, "I"), lp, lm)


def n_min(model, cfg, req, info=None) -> int:
    """Ceiling of the lower efficiency bound (the quantity of practical
    interest: more NetFlows only helps)."""
    n_lower, _, _ = efficiency_bound(model, cfg, req, info=info)
    return int(math.ceil(n_lower))
