"""NetFlow and sub-sampled NetFlow log-likelihoods.

The complete-data NetFlow likelihood factorises into the flow-gap density,
the (size - 1)-fold self-convolution of the packet model at the duration, and
the flow-size mass.  Under Bernoulli thinning at rate q the likelihood of a
sampled NetFlow mixes over the latent original size, the position j of the
first retained packet and the inter-renewal span k between the first and last
retained packets:

    sum_{m+1 >= mt} sum_{j=1}^{m+2-mt} sum_{k=mt-1}^{m+1-j}
        p_M(m+1) tau_m(mt; q) upsilon_{m,k}(mt) G_{j,k}

with tau the Binomial(m+1, q) mass at mt, upsilon_{m,k}(mt) =
C(k-1, mt-2) / C(m+1, mt) and G_{j,k} the product of the j-fold convolution
at the first retained gap and the k-fold convolution at the sampled duration.
The duration-only ("restricted") form marginalises j, replacing upsilon by
(m + 1 - k) C(k-1, mt-2) / C(m+1, mt).  Everything is computed in the log
domain with max-shifted exponential sums; binomial coefficients go through
log-gamma.  A pattern-enumeration oracle for small flows validates the
combinatorics in the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy.special import gammaln, logsumexp

from .models import ExponentialModel, GammaModel, PacketModel
from .sizes import FlowSizePmf

__all__ = [
    "LikelihoodConfig",
    "MixtureWeights",
    "mixture_weights",
    "netflow_loglik",
    "sampled_netflow_loglik",
    "restricted_sampled_loglik",
    "session_loglik",
    "marginal_duration_logdensity",
    "marginal_duration_weights",
    "brute_force_sampled_loglik",
    "lead_kernel_logpdf",
    "RestrictedSampledObjective",
    "NetflowObjective",
]


def _log_binom(n, k):
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    return gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)


def log_binomial_pmf(n, k, q):
    """log Binomial(n, q) mass at k, stable for extreme q."""
    if q >= 1.0:
        return np.where(np.asarray(k) == np.asarray(n), 0.0, -np.inf)
    return _log_binom(n, k) + np.asarray(k) * math.log(q) \
        + (np.asarray(n) - np.asarray(k)) * math.log1p(-q)


@dataclass(frozen=True)
class LikelihoodConfig:
    """Configuration of the thinned-likelihood mixture.

    ``retained_mass`` controls latent-size truncation: candidate original
    sizes are kept, in decreasing order of p_M * tau, until that fraction of
    the total mixture mass is retained (default keeps 1 - 1e-12).
    """

    pmf: FlowSizePmf
    q: float = 1.0
    retained_mass: float = 1.0 - 1e-12
    restricted: bool = True

    def __post_init__(self):
        if not 0 < self.q <= 1:
            raise ValueError("q must be in (0, 1]")
        if not 0.5 < self.retained_mass <= 1.0:
            raise ValueError("retained_mass must be in (0.5, 1]")

    @staticmethod
    def from_json(cfg) -> "LikelihoodConfig":
        """Build from a config document: ``{"pmf": {...}, "q": 0.1,
        "retained_mass": ..., "restricted": ...}``."""
        return LikelihoodConfig(
            pmf=FlowSizePmf.from_config(cfg["pmf"]),
            q=float(cfg.get("q", 1.0)),
            retained_mass=float(cfg.get("retained_mass", 1.0 - 1e-12)),
            restricted=bool(cfg.get("restricted", True)))


@dataclass(frozen=True)
class MixtureWeights:
    """Log-weights over the convolution order k for one observed retained
    count, after marginalising the latent size (and, in restricted mode, the
    first-packet position).  ``log_marginal`` is the log-mass of observing
    this retained count at all (the sampled-size marginal); dividing the
    weights by it normalises them to a probability vector."""

    m_tilde: int
    q: float
    ks: np.ndarray
    log_w: np.ndarray
    log_marginal: float
    restricted: bool = True

    def normalized(self):
        return np.exp(self.log_w - self.log_marginal)


def _latent_sizes(cfg: LikelihoodConfig, m_tilde):
    """Candidate latent original sizes >= m_tilde, truncated by posterior
    p_M * tau mass per the configured retained fraction."""
    if cfg.q == 1.0:
        sizes = np.array([m_tilde], dtype=np.int64)
        log_pt = cfg.pmf.logpmf(sizes)
        if not np.isfinite(log_pt[0]):
            raise ValueError(f"flow size {m_tilde} has zero prior mass")
        return sizes, log_pt
    pmf = cfg.pmf
    if pmf.is_bounded():
        sizes = pmf.latent_support(min_size=m_tilde)
    else:
        hi = int(np.ceil((m_tilde + 12.0 * math.sqrt(m_tilde + 4.0) + 30.0) / cfg.q))
        sizes = np.arange(m_tilde, min(hi, pmf.size_cap) + 1, dtype=np.int64)
    if sizes.size == 0:
        raise ValueError(
            f"latent-size truncation leaves no size >= {m_tilde}")
    log_pt = cfg.pmf.logpmf(sizes) + log_binomial_pmf(sizes, m_tilde, cfg.q)
    keep = np.isfinite(log_pt)
    sizes, log_pt = sizes[keep], log_pt[keep]
    if sizes.size == 0:
        raise ValueError(
            f"no latent size >= {m_tilde} has positive mixture mass")
    if cfg.retained_mass < 1.0 and sizes.size > 1:
        order = np.argsort(log_pt)[::-1]
        shifted = np.exp(log_pt[order] - log_pt[order[0]])
        frac = np.cumsum(shifted) / shifted.sum()
        n_keep = int(np.searchsorted(frac, cfg.retained_mass) + 1)
        keep_idx = np.sort(order[:n_keep])
        sizes, log_pt = sizes[keep_idx], log_pt[keep_idx]
    return sizes, log_pt


def mixture_weights(m_tilde, cfg: LikelihoodConfig) -> MixtureWeights:
    """Restricted mixture weights over the span k for an observed retained
    count: V_k = sum_m p_M(m+1) tau_m(mt; q) (m+1-k) C(k-1, mt-2) / C(m+1, mt)."""
    m_tilde = int(m_tilde)
    if m_tilde < 2:
        raise ValueError("m_tilde must be >= 2")
    sizes, log_pt = _latent_sizes(cfg, m_tilde)
    k_max = int(sizes[-1]) - 1
    log_w = np.full(k_max - (m_tilde - 2), -np.inf)  # index 0 <-> k = m_tilde - 1
    ks = np.arange(m_tilde - 1, k_max + 1)
    log_ck = _log_binom(ks - 1, m_tilde - 2)
    for s, lpt in zip(sizes, log_pt):
        k_hi = int(s) - 1
        n_k = k_hi - (m_tilde - 1) + 1
        terms = lpt + np.log(s - ks[:n_k].astype(float)) + log_ck[:n_k] \
            - _log_binom(float(s), m_tilde)
        np.logaddexp(log_w[:n_k], terms, out=log_w[:n_k])
    log_marginal = float(logsumexp(log_pt))
    return MixtureWeights(m_tilde, cfg.q, ks, log_w, log_marginal, restricted=True)


def joint_mixture_weights(m_tilde, cfg: LikelihoodConfig):
    """Log-weight table over (j, k) cells for the full sampled likelihood,
    marginalising the latent size only.  Returns (js, ks, logW) with logW of
    shape (len(js), len(ks)); cells outside the admissible triangle are -inf."""
    m_tilde = int(m_tilde)
    if m_tilde < 2:
        raise ValueError("m_tilde must be >= 2")
    sizes, log_pt = _latent_sizes(cfg, m_tilde)
    s_max = int(sizes[-1])
    if s_max > 4096:
        raise ValueError("full sampled likelihood is limited to latent sizes "
                         "<= 4096; use the restricted form for large flows")
    js = np.arange(1, s_max + 2 - m_tilde)  # j <= m + 2 - m_tilde, m = s_max - 1
    ks = np.arange(m_tilde - 1, s_max)
    logW = np.full((js.size, ks.size), -np.inf)
    log_ck = _log_binom(ks - 1, m_tilde - 2)
    for s, lpt in zip(sizes, log_pt):
        s = int(s)
        lup = lpt - _log_binom(float(s), m_tilde)
        for ji, j in enumerate(js):
            # admissible cells for this latent size: k in [m_tilde - 1, s - j]
            n_k = (s - j) - (m_tilde - 1) + 1
            if n_k <= 0:
                break
            terms = lup + log_ck[:n_k]
            np.logaddexp(logW[ji, :n_k], terms, out=logW[ji, :n_k])
    log_marginal = float(logsumexp(log_pt))
    return js, ks, logW, log_marginal


# Density kernels ------------------------------------------------------------

def _log_gammainc_lower(a, z):
    """log of the regularised lower incomplete gamma P(a, z), stable for
    severely underflowing values."""
    a = np.asarray(a, dtype=float)
    z = np.asarray(z, dtype=float)
    p = special.gammainc(a, z)
    with np.errstate(divide="ignore"):
        out = np.log(p)
    tiny = p < 1e-290
    if np.any(tiny):
        at, zt = np.broadcast_to(a, p.shape)[tiny], np.broadcast_to(z, p.shape)[tiny]
        # P(a, z) = z^a e^-z / Gamma(a+1) * sum_i z^i / prod(a+1..a+i)
        series = np.ones_like(zt)
        term = np.ones_like(zt)
        for i in range(1, 30):
            term = term * zt / (at + i)
            series += term
            if np.all(term < 1e-18 * series):
                break
        out[tiny] = at * np.log(zt) - zt - gammaln(at + 1.0) + np.log(series)
    return out


_GL64 = np.polynomial.legendre.leggauss(96)


def lead_kernel_logpdf(flow_model: ExponentialModel, packet_model: PacketModel,
                       j, x):
    """log of (g1 * g^{*(j-1)})(x): the density of the first retained gap,
    an Exponential flow gap convolved with j - 1 packet inter-renewals."""
    j = int(j)
    if j < 1:
        raise ValueError("j must be >= 1")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x <= 0):
        raise ValueError("x must be positive")
    lam = flow_model.rate
    if j == 1:
        out = flow_model.logpdf(x)
        return out if out.size > 1 else float(out[0])
    if isinstance(packet_model, GammaModel):
        a, b = (j - 1) * packet_model.alpha, packet_model.beta
    elif isinstance(packet_model, ExponentialModel):
        a, b = float(j - 1), packet_model.rate
    else:
        out = _exp_conv_quad(lam, lambda t: packet_model.kfold_logpdf(j - 1, t), x)
        return out if out.size > 1 else float(out[0])
    if b > lam:
        out = math.log(lam) - lam * x + a * (math.log(b) - math.log(b - lam)) \
            + _log_gammainc_lower(a, (b - lam) * x)
    elif b == lam:
        out = math.log(lam) - lam * x + a * np.log(b * x) - math.log(a) - gammaln(a)
    else:
        # int_0^x t^{a-1} e^{ct} dt = (x^a / a) 1F1(a; a+1; cx), c = lam - b > 0
        c = lam - b
        z = c * x
        with np.errstate(over="ignore"):
            kummer = special.hyp1f1(a, a + 1.0, z)
        log_int = np.where(
            np.isfinite(kummer),
            a * np.log(x) - math.log(a) + np.log(kummer),
            # endpoint asymptotic for huge cx: ~ x^{a-1} e^{cx} / c
            (a - 1.0) * np.log(x) + z - math.log(c)
            + np.log1p(-(a - 1.0) / np.maximum(z, 1.0)))
        out = math.log(lam) - lam * x + a * math.log(b) - gammaln(a) + log_int
    return out if out.size > 1 else float(out[0])


def _exp_conv_quad(lam, log_density, x):
    """log of (Exponential(lam) * f)(x) by Gauss-Legendre in u = log t."""
    lx = np.log(x)
    span = 45.0
    u = lx[:, None] - span * (1.0 - 0.5 * (_GL64[0] + 1.0))[None, :]
    w = 0.5 * _GL64[1] * span
    t = np.exp(u)
    vals = log_density(t) + (-lam * (x[:, None] - t)) + np.log(lam) + u
    return logsumexp(vals, b=w[None, :], axis=1)


# Likelihood surfaces ---------------------------------------------------------

def netflow_loglik(s, flow_model, packet_model, pmf, policy=None):
    """Complete-data NetFlow log-likelihood of one summary (s_f, s_d, size):
    log f(s_f) + log g^{*(size-1)}(s_d) + log p_M(size); the duration term is
    omitted for single-packet flows."""
    s_f, s_d, size = _as_netflow_row(s)
    if size >= 2 and s_d <= 0:
        raise ValueError("multi-packet NetFlow must have positive duration")
    out = 0.0
    if flow_model is not None:
        out += float(flow_model.logpdf(s_f)) if s_f > 0 else float(np.log(flow_model.rate))
    if size >= 2:
        out += float(packet_model.kfold_logpdf(size - 1, s_d, policy))
    if pmf is not None:
        out += float(pmf.logpmf(np.array([size]))[0])
    return out


def sampled_netflow_loglik(s, flow_model, packet_model, cfg: LikelihoodConfig,
                           policy=None):
    """Full sub-sampled NetFlow log-likelihood of (s_f, s_d, m_tilde),
    mixing over (latent size, first-packet position j, span k)."""
    s_f, s_d, m_tilde = _as_netflow_row(s)
    if m_tilde < 2:
        raise ValueError("sampled NetFlow must have >= 2 retained packets")
    if s_d <= 0 or s_f <= 0:
        raise ValueError("sampled NetFlow requires positive s_f and s_d")
    if cfg.q == 1.0:
        return netflow_loglik(s, flow_model, packet_model, cfg.pmf, policy)
    js, ks, logW, _ = joint_mixture_weights(m_tilde, cfg)
    log_a = np.array([lead_kernel_logpdf(flow_model, packet_model, int(j), s_f)
                      for j in js])
    log_b = packet_model.kfold_logpdf(ks, s_d, policy)
    return float(logsumexp(logW + log_a[:, None] + log_b[None, :]))


def restricted_sampled_loglik(s_d, m_tilde, packet_model, cfg: LikelihoodConfig,
                              policy=None):
    """Duration-only sub-sampled NetFlow log-likelihood (independent of s_f)."""
    m_tilde = int(m_tilde)
    if m_tilde < 2:
        raise ValueError("m_tilde must be >= 2")
    if s_d <= 0:
        raise ValueError("s_d must be positive")
    w = mixture_weights(m_tilde, cfg)
    log_b = packet_model.kfold_logpdf(w.ks, float(s_d), policy)
    return float(logsumexp(w.log_w + log_b))


def _as_netflow_row(s):
    if hasattr(s, "as_row"):
        row = s.as_row()
    else:
        row = np.asarray(s, dtype=float)
    if row.shape != (3,):
        raise ValueError("expected a NetFlow-like triple (s_f, s_d, size)")
    return float(row[0]), float(row[1]), int(round(row[2]))


def session_loglik(netflows, packet_model, flow_model=None, pmf=None,
                   cfg: LikelihoodConfig | None = None, return_terms=False):
    """Mean per-flow log-likelihood of a session.

    ``netflows`` is an (n, 3) array.  With ``cfg`` given and cfg.q < 1 the
    restricted sub-sampled likelihood is evaluated (third column = retained
    count); otherwise the complete-data NetFlow likelihood is used.  The
    reduction uses compensated summation, so the result is independent of
    input order.
    """
    X = np.asarray(netflows, dtype=float)
    if X.ndim != 2 or X.shape[1] != 3 or X.shape[0] == 0:
        raise ValueError("netflows must be a non-empty (n, 3) array")
    if cfg is not None and cfg.q < 1.0:
        obj = RestrictedSampledObjective(X[:, 1], X[:, 2].astype(int), cfg)
        terms = obj.terms(packet_model)
    else:
        the_pmf = pmf if pmf is not None else (cfg.pmf if cfg is not None else None)
        obj = NetflowObjective(X, the_pmf, flow_model=flow_model)
        terms = obj.terms(packet_model)
    if return_terms:
        return float(math.fsum(terms) / len(terms)), terms
    return float(math.fsum(terms) / len(terms))


class NetflowObjective:
    """Vectorised complete-data session log-likelihood (mean per flow).

    Groups flows by size so the k-fold constants are computed once per unique
    size.  The flow-gap term is theta-free for packet-model fitting and is
    included only when a flow model is supplied.
    """

    def __init__(self, netflows, pmf, flow_model=None):
        X = np.asarray(netflows, dtype=float)
        sizes = X[:, 2].astype(int)
        if np.any(sizes < 1):
            raise ValueError("NetFlow sizes must be >= 1")
        if np.any((sizes >= 2) & (X[:, 1] <= 0)):
            bad = int(np.nonzero((sizes >= 2) & (X[:, 1] <= 0))[0][0])
            raise ValueError(f"flow {bad}: multi-packet NetFlow with "
                             "non-positive duration")
        self.n = X.shape[0]
        self.s_f = X[:, 0]
        self.s_d = X[:, 1]
        self.sizes = sizes
        self._dur = sizes >= 2
        self._base = np.zeros(self.n)
        if pmf is not None:
            lp = pmf.logpmf(sizes)
            if not np.all(np.isfinite(lp)):
                bad = int(np.nonzero(~np.isfinite(lp))[0][0])
                raise ValueError(f"flow {bad}: size {sizes[bad]} has zero "
                                 "prior mass under the supplied pmf")
            self._base += lp
        if flow_model is not None:
            pos = self.s_f > 0
            self._base[pos] += flow_model.logpdf(self.s_f[pos])
            self._base[~pos] += np.log(flow_model.rate)

    def terms(self, packet_model):
        out = self._base.copy()
        if np.any(self._dur):
            out[self._dur] += packet_model.kfold_logpdf(
                self.sizes[self._dur] - 1, self.s_d[self._dur])
        return out

    def __call__(self, packet_model):
        return float(math.fsum(self.terms(packet_model)) / self.n)


class RestrictedSampledObjective:
    """Vectorised restricted sub-sampled session log-likelihood.

    Mixture weights depend only on (pmf, q, m_tilde), so they are computed
    once per distinct retained count and reused across optimiser iterations;
    per-group weight rows are pruned (relative 1e-20) to keep the k-grid
    small.
    """

    def __init__(self, s_d, m_tilde, cfg: LikelihoodConfig):
        s_d = np.asarray(s_d, dtype=float)
        m_tilde = np.asarray(m_tilde, dtype=int)
        if np.any(m_tilde < 2):
            bad = int(np.nonzero(m_tilde < 2)[0][0])
            raise ValueError(f"flow {bad}: retained count must be >= 2")
        if np.any(s_d <= 0):
            bad = int(np.nonzero(s_d <= 0)[0][0])
            raise ValueError(f"flow {bad}: sampled duration must be positive")
        self.n = s_d.size
        self.cfg = cfg
        self.groups = []
        for mt in np.unique(m_tilde):
            idx = np.nonzero(m_tilde == mt)[0]
            w = mixture_weights(int(mt), cfg)
            keep = w.log_w > w.log_w.max() - 46.0
            self.groups.append((idx, w.ks[keep], w.log_w[keep], s_d[idx]))

    def terms(self, packet_model):
        from ._fastmix import weighted_kfold_lse
        out = np.empty(self.n)
        for idx, ks, log_w, x in self.groups:
            out[idx] = weighted_kfold_lse(packet_model, ks, log_w, x)
        return out

    def __call__(self, packet_model):
        return float(math.fsum(self.terms(packet_model)) / self.n)


# Marginal duration densities -------------------------------------------------

def marginal_duration_weights(cfg: LikelihoodConfig):
    """Log-weights over the span k of the duration marginal density,
    conditioned on a non-trivial flow.

    For q = 1 this is the size pmf restricted to sizes >= 2 (k = size - 1);
    under thinning the observed retained count is marginalised as well.
    Requires a bounded-support pmf.
    """
    pmf = cfg.pmf
    if not pmf.is_bounded():
        raise ValueError("duration marginals require a bounded-support pmf")
    if cfg.q == 1.0:
        sizes = pmf.latent_support(min_size=2)
        if sizes.size == 0:
            raise ValueError("pmf has no mass on sizes >= 2")
        log_w = pmf.logpmf(sizes)
        ks = (sizes - 1).astype(np.int64)
        norm = logsumexp(log_w)
        return ks, log_w - norm
    k_max = int(pmf.latent_support(min_size=2)[-1]) - 1
    log_w = np.full(k_max, -np.inf)  # index i <-> k = i + 1
    ks = np.arange(1, k_max + 1)
    for s in pmf.latent_support(min_size=2):
        s = int(s)
        lp = float(pmf.logpmf(np.array([s]))[0])
        centre = s * cfg.q
        width = 12.0 * math.sqrt(max(centre * (1 - cfg.q), 1.0)) + 20.0
        mt_lo = max(2, int(centre - width))
        mt_hi = min(s, int(centre + width) + 1)
        for mt in range(mt_lo, mt_hi + 1):
            ltau = float(log_binomial_pmf(s, mt, cfg.q))
            if ltau < -80.0:
                continue
            kk = np.arange(mt - 1, s)
            terms = lp + ltau + np.log((s - kk).astype(float)) \
                + _log_binom(kk - 1, mt - 2) - _log_binom(float(s), mt)
            sl = slice(mt - 2, s - 1)
            np.logaddexp(log_w[sl], terms, out=log_w[sl])
    finite = np.isfinite(log_w)
    ks, log_w = ks[finite], log_w[finite]
    norm = logsumexp(log_w)
    return ks, log_w - norm


def marginal_duration_logdensity(x, packet_model, cfg: LikelihoodConfig,
                                 weights=None, assume_sorted=False):
    """Log of the flow-duration marginal density (complete or thinned),
    normalised over non-trivial flows.  ``weights`` may carry a precomputed
    (ks, log_w) pair from :func:`marginal_duration_weights`."""
    from ._fastmix import weighted_kfold_lse
    ks, log_w = weights if weights is not None else marginal_duration_weights(cfg)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x <= 0):
        raise ValueError("durations must be positive")
    out = weighted_kfold_lse(packet_model, ks, log_w, x,
                             assume_sorted=assume_sorted)
    return out if out.size > 1 else float(out[0])


# Enumeration oracle ----------------------------------------------------------

def brute_force_sampled_loglik(s, flow_model, packet_model, pmf, q,
                               restricted=False, max_size=12):
    """Exact sub-sampled NetFlow log-likelihood by enumerating every Bernoulli
    retention pattern with the observed retained count (test oracle; latent
    sizes capped at ``max_size``)."""
    from itertools import combinations

    s_f, s_d, m_tilde = _as_netflow_row(s)
    if m_tilde < 2:
        raise ValueError("m_tilde must be >= 2")
    sizes = pmf.latent_support(min_size=m_tilde)
    if sizes.size == 0:
        raise ValueError("no latent sizes >= m_tilde")
    if int(sizes[-1]) > max_size:
        raise ValueError(f"enumeration oracle capped at size {max_size}")
    pieces = []
    for size in sizes:
        size = int(size)
        lp = float(pmf.logpmf(np.array([size]))[0])
        if q < 1.0:
            lpat = m_tilde * math.log(q) + (size - m_tilde) * math.log1p(-q)
        elif size != m_tilde:
            continue
        else:
            lpat = 0.0
        for pattern in combinations(range(size), m_tilde):
            j = pattern[0] + 1
            k = pattern[-1] - pattern[0]
            dens = float(packet_model.kfold_logpdf(k, s_d))
            if not restricted:
                dens += float(lead_kernel_logpdf(flow_model, packet_model, j, s_f))
            pieces.append(lp + lpat + dens)
    return float(logsumexp(np.array(pieces)))
