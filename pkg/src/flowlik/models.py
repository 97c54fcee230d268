"""Parametric packet inter-renewal models and their k-fold self-convolutions.

Three families are supported: Gamma (shape/rate), Exponential (rate) and
Log-Normal (location/scale of log-seconds).  Gamma and Exponential are closed
under self-convolution; the Log-Normal k-fold convolution is approximated by a
single moment-matched Log-Normal (Fenton-Wilkinson).  All densities are
computed and composed in the log domain.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special

__all__ = [
    "ConvolutionMode",
    "ConvolutionPolicy",
    "PacketModel",
    "GammaModel",
    "ExponentialModel",
    "LogNormalModel",
    "packet_model",
    "fenton_wilkinson_params",
    "FentonWilkinsonWarning",
]

_LOG_2PI = float(np.log(2.0 * np.pi))


class ConvolutionMode(enum.Enum):
    CLOSED_FORM = "closed-form"
    FENTON_WILKINSON = "fenton-wilkinson"
    NUMERIC_QUADRATURE = "numeric-quadrature"


@dataclass(frozen=True)
class ConvolutionPolicy:
    """How k-fold convolution densities are evaluated.

    Gamma and Exponential always use the closed form; Log-Normal defaults to
    Fenton-Wilkinson.  ``NUMERIC_QUADRATURE`` exists as a test oracle and is
    capped at ``max_quadrature_k`` folds.  ``fw_min_total`` is the duration
    (seconds) below which the Fenton-Wilkinson value is flagged as
    unreliable; when None it defaults to ``k * exp(mu)``, the median-sum
    scale of the Log-Normal.
    """

    mode: ConvolutionMode = ConvolutionMode.CLOSED_FORM
    quadrature_points: int = 256
    fw_min_total: float | None = None
    max_quadrature_k: int = 16

    def __post_init__(self):
        if self.quadrature_points < 64:
            raise ValueError("quadrature_points must be >= 64")


class FentonWilkinsonWarning(UserWarning):
    """Raised when a Fenton-Wilkinson density is evaluated below its
    reliable-duration threshold (the approximation targets the tail)."""


def fenton_wilkinson_params(k, mu, sigma):
    """Moment-matched Log-Normal parameters for a sum of ``k`` iid Log-Normals.

    Matches the exact mean and variance of the k-fold sum:

        sigma_*^2 = log((exp(sigma^2) - 1) / k + 1)
        mu_*      = log(k) + mu + (sigma^2 - sigma_*^2) / 2

    so that ``exp(mu_* + sigma_*^2 / 2) == k * exp(mu + sigma^2 / 2)``
    exactly.  ``k`` may be a scalar or an integer array.  Stable for large
    ``sigma`` (works in log space via expm1/log1p).
    """
    k = np.asarray(k, dtype=float)
    if np.any(k < 1):
        raise ValueError("k must be >= 1")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    s2 = sigma * sigma
    logk = np.log(k)
    if s2 > 30.0:
        # exp(s2) - 1 == exp(s2) to double precision; keep everything in logs.
        sigma_star2 = np.where(s2 - logk > 30.0, s2 - logk,
                               np.log1p(np.expm1(np.minimum(s2, 700.0)) / k))
    else:
        sigma_star2 = np.log1p(np.expm1(s2) / k)
    mu_star = logk + mu + 0.5 * (s2 - sigma_star2)
    sigma_star = np.sqrt(sigma_star2)
    if np.ndim(k) == 0:
        return float(mu_star), float(sigma_star)
    return mu_star, sigma_star


def _check_positive(x, what="x"):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0) or not np.all(np.isfinite(x)):
        raise ValueError(f"{what} must be positive and finite")
    return x


class PacketModel:
    """Base class for packet-level inter-renewal models.

    Subclasses implement a log-density, an exact or approximate k-fold
    self-convolution log-density, Fisher information at the current
    parameters, sampling, and survival functions.  All methods are pure;
    instances are immutable and safe to share across workers.
    """

    family: str
    param_names: tuple[str, ...]

    @property
    def params(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in self.param_names])

    @property
    def dim(self) -> int:
        return len(self.param_names)

    def with_params(self, params) -> "PacketModel":
        return type(self)(*np.asarray(params, dtype=float))

    def logpdf(self, x):
        raise NotImplementedError

    def kfold_logpdf(self, k, x, policy: ConvolutionPolicy | None = None):
        """Log-density of a sum of ``k`` iid inter-renewals at ``x``."""
        raise NotImplementedError

    def kfold_logpdf_grid(self, ks, xs, policy: ConvolutionPolicy | None = None):
        """Matrix of kfold log-densities, shape ``(len(ks), len(xs))``."""
        raise NotImplementedError

    def fisher_information(self) -> np.ndarray:
        raise NotImplementedError

    def sample(self, n, rng):
        raise NotImplementedError

    def sample_sum(self, k, rng, size=None):
        """Draws of the sum of ``k`` iid inter-renewals (exact, not FW)."""
        raise NotImplementedError

    def survival(self, x):
        raise NotImplementedError

    def mean(self) -> float:
        raise NotImplementedError

    def to_config(self) -> dict:
        return {"family": self.family, "params": [float(p) for p in self.params]}

    def __repr__(self):
        inner = ", ".join(f"{n}={getattr(self, n):g}" for n in self.param_names)
        return f"{type(self).__name__}({inner})"


def _gamma_logpdf(x, a, b):
    return a * np.log(b) - special.gammaln(a) + (a - 1.0) * np.log(x) - b * x


class GammaModel(PacketModel):
    """Gamma(shape alpha, rate beta) inter-renewals; closed under convolution:
    the k-fold sum is Gamma(k * alpha, beta)."""

    family = "gamma"
    param_names = ("alpha", "beta")

    def __init__(self, alpha, beta):
        if alpha <= 0 or beta <= 0:
            raise ValueError("Gamma shape and rate must be positive")
        self.alpha = float(alpha)
        self.beta = float(beta)

    def logpdf(self, x):
        x = _check_positive(x)
        return _gamma_logpdf(x, self.alpha, self.beta)

    def kfold_logpdf(self, k, x, policy=None):
        if np.any(np.asarray(k) < 1):
            raise ValueError("k must be >= 1")
        x = _check_positive(x)
        if policy is not None and policy.mode is ConvolutionMode.NUMERIC_QUADRATURE:
            from . import quadrature
            return quadrature.kfold_logpdf_quad(self, k, x, policy)
        k = np.asarray(k, dtype=float)
        return _gamma_logpdf(x, k * self.alpha, self.beta)

    def kfold_logpdf_grid(self, ks, xs, policy=None):
        ks = np.asarray(ks, dtype=float)
        xs = _check_positive(xs)
        a = ks * self.alpha
        const = a * np.log(self.beta) - special.gammaln(a)
        return const[:, None] + (a - 1.0)[:, None] * np.log(xs)[None, :] \
            - self.beta * xs[None, :]

    def fisher_information(self):
        a, b = self.alpha, self.beta
        info = np.array([[special.polygamma(1, a), -1.0 / b],
                         [-1.0 / b, a / (b * b)]])
        if not np.all(np.isfinite(info)):
            raise FloatingPointError(f"non-finite Fisher information for {self!r}")
        return info

    def sample(self, n, rng):
        return rng.gamma(self.alpha, 1.0 / self.beta, size=n)

    def sample_sum(self, k, rng, size=None):
        k = np.asarray(k, dtype=float)
        return rng.gamma(k * self.alpha, size=size if size is not None else k.shape) / self.beta

    def survival(self, x):
        return special.gammaincc(self.alpha, self.beta * np.asarray(x, dtype=float))

    def mean(self):
        return self.alpha / self.beta


class ExponentialModel(PacketModel):
    """Exponential(rate) inter-renewals; the k-fold sum is Gamma(k, rate)."""

    family = "exponential"
    param_names = ("rate",)

    def __init__(self, rate):
        if rate <= 0:
            raise ValueError("Exponential rate must be positive")
        self.rate = float(rate)

    def logpdf(self, x):
        x = _check_positive(x)
        return np.log(self.rate) - self.rate * x

    def kfold_logpdf(self, k, x, policy=None):
        if np.any(np.asarray(k) < 1):
            raise ValueError("k must be >= 1")
        x = _check_positive(x)
        if policy is not None and policy.mode is ConvolutionMode.NUMERIC_QUADRATURE:
            from . import quadrature
            return quadrature.kfold_logpdf_quad(self, k, x, policy)
        k = np.asarray(k, dtype=float)
        return _gamma_logpdf(x, k, self.rate)

    def kfold_logpdf_grid(self, ks, xs, policy=None):
        ks = np.asarray(ks, dtype=float)
        xs = _check_positive(xs)
        const = ks * np.log(self.rate) - special.gammaln(ks)
        return const[:, None] + (ks - 1.0)[:, None] * np.log(xs)[None, :] \
            - self.rate * xs[None, :]

    def fisher_information(self):
        return np.array([[1.0 / (self.rate * self.rate)]])

    def sample(self, n, rng):
        return rng.exponential(1.0 / self.rate, size=n)

    def sample_sum(self, k, rng, size=None):
        k = np.asarray(k, dtype=float)
        return rng.gamma(k, size=size if size is not None else k.shape) / self.rate

    def survival(self, x):
        return np.exp(-self.rate * np.asarray(x, dtype=float))

    def mean(self):
        return 1.0 / self.rate


class LogNormalModel(PacketModel):
    """Log-Normal(mu, sigma) inter-renewals (mu, sigma in log-seconds).

    There is no closed-form self-convolution; k-fold densities route through
    the Fenton-Wilkinson approximation by default.
    """

    family = "lognormal"
    param_names = ("mu", "sigma")

    def __init__(self, mu, sigma):
        if sigma <= 0:
            raise ValueError("Log-Normal sigma must be positive")
        self.mu = float(mu)
        self.sigma = float(sigma)

    def logpdf(self, x):
        x = _check_positive(x)
        z = (np.log(x) - self.mu) / self.sigma
        return -np.log(x) - np.log(self.sigma) - 0.5 * (_LOG_2PI + z * z)

    def _fw_logpdf(self, k, x):
        mu_s, sig_s = fenton_wilkinson_params(k, self.mu, self.sigma)
        with np.errstate(over="ignore"):  # z^2 overflow legitimately -> -inf
            z = (np.log(x) - mu_s) / sig_s
            return -np.log(x) - np.log(sig_s) - 0.5 * (_LOG_2PI + z * z)

    def kfold_logpdf(self, k, x, policy=None):
        if np.any(np.asarray(k) < 1):
            raise ValueError("k must be >= 1")
        x = _check_positive(x)
        if policy is not None and policy.mode is ConvolutionMode.NUMERIC_QUADRATURE:
            from . import quadrature
            return quadrature.kfold_logpdf_quad(self, k, x, policy)
        if policy is not None:
            fw_min = policy.fw_min_total
            if fw_min is None:
                fw_min = np.asarray(k, dtype=float) * np.exp(self.mu)
            if np.any(x < fw_min):
                warnings.warn(
                    "Fenton-Wilkinson evaluated below its reliable-duration "
                    "threshold; the approximation targets the distribution tail",
                    FentonWilkinsonWarning, stacklevel=2)
        return self._fw_logpdf(k, x)

    def kfold_logpdf_grid(self, ks, xs, policy=None):
        ks = np.asarray(ks, dtype=float)
        xs = _check_positive(xs)
        mu_s, sig_s = fenton_wilkinson_params(ks, self.mu, self.sigma)
        lx = np.log(xs)
        z = (lx[None, :] - mu_s[:, None]) / sig_s[:, None]
        return -lx[None, :] - np.log(sig_s)[:, None] - 0.5 * (_LOG_2PI + z * z)

    def fisher_information(self):
        s2 = self.sigma * self.sigma
        return np.diag([1.0 / s2, 2.0 / s2])

    def sample(self, n, rng):
        return rng.lognormal(self.mu, self.sigma, size=n)

    def sample_sum(self, k, rng, size=None):
        # Exact sums of iid Log-Normals (used by oracles; no FW shortcut).
        k = np.atleast_1d(np.asarray(k, dtype=int))
        out = np.empty(k.shape, dtype=float)
        for kk in np.unique(k):
            idx = np.nonzero(k == kk)[0]
            draws = rng.lognormal(self.mu, self.sigma, size=(idx.size, int(kk)))
            out[idx] = draws.sum(axis=1)
        return out if out.size > 1 else float(out[0])

    def survival(self, x):
        z = (np.log(np.asarray(x, dtype=float)) - self.mu) / self.sigma
        return special.ndtr(-z)

    def kfold_survival(self, k, x):
        """Survival of the FW-approximate k-fold sum."""
        mu_s, sig_s = fenton_wilkinson_params(k, self.mu, self.sigma)
        z = (np.log(np.asarray(x, dtype=float)) - mu_s) / sig_s
        return special.ndtr(-z)

    def mean(self):
        return float(np.exp(self.mu + 0.5 * self.sigma * self.sigma))


_FAMILIES = {
    "gamma": GammaModel,
    "exponential": ExponentialModel,
    "lognormal": LogNormalModel,
}


def packet_model(family, params) -> PacketModel:
    """Build a model from a family name and a parameter vector.

    Accepts the JSON config convention ``{"family": "gamma",
    "params": [0.6, 526.32]}`` via ``packet_model(**config)``.
    """
    key = str(family).lower().replace("-", "").replace("_", "")
    if key not in _FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {sorted(_FAMILIES)}")
    return _FAMILIES[key](*np.asarray(params, dtype=float))
