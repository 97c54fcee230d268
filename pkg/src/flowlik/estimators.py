"""Estimators: maximum likelihood over (sampled) NetFlow sessions, moments
baselines, and the two-step Log-Normal procedure.

All fitting classes follow the scikit-learn estimator protocol: parameters in
``__init__``, data in ``fit``, fitted attributes with trailing underscores,
``get_params``/``set_params`` from ``BaseEstimator``.  ``score(X)`` returns
the mean per-flow log-likelihood under the fitted model where one exists.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize as sp_optimize
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import _numdiff
from ._validation import check_flows, check_gaps, check_netflows, check_q
from .likelihood import (LikelihoodConfig, NetflowObjective,
                         RestrictedSampledObjective)
from .models import (ExponentialModel, GammaModel, LogNormalModel,
                     fenton_wilkinson_params)
from .netflow import session_netflow

__all__ = [
    "FitResult",
    "OptimizerConfig",
    "ConvergenceError",
    "InterRenewalMLE",
    "NetflowMLE",
    "SampledNetflowMLE",
    "MomentEstimator",
    "NetflowMomentEstimator",
    "TwoStepLogNormalMLE",
    "netflow_csv_bytes",
    "gaps_csv_bytes",
]


@dataclass
class FitResult:
    """Outcome of a likelihood fit.

    ``loglik`` is the mean per-observation log-likelihood (the maximised
    objective); ``stderr`` comes from the inverse observed information at the
    optimum when it is positive definite.  ``data_bytes`` measures the CSV
    byte volume of the data the estimator consumed.
    """

    family: str
    params: dict
    loglik: float
    stderr: dict | None
    n_obs: int
    n_evals: int
    wall_time_s: float
    data_bytes: int
    converged: bool = True
    method: str = ""
    warnings: list = field(default_factory=list)

    def to_dict(self):
        return {
            "family": self.family,
            "params": {k: float(v) for k, v in self.params.items()},
            "loglik": float(self.loglik),
            "stderr": None if self.stderr is None else
                {k: float(v) for k, v in self.stderr.items()},
            "n_obs": int(self.n_obs),
            "n_evals": int(self.n_evals),
            "wall_time_s": float(self.wall_time_s),
            "data_bytes": int(self.data_bytes),
            "converged": bool(self.converged),
            "method": self.method,
            "warnings": list(self.warnings),
        }


@dataclass(frozen=True)
class OptimizerConfig:
    """Derivative-free optimisation settings.

    Positivity-constrained parameters are optimised on the log scale.
    One-parameter families use Brent's method; higher dimensions use
    Nelder-Mead restarted from deterministically jittered best points.
    """

    tol: float = 1e-8
    max_iters: int = 2000
    restarts: int = 3
    jitter: float = 0.2

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")


class ConvergenceError(RuntimeError):
    """Optimiser failed to converge; carries the best iterate found."""

    def __init__(self, message, result: FitResult):
        super().__init__(message)
        self.result = result


_DIVERGENCE_LOG_BOUND = 46.0  # |log param| beyond this is flagged divergent


def _maximize(neg_fn, x0_log, cfg: OptimizerConfig):
    """Maximise a log-likelihood over log-parameters; returns a dict with the
    best point, function value, evaluation count and convergence flags."""
    x0_log = np.atleast_1d(np.asarray(x0_log, dtype=float))
    d = x0_log.size
    n_evals = 0

    def counted(z):
        nonlocal n_evals
        n_evals += 1
        val = neg_fn(z)
        return val if np.isfinite(val) else 1e300

    if d == 1:
        try:
            res = sp_optimize.minimize_scalar(
                lambda t: counted(np.array([t])),
                bracket=(x0_log[0] - 0.7, x0_log[0] + 0.7),
                method="brent",
                options={"xtol": 1e-13, "maxiter": cfg.max_iters})
            best_x, best_f, ok = np.array([res.x]), res.fun, True
        except Exception:
            res = sp_optimize.minimize_scalar(
                lambda t: counted(np.array([t])),
                bounds=(x0_log[0] - 40, x0_log[0] + 40), method="bounded",
                options={"xatol": 1e-12, "maxfev": cfg.max_iters})
            best_x, best_f, ok = np.array([res.x]), res.fun, bool(res.success)
    else:
        starts = [x0_log]
        sign_cycle = [(1, -1), (-1, 1), (1, 1), (-1, -1)]
        best_x, best_f, ok = None, np.inf, False
        for r in range(cfg.restarts + 1):
            if r > 0:
                signs = np.array(sign_cycle[(r - 1) % len(sign_cycle)][:d] if d <= 2
                                 else [sign_cycle[(r - 1) % 4][i % 2] for i in range(d)],
                                 dtype=float)
                starts.append(best_x + cfg.jitter * signs)
            res = sp_optimize.minimize(
                counted, starts[-1], method="Nelder-Mead",
                options={"xatol": 1e-8, "fatol": cfg.tol * 1e-2,
                         "maxiter": cfg.max_iters, "maxfev": 4 * cfg.max_iters})
            if res.fun < best_f:
                best_x, best_f = np.asarray(res.x), res.fun
                ok = ok or bool(res.success)
    diverged = bool(np.any(np.abs(best_x) > _DIVERGENCE_LOG_BOUND))
    return {"x_log": best_x, "fun": -best_f, "n_evals": n_evals,
            "converged": ok and not diverged, "diverged": diverged}


def _stderr_from_loglik(total_loglik_fn, params, names):
    """Per-parameter standard errors from the numerical observed information
    (negative Hessian of the total log-likelihood at the optimum)."""
    try:
        H = _numdiff.hessian(total_loglik_fn, params, rel_step=1e-4)
        obs_info = -H
        cov = np.linalg.inv(obs_info)
        diag = np.diag(cov)
        if np.any(diag <= 0) or not np.all(np.isfinite(diag)):
            return None
        return dict(zip(names, np.sqrt(diag)))
    except (np.linalg.LinAlgError, ValueError, FloatingPointError):
        return None


def netflow_csv_bytes(X):
    """Byte volume of the NetFlow CSV representation of an (n, 3) array
    (measured row by row, matching the serialised file exactly)."""
    X = np.asarray(X, dtype=float)
    header = len("s_f,s_d,size\n")
    return header + sum(len(f"{r[0]:.9f},{r[1]:.9f},{int(round(r[2]))}\n")
                        for r in X)


def gaps_csv_bytes(n_gaps):
    """Byte volume of one inter-renewal per line in '%.9e' format."""
    return int(n_gaps) * 16


# Family helpers ---------------------------------------------------------------

_FAMILY_CLASSES = {"gamma": GammaModel, "exponential": ExponentialModel,
                   "lognormal": LogNormalModel}


def _family_key(family):
    key = str(family).lower().replace("-", "").replace("_", "")
    if key not in _FAMILY_CLASSES:
        raise ValueError(f"unknown family {family!r}")
    return key


class _FittedMixin:
    """Shared fitted-attribute plumbing for the estimator classes."""

    def _check_fitted(self):
        if not hasattr(self, "result_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet")

    @property
    def params_(self):
        self._check_fitted()
        return self.result_.params

    def _finish(self, result: FitResult):
        self.result_ = result
        for name, value in result.params.items():
            setattr(self, f"{name}_", float(value))
        self.loglik_ = result.loglik
        self.stderr_ = result.stderr
        return self


class InterRenewalMLE(BaseEstimator, _FittedMixin):
    """Standard (complete-data) MLE on pooled packet inter-renewals.

    Exponential and Log-Normal use their closed forms; Gamma maximises the
    rate-profiled likelihood with Brent's method.
    """

    def __init__(self, family="gamma", optimizer=None):
        self.family = family
        self.optimizer = optimizer

    def fit(self, X, y=None):
        t0 = time.perf_counter()
        x = check_gaps(X)
        key = _family_key(self.family)
        cfg = self.optimizer or OptimizerConfig()
        n = x.size
        warn = []
        n_evals = 0
        if key == "exponential":
            lam = n / float(x.sum())
            model = ExponentialModel(lam)
            params = {"rate": lam}
        elif key == "lognormal":
            lx = np.log(x)
            mu = float(lx.mean())
            sigma = float(lx.std())  # MLE (1/n) form
            if sigma == 0.0:
                warn.append("degenerate data: all inter-renewals equal; sigma = 0")
                params = {"mu": mu, "sigma": 0.0}
                model = None
            else:
                model = LogNormalModel(mu, sigma)
                params = {"mu": mu, "sigma": sigma}
        else:
            xbar = float(x.mean())
            mean_log = float(np.log(x).mean())
            if np.all(x == x[0]):
                raise ValueError("degenerate data: all inter-renewals equal")

            def profile_neg(z):
                a = math.exp(z[0])
                # beta profiled out at alpha / xbar
                return -(a * math.log(a / xbar) - math.lgamma(a)
                         + (a - 1.0) * mean_log - a)

            res = _maximize(profile_neg, [0.0], cfg)
            n_evals = res["n_evals"]
            a = math.exp(res["x_log"][0])
            model = GammaModel(a, a / xbar)
            params = {"alpha": a, "beta": a / xbar}
            if not res["converged"]:
                warn.append("profile optimisation did not converge")
        loglik = float(np.mean(model.logpdf(x))) if model is not None else -np.inf
        names = list(params)
        stderr = None
        if model is not None:
            def total(p):
                return float(np.sum(_FAMILY_CLASSES[key](*p).logpdf(x)))
            stderr = _stderr_from_loglik(total, np.array(list(params.values())), names)
        result = FitResult(key, params, loglik, stderr, n, n_evals,
                           time.perf_counter() - t0, gaps_csv_bytes(n),
                           converged=True, method="standard-mle", warnings=warn)
        self.model_ = model
        return self._finish(result)

    def score(self, X, y=None):
        self._check_fitted()
        return float(np.mean(self.model_.logpdf(check_gaps(X))))


def _initial_gamma_point(X_used):
    """NetFlow moments starting point (alpha_check, beta_check_star), falling
    back to (1, 1 / mean flow-mean-gap) when not computable."""
    try:
        est = NetflowMomentEstimator().fit(X_used)
        a, b = est.alpha_, est.beta_star_
        if np.isfinite(a) and np.isfinite(b) and a > 0 and b > 0:
            return float(np.clip(a, 1e-3, 1e3)), float(np.clip(b, 1e-6, 1e9))
    except (ValueError, FloatingPointError):
        pass
    m = X_used[:, 2] - 1.0
    y = X_used[:, 1] / np.maximum(m, 1.0)
    return 1.0, 1.0 / float(y.mean())


class NetflowMLE(BaseEstimator, _FittedMixin):
    """Maximum-likelihood packet-model fit from complete NetFlow summaries.

    Maximises the mean session log-likelihood (duration convolution plus
    flow-size mass).  The flow-level Exponential rate separates from the
    packet parameters, so it is fitted in closed form from the flow gaps when
    they are present.  Single-packet rows carry no duration information and
    are dropped (``drop_trivial=False`` raises instead).
    """

    def __init__(self, family="gamma", pmf=None, optimizer=None,
                 drop_trivial=True, fit_flow_rate=True, closed_form=True):
        self.family = family
        self.pmf = pmf
        self.optimizer = optimizer
        self.drop_trivial = drop_trivial
        self.fit_flow_rate = fit_flow_rate
        self.closed_form = closed_form

    def fit(self, X, y=None):
        t0 = time.perf_counter()
        X = check_netflows(X)
        key = _family_key(self.family)
        cfg = self.optimizer or OptimizerConfig()
        trivial = X[:, 2] < 2
        if np.any(trivial) and not self.drop_trivial:
            raise ValueError("session contains single-packet NetFlows; they "
                             "carry no duration information")
        X_used = X[~trivial]
        if X_used.shape[0] == 0:
            raise ValueError("no duration-informative NetFlows (all sizes < 2)")
        objective = NetflowObjective(X_used, self.pmf)
        warn = []
        if X_used.shape[0] == 1:
            warn.append("single-flow session: the NetFlow likelihood is "
                        "unbounded and estimates will diverge")

        x0, names, builder = self._setup(key, X_used)
        if key == "exponential" and self.closed_form:
            # Natural-exponential-family identity: the session argmax is the
            # total gap count over the total duration, exactly.
            lam = float((X_used[:, 2] - 1.0).sum() / X_used[:, 1].sum())
            res = {"x_log": np.log([lam]), "fun": None, "n_evals": 0,
                   "converged": True, "diverged": False}
        else:
            res = _maximize(lambda z: -objective(builder(z)), x0, cfg)
        model = builder(res["x_log"])
        params = dict(zip(names, model.params))
        if res["diverged"]:
            warn.append("optimiser diverged (parameters ran away); returning "
                        "the best iterate")
        elif not res["converged"]:
            result = self._result(key, params, objective, model, X, X_used,
                                  res, t0, warn, names)
            raise ConvergenceError("NetFlow MLE did not converge", result)
        result = self._result(key, params, objective, model, X, X_used, res,
                              t0, warn, names)
        self.model_ = model
        self.n_used_ = X_used.shape[0]
        return self._finish(result)

    def _setup(self, key, X_used):
        names = list(_FAMILY_CLASSES[key].param_names)
        if key == "gamma":
            a0, b0 = _initial_gamma_point(X_used)
            x0 = np.log([a0, b0])
            builder = lambda z: GammaModel(*np.exp(z))
        elif key == "exponential":
            lam0 = float((X_used[:, 2] - 1.0).sum() / X_used[:, 1].sum())
            x0 = np.log([lam0])
            builder = lambda z: ExponentialModel(math.exp(z[0]))
        else:
            m = X_used[:, 2] - 1.0
            ly = np.log(X_used[:, 1] / m)
            x0 = np.array([float(ly.mean()), math.log(max(ly.std(), 0.3))])
            builder = lambda z: LogNormalModel(z[0], math.exp(z[1]))
        return x0, names, builder

    def _result(self, key, params, objective, model, X, X_used, res, t0,
                warn, names):
        loglik = objective(model)
        if self.fit_flow_rate and np.all(X_used[:, 0] > 0):
            lam = X_used.shape[0] / float(X_used[:, 0].sum())
            params = dict(params)
            params["flow_rate"] = lam
            loglik += float(np.mean(np.log(lam) - lam * X_used[:, 0]))

        def total(p):
            if key == "lognormal":
                m = LogNormalModel(p[0], p[1]) if p[1] > 0 else None
            else:
                m = _FAMILY_CLASSES[key](*np.abs(p))
            return objective(m) * X_used.shape[0]

        packet_vals = np.array([params[n] for n in names])
        stderr = None if res["diverged"] else \
            _stderr_from_loglik(total, packet_vals, names)
        return FitResult(key, params, loglik, stderr, X_used.shape[0],
                         res["n_evals"], time.perf_counter() - t0,
                         netflow_csv_bytes(X), converged=res["converged"],
                         method="netflow-mle", warnings=warn)

    def score(self, X, y=None):
        self._check_fitted()
        X = check_netflows(X)
        X_used = X[X[:, 2] >= 2]
        return NetflowObjective(X_used, self.pmf)(self.model_)


class SampledNetflowMLE(BaseEstimator, _FittedMixin):
    """Maximum-likelihood packet-model fit from packet-thinned NetFlows via
    the restricted (duration-only) sub-sampled likelihood.

    Rows are (s_f, s_d, m_tilde) with m_tilde the retained packet count;
    rows with m_tilde < 2 are trivial and must be filtered upstream.  With
    q = 1 this reduces exactly to :class:`NetflowMLE`.
    """

    def __init__(self, family="gamma", pmf=None, q=0.1, optimizer=None,
                 retained_mass=1.0 - 1e-12):
        self.family = family
        self.pmf = pmf
        self.q = q
        self.optimizer = optimizer
        self.retained_mass = retained_mass

    def fit(self, X, y=None):
        q = check_q(self.q)
        if self.pmf is None:
            raise ValueError("SampledNetflowMLE requires the flow-size pmf")
        if q == 1.0:
            delegate = NetflowMLE(family=self.family, pmf=self.pmf,
                                  optimizer=self.optimizer)
            delegate.fit(X)
            self.model_ = delegate.model_
            result = delegate.result_
            result.method = "sampled-netflow-mle"
            return self._finish(result)
        t0 = time.perf_counter()
        X = check_netflows(X)
        key = _family_key(self.family)
        cfg = self.optimizer or OptimizerConfig()
        lik_cfg = LikelihoodConfig(self.pmf, q=q,
                                   retained_mass=self.retained_mass)
        objective = RestrictedSampledObjective(X[:, 1], X[:, 2].astype(int),
                                               lik_cfg)
        warn = []
        x0, names, builder = self._setup(key, X, q)
        res = _maximize(lambda z: -objective(builder(z)), x0, cfg)
        model = builder(res["x_log"])
        params = dict(zip(names, model.params))
        if res["diverged"]:
            warn.append("optimiser diverged (parameters ran away); returning "
                        "the best iterate")

        def total(p):
            m = LogNormalModel(p[0], p[1]) if key == "lognormal" \
                else _FAMILY_CLASSES[key](*np.abs(p))
            return objective(m) * X.shape[0]

        stderr = None if res["diverged"] else \
            _stderr_from_loglik(total, model.params, names)
        result = FitResult(key, params, objective(model), stderr, X.shape[0],
                           res["n_evals"], time.perf_counter() - t0,
                           netflow_csv_bytes(X), converged=res["converged"],
                           method="sampled-netflow-mle", warnings=warn)
        if not res["converged"] and not res["diverged"]:
            raise ConvergenceError("sampled NetFlow MLE did not converge", result)
        self.model_ = model
        self.lik_config_ = lik_cfg
        return self._finish(result)

    def _setup(self, key, X, q):
        names = list(_FAMILY_CLASSES[key].param_names)
        spans = np.maximum(X[:, 2] - 1.0, 1.0) / q  # rough latent span count
        rate0 = float(spans.sum() / X[:, 1].sum())
        if key == "gamma":
            x0 = np.log([1.0, rate0])
            builder = lambda z: GammaModel(*np.exp(z))
        elif key == "exponential":
            x0 = np.log([rate0])
            builder = lambda z: ExponentialModel(math.exp(z[0]))
        else:
            lg = np.log(X[:, 1] * q / np.maximum(X[:, 2] - 1.0, 1.0))
            x0 = np.array([float(lg.mean()), math.log(max(lg.std(), 0.5))])
            builder = lambda z: LogNormalModel(z[0], math.exp(z[1]))
        return x0, names, builder

    def score(self, X, y=None):
        self._check_fitted()
        X = check_netflows(X)
        obj = RestrictedSampledObjective(X[:, 1], X[:, 2].astype(int),
                                         self.lik_config_)
        return obj(self.model_)


class MomentEstimator(BaseEstimator, _FittedMixin):
    """Moments baseline from complete flows (pooled inter-renewals).

    alpha_hat is the squared inverse coefficient of variation of the pooled
    within-flow gaps; beta_hat weights per-flow packet intensities by flow
    size; beta_star_hat is the naive alpha_hat / mean-gap.
    """

    def fit(self, X, y=None):
        t0 = time.perf_counter()
        gaps, sizes = check_flows(X)
        pooled = np.concatenate([g for g in gaps if g.size]) if gaps else np.empty(0)
        if pooled.size < 2:
            raise ValueError("need at least two pooled inter-renewals")
        xbar = float(pooled.mean())
        sd = float(pooled.std(ddof=1))
        if sd == 0.0:
            raise ValueError("degenerate data: constant inter-renewals")
        alpha = (xbar / sd) ** 2
        m = sizes.astype(float) - 1.0
        s_d = np.array([g.sum() for g in gaps])
        ok = (m >= 1) & (s_d > 0)
        if np.any((m >= 1) & (s_d <= 0)):
            warnings.warn("flows with zero duration excluded from the rate "
                          "estimator", UserWarning, stacklevel=2)
        w = m[ok] / m[ok].sum()
        rho = m[ok] / s_d[ok]
        beta = alpha * float(np.dot(w, rho))
        params = {"alpha": alpha, "beta": beta, "beta_star": alpha / xbar}
        result = FitResult("gamma", params, np.nan, None, int(ok.sum()), 0,
                           time.perf_counter() - t0,
                           gaps_csv_bytes(pooled.size), method="mom")
        return self._finish(result)


class NetflowMomentEstimator(BaseEstimator, _FittedMixin):
    """Moments baseline using only NetFlow summaries.

    Based on per-flow mean inter-renewals y_i = s_d / m_i:
    alpha_check = (mean(y) / sd(y))^2 * mean(1 / m); the rate estimators
    reuse the size-weighted packet intensity and the pooled mean gap
    z_bar = sum(s_d) / sum(m) (equal to the full-data pooled mean).
    """

    def fit(self, X, y=None):
        t0 = time.perf_counter()
        X = check_netflows(X)
        X = X[X[:, 2] >= 2]
        if X.shape[0] < 2:
            raise ValueError("NetFlow moments need >= 2 duration-informative "
                             "flows (variance of a single value is zero)")
        m = X[:, 2] - 1.0
        yv = X[:, 1] / m
        sd = float(yv.std(ddof=1))
        if sd == 0.0:
            raise ValueError("degenerate data: constant flow-mean gaps")
        alpha = (yv.mean() / sd) ** 2 * float((1.0 / m).mean())
        w = m / m.sum()
        rho = m / X[:, 1]
        zbar = float(X[:, 1].sum() / m.sum())
        params = {"alpha": float(alpha), "beta": float(alpha * np.dot(w, rho)),
                  "beta_star": float(alpha / zbar)}
        result = FitResult("gamma", params, np.nan, None, X.shape[0], 0,
                           time.perf_counter() - t0, netflow_csv_bytes(X),
                           method="mom-netflow")
        return self._finish(result)


class TwoStepLogNormalMLE(BaseEstimator, _FittedMixin):
    """Log-Normal packet-model fit through the Fenton-Wilkinson convolution.

    With q = 1 and ``mode='session'`` the set of NetFlows is first reduced to
    a single session NetFlow (total duration, total packet count) and the FW
    density of the total duration given the total gap count is maximised as
    stated.  That objective is a ridge: its supremum is at sigma -> 0 with
    mu = log(total / count), so the reported optimum is tolerancephase- and
    start-dependent; a divergence warning is attached.  ``mode='per-flow'``
    instead maximises the per-flow FW likelihood over flows whose duration
    exceeds ``fw_min_total``, which is a proper two-parameter likelihood.

    With q < 1 the restricted sub-sampled likelihood is maximised with FW
    standing in for the k-fold convolutions (requires the flow-size pmf,
    typically the empirical grid PMF).
    """

    def __init__(self, q=1.0, pmf=None, mode="session", fw_min_total=None,
                 optimizer=None):
        self.q = q
        self.pmf = pmf
        self.mode = mode
        self.fw_min_total = fw_min_total
        self.optimizer = optimizer

    def fit(self, X, y=None):
        q = check_q(self.q)
        if q < 1.0:
            inner = SampledNetflowMLE(family="lognormal", pmf=self.pmf, q=q,
                                      optimizer=self.optimizer)
            inner.fit(X)
            self.model_ = inner.model_
            result = inner.result_
            result.method = "lognormal-two-step"
            return self._finish(result)
        t0 = time.perf_counter()
        X = check_netflows(X)
        cfg = self.optimizer or OptimizerConfig()
        X_used = X[X[:, 2] >= 2]
        if X_used.shape[0] == 0:
            raise ValueError("no duration-informative NetFlows")
        if self.mode == "session":
            return self._fit_session(X, X_used, cfg, t0)
        if self.mode == "per-flow":
            return self._fit_per_flow(X, X_used, cfg, t0)
        raise ValueError("mode must be 'session' or 'per-flow'")

    def _fit_session(self, X, X_used, cfg, t0):
        sess = session_netflow(X_used)
        k_total = sess.total_packets - sess.n_flows  # total inter-renewal count
        x_total = sess.total_duration

        def neg(z):
            model = LogNormalModel(z[0], math.exp(z[1]))
            return -float(model.kfold_logpdf(k_total, x_total))

        x0 = np.array([math.log(x_total / k_total), 0.0])
        res = _maximize(neg, x0, cfg)
        mu, sigma = res["x_log"][0], math.exp(res["x_log"][1])
        warn = ["single-observation FW objective is ridge-degenerate "
                "(supremum at sigma -> 0); result depends on the optimiser "
                "tolerance and start point"]
        model = LogNormalModel(mu, sigma)
        params = {"mu": float(mu), "sigma": float(sigma)}
        result = FitResult("lognormal", params, -neg(res["x_log"]), None, 1,
                           res["n_evals"], time.perf_counter() - t0,
                           netflow_csv_bytes(X), converged=False,
                           method="lognormal-two-step", warnings=warn)
        self.model_ = model
        return self._finish(result)

    def _fit_per_flow(self, X, X_used, cfg, t0):
        m = X_used[:, 2] - 1.0
        s_d = X_used[:, 1]
        if self.fw_min_total is not None:
            keep = s_d >= self.fw_min_total
            if not np.any(keep):
                raise ValueError("fw_min_total excludes every flow")
            m, s_d = m[keep], s_d[keep]
        ks = m.astype(int)

        def neg(z):
            model = LogNormalModel(z[0], math.exp(z[1]))
            mu_s, sig_s = fenton_wilkinson_params(ks, model.mu, model.sigma)
            zz = (np.log(s_d) - mu_s) / sig_s
            ll = -np.log(s_d) - np.log(sig_s) - 0.5 * (math.log(2 * math.pi) + zz * zz)
            return -float(np.mean(ll))

        lg = np.log(s_d / m)
        x0 = np.array([float(lg.mean()), math.log(max(float(lg.std()), 0.3))])
        res = _maximize(neg, x0, cfg)
        mu, sigma = res["x_log"][0], math.exp(res["x_log"][1])
        model = LogNormalModel(mu, sigma)
        params = {"mu": float(mu), "sigma": float(sigma)}

        def total(p):
            z = np.array([p[0], math.log(abs(p[1]))])
            return -neg(z) * s_d.size

        stderr = _stderr_from_loglik(total, np.array([mu, sigma]),
                                     ["mu", "sigma"])
        result = FitResult("lognormal", params, -neg(res["x_log"]), stderr,
                           int(s_d.size), res["n_evals"],
                           time.perf_counter() - t0, netflow_csv_bytes(X),
                           converged=res["converged"],
                           method="lognormal-two-step", warnings=[])
        self.model_ = model
        return self._finish(result)
