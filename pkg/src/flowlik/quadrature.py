"""Numerical k-fold self-convolution, used as an independent test oracle.

Densities are built on a log-spaced grid by repeated pairwise convolution
(exponentiation by squaring), with each pairwise convolution split at x/2 so
that the integrable power-law singularity at the origin always sits at the
left end, where the log-spaced substitution u = log t makes the integrand
smooth.  Panels are integrated with Gauss-Legendre nodes and summed in the
log domain.  Accuracy is limited by the spline interpolation of intermediate
grids; the defaults reach ~1e-9 relative error against the Gamma closed form
up to k = 16.
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import logsumexp

__all__ = ["kfold_logpdf_quad"]

_LEFT_WIDTH = 70.0  # log-units of left tail kept in each half-integral


def _panel_nodes(n_panels=24, n_nodes=24):
    """Gauss-Legendre nodes/weights on [0, 1], concatenated over equal panels."""
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    edges = np.linspace(0.0, 1.0, n_panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


_S_NODES, _S_WEIGHTS = _panel_nodes()


class _LogDensity:
    """Log-density callable backed by either an exact function or a spline
    over a uniform grid in u = log x (linear extrapolation below the grid
    follows the power-law left tail; queries above the grid are disallowed
    by construction)."""

    def __init__(self, fn=None, grid_u=None, grid_logf=None):
        self._fn = fn
        if fn is None:
            self._spline = CubicSpline(grid_u, grid_logf, extrapolate=True)
            self._lo = grid_u[0]
            slope = (grid_logf[1] - grid_logf[0]) / (grid_u[1] - grid_u[0])
            self._tail = (grid_u[0], grid_logf[0], slope)

    def __call__(self, x):
        if self._fn is not None:
            return self._fn(x)
        u = np.log(x)
        out = self._spline(u)
        below = u < self._lo
        if np.any(below):
            u0, f0, slope = self._tail
            out = np.where(below, f0 + slope * (u - u0), out)
        return out


def _convolve_at(logA, logB, x):
    """log of (A * B)(x) for positive targets x, via the split integral
    int_0^{x/2} A(t) B(x - t) dt + int_0^{x/2} B(t) A(x - t) dt."""
    x = np.asarray(x, dtype=float)
    lx = np.log(x)
    span = _LEFT_WIDTH - np.log(2.0)
    u = (lx[:, None] - _LEFT_WIDTH) + span * _S_NODES[None, :]
    t = np.exp(u)
    xt = np.maximum(x[:, None] - t, 0.5 * x[:, None])  # guards roundoff at t ~ x/2
    log_jac = np.log(span * _S_WEIGHTS)[None, :] + u
    piece1 = logsumexp(logA(t) + logB(xt) + log_jac, axis=1)
    piece2 = logsumexp(logB(t) + logA(xt) + log_jac, axis=1)
    return np.logaddexp(piece1, piece2)


def _to_grid(log_fn, u_grid):
    return _LogDensity(grid_u=u_grid, grid_logf=log_fn(np.exp(u_grid)))


def _convolve_to_grid(logA, logB, u_grid):
    return _LogDensity(grid_u=u_grid, grid_logf=_convolve_at(logA, logB, np.exp(u_grid)))


def kfold_logpdf_quad(model, k, x, policy=None, grid_points=4096):
    """Log-density of the k-fold self-convolution of ``model`` at ``x`` by
    iterated numerical convolution.  Capped at ``policy.max_quadrature_k``
    folds (default 16); intended as a test oracle, not a production path.
    """
    k = int(k)
    max_k = policy.max_quadrature_k if policy is not None else 16
    if k > max_k:
        raise ValueError(f"numeric quadrature is capped at k <= {max_k} (got k={k})")
    if k < 1:
        raise ValueError("k must be >= 1")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x <= 0):
        raise ValueError("x must be positive")
    if k == 1:
        out = model.logpdf(x)
        return out if out.size > 1 else float(out[0])

    u_hi = np.log(x.max()) + 0.7
    u_lo = min(np.log(x.min()), np.log(model.mean())) - 26.0
    u_grid = np.linspace(u_lo, u_hi, grid_points)

    base = _LogDensity(fn=lambda t: model.logpdf(t))
    # exponentiation by squaring over grid densities
    result = None
    power = base
    bits = k
    while bits:
        if bits & 1:
            result = power if result is None else _convolve_to_grid(result, power, u_grid)
        bits >>= 1
        if bits:
            power = _convolve_to_grid(power, power, u_grid)
    out = result(x)
    return out if out.size > 1 else float(out[0])
