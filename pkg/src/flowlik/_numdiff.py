"""Central finite-difference derivatives with a Richardson fallback."""

from __future__ import annotations

import numpy as np

__all__ = ["hessian", "gradient"]


def _hessian_at_step(f, x0, h):
    d = x0.size
    f0 = f(x0)
    H = np.empty((d, d))
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h[i]
        H[i, i] = (f(x0 + ei) - 2.0 * f0 + f(x0 - ei)) / (h[i] * h[i])
    for i in range(d):
        for j in range(i + 1, d):
            ei = np.zeros(d)
            ej = np.zeros(d)
            ei[i] = h[i]
            ej[j] = h[j]
            H[i, j] = H[j, i] = (f(x0 + ei + ej) - f(x0 + ei - ej)
                                 - f(x0 - ei + ej) + f(x0 - ei - ej)) \
                / (4.0 * h[i] * h[j])
    return H


def hessian(f, x0, rel_step=1e-4, richardson_tol=0.05):
    """Central-difference Hessian of a scalar function.

    Steps are relative to each coordinate's magnitude.  The Hessian is also
    computed at twice the step; if any entry disagrees by more than
    ``richardson_tol`` (relative), the Richardson extrapolation
    (4 H_h - H_2h) / 3 is returned instead of H_h.
    """
    x0 = np.asarray(x0, dtype=float)
    h = rel_step * np.maximum(np.abs(x0), 1e-8)
    H1 = _hessian_at_step(f, x0, h)
    H2 = _hessian_at_step(f, x0, 2.0 * h)
    scale = np.maximum(np.abs(H1), np.abs(H2)) + 1e-300
    if np.any(np.abs(H1 - H2) / scale > richardson_tol):
        return (4.0 * H1 - H2) / 3.0
    return H1


def gradient(f, x0, rel_step=1e-6):
    x0 = np.asarray(x0, dtype=float)
    h = rel_step * np.maximum(np.abs(x0), 1e-8)
    g = np.empty(x0.size)
    for i in range(x0.size):
        ei = np.zeros(x0.size)
        ei[i] = h[i]
        g[i] = (f(x0 + ei) - f(x0 - ei)) / (2.0 * h[i])
    return g
