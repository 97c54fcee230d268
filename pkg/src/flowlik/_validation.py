"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np

__all__ = ["check_gaps", "check_netflows", "check_q", "check_flows"]


def check_gaps(x, min_len=2, name="inter_renewals"):
    """1-D array of positive, finite inter-renewal times."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size < min_len:
        raise ValueError(f"{name} needs at least {min_len} values (got {x.size})")
    if not np.all(np.isfinite(x)) or np.any(x <= 0):
        raise ValueError(f"{name} must be positive and finite")
    return x


def check_netflows(X, min_size=1, name="netflows"):
    """(n, 3) array of (s_f, s_d, size) rows with consistent durations."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1 and X.size == 3:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != 3 or X.shape[0] == 0:
        raise ValueError(f"{name} must be a non-empty (n, 3) array of "
                         "(s_f, s_d, size)")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    sizes = X[:, 2]
    if np.any(sizes < min_size) or np.any(sizes != np.round(sizes)):
        raise ValueError(f"{name} sizes must be integers >= {min_size}")
    if np.any(X[:, :2] < 0):
        raise ValueError(f"{name} times must be nonnegative")
    if np.any((sizes >= 2) & (X[:, 1] <= 0)):
        raise ValueError(f"{name} has a multi-packet row with zero duration")
    return X


def check_q(q):
    q = float(q)
    if not 0 < q <= 1:
        raise ValueError("q must be in (0, 1]")
    return q


def check_flows(flows):
    """List of per-flow gap arrays (accepts Flow objects or raw sequences);
    returns (list of within-flow gap arrays, list of sizes)."""
    gaps, sizes = [], []
    for i, f in enumerate(flows):
        if hasattr(f, "gaps"):
            g = np.asarray(f.gaps, dtype=float)[1:]  # drop the leading gap
            size = f.size
        else:
            g = np.asarray(f, dtype=float).ravel()
            size = g.size + 1
        if np.any(g <= 0) or not np.all(np.isfinite(g)):
            raise ValueError(f"flow {i} has non-positive inter-renewals")
        gaps.append(g)
        sizes.append(size)
    if not gaps:
        raise ValueError("need at least one flow")
    return gaps, np.asarray(sizes, dtype=int)
