"""Flow-size distributions: Zeta, finite-support Zipf, and empirical PMFs.

Flow sizes count packets per flow (M + 1 >= 1).  The Zeta family has
unbounded support; sampling retains at least ``1 - truncation_mass`` of the
probability mass (draws above the implied cap are redrawn), and likelihood
evaluations use the exact analytic mass function.
"""

from __future__ import annotations

import numpy as np
from scipy import special

__all__ = ["FlowSizePmf", "zeta_pmf", "zipf_pmf", "empirical_pmf"]


class FlowSizePmf:
    """Discrete distribution of flow sizes (packets per flow).

    Use the constructors :func:`zeta_pmf`, :func:`zipf_pmf` or
    :func:`empirical_pmf`.  Finite-support distributions expose ``support``
    and ``mass`` arrays; the Zeta distribution exposes its analytic pmf and a
    truncation cap chosen so the retained mass is at least
    ``1 - truncation_mass``.
    """

    def __init__(self, kind, support=None, mass=None, shape=None,
                 truncation_mass=1e-8, min_size=1):
        self.kind = kind
        self.shape = shape
        self.truncation_mass = float(truncation_mass)
        self.min_size = int(min_size)
        if kind == "zeta":
            if shape is None or shape <= 1:
                raise ValueError("Zeta shape must be > 1 for a finite mean")
            self._zeta_norm = self._zeta_tail_norm(self.min_size)
            self.support = None
            self.mass = None
            self.size_cap = self._zeta_cap()
        else:
            support = np.asarray(support, dtype=np.int64)
            mass = np.asarray(mass, dtype=float)
            if support.ndim != 1 or support.shape != mass.shape:
                raise ValueError("support and mass must be 1-D and matched")
            if np.any(np.diff(support) <= 0):
                raise ValueError("support must be strictly increasing")
            if np.any(support < 1):
                raise ValueError("flow sizes must be >= 1")
            if np.any(mass <= 0):
                raise ValueError("masses must be positive")
            total = mass.sum()
            if abs(total - 1.0) > 1e-9:
                mass = mass / total
            self.support = support
            self.mass = mass / mass.sum()
            self.size_cap = int(support[-1])

    # Zeta internals -------------------------------------------------------
    def _zeta_tail_norm(self, lo):
        # sum_{s >= lo} s^{-shape}
        if lo == 1:
            return float(special.zeta(self.shape))
        return float(special.zeta(self.shape, lo))

    def _zeta_cap(self):
        # smallest S with P(size > S) <= truncation_mass
        target = self.truncation_mass * self._zeta_norm
        lo, hi = self.min_size, 2
        while special.zeta(self.shape, hi + 1) > target:
            hi *= 4
            if hi > 2**62:
                raise OverflowError("Zeta truncation cap out of range")
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if special.zeta(self.shape, mid + 1) > target:
                lo = mid
            else:
                hi = mid
        return hi

    # Public surface -------------------------------------------------------
    def pmf(self, sizes):
        sizes = np.asarray(sizes)
        if self.kind == "zeta":
            p = np.where(sizes >= self.min_size,
                         np.power(np.maximum(sizes, 1).astype(float), -self.shape)
                         / self._zeta_norm, 0.0)
            return p
        p = np.zeros(sizes.shape, dtype=float)
        idx = np.searchsorted(self.support, sizes)
        ok = (idx < len(self.support)) & (np.take(self.support, idx, mode="clip") == sizes)
        p[ok] = self.mass[idx[ok]]
        return p

    def logpmf(self, sizes):
        with np.errstate(divide="ignore"):
            return np.log(self.pmf(sizes))

    def mean(self):
        if self.kind == "zeta":
            if self.shape <= 2:
                return np.inf
            num = special.zeta(self.shape - 1) if self.min_size == 1 \
                else special.zeta(self.shape - 1, self.min_size)
            return float(num / self._zeta_norm)
        return float(np.dot(self.support, self.mass))

    def truncated_mean(self):
        """Mean of the law actually sampled (after the Zeta cap)."""
        if self.kind != "zeta":
            return self.mean()
        s = np.arange(self.min_size, self.size_cap + 1, dtype=float)
        w = np.power(s, -self.shape)
        return float(np.dot(s, w) / w.sum())

    def sample(self, n, rng):
        if self.kind == "zeta":
            return self._sample_zeta(n, rng)
        idx = rng.choice(len(self.support), size=n, p=self.mass)
        return self.support[idx]

    def _sample_zeta(self, n, rng):
        if self.min_size == 1:
            out = rng.zipf(self.shape, size=n)
        else:
            # conditional sampling above a minimum size by rejection
            out = np.empty(n, dtype=np.int64)
            filled = 0
            accept = self._zeta_norm / float(special.zeta(self.shape))
            while filled < n:
                need = n - filled
                draw = rng.zipf(self.shape, size=max(16, int(need / accept * 1.2) + 8))
                draw = draw[draw >= self.min_size][:need]
                out[filled:filled + draw.size] = draw
                filled += draw.size
        over = out > self.size_cap
        while np.any(over):
            out[over] = rng.zipf(self.shape, size=int(over.sum()))
            over = (out > self.size_cap) | (out < self.min_size)
        return out

    def latent_support(self, min_size=1):
        """Ascending candidate sizes >= min_size for latent-size sums.

        Finite kinds enumerate their support; the Zeta support is enumerated
        up to its truncation cap (callers prune by posterior mass).
        """
        if self.kind == "zeta":
            lo = max(self.min_size, min_size)
            if self.size_cap - lo > 5_000_000:
                raise ValueError(
                    "Zeta latent support is too large to enumerate; supply a "
                    "bounded-support pmf for latent-size sums")
            return np.arange(lo, self.size_cap + 1, dtype=np.int64)
        return self.support[self.support >= min_size]

    def is_bounded(self):
        return self.kind != "zeta"

    def to_config(self):
        if self.kind == "zeta":
            return {"kind": "zeta", "shape": self.shape,
                    "truncation_mass": self.truncation_mass,
                    "min_size": self.min_size}
        out = {"kind": self.kind, "support": [int(s) for s in self.support],
               "mass": [float(m) for m in self.mass]}
        if self.shape is not None:
            out["shape"] = self.shape
        return out

    @staticmethod
    def from_config(cfg) -> "FlowSizePmf":
        kind = cfg["kind"].lower()
        if kind == "zeta":
            return zeta_pmf(cfg["shape"],
                            truncation_mass=cfg.get("truncation_mass", 1e-8),
                            min_size=cfg.get("min_size", 1))
        if kind == "zipf":
            return zipf_pmf(cfg["shape"], cfg["support"])
        if kind == "empirical":
            return empirical_pmf(cfg["support"], cfg["mass"])
        raise ValueError(f"unknown pmf kind {cfg['kind']!r}")

    def __repr__(self):
        if self.kind == "zeta":
            return f"FlowSizePmf(zeta, shape={self.shape}, min_size={self.min_size})"
        return f"FlowSizePmf({self.kind}, support={self.support.tolist()})"


def zeta_pmf(shape, truncation_mass=1e-8, min_size=1):
    """Zeta (discrete power-law) flow sizes: p(s) proportional to s^-shape."""
    return FlowSizePmf("zeta", shape=shape, truncation_mass=truncation_mass,
                       min_size=min_size)


def zipf_pmf(shape, support):
    """Finite Zipf over an explicit ascending support: mass at the r-th
    smallest size is proportional to r^-shape."""
    support = np.asarray(support, dtype=np.int64)
    ranks = np.arange(1, len(support) + 1, dtype=float)
    return FlowSizePmf("zipf", support=support, mass=ranks ** -float(shape),
                       shape=float(shape))


def empirical_pmf(support, mass):
    """Empirical PMF from explicit support/mass arrays (masses normalised)."""
    return FlowSizePmf("empirical", support=support, mass=mass)
