"""Bartlett-Lewis session simulation and Bernoulli packet thinning.

A session is a sequence of independent flows.  Flow starts form a Poisson
main process (Exponential gaps at ``flow_rate``); within a flow, a size drawn
from the flow-size pmf fixes the number of packets, whose inter-renewals are
iid draws from the packet model.  Thinning retains each packet independently
with probability q, either directly or through the binomial-equivalent fast
procedure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .models import PacketModel
from .sizes import FlowSizePmf

__all__ = [
    "Flow",
    "SessionConfig",
    "SessionSample",
    "derive_rng",
    "generate_flow",
    "generate_session",
    "thin_flow",
    "thin_flow_fast",
    "simulate_session",
    "thin_session_fast",
    "collect_nontrivial",
]


def derive_rng(seed, *key):
    """Independent generator derived from (seed, key...) via SeedSequence
    spawn keys; identical inputs give identical streams on any worker."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


@dataclass(frozen=True)
class Flow:
    """Packet arrival times of one flow, relative to the previous flow start.

    ``arrivals[0]`` is the leading gap (0 in duration-only studies); the
    remaining gaps are the within-flow inter-renewals.
    """

    arrivals: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.arrivals, dtype=float)
        object.__setattr__(self, "arrivals", arr)
        if arr.size and (np.any(np.diff(arr) <= 0) or np.any(arr < 0)):
            raise ValueError("arrivals must be nonnegative and strictly increasing")

    @property
    def size(self) -> int:
        return int(self.arrivals.size)

    @property
    def gaps(self) -> np.ndarray:
        """Inter-renewals (x1 .. x_{M+1}); x1 is the leading gap."""
        if self.arrivals.size == 0:
            return np.empty(0)
        return np.diff(self.arrivals, prepend=0.0)


@dataclass(frozen=True)
class SessionConfig:
    flow_rate: float
    packet_model: PacketModel
    flow_size_pmf: FlowSizePmf
    n_flows: int
    thinning_q: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.flow_rate <= 0:
            raise ValueError("flow_rate must be positive")
        if not 0 < self.thinning_q <= 1:
            raise ValueError("thinning_q must be in (0, 1]")
        if self.n_flows < 1:
            raise ValueError("n_flows must be >= 1")


def generate_flow(model, size, rng, flow_rate=None):
    """One flow of ``size`` packets: a leading gap (Exponential at
    ``flow_rate``, or 0 for duration-only studies) followed by ``size - 1``
    iid inter-renewals from the packet model."""
    if size < 1:
        raise ValueError("size must be >= 1")
    lead = rng.exponential(1.0 / flow_rate) if flow_rate is not None else 0.0
    gaps = model.sample(size - 1, rng)
    return Flow(np.cumsum(np.concatenate(([lead], gaps))))


def generate_session(cfg: SessionConfig):
    """Independent flows with per-flow derived RNG streams (seed, index)."""
    flows = []
    for i in range(cfg.n_flows):
        rng = derive_rng(cfg.seed, i)
        size = int(cfg.flow_size_pmf.sample(1, rng)[0])
        flows.append(generate_flow(cfg.packet_model, size, rng,
                                   flow_rate=cfg.flow_rate))
    return flows


def thin_flow(flow: Flow, q, rng) -> Flow:
    """Bernoulli thinning: each packet kept independently with probability q;
    kept packets retain their original timestamps.  May return an empty flow."""
    if not 0 < q <= 1:
        raise ValueError("q must be in (0, 1]")
    if q == 1.0:
        return flow
    keep = rng.random(flow.size) < q
    return Flow(flow.arrivals[keep])


def thin_flow_fast(flow: Flow, q, rng) -> Flow:
    """Binomial-equivalent thinning: draw the retained count from
    Binomial(size, q), then keep that many packets uniformly without
    replacement.  Output distribution equals :func:`thin_flow`'s."""
    if not 0 < q <= 1:
        raise ValueError("q must be in (0, 1]")
    if q == 1.0:
        return flow
    kept = int(rng.binomial(flow.size, q))
    return Flow(flow.arrivals[_sample_indices(flow.size, kept, rng)])


def _sample_indices(size, kept, rng):
    """Sorted uniform sample of ``kept`` indices from range(size) without
    replacement; avoids a full permutation when the sample is sparse."""
    if kept == 0:
        return np.empty(0, dtype=np.int64)
    if kept >= size:
        return np.arange(size, dtype=np.int64)
    if size <= 4096 or kept * 8 > size:
        return np.sort(rng.permutation(size)[:kept])
    picked = np.unique(rng.integers(0, size, size=int(kept * 1.2) + 8))
    while picked.size < kept:
        extra = rng.integers(0, size, size=kept)
        picked = np.unique(np.concatenate([picked, extra]))
    # unique() sorts; subsample back down to exactly `kept` uniformly
    if picked.size > kept:
        keep_pos = np.sort(rng.permutation(picked.size)[:kept])
        picked = picked[keep_pos]
    return picked


# Vectorised session engine (used by the replicate studies) -----------------

@dataclass
class SessionSample:
    """Columnar session: per-flow sizes, leading gaps and durations, plus the
    concatenated within-flow gaps (``offsets[i]:offsets[i+1]`` slices flow i)."""

    sizes: np.ndarray
    leads: np.ndarray
    durations: np.ndarray
    gaps: np.ndarray
    offsets: np.ndarray = field(repr=False)

    @property
    def n_flows(self) -> int:
        return int(self.sizes.size)

    def netflows(self) -> np.ndarray:
        """(n, 3) array of (s_f, s_d, size)."""
        return np.column_stack([self.leads, self.durations,
                                self.sizes.astype(float)])

    def flow_gaps(self, i) -> np.ndarray:
        return self.gaps[self.offsets[i]:self.offsets[i + 1]]

    def flows(self):
        """Materialise :class:`Flow` objects (mainly for tests)."""
        out = []
        for i in range(self.n_flows):
            g = np.concatenate(([self.leads[i]], self.flow_gaps(i)))
            out.append(Flow(np.cumsum(g)))
        return out


def simulate_session(model, pmf, n_flows, rng, flow_rate=1.0) -> SessionSample:
    """Vectorised equivalent of :func:`generate_session`: one stream, sizes
    first, then all within-flow gaps in flow order."""
    sizes = pmf.sample(n_flows, rng).astype(np.int64)
    m = sizes - 1
    offsets = np.concatenate(([0], np.cumsum(m)))
    gaps = model.sample(int(offsets[-1]), rng)
    if offsets[-1]:
        # pad with a sentinel so repeated/terminal reduceat indices from
        # size-1 flows stay in bounds; their rows are zeroed explicitly
        padded = np.append(gaps, 0.0)
        durations = np.where(m > 0, np.add.reduceat(padded, offsets[:-1]), 0.0)
    else:
        durations = np.zeros(n_flows)
    leads = rng.exponential(1.0 / flow_rate, size=n_flows) if flow_rate else \
        np.zeros(n_flows)
    return SessionSample(sizes, leads, durations, gaps, offsets)


def thin_session_fast(sample: SessionSample, q, rng):
    """Fast-thin every flow of a session; returns the (s_f, s_d, m_tilde)
    array of non-trivial sampled NetFlows (m_tilde >= 2) plus the per-flow
    retained counts."""
    if not 0 < q <= 1:
        raise ValueError("q must be in (0, 1]")
    kept = rng.binomial(sample.sizes, q)
    rows = []
    for i in np.nonzero(kept >= 2)[0]:
        size = int(sample.sizes[i])
        k = int(kept[i])
        idx = _sample_indices(size, k, rng)
        g = sample.flow_gaps(i)
        csum = np.concatenate(([0.0], np.cumsum(g)))  # arrival offsets from packet 1
        s_f = sample.leads[i] + csum[idx[0]]
        s_d = csum[idx[-1]] - csum[idx[0]]
        rows.append((s_f, s_d, k))
    out = np.array(rows, dtype=float) if rows else np.empty((0, 3))
    return out, kept


def collect_nontrivial(model, pmf, n, rng, q=1.0, flow_rate=1.0,
                       chunk=None, max_draws=50_000_000):
    """Simulate until ``n`` non-trivial flows are collected.

    For q = 1 a flow is non-trivial when it has >= 2 packets; under thinning,
    when >= 2 packets are retained.  Returns ``(netflows, sample_chunks,
    stats)`` where ``netflows`` is the (n, 3) array actually used downstream
    (for q < 1 the third column is the retained count m_tilde),
    ``sample_chunks`` holds the generating :class:`SessionSample` pieces of
    the accepted flows (full gap data, e.g. for moments baselines), and
    ``stats`` counts generated flows and packets.
    """
    if chunk is None:
        chunk = max(256, int(n if q == 1.0 else n * 1.5))
    rows, chunks = [], []
    collected, generated, packets = 0, 0, 0
    while collected < n:
        if generated > max_draws:
            raise RuntimeError("collect_nontrivial exceeded its simulation budget")
        sample = simulate_session(model, pmf, chunk, rng, flow_rate=flow_rate)
        generated += sample.n_flows
        packets += int(sample.sizes.sum())
        if q == 1.0:
            ok = np.nonzero(sample.sizes >= 2)[0]
            take = ok[:n - collected]
            rows.append(sample.netflows()[take])
            chunks.append(_subset_sample(sample, take))
            collected += take.size
        else:
            nf, kept = thin_session_fast(sample, q, rng)
            take = min(nf.shape[0], n - collected)
            rows.append(nf[:take])
            ok = np.nonzero(kept >= 2)[0][:take]
            chunks.append(_subset_sample(sample, ok))
            collected += take
    netflows = np.concatenate(rows, axis=0)
    stats = {"flows_generated": generated, "packets_generated": packets,
             "flows_used": int(collected)}
    return netflows, chunks, stats


def _subset_sample(sample: SessionSample, idx) -> SessionSample:
    sizes = sample.sizes[idx]
    leads = sample.leads[idx]
    durations = sample.durations[idx]
    pieces = [sample.flow_gaps(i) for i in idx]
    gaps = np.concatenate(pieces) if pieces else np.empty(0)
    offsets = np.concatenate(([0], np.cumsum(sizes - 1)))
    return SessionSample(sizes, leads, durations, gaps, offsets)
