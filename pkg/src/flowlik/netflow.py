"""NetFlow aggregation: the summary triple (s_f, s_d, size) of a flow.

``aggregate`` maps a flow's inter-renewals (x1 .. x_{M+1}) to the gap to the
previous flow (s_f = x1), the flow duration (s_d = x2 + ... + x_{M+1}, zero
for single-packet flows) and the packet count.  ``aggregate_sampled`` does
the same for a thinned flow, returning None for trivial results (fewer than
two retained packets), which are discarded downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .simulate import Flow

__all__ = ["NetFlow", "SampledNetFlow", "SessionNetFlow",
           "aggregate", "aggregate_sampled", "session_netflow"]


@dataclass(frozen=True)
class NetFlow:
    s_f: float  # gap to previous flow start (seconds)
    s_d: float  # flow duration (seconds)
    size: int   # packet count (M + 1)

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("NetFlow size must be >= 1")
        if self.s_d < 0 or self.s_f < 0:
            raise ValueError("NetFlow times must be nonnegative")
        if self.size == 1 and self.s_d != 0:
            raise ValueError("single-packet flows have zero duration")
        if self.size >= 2 and self.s_d <= 0:
            raise ValueError("multi-packet flows must have positive duration")

    def as_row(self):
        return np.array([self.s_f, self.s_d, float(self.size)])


@dataclass(frozen=True)
class SampledNetFlow:
    s_f: float
    s_d: float
    size: int  # retained packet count m_tilde

    def as_row(self):
        return np.array([self.s_f, self.s_d, float(self.size)])


@dataclass(frozen=True)
class SessionNetFlow:
    """Element-wise sum of a set of NetFlows: total duration, total packets
    and the number of member flows."""

    total_duration: float
    total_packets: int
    n_flows: int

    def __add__(self, other: "SessionNetFlow") -> "SessionNetFlow":
        return SessionNetFlow(self.total_duration + other.total_duration,
                              self.total_packets + other.total_packets,
                              self.n_flows + other.n_flows)


def aggregate(flow: Flow) -> NetFlow:
    """NetFlow of a complete flow."""
    if flow.size == 0:
        raise ValueError("cannot aggregate an empty flow")
    gaps = flow.gaps
    s_f = float(gaps[0])
    s_d = float(gaps[1:].sum()) if flow.size > 1 else 0.0
    return NetFlow(s_f, s_d, flow.size)


def aggregate_sampled(thinned: Flow, prev_flow_anchor=0.0):
    """Sampled NetFlow of a thinned flow, or None when trivial (m_tilde <= 1).

    ``prev_flow_anchor`` is the time origin the first retained gap is
    measured against (the flow's own anchor in single-flow mode).
    """
    if thinned.size <= 1:
        return None
    arr = thinned.arrivals
    return SampledNetFlow(float(arr[0] - prev_flow_anchor),
                          float(arr[-1] - arr[0]), thinned.size)


def session_netflow(netflows) -> SessionNetFlow:
    """Element-wise sum of NetFlows (accepts NetFlow objects or (n, 3) rows)."""
    if isinstance(netflows, np.ndarray):
        if netflows.ndim != 2 or netflows.shape[0] == 0:
            raise ValueError("need a non-empty (n, 3) NetFlow array")
        return SessionNetFlow(float(netflows[:, 1].sum()),
                              int(round(netflows[:, 2].sum())),
                              int(netflows.shape[0]))
    netflows = list(netflows)
    if not netflows:
        raise ValueError("need a non-empty NetFlow collection")
    return SessionNetFlow(float(sum(nf.s_d for nf in netflows)),
                          int(sum(nf.size for nf in netflows)),
                          len(netflows))
