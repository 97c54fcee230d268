"""Trace ingestion: packet-trace CSV to flows, NetFlow CSV round-trips,
the restricted-grid empirical flow-size PMF, and survival curves.

Trace files carry one packet per row (``flow_id,timestamp_ns``).  Timestamps
are parsed and differenced as integer nanoseconds so that inter-renewals
survive a write/read round-trip bit for bit; zero gaps (packets inside the
timestamp resolution) are clamped to a small positive value before modelling.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .simulate import Flow
from .sizes import FlowSizePmf, empirical_pmf

__all__ = [
    "IngestConfig",
    "TraceRecord",
    "read_trace",
    "write_trace",
    "read_netflow_csv",
    "write_netflow_csv",
    "netflow_csv_text",
    "default_size_grid",
    "empirical_flow_size_pmf",
    "survival_curve",
    "write_survival_csv",
]

NANOS_PER_SECOND = 1_000_000_000


@dataclass(frozen=True)
class TraceRecord:
    flow_id: str
    timestamp_ns: int


def default_size_grid(k_max=5):
    """Restricted flow sizes ceil(j * 10^k), j in {1, 2.5, 5}, k = 0..k_max."""
    vals = sorted({int(np.ceil(j * 10 ** k))
                   for j in (1.0, 2.5, 5.0) for k in range(k_max + 1)})
    return np.asarray(vals, dtype=np.int64)


@dataclass(frozen=True)
class IngestConfig:
    """zero_gap_replacement: seconds substituted for zero inter-renewals
    (timestamp-resolution collisions); min_flow_size: flows below this packet
    count are tallied as trivial rather than modelled."""

    zero_gap_replacement: float = 1e-7
    min_flow_size: int = 2
    size_grid: np.ndarray = field(default_factory=default_size_grid)

    def __post_init__(self):
        if self.zero_gap_replacement <= 0:
            raise ValueError("zero_gap_replacement must be positive")


def read_trace(path_or_file, cfg: IngestConfig | None = None):
    """Parse a packet trace CSV into per-flow gap data.

    Returns ``(flows, stats)``: ``flows`` is a list of dicts with keys
    ``flow_id``, ``start_ns``, ``gaps`` (within-flow inter-renewals in
    seconds, zero gaps clamped) and ``size``; flows are ordered by first
    arrival and trivial flows (fewer than ``min_flow_size`` packets) are
    counted in ``stats`` but not returned.
    """
    cfg = cfg or IngestConfig()
    close = False
    if isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__"):
        fh = open(path_or_file, "r", newline="")
        close = True
    else:
        fh = path_or_file
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["flow_id", "timestamp_ns"]:
            raise ValueError("trace CSV must start with header 'flow_id,timestamp_ns'")
        by_flow: dict[str, list[int]] = {}
        order: dict[str, int] = {}
        for ln, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                fid, ts = row[0], int(row[1])
                if ts < 0:
                    raise ValueError
            except (IndexError, ValueError):
                raise ValueError(f"malformed trace row at line {ln}: {row!r}") from None
            by_flow.setdefault(fid, []).append(ts)
            order.setdefault(fid, ln)
    finally:
        if close:
            fh.close()
    flows = []
    trivial = 0
    packets = 0
    for fid, stamps in by_flow.items():
        packets += len(stamps)
        stamps = np.asarray(stamps, dtype=np.int64)
        stamps.sort(kind="stable")
        if stamps.size < cfg.min_flow_size:
            trivial += 1
            continue
        gaps_ns = np.diff(stamps)
        gaps = gaps_ns.astype(float) / NANOS_PER_SECOND
        gaps[gaps_ns == 0] = cfg.zero_gap_replacement
        flows.append({"flow_id": fid, "start_ns": int(stamps[0]),
                      "gaps": gaps, "size": int(stamps.size)})
    flows.sort(key=lambda f: (f["start_ns"], order[f["flow_id"]]))
    stats = {"flows_total": len(by_flow), "flows_trivial": trivial,
             "flows_kept": len(flows), "packets": packets}
    return flows, stats


def write_trace(path_or_file, flows, t0_ns=0):
    """Serialise flows back to a trace CSV.  Accepts the dict form returned
    by :func:`read_trace` or :class:`Flow` objects (whose arrival seconds are
    rounded to integer nanoseconds); flow starts are spaced sequentially when
    no ``start_ns`` is available."""
    close = False
    if isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__"):
        fh = open(path_or_file, "w", newline="")
        close = True
    else:
        fh = path_or_file
    try:
        fh.write("flow_id,timestamp_ns\n")
        cursor = int(t0_ns)
        for i, flow in enumerate(flows):
            if isinstance(flow, Flow):
                rel = np.rint(flow.arrivals * NANOS_PER_SECOND).astype(np.int64)
                start = cursor + int(rel[0])
                stamps = start + (rel - rel[0])
                cursor = int(stamps[-1])
                fid = f"f{i}"
            else:
                gaps_ns = np.rint(np.asarray(flow["gaps"]) * NANOS_PER_SECOND
                                  ).astype(np.int64)
                start = int(flow.get("start_ns", cursor))
                stamps = start + np.concatenate(([0], np.cumsum(gaps_ns)))
                fid = flow.get("flow_id", f"f{i}")
            for ts in stamps:
                fh.write(f"{fid},{int(ts)}\n")
    finally:
        if close:
            fh.close()


def netflow_csv_text(X) -> str:
    """NetFlow CSV serialisation: header ``s_f,s_d,size`` and 9-decimal
    second fields."""
    X = np.asarray(X, dtype=float)
    buf = io.StringIO()
    buf.write("s_f,s_d,size\n")
    for row in X:
        buf.write(f"{row[0]:.9f},{row[1]:.9f},{int(round(row[2]))}\n")
    return buf.getvalue()


def write_netflow_csv(path, X):
    with open(path, "w", newline="") as fh:
        fh.write(netflow_csv_text(X))


def read_netflow_csv(path_or_file) -> np.ndarray:
    close = False
    if isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__"):
        fh = open(path_or_file, "r", newline="")
        close = True
    else:
        fh = path_or_file
    try:
        header = fh.readline().strip()
        if header.split(",")[:3] != ["s_f", "s_d", "size"]:
            raise ValueError("NetFlow CSV must start with header 's_f,s_d,size'")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    finally:
        if close:
            fh.close()
    if data.size == 0:
        return np.empty((0, 3))
    return data


def flows_to_netflows(flows) -> np.ndarray:
    """(n, 3) NetFlow array from ingested flows; s_f is the gap between
    consecutive flow starts (0 for the first flow)."""
    starts = np.array([f["start_ns"] for f in flows], dtype=np.int64)
    s_f = np.concatenate(([0.0], np.diff(starts) / NANOS_PER_SECOND))
    s_d = np.array([float(f["gaps"].sum()) for f in flows])
    sizes = np.array([f["size"] for f in flows], dtype=float)
    return np.column_stack([s_f, s_d, sizes])


def empirical_flow_size_pmf(sizes, grid=None) -> FlowSizePmf:
    """Empirical PMF over a restricted size grid.

    Each observed size is rounded to the nearest grid value, ties toward the
    smaller grid point; masses are the rounded-count proportions.
    """
    sizes = np.asarray(sizes, dtype=np.int64)
    if sizes.size == 0:
        raise ValueError("need at least one observed size")
    grid = default_size_grid() if grid is None else np.asarray(grid, dtype=np.int64)
    idx = np.searchsorted(grid, sizes)
    idx = np.clip(idx, 1, len(grid) - 1)
    lower, upper = grid[idx - 1], grid[idx]
    take_lower = (sizes - lower) <= (upper - sizes)  # ties toward the smaller
    rounded = np.where(take_lower, lower, upper)
    rounded[sizes <= grid[0]] = grid[0]
    support, counts = np.unique(rounded, return_counts=True)
    return empirical_pmf(support, counts / counts.sum())


def survival_curve(values, n_points=200, model=None, grid=None):
    """Empirical survival function on a log-spaced grid, with an optional
    fitted-model overlay.  Returns (x, s_empirical) or
    (x, s_empirical, s_model)."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("need at least one value")
    if np.any(values <= 0):
        raise ValueError("survival curves expect positive values")
    if grid is None:
        lo, hi = values.min(), values.max()
        if lo == hi:
            lo, hi = lo * 0.5, hi * 2.0
        grid = np.geomspace(lo, hi, n_points)
    sv = np.sort(values)
    # S(x) = P(V > x), exact at grid points
    s_emp = 1.0 - np.searchsorted(sv, grid, side="right") / values.size
    if model is None:
        return grid, s_emp
    return grid, s_emp, model.survival(grid)


def write_survival_csv(path, grid, s_emp, s_model=None):
    with open(path, "w", newline="") as fh:
        if s_model is None:
            fh.write("x,s_empirical\n")
            for x, se in zip(grid, s_emp):
                fh.write(f"{x:.9e},{se:.9e}\n")
        else:
            fh.write("x,s_empirical,s_model\n")
            for x, se, sm in zip(grid, s_emp, s_model):
                fh.write(f"{x:.9e},{se:.9e},{sm:.9e}\n")
