"""Replicate-study harness: estimator grids over session sizes.

A study draws T independent sessions per grid size n (each session collects
n non-trivial flows from the configured network), runs the requested
estimators, and aggregates mean, standard error, wall time and consumed data
volume per (estimator, n) cell.  Per-replicate RNG streams are derived from
(seed, n-index, replicate), so results do not depend on scheduling order and
replicates can run in a worker pool.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .estimators import (MomentEstimator, NetflowMLE, NetflowMomentEstimator,
                         SampledNetflowMLE, TwoStepLogNormalMLE)
from .models import PacketModel, packet_model
from .simulate import collect_nontrivial, derive_rng
from .sizes import FlowSizePmf

__all__ = ["StudyConfig", "run_study", "run_replicate", "aggregate_rows",
           "write_study_csv"]

ESTIMATOR_NAMES = ("mom", "mom-netflow", "mle", "mle-sampled",
                   "lognormal-two-step")


@dataclass(frozen=True)
class StudyConfig:
    packet_model: PacketModel
    pmf: FlowSizePmf
    estimators: tuple
    n_grid: tuple
    replicates: int
    q: float = 1.0
    flow_rate: float = 1.0
    family: str = "gamma"
    seed: int = 0

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        for e in self.estimators:
            if e not in ESTIMATOR_NAMES:
                raise ValueError(f"unknown estimator {e!r}")

    @staticmethod
    def from_json(cfg) -> "StudyConfig":
        model_cfg = cfg["packet_model"]
        return StudyConfig(
            packet_model=packet_model(model_cfg["family"], model_cfg["params"]),
            pmf=FlowSizePmf.from_config(cfg["pmf"]),
            estimators=tuple(cfg["estimators"]),
            n_grid=tuple(int(n) for n in cfg["n_grid"]),
            replicates=int(cfg["replicates"]),
            q=float(cfg.get("q", 1.0)),
            flow_rate=float(cfg.get("flow_rate", 1.0)),
            family=cfg.get("family", "gamma"),
            seed=int(cfg.get("seed", 0)),
        )

    def with_seed(self, seed) -> "StudyConfig":
        return StudyConfig(self.packet_model, self.pmf, self.estimators,
                           self.n_grid, self.replicates, self.q,
                           self.flow_rate, self.family, seed)


def run_replicate(cfg: StudyConfig, n, rep):
    """One session of n non-trivial flows and every requested estimator.
    Returns {estimator: {param: value, '_time': s, '_bytes': b}}."""
    rng = derive_rng(cfg.seed, cfg.n_grid.index(n), rep)
    X, chunks, stats = collect_nontrivial(cfg.packet_model, cfg.pmf, n, rng,
                                          q=cfg.q, flow_rate=cfg.flow_rate)
    out = {}
    for name in cfg.estimators:
        try:
            est, extra = _run_estimator(name, cfg, X, chunks)
        except (ValueError, FloatingPointError) as exc:
            out[name] = {"_error": str(exc)}
            continue
        rec = {k: float(v) for k, v in est.result_.params.items()
               if k != "flow_rate"}
        rec["_time"] = est.result_.wall_time_s
        rec["_bytes"] = extra if extra is not None else est.result_.data_bytes
        out[name] = rec
    return out


def _trace_csv_bytes(chunks):
    """Measured byte size of the packet-trace CSV representation of the
    collected flows (the full-data estimators' canonical input form)."""
    total = len("flow_id,timestamp_ns\n")
    cursor = 0
    flow_no = 0
    for ch in chunks:
        for i in range(ch.n_flows):
            gaps_ns = np.rint(np.concatenate(
                ([ch.leads[i]], ch.flow_gaps(i))) * 1e9).astype(np.int64)
            stamps = cursor + np.cumsum(gaps_ns)
            fid = f"f{flow_no}"
            total += sum(len(fid) + 1 + len(str(int(t))) + 1 for t in stamps)
            cursor = int(stamps[-1])
            flow_no += 1
    return total


def _run_estimator(name, cfg, X, chunks):
    if name == "mom":
        gaps = [ch.flow_gaps(i) for ch in chunks for i in range(ch.n_flows)]
        est = MomentEstimator().fit(gaps)
        return est, _trace_csv_bytes(chunks)
    if name == "mom-netflow":
        return NetflowMomentEstimator().fit(X), None
    if name == "mle":
        return NetflowMLE(family=cfg.family, pmf=cfg.pmf).fit(X), None
    if name == "mle-sampled":
        if cfg.q == 1.0:
            return NetflowMLE(family=cfg.family, pmf=cfg.pmf).fit(X), None
        return SampledNetflowMLE(family=cfg.family, pmf=cfg.pmf,
                                 q=cfg.q).fit(X), None
    if name == "lognormal-two-step":
        return TwoStepLogNormalMLE(q=cfg.q, pmf=cfg.pmf).fit(X), None
    raise ValueError(name)


def _replicate_star(args):
    return run_replicate(*args)


def run_study(cfg: StudyConfig, n_workers=1):
    """All (n, replicate) cells; returns aggregated rows (see
    :func:`aggregate_rows`)."""
    jobs = [(cfg, n, t) for n in cfg.n_grid for t in range(cfg.replicates)]
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_replicate_star, jobs, chunksize=1))
    else:
        results = [run_replicate(*job) for job in jobs]
    by_cell = {}
    for (c, n, t), res in zip(jobs, results):
        by_cell.setdefault(n, []).append(res)
    return aggregate_rows(cfg, by_cell)


def aggregate_rows(cfg, by_cell):
    """Mean and standard error per (estimator, n, parameter), plus mean wall
    time, mean data bytes, and the count of failed replicates."""
    rows = []
    for n, reps in sorted(by_cell.items()):
        for name in cfg.estimators:
            recs = [r[name] for r in reps if name in r]
            errors = sum(1 for r in recs if "_error" in r)
            good = [r for r in recs if "_error" not in r]
            if not good:
                rows.append({"estimator": name, "n": n, "param": "-",
                             "mean": math.nan, "se": math.nan,
                             "mean_time_s": math.nan, "mean_bytes": math.nan,
                             "failed": errors, "replicates": len(recs)})
                continue
            params = [k for k in good[0] if not k.startswith("_")]
            times = np.array([r["_time"] for r in good])
            nbytes = np.array([r["_bytes"] for r in good])
            for p in params:
                vals = np.array([r[p] for r in good], dtype=float)
                se = vals.std(ddof=1) / math.sqrt(len(vals)) if len(vals) > 1 \
                    else math.nan
                rows.append({"estimator": name, "n": n, "param": p,
                             "mean": float(vals.mean()), "se": float(se),
                             "mean_time_s": float(times.mean()),
                             "mean_bytes": float(nbytes.mean()),
                             "failed": errors, "replicates": len(recs)})
    return rows


def write_study_csv(path, rows):
    cols = ["estimator", "n", "param", "mean", "se", "mean_time_s",
            "mean_bytes", "failed", "replicates"]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(r[c]) for c in cols) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.9g}"
    return str(v)
