"""Command-line front end.

Subcommands wire the library into batch experiments: ``simulate`` writes a
packet trace or NetFlow CSV, ``thin`` Bernoulli-samples a trace, ``aggregate``
turns traces into NetFlow summaries, ``fit`` runs an estimator and emits a
FitResult JSON, ``bound`` evaluates the minimum-session-size bound,
``survival`` tabulates empirical/model survival curves, and ``study`` runs a
replicate study grid.  All randomness flows from ``--seed``; identical
command lines give byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import ingest, study
from ._validation import check_q
from .efficiency import EfficiencyRequest, efficiency_bound, summarize_information
from .estimators import (MomentEstimator, NetflowMLE, NetflowMomentEstimator,
                         SampledNetflowMLE, TwoStepLogNormalMLE)
from .likelihood import LikelihoodConfig
from .models import packet_model
from .simulate import (Flow, derive_rng, simulate_session, thin_flow,
                       thin_flow_fast)
from .sizes import FlowSizePmf


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def _model_from_arg(arg):
    """--model accepts a JSON file path or an inline JSON object."""
    if arg is None:
        return None
    text = arg.strip()
    cfg = json.loads(text) if text.startswith("{") else _load_json(arg)
    return packet_model(cfg["family"], cfg["params"])


def _pmf_from_arg(arg):
    if arg is None:
        return None
    text = arg.strip()
    cfg = json.loads(text) if text.startswith("{") else _load_json(arg)
    return FlowSizePmf.from_config(cfg)


def _cmd_simulate(args):
    if args.config:
        cfg = _load_json(args.config)
        model = packet_model(cfg["packet_model"]["family"],
                             cfg["packet_model"]["params"])
        pmf = FlowSizePmf.from_config(cfg["pmf"])
        n = int(cfg.get("n_flows", args.n or 0))
        flow_rate = float(cfg.get("flow_rate", args.flow_rate))
        if "seed" in cfg:
            args.seed = int(cfg["seed"])
    else:
        if args.model is None or args.pmf is None or args.n is None:
            raise SystemExit(2)
        model = _model_from_arg(args.model)
        pmf = _pmf_from_arg(args.pmf)
        n, flow_rate = args.n, args.flow_rate
    if n < 1:
        raise SystemExit(2)
    rng = derive_rng(args.seed, 0)
    print(f"seed={args.seed}", file=sys.stderr)
    sample = simulate_session(model, pmf, n, rng, flow_rate=flow_rate)
    if args.trace_out:
        ingest.write_trace(args.trace_out, sample.flows())
    if args.netflow_out:
        ingest.write_netflow_csv(args.netflow_out, sample.netflows())
    if not (args.trace_out or args.netflow_out):
        sys.stdout.write(ingest.netflow_csv_text(sample.netflows()))
    return 0


def _cmd_thin(args):
    q = check_q(args.q)
    flows, stats = ingest.read_trace(args.input, ingest.IngestConfig(min_flow_size=1))
    rng = derive_rng(args.seed, 1)
    print(f"seed={args.seed} flows={stats['flows_kept']}", file=sys.stderr)
    thinner = thin_flow_fast if args.method == "fast" else thin_flow
    out_flows = []
    for f in flows:
        arrivals = np.concatenate(([0.0], np.cumsum(f["gaps"])))
        thinned = thinner(Flow(arrivals), q, rng)
        if thinned.size == 0:
            continue
        # the thinned flow starts at its first retained packet
        start = f["start_ns"] + int(round(thinned.arrivals[0] * 1e9))
        out_flows.append({"flow_id": f["flow_id"], "start_ns": start,
                          "gaps": np.diff(thinned.arrivals),
                          "size": thinned.size})
    ingest.write_trace(args.out, out_flows)
    return 0


def _cmd_aggregate(args):
    cfg = ingest.IngestConfig(min_flow_size=args.min_flow_size,
                              zero_gap_replacement=args.zero_gap)
    flows, stats = ingest.read_trace(args.input, cfg)
    X = ingest.flows_to_netflows(flows)
    ingest.write_netflow_csv(args.out, X)
    print(json.dumps(stats), file=sys.stderr)
    return 0


def _input_netflows(path, min_flow_size=2, zero_gap=1e-7):
    """Accept either a NetFlow CSV or a trace CSV (aggregated on the fly)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if header[:2] == ["flow_id", "timestamp_ns"]:
        flows, _ = ingest.read_trace(path, ingest.IngestConfig(
            min_flow_size=min_flow_size, zero_gap_replacement=zero_gap))
        return ingest.flows_to_netflows(flows), "trace"
    return ingest.read_netflow_csv(path), "netflow"


def _cmd_fit(args):
    q = check_q(args.q)
    pmf = _pmf_from_arg(args.pmf)
    X, kind = _input_netflows(args.input)
    family = args.family
    if args.estimator == "mom":
        if kind != "trace":
            raise SystemExit("estimator 'mom' needs full packet data; supply "
                             "a trace CSV input")
        flows, _ = ingest.read_trace(args.input)
        est = MomentEstimator().fit([f["gaps"] for f in flows])
    else:
        if args.estimator == "mle":
            est = NetflowMLE(family=family, pmf=pmf)
        elif args.estimator == "mle-sampled":
            if q >= 1.0:
                est = NetflowMLE(family=family, pmf=pmf)
            else:
                X = X[X[:, 2] >= 2]
                est = SampledNetflowMLE(family=family, pmf=pmf, q=q)
        elif args.estimator == "mom-netflow":
            est = NetflowMomentEstimator()
        else:
            est = TwoStepLogNormalMLE(q=q, pmf=pmf, mode=args.two_step_mode)
        est.fit(X)
    result = est.result_.to_dict()
    result["input"] = {"path": args.input, "kind": kind,
                       "file_bytes": os.path.getsize(args.input)}
    text = json.dumps(result, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    if args.trace_lik:
        _dump_loglik_trace(args, X, est, pmf, q)
    return 0


def _dump_loglik_trace(args, X, est, pmf, q):
    from .likelihood import session_loglik
    model = getattr(est, "model_", None)
    if model is None:
        return
    cfg = LikelihoodConfig(pmf, q=q) if (pmf is not None and q < 1) else None
    X_used = X[X[:, 2] >= 2]
    _, terms = session_loglik(X_used, model, pmf=pmf, cfg=cfg, return_terms=True)
    with open(args.trace_lik, "w") as fh:
        fh.write("flow_index,loglik\n")
        for i, t in enumerate(terms):
            fh.write(f"{i},{t:.9e}\n")


def _cmd_bound(args):
    from .efficiency import joint_bound_condition
    model = _model_from_arg(args.model)
    pmf = _pmf_from_arg(args.pmf)
    req = EfficiencyRequest(epsilon=args.epsilon, eta=args.eta,
                            k_flows=args.k_flows, mc_samples=args.mc_samples,
                            seed=args.seed)
    cfg = LikelihoodConfig(pmf, q=check_q(args.q))
    info = summarize_information(model, cfg, req)
    n_lo, n_hi, _ = efficiency_bound(model, cfg, req, info=info)
    out = {"n_min": int(np.ceil(n_lo)), "n_lower": n_lo,
           "n_upper": None if not np.isfinite(n_hi) else n_hi,
           "q": args.q, "epsilon": args.epsilon, "eta": args.eta,
           "joint_bound_condition": joint_bound_condition(req, info, model.dim),
           "info": info.to_dict()}
    print(json.dumps(out, indent=2))
    return 0


def _cmd_survival(args):
    flows, _ = ingest.read_trace(args.input)
    gaps = np.concatenate([f["gaps"] for f in flows])
    model = _model_from_arg(args.model) if args.model else None
    out = ingest.survival_curve(gaps, n_points=args.points, model=model)
    ingest.write_survival_csv(args.out, *out)
    return 0


def _cmd_study(args):
    cfg = study.StudyConfig.from_json(_load_json(args.config))
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    rows = study.run_study(cfg, n_workers=args.threads)
    study.write_study_csv(args.out, rows)
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="flowlik",
        description="Packet-level inference from (thinned) NetFlow summaries")
    parser.add_argument("--seed", type=int, default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic session")
    p.add_argument("--config", help="session config JSON "
                   "(packet_model, pmf, n_flows, flow_rate, seed)")
    p.add_argument("--model", help="packet model JSON (file or inline)")
    p.add_argument("--pmf", help="flow-size pmf JSON (file or inline)")
    p.add_argument("--n", type=int, help="number of flows")
    p.add_argument("--flow-rate", type=float, default=1.0)
    p.add_argument("--trace-out")
    p.add_argument("--netflow-out")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("thin", help="Bernoulli-thin a packet trace")
    p.add_argument("--input", required=True)
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--method", choices=["bernoulli", "fast"], default="fast")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_thin)

    p = sub.add_parser("aggregate", help="trace CSV -> NetFlow CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-flow-size", type=int, default=2)
    p.add_argument("--zero-gap", type=float, default=1e-7)
    p.set_defaults(func=_cmd_aggregate)

    p = sub.add_parser("fit", help="fit an estimator; emits FitResult JSON")
    p.add_argument("--estimator", required=True,
                   choices=["mle", "mle-sampled", "mom", "mom-netflow",
                            "lognormal-two-step"])
    p.add_argument("--family", default="gamma")
    p.add_argument("--model", help="unused except for survival overlays")
    p.add_argument("--pmf")
    p.add_argument("--q", type=float, default=1.0)
    p.add_argument("--two-step-mode", choices=["session", "per-flow"],
                   default="session")
    p.add_argument("--input", required=True)
    p.add_argument("--out")
    p.add_argument("--trace-lik", help="write per-flow log-likelihood terms CSV")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("bound", help="minimum-session-size efficiency bound")
    p.add_argument("--model", required=True)
    p.add_argument("--pmf", required=True)
    p.add_argument("--q", type=float, default=1.0)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--eta", type=float, default=0.1)
    p.add_argument("--k-flows", type=int, default=1)
    p.add_argument("--mc-samples", type=int, default=200_000)
    p.set_defaults(func=_cmd_bound)

    p = sub.add_parser("survival", help="empirical/model survival curves CSV")
    p.add_argument("--input", required=True, help="trace CSV")
    p.add_argument("--model")
    p.add_argument("--points", type=int, default=200)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_survival)

    p = sub.add_parser("study", help="replicate study grid -> CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_study)

    args = parser.parse_args(argv)
    # propagate the global seed to subcommands that use it
    if not hasattr(args, "seed"):
        args.seed = 0
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
