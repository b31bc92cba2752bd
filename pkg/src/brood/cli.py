"""Command-line entry points: synth, infer, oracle, eval, tables.

Every subcommand echoes its resolved configuration next to its outputs and
is reproducible under a fixed seed (timing fields aside). Exit codes: 0 on
success, 2 for validation problems, 3 for runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from . import synth as synth_mod
from .bge import BgeScorer, DataSet
from .graphs import (
    Dag,
    SearchSpace,
    dag_from_json,
    graph_to_json,
    load_space,
)
from .metrics import edge_probs, evaluate
from .oracle import ExactPosterior, exact_mixture_kernel, verify_bounds
from .sampler import BroodConfig, default_steps, run_chain
from .tables import build_tables, node_tables_to_json


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _echo_config(outdir: str, name: str, args: argparse.Namespace) -> None:
    payload = {k: v for k, v in vars(args).items() if k != "func"}
    _write_json(os.path.join(outdir, f"{name}-config.json"), payload)


# flags left at None by argparse so a --config file can supply them; anything
# still unset afterwards falls back to these
FALLBACKS = {
    "synth": {"p": 20, "n": 200, "graph": "er", "error": "gaussian",
              "expected_degree": 4.0, "seed": 0},
    "infer": {"init": "pc", "ell": 0.1, "cstar": 1.0, "thin": 2500,
              "chains": 1, "seed": 0},
    "oracle": {"sweep": 0, "ell": 0.1, "cstar": 1.0, "seed": 0},
    "eval": {"mode": "directed"},
    "tables": {},
}


def _merge_config(args: argparse.Namespace) -> argparse.Namespace:
    path = getattr(args, "config", None)
    if path:
        if path.endswith(".toml"):
            try:
                import tomllib
            except ModuleNotFoundError as exc:
                raise ValueError("TOML configs need Python 3.11+; use JSON instead") from exc
            with open(path, "rb") as fh:
                conf = tomllib.load(fh)
        else:
            with open(path) as fh:
                conf = json.load(fh)
        for key, value in conf.items():
            attr = key.replace("-", "_")
            if getattr(args, attr, None) is None and hasattr(args, attr):
                setattr(args, attr, value)
    for attr, value in FALLBACKS.get(args.command, {}).items():
        if getattr(args, attr, None) is None:
            setattr(args, attr, value)
    return args


def cmd_synth(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    model = {
        "er": synth_mod.ErModel(expected_degree=args.expected_degree),
        "sbm": synth_mod.SbmModel(),
        "hsbm": synth_mod.HsbmModel(),
    }[args.graph]
    spec = synth_mod.SemSpec(
        p=args.p,
        n=args.n,
        graph_model=model,
        error_model=args.error,
        seed=args.seed,
        mixture_scale_is_sd=args.mixture_sd,
    )
    rng = np.random.default_rng(spec.seed)
    g = synth_mod.sample_graph(spec, rng)
    truth = synth_mod.sample_sem(g, spec, rng)
    raw = truth.data.x + truth.data.means
    np.savetxt(os.path.join(args.out, "data.csv"), raw, delimiter=",", fmt="%.12g")
    _write_json(os.path.join(args.out, "truth.json"), graph_to_json(truth.dag))
    with open(os.path.join(args.out, "weights.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["src", "dst", "weight"])
        for e in sorted(truth.weights):
            writer.writerow([e.src, e.dst, f"{truth.weights[e]:.12g}"])
    _write_json(os.path.join(args.out, "spec-echo.json"), {
        "p": spec.p, "n": spec.n, "graph": args.graph, "error": spec.error_model,
        "seed": spec.seed, "weight_low": spec.weight_low, "weight_high": spec.weight_high,
    })
    _echo_config(args.out, "synth", args)
    return 0


def _initial_space(args, d: DataSet, cap: int) -> SearchSpace:
    if args.init == "pc":
        return synth_mod.pc_skeleton(d, cap=cap)
    if args.init.startswith("file:"):
        return load_space(args.init[len("file:"):], cap=None)
    raise ValueError("--init must be 'pc' or 'file:<path>'")


def cmd_infer(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    d = DataSet.from_csv(args.data, header=args.header)
    init_cap = synth_mod.plus_one_cap(d.p)
    h0 = _initial_space(args, d, init_cap)
    cap = args.cap if args.cap is not None else init_cap + 1
    max_indeg = max((m.bit_count() for m in h0.allowed), default=0)
    if cap < max_indeg:
        raise ValueError(
            f"cap {cap} is below the initial space's max in-degree {max_indeg}; "
            "raise --cap or supply a sparser space"
        )
    cfg = BroodConfig(
        ell=args.ell,
        c_star=args.cstar,
        cap=cap,
        steps=args.steps,
        warmup=args.warmup,
        thin_target=args.thin,
        seed=args.seed,
        plus_one=args.plus_one,
    )
    streams = np.random.SeedSequence(args.seed).spawn(args.chains)
    summaries = []
    t0 = time.perf_counter()
    with open(os.path.join(args.out, "trace.jsonl"), "w") as fh:
        for chain_id, stream in enumerate(streams):
            scorer = BgeScorer(d)
            trace = run_chain(cfg, scorer, h0, rng=np.random.default_rng(stream))
            for s in trace.samples:
                fh.write(json.dumps({
                    "chain": chain_id,
                    "step": s.step,
                    "space": graph_to_json(s.space),
                    "order": list(s.order.perm),
                    "dag": graph_to_json(s.dag) if s.dag is not None else None,
                    "kernel": s.kernel,
                    "accepted": bool(s.accepted),
                }, sort_keys=True) + "\n")
            summaries.append(trace.summary)
    total_runtime = time.perf_counter() - t0
    _write_json(os.path.join(args.out, "summary.json"), {
        "chains": summaries,
        "config": {
            "ell": cfg.ell, "c_star": cfg.c_star, "cap": cap,
            "steps": cfg.steps if cfg.steps is not None else default_steps(d.p),
            "warmup": cfg.warmup, "thin_target": cfg.thin_target,
            "seed": cfg.seed, "plus_one": cfg.plus_one, "init": args.init,
        },
        "runtime_seconds": total_runtime,
        "initial_edges": h0.n_edges(),
    })
    _echo_config(args.out, "infer", args)
    return 0


def cmd_oracle(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    d = DataSet.from_csv(args.data, header=args.header)
    if d.p > 4:
        raise ValueError("oracle enumeration requires p <= 4")
    scorer = BgeScorer(d)
    ep = ExactPosterior.from_scorer(scorer, d.p)
    h = load_space(args.space)
    report = verify_bounds(ep, h)
    _write_json(os.path.join(args.out, "oracle.json"), report.to_dict())
    if args.kernel:
        if d.p > 3:
            raise ValueError("transition-matrix mode requires p <= 3")
        cfg = BroodConfig(ell=args.ell, c_star=args.cstar, cap=args.cap)
        kern = exact_mixture_kernel(cfg, scorer, d.p)
        pi = kern.stationary()
        _write_json(os.path.join(args.out, "kernel.json"), {
            "states": len(pi),
            "row_sum_max_err": float(np.abs(kern.matrix.sum(axis=1) - 1).max()),
            "stationary_max": float(pi.max()),
        })
    if args.sweep:
        rng = np.random.default_rng(args.seed)
        rows = []
        for _ in range(args.sweep):
            n_edges = int(rng.integers(0, d.p * (d.p - 1) + 1))
            pairs = [(i, j) for i in range(d.p) for j in range(d.p) if i != j]
            chosen = [pairs[k] for k in rng.choice(len(pairs), size=n_edges, replace=False)]
            hs = SearchSpace.from_edges(d.p, chosen)
            rep = verify_bounds(ep, hs)
            rows.append(rep)
        with open(os.path.join(args.out, "sweep.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epsilon", "c", "tv", "lower", "upper"])
            for rep in rows:
                writer.writerow([rep.epsilon, rep.c_const, rep.tv, rep.lower, rep.upper])
    _echo_config(args.out, "oracle", args)
    return 0


def cmd_eval(args) -> int:
    with open(args.truth) as fh:
        truth = dag_from_json(json.load(fh))
    dags: list[Dag] = []
    runtime = 0.0
    summary_path = os.path.join(os.path.dirname(args.trace), "summary.json")
    if os.path.exists(summary_path):
        with open(summary_path) as fh:
            runtime = float(json.load(fh).get("runtime_seconds", 0.0))
    with open(args.trace) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("dag") is not None:
                dags.append(dag_from_json(rec["dag"]))
    if not dags:
        raise ValueError("trace holds no DAG samples; rerun inference with DAG sampling")
    probs = edge_probs(dags, mode=args.mode)
    report = evaluate(probs, truth, runtime_seconds=runtime)
    row = {
        "trace": args.trace,
        "mode": args.mode,
        "p": truth.p,
        "samples": len(dags),
        **report.to_dict(),
    }
    write_header = not os.path.exists(args.out)
    with open(args.out, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(row))
        if write_header:
            writer.writeheader()
        writer.writerow(row)
    _write_json(os.path.splitext(args.out)[0] + "-eval-config.json",
                {k: v for k, v in vars(args).items() if k != "func"})
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def cmd_tables(args) -> int:
    d = DataSet.from_csv(args.data, header=args.header)
    h = load_space(args.space)
    scorer = BgeScorer(d)
    tset = build_tables(h, scorer, cap=args.cap)
    payload = [node_tables_to_json(nt) for nt in tset.nodes]
    _write_json(args.out, payload)
    _write_json(os.path.splitext(args.out)[0] + "-config.json",
                {k: v for k, v in vars(args).items() if k != "func"})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="brood", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("synth", help="generate SEM data with a known graph")
    ps.add_argument("--out", required=True)
    ps.add_argument("--p", type=int)
    ps.add_argument("--n", type=int)
    ps.add_argument("--graph", choices=["er", "sbm", "hsbm"])
    ps.add_argument("--error", choices=["gaussian", "mixture"])
    ps.add_argument("--expected-degree", type=float)
    ps.add_argument("--mixture-sd", action="store_true",
                    help="read the wide mixture component scale as sd instead of variance")
    ps.add_argument("--seed", type=int)
    ps.add_argument("--config")
    ps.set_defaults(func=cmd_synth)

    pi = sub.add_parser("infer", help="run the sampler on a data set")
    pi.add_argument("--data", required=True)
    pi.add_argument("--out", required=True)
    pi.add_argument("--init", help="'pc' or 'file:<space.json>'")
    pi.add_argument("--ell", type=float)
    pi.add_argument("--cstar", type=float)
    pi.add_argument("--cap", type=int)
    pi.add_argument("--steps", type=int)
    pi.add_argument("--warmup", type=int)
    pi.add_argument("--thin", type=int)
    pi.add_argument("--plus-one", action="store_true")
    pi.add_argument("--chains", type=int)
    pi.add_argument("--seed", type=int)
    pi.add_argument("--header", action="store_true")
    pi.add_argument("--config")
    pi.set_defaults(func=cmd_infer)

    po = sub.add_parser("oracle", help="error-bound report against enumeration")
    po.add_argument("--data", required=True)
    po.add_argument("--space", required=True)
    po.add_argument("--out", required=True)
    po.add_argument("--kernel", action="store_true", help="also build the exact mixture kernel")
    po.add_argument("--sweep", type=int)
    po.add_argument("--ell", type=float)
    po.add_argument("--cstar", type=float)
    po.add_argument("--cap", type=int)
    po.add_argument("--seed", type=int)
    po.add_argument("--header", action="store_true")
    po.set_defaults(func=cmd_oracle)

    pe = sub.add_parser("eval", help="score a trace against the true graph")
    pe.add_argument("--trace", required=True)
    pe.add_argument("--truth", required=True)
    pe.add_argument("--out", required=True)
    pe.add_argument("--mode", choices=["directed", "skeleton"])
    pe.set_defaults(func=cmd_eval)

    pt = sub.add_parser("tables", help="dump per-node score tables as JSON")
    pt.add_argument("--data", required=True)
    pt.add_argument("--space", required=True)
    pt.add_argument("--out", required=True)
    pt.add_argument("--cap", type=int)
    pt.add_argument("--header", action="store_true")
    pt.set_defaults(func=cmd_tables)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _merge_config(args)
        return args.func(args)
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
