"""Command-line entry point: training runs, observation pipelines,
ablations, theory verification and artifact export.

Every command writes manifest.json into the output directory before doing
any work, then lists its finished output files there on completion.
"""
from __future__ import annotations

import argparse
import datetime
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import theory
from .effn import ActivationExpertKind
from .experiments import (SeedResult, resolve_splits, run_seeds, summarize,
                          write_json, write_metrics_csv, write_routing_csv)
from .experts import EXPERT_ORDER, GraphContext, PropagationKind
from .graphs import (generate_mixed_sbm, generate_sbm, load_dataset,
                     partition_subspaces, save_dataset)
from .model import TrainConfig, apply_variant
from .rng import RngState

_PROPS = {"gcn": PropagationKind.GCN_LIKE, "sage": PropagationKind.SAGE_LIKE,
          "gat": PropagationKind.GAT_LIKE}


def parse_seeds(spec: str) -> list[int]:
    """'0..9' (inclusive range), '0,3,5', or a single integer."""
    if ".." in spec:
        lo, hi = spec.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(tok) for tok in spec.split(",")]


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--prop", choices=sorted(_PROPS), default="gcn")
    p.add_argument("--blocks", type=int, default=2)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--lambda", dest="entropy_coeff", type=float, default=0.01)
    p.add_argument("--seeds", default="0")
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--patience", type=int, default=100)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--temperature", type=float, default=1.0,
                   help="routing softmax temperature (delta-tau ablation)")
    p.add_argument("--topk", type=int, default=None,
                   help="restrict the routing comparison to one k")


def _config_from_args(args) -> TrainConfig:
    return TrainConfig(
        lr=args.lr, weight_decay=args.weight_decay, dropout=args.dropout,
        entropy_coeff=args.entropy_coeff, blocks=args.blocks,
        hidden=args.hidden, max_epochs=args.epochs, patience=args.patience,
        prop=_PROPS[args.prop], routing_temperature=args.temperature,
    )


def _write_manifest(out: Path, command: str, args, g=None) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": {k: v for k, v in sorted(vars(args).items())
                   if k not in ("func",)},
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "outputs": [],
    }
    if g is not None:
        manifest["dataset"] = {"name": g.name, "num_nodes": g.num_nodes,
                               "num_edges": g.num_edges}
    path = out / "manifest.json"
    write_json(path, manifest)
    return path


def _finish_manifest(path: Path, outputs: list[str]) -> None:
    manifest = json.loads(path.read_text())
    manifest["outputs"] = sorted(outputs)
    write_json(path, manifest)


def _emit_run(out: Path, results: list[SeedResult], summary: dict) -> list[str]:
    outputs = ["results.json", "routing.csv"]
    write_json(out / "results.json", summary)
    write_routing_csv(out / "routing.csv", results)
    for r in results:
        name = f"metrics_seed{r.seed}.csv"
        write_metrics_csv(out / name, r.history)
        outputs.append(name)
    return outputs


def cmd_train(args) -> int:
    out = Path(args.out)
    g = load_dataset(args.data)
    manifest = _write_manifest(out, "train", args, g)
    cfg = _config_from_args(args)
    seeds = parse_seeds(args.seeds)
    results = run_seeds(g, cfg, seeds, data_dir=args.data)
    outputs = _emit_run(out, results, summarize(results, g.name, "full"))
    _finish_manifest(manifest, outputs)
    return 0


def cmd_ablate(args) -> int:
    out = Path(args.out)
    g = load_dataset(args.data)
    manifest = _write_manifest(out, "ablate", args, g)
    cfg = _config_from_args(args)
    seeds = parse_seeds(args.seeds)
    variants = ([args.variant] if args.variant != "all" else
                ["full", "no-sr", "no-effn", "no-hr", "no-ares",
                 "no-route-loss", "delta-tau"])
    ctx = GraphContext.build(g)
    summaries = []
    outputs = []
    for variant in variants:
        vcfg = apply_variant(cfg, variant)
        results = run_seeds(g, vcfg, seeds, data_dir=args.data, ctx=ctx)
        summary = summarize(results, g.name, variant)
        summaries.append(summary)
        name = f"routing_{variant}.csv"
        write_routing_csv(out / name, results)
        outputs.append(name)
        for r in results:
            mname = f"metrics_{variant}_seed{r.seed}.csv"
            write_metrics_csv(out / mname, r.history)
            outputs.append(mname)
    write_json(out / "results.json", {"variants": summaries})
    outputs.append("results.json")
    _finish_manifest(manifest, outputs)
    return 0


def cmd_compare_routing(args) -> int:
    out = Path(args.out)
    g = load_dataset(args.data)
    manifest = _write_manifest(out, "compare-routing", args, g)
    cfg = _config_from_args(args)
    seeds = parse_seeds(args.seeds)
    ctx = GraphContext.build(g)
    ks = [args.topk] if args.topk else [1, 2, 3]
    variants = [("entropy-soft", cfg),
                ("mean", replace(cfg, routing_mode="uniform"))]
    variants += [(f"top-{k}", replace(cfg, routing_mode="topk", topk=k,
                                      entropy_coeff=0.0)) for k in ks]
    variants.append(("dot-att", replace(cfg, routing_mode="dot-att",
                                        entropy_coeff=0.0)))
    summaries = []
    outputs = []
    for label, vcfg in variants:
        results = run_seeds(g, vcfg, seeds, data_dir=args.data, ctx=ctx)
        summaries.append(summarize(results, g.name, label))
        name = f"routing_{label}.csv"
        write_routing_csv(out / name, results)
        outputs.append(name)
    write_json(out / "results.json", {"variants": summaries})
    lines = ["variant,mean_test_acc,std_test_acc"]
    for s in summaries:
        lines.append(f"{s['variant']},{s['mean_test_acc']!r},{s['std_test_acc']!r}")
    (out / "comparison.csv").write_text("\n".join(lines) + "\n")
    outputs += ["results.json", "comparison.csv"]
    _finish_manifest(manifest, outputs)
    return 0


def cmd_observe_subspaces(args) -> int:
    out = Path(args.out)
    g = load_dataset(args.data)
    manifest = _write_manifest(out, "observe-subspaces", args, g)
    cfg = _config_from_args(args)
    seeds = parse_seeds(args.seeds)
    ctx = GraphContext.build(g)
    profile = partition_subspaces(g, args.homophily_bins, args.degree_bins)

    # per-scheme, per-node correctness on test nodes, pooled over seeds
    hits = {k.value: np.zeros(g.num_nodes) for k in EXPERT_ORDER}
    counts = np.zeros(g.num_nodes)
    for e, kind in enumerate(EXPERT_ORDER):
        scfg = replace(cfg, routing_mode="forced", forced_expert=e,
                       entropy_coeff=0.0)
        for seed in seeds:
            res = run_seeds(g, scfg, [seed], data_dir=args.data, ctx=ctx)[0]
            test_idx = resolve_splits(g, seed, args.data).test
            hits[kind.value][test_idx] += res.test_correct
            if e == 0:
                counts[test_idx] += 1

    lines = ["h_bin,d_bin,h_lo,h_hi,node_count,test_count,"
             "acc_PP,acc_PT,acc_TP,acc_TT,winner"]
    for hb in range(args.homophily_bins):
        for db in range(args.degree_bins):
            members = np.flatnonzero((profile.h_bin == hb) & (profile.d_bin == db))
            tested = members[counts[members] > 0]
            accs = []
            for kind in EXPERT_ORDER:
                if tested.shape[0]:
                    accs.append(hits[kind.value][tested].sum()
                                / counts[tested].sum())
                else:
                    accs.append(float("nan"))
            winner = (EXPERT_ORDER[int(np.argmax(accs))].value
                      if tested.shape[0] else "")
            lines.append(",".join([
                str(hb), str(db),
                repr(hb / args.homophily_bins), repr((hb + 1) / args.homophily_bins),
                str(members.shape[0]), str(tested.shape[0]),
                *[repr(float(a)) for a in accs], winner]))
    (out / "subspaces.csv").write_text("\n".join(lines) + "\n")
    _finish_manifest(manifest, ["subspaces.csv"])
    return 0


def cmd_verify_theory(args) -> int:
    out = Path(args.out)
    manifest = _write_manifest(out, "verify-theory", args)
    report = theory.run_suite(instances=args.instances, seed=args.seed,
                              resolution=args.grid_resolution)
    write_json(out / "theory_report.json", report)
    _finish_manifest(manifest, ["theory_report.json"])
    if not report["ok"]:
        print("theory verification FAILED", file=sys.stderr)
        return 1
    print(f"theory verification ok: {report['closed_form']['passes']}"
          f"/{report['closed_form']['instances']} closed-form matches, "
          f"0 sharpening failures, 0 corollary violations")
    return 0


def _read_routing_csv(run_dir: Path) -> dict:
    """mean weight per (block, expert), averaged over seeds."""
    sums: dict[tuple[int, int], list] = {}
    text = (run_dir / "routing.csv").read_text().strip().splitlines()[1:]
    for line in text:
        seed, block, expert, weight = line.split(",")
        sums.setdefault((int(block), int(expert)), []).append(float(weight))
    return {key: sum(v) / len(v) for key, v in sums.items()}


def cmd_export_routing(args) -> int:
    out = Path(args.out)
    manifest = _write_manifest(out, "export-routing", args)
    base = _read_routing_csv(Path(args.run_base))
    reg = _read_routing_csv(Path(args.run_reg))
    lines = ["run,block,expert,mean_weight"]
    for label, table in (("base", base), ("regularized", reg)):
        for (block, expert), w in sorted(table.items()):
            lines.append(f"{label},{block},{expert},{w!r}")
    (out / "routing_compare.csv").write_text("\n".join(lines) + "\n")
    _finish_manifest(manifest, ["routing_compare.csv"])
    return 0


def cmd_make_sbm(args) -> int:
    out = Path(args.out)
    manifest = _write_manifest(out, "make-sbm", args)
    rng = RngState(args.seed)
    if args.mixed:
        g = generate_mixed_sbm(args.nodes, args.classes, args.p_in, args.p_out,
                               args.dim, args.noise, rng)
    else:
        g = generate_sbm(args.nodes, args.classes, args.p_in, args.p_out,
                         args.dim, args.noise, rng)
    save_dataset(g, out)
    _finish_manifest(manifest, ["meta.json", "edges.tsv", "features.bin",
                                "labels.tsv"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphmoe")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train over a seed list")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="run named ablation variants")
    _add_train_flags(p)
    p.add_argument("--variant", default="all",
                   choices=["all", "full", "no-sr", "no-effn", "no-hr",
                            "no-ares", "no-route-loss", "delta-tau"])
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("compare-routing",
                       help="soft vs mean vs hard top-k vs dot-attention routing")
    _add_train_flags(p)
    p.set_defaults(func=cmd_compare_routing)

    p = sub.add_parser("observe-subspaces",
                       help="per-subspace best encoding scheme")
    _add_train_flags(p)
    p.add_argument("--homophily-bins", type=int, default=5)
    p.add_argument("--degree-bins", type=int, default=3)
    p.set_defaults(func=cmd_observe_subspaces)

    p = sub.add_parser("verify-theory", help="run the routing-theory oracle")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid-resolution", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_verify_theory)

    p = sub.add_parser("export-routing",
                       help="side-by-side routing weights of two runs")
    p.add_argument("--run-base", required=True, help="lambda = 0 run directory")
    p.add_argument("--run-reg", required=True, help="lambda > 0 run directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_routing)

    p = sub.add_parser("make-sbm", help="write a synthetic dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--nodes", type=int, default=400)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--p-in", type=float, default=0.05)
    p.add_argument("--p-out", type=float, default=0.005)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mixed", action="store_true",
                   help="half assortative, half disassortative communities")
    p.set_defaults(func=cmd_make_sbm)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
