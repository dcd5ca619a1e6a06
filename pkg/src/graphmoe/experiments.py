"""Multi-seed experiment orchestration shared by the CLI commands."""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .experts import GraphContext
from .graphs import GraphDataset, SplitSpec, load_splits, make_splits
from .model import GraphMoE, TrainConfig, TrainHistory, accuracy, train
from .rng import RngState

ENTROPY_FLOOR = 1e-12


@dataclass
class SeedResult:
    seed: int
    test_acc: float
    val_acc: float
    best_epoch: int
    block_entropy: list  # mean routing entropy per block, eval mode
    block_weights: list  # blocks x 4 mean routing weights, eval mode
    history: TrainHistory
    test_correct: np.ndarray  # per-node correctness on the test mask


def routing_summary(records) -> tuple[list, list]:
    entropies, weights = [], []
    for rec in records:
        pi = rec.weights
        safe = np.maximum(pi, ENTROPY_FLOOR)
        entropies.append(float(-(pi * np.log(safe)).sum(axis=1).mean()))
        weights.append(pi.mean(axis=0).tolist())
    return entropies, weights


def resolve_splits(g: GraphDataset, seed: int, data_dir=None) -> SplitSpec:
    if data_dir is not None:
        stored = load_splits(data_dir, seed)
        if stored is not None:
            return stored
    return make_splits(g, seed=seed)


def run_seed(g: GraphDataset, ctx: GraphContext, cfg: TrainConfig, seed: int,
             data_dir=None) -> SeedResult:
    cfg_s = replace(cfg, seed=seed)
    splits = resolve_splits(g, seed, data_dir)
    model = GraphMoE(cfg_s, g.num_features, g.num_classes)
    model, history = train(model, ctx, splits, cfg_s)

    logits, records, _, _ = model.forward(ctx, RngState(0), training=False)
    entropies, weights = routing_summary(records)
    pred = logits.value.argmax(axis=1)
    return SeedResult(
        seed=seed,
        test_acc=accuracy(logits.value, g.labels, splits.test),
        val_acc=accuracy(logits.value, g.labels, splits.val),
        best_epoch=history.best_epoch,
        block_entropy=entropies,
        block_weights=weights,
        history=history,
        test_correct=(pred[splits.test] == g.labels[splits.test]),
    )


def run_seeds(g: GraphDataset, cfg: TrainConfig, seeds, data_dir=None,
              ctx: GraphContext | None = None) -> list[SeedResult]:
    ctx = ctx or GraphContext.build(g)
    return [run_seed(g, ctx, cfg, s, data_dir) for s in seeds]


def summarize(results: list[SeedResult], dataset: str, variant: str) -> dict:
    accs = np.array([r.test_acc for r in results])
    return {
        "dataset": dataset,
        "variant": variant,
        "rows": [
            {"seed": r.seed, "test_acc": r.test_acc, "val_acc": r.val_acc,
             "best_epoch": r.best_epoch, "mean_routing_entropy": r.block_entropy}
            for r in results
        ],
        "mean_test_acc": float(accs.mean()),
        # population standard deviation over the seed list
        "std_test_acc": float(accs.std()),
    }


def write_metrics_csv(path: Path, history: TrainHistory) -> None:
    lines = ["epoch,task_loss,route_loss,total_loss,train_acc,val_acc,hr_selection"]
    for i in range(len(history)):
        lines.append(",".join([
            str(i + 1), repr(history.task_loss[i]), repr(history.route_loss[i]),
            repr(history.total_loss[i]), repr(history.train_acc[i]),
            repr(history.val_acc[i]), str(history.hr_selection[i]),
        ]))
    path.write_text("\n".join(lines) + "\n")


def write_routing_csv(path: Path, results: list[SeedResult]) -> None:
    lines = ["seed,block,expert,mean_weight"]
    for r in results:
        for b, row in enumerate(r.block_weights):
            for e, w in enumerate(row):
                lines.append(f"{r.seed},{b},{e},{w!r}")
    path.write_text("\n".join(lines) + "\n")


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
