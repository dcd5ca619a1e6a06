"""Full model assembly, total loss, training loop and evaluation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .effn import ActivationExpertKind, effn_forward
from .experts import EXPERT_ORDER, ExpertParams, GraphContext, PropagationKind, stage_counts
from .graphs import GraphDataset, SplitSpec
from .optim import AdamW, Parameter
from .rng import RngState
from .routing import (NUM_EXPERTS, RoutingRecord, moe_block_forward,
                      route_dot_attention, route_forced, route_soft,
                      route_topk, route_uniform, routing_entropy)

ROUTING_MODES = ("soft", "uniform", "topk", "dot-att", "forced")


@dataclass
class TrainConfig:
    lr: float = 0.01
    weight_decay: float = 5e-4
    dropout: float = 0.2
    entropy_coeff: float = 0.01  # lambda in the total loss
    blocks: int = 2
    hidden: int = 64
    max_epochs: int = 500
    patience: int = 100
    seed: int = 0
    prop: PropagationKind = PropagationKind.GCN_LIKE
    routing_mode: str = "soft"
    topk: int = 1
    forced_expert: int = 0  # index into EXPERT_ORDER when routing_mode="forced"
    routing_temperature: float = 1.0  # fixed-temperature ablation knob
    gumbel_temperature: float = 1.0
    use_effn: bool = True
    forced_activation: ActivationExpertKind | None = None
    per_node_hard_routing: bool = False
    frozen_residual: bool = False  # pin alpha_l = beta = 0


def apply_variant(cfg: TrainConfig, variant: str) -> TrainConfig:
    """Named ablation variants mapped onto config fields."""
    table = {
        "full": {},
        "no-route-loss": {"entropy_coeff": 0.0},
        "no-sr": {"routing_mode": "uniform"},
        "no-effn": {"use_effn": False},
        "no-hr": {"forced_activation": ActivationExpertKind.SWISH_GLU},
        "no-ares": {"frozen_residual": True},
        "delta-tau": {"entropy_coeff": 0.0},  # pair with --temperature
    }
    if variant not in table:
        raise ValueError(f"unknown variant {variant!r}; choose from {sorted(table)}")
    return replace(cfg, **table[variant])


def _glorot(rng: RngState, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return (rng.uniform((fan_in, fan_out)) * 2 - 1) * limit


class GraphMoE:
    """Stacked MoE blocks over four message-passing experts, an EFFN head
    with hard-routed gated activations, and a linear classifier."""

    def __init__(self, cfg: TrainConfig, num_features: int, num_classes: int):
        self.cfg = cfg
        self.num_features = num_features
        self.num_classes = num_classes
        self.params: dict[str, Parameter] = {}
        self._init_params(RngState(cfg.seed))

    def _add(self, name: str, data: np.ndarray, decay: bool = True) -> None:
        self.params[name] = Parameter(data, decay)

    def _init_params(self, rng: RngState) -> None:
        cfg = self.cfg
        d, dh, c = self.num_features, cfg.hidden, self.num_classes
        self._add("w0", _glorot(rng, d, dh))
        for l in range(cfg.blocks):
            self._add(f"block{l}.router.w1", _glorot(rng, dh, dh))
            self._add(f"block{l}.router.w2", _glorot(rng, dh, NUM_EXPERTS))
            self._add(f"block{l}.router.keys", _glorot(rng, dh, NUM_EXPERTS))
            for kind in EXPERT_ORDER:
                n_p, n_t = stage_counts(kind)
                for t in range(n_t):
                    self._add(f"block{l}.{kind.value}.w{t}", _glorot(rng, dh, dh))
                if cfg.prop is PropagationKind.GAT_LIKE:
                    for p in range(n_p):
                        self._add(f"block{l}.{kind.value}.asrc{p}",
                                  (rng.uniform((dh, 1)) * 2 - 1) * 0.1, decay=False)
                        self._add(f"block{l}.{kind.value}.adst{p}",
                                  (rng.uniform((dh, 1)) * 2 - 1) * 0.1, decay=False)
            self._add(f"block{l}.residual_raw", np.zeros((1, 1)), decay=False)
            self._add(f"block{l}.ln_gain", np.ones((1, dh)), decay=False)
            self._add(f"block{l}.ln_bias", np.zeros((1, dh)), decay=False)
        self._add("effn.w3", _glorot(rng, dh, dh))
        self._add("effn.w4", _glorot(rng, dh, dh))
        self._add("effn.w5", _glorot(rng, dh, dh))
        self._add("effn.w_hr", _glorot(rng, dh, 3))
        self._add("effn.residual_raw", np.zeros((1, 1)), decay=False)
        self._add("effn.ln_gain", np.ones((1, dh)), decay=False)
        self._add("effn.ln_bias", np.zeros((1, dh)), decay=False)
        self._add("w6", _glorot(rng, dh, c))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            self.params[k].data = v.copy()

    def _route(self, leaves, l: int, h: ad.AdNode, tape: ad.Tape,
               num_nodes: int) -> ad.AdNode:
        cfg = self.cfg
        if cfg.routing_mode == "soft":
            return route_soft(h, leaves[f"block{l}.router.w1"],
                              leaves[f"block{l}.router.w2"],
                              temperature=cfg.routing_temperature)
        if cfg.routing_mode == "uniform":
            return route_uniform(tape, num_nodes)
        if cfg.routing_mode == "topk":
            return route_topk(h, leaves[f"block{l}.router.w1"],
                              leaves[f"block{l}.router.w2"], cfg.topk)
        if cfg.routing_mode == "dot-att":
            return route_dot_attention(h, leaves[f"block{l}.router.keys"])
        if cfg.routing_mode == "forced":
            return route_forced(tape, num_nodes, cfg.forced_expert)
        raise ValueError(f"unknown routing mode {cfg.routing_mode!r}")

    def forward(self, ctx: GraphContext, rng: RngState, training: bool,
                tape: ad.Tape | None = None):
        """Run the full pipeline.

        Returns (logits, routing records, leaf nodes, hr_selection); the
        last is the EFFN activation index, -1 when the EFFN is bypassed.
        """
        cfg = self.cfg
        tape = tape or ad.Tape()
        leaves = {name: tape.leaf(p.data) for name, p in self.params.items()}
        x = tape.leaf(ctx.graph.features)

        h0 = ad.relu(ad.matmul(x, leaves["w0"]))
        h = h0
        records: list[RoutingRecord] = []
        for l in range(cfg.blocks):
            pi = self._route(leaves, l, h, tape, ctx.graph.num_nodes)
            expert_params = []
            for kind in EXPERT_ORDER:
                n_p, n_t = stage_counts(kind)
                weights = [leaves[f"block{l}.{kind.value}.w{t}"] for t in range(n_t)]
                atts = []
                if cfg.prop is PropagationKind.GAT_LIKE:
                    atts = [(leaves[f"block{l}.{kind.value}.asrc{p}"],
                             leaves[f"block{l}.{kind.value}.adst{p}"])
                            for p in range(n_p)]
                expert_params.append(ExpertParams(weights=weights, atts=atts,
                                                 dropout=cfg.dropout))
            h, rec = moe_block_forward(
                l, pi, cfg.prop, ctx, h, h0, expert_params,
                leaves[f"block{l}.residual_raw"], leaves[f"block{l}.ln_gain"],
                leaves[f"block{l}.ln_bias"], rng, training,
                frozen_residual=cfg.frozen_residual)
            records.append(rec)

        if cfg.use_effn:
            z, hr_selection = effn_forward(
                h, h0, leaves["effn.w3"], leaves["effn.w4"],
                leaves["effn.w5"], leaves["effn.w_hr"],
                leaves["effn.residual_raw"], leaves["effn.ln_gain"],
                leaves["effn.ln_bias"], cfg.gumbel_temperature,
                rng, training, per_node=cfg.per_node_hard_routing,
                forced_kind=cfg.forced_activation,
                frozen_residual=cfg.frozen_residual)
        else:
            z, hr_selection = h, -1
        logits = ad.matmul(z, leaves["w6"])
        return logits, records, leaves, hr_selection


def one_hot_labels(g: GraphDataset) -> np.ndarray:
    out = np.zeros((g.num_nodes, g.num_classes))
    out[np.arange(g.num_nodes), g.labels] = 1.0
    return out


def total_loss(logits: ad.AdNode, onehot: np.ndarray, mask,
               records: list[RoutingRecord], entropy_coeff: float
               ) -> tuple[ad.AdNode, float, float]:
    """Task cross-entropy plus lambda times routing entropy.

    Returns (loss node, task value, route value); route value is 0 when
    there are no routing records (0-block models).
    """
    task = ad.softmax_cross_entropy(logits, onehot, mask)
    if records:
        route = routing_entropy(records)
        route_val = float(route.value[0, 0])
        loss = ad.add(task, ad.scale(route, entropy_coeff)) if entropy_coeff else task
    else:
        route_val = 0.0
        loss = task
    return loss, float(task.value[0, 0]), route_val


@dataclass
class TrainHistory:
    task_loss: list = field(default_factory=list)
    route_loss: list = field(default_factory=list)
    total_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    hr_selection: list = field(default_factory=list)
    best_epoch: int = 0

    def __len__(self) -> int:
        return len(self.total_loss)


def accuracy(logits_value: np.ndarray, labels: np.ndarray, mask) -> float:
    mask = np.asarray(mask, dtype=np.int64)
    if mask.shape[0] == 0:
        raise ValueError("accuracy over an empty mask")
    pred = logits_value[mask].argmax(axis=1)
    return float((pred == labels[mask]).mean())


def evaluate(model: GraphMoE, ctx: GraphContext, mask) -> float:
    logits, _, _, _ = model.forward(ctx, RngState(0), training=False)
    return accuracy(logits.value, ctx.graph.labels, mask)


def train(model: GraphMoE, ctx: GraphContext, splits: SplitSpec,
          cfg: TrainConfig) -> tuple[GraphMoE, TrainHistory]:
    g = ctx.graph
    onehot = one_hot_labels(g)
    rng = RngState(cfg.seed)
    opt = AdamW(lr=cfg.lr, weight_decay=cfg.weight_decay)
    history = TrainHistory()
    best_val = -1.0
    best_state = model.state_dict()
    since_best = 0

    for epoch in range(1, cfg.max_epochs + 1):
        tape = ad.Tape()
        logits, records, leaves, _ = model.forward(ctx, rng, training=True,
                                                   tape=tape)
        loss, task_val, route_val = total_loss(logits, onehot, splits.train,
                                               records, cfg.entropy_coeff)
        ad.backward(tape, loss)
        grads = {name: leaf.grad for name, leaf in leaves.items()
                 if leaf.grad is not None}
        opt.step(model.params, grads)

        eval_logits, _, _, hr_sel = model.forward(ctx, RngState(0),
                                                  training=False)
        train_acc = accuracy(eval_logits.value, g.labels, splits.train)
        val_acc = accuracy(eval_logits.value, g.labels, splits.val)

        history.task_loss.append(task_val)
        history.route_loss.append(route_val)
        history.total_loss.append(float(loss.value[0, 0]))
        history.train_acc.append(train_acc)
        history.val_acc.append(val_acc)
        history.hr_selection.append(hr_sel)

        if val_acc > best_val:
            best_val = val_acc
            best_state = model.state_dict()
            history.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break

    model.load_state_dict(best_state)
    return model, history
