"""Soft routing over the four message-passing experts, the MoE block, and
the routing-entropy regularizer.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .experts import EXPERT_ORDER, ExpertParams, GraphContext, PropagationKind, apply_expert
from .rng import RngState

NUM_EXPERTS = 4
ENTROPY_FLOOR = 1e-12


@dataclass
class RoutingRecord:
    block: int
    pi_node: ad.AdNode  # |V| x 4, rows on the simplex

    @property
    def weights(self) -> np.ndarray:
        return self.pi_node.value


def route_soft(h: ad.AdNode, w1: ad.AdNode, w2: ad.AdNode,
               temperature: float = 1.0) -> ad.AdNode:
    """Softmax(ReLU(H W1) W2): per-node probability rows over the experts."""
    return ad.rowwise_softmax(ad.matmul(ad.relu(ad.matmul(h, w1)), w2),
                              temperature)


def route_topk(h: ad.AdNode, w1: ad.AdNode, w2: ad.AdNode, k: int) -> ad.AdNode:
    """Hard top-k routing: softmax restricted to each row's k largest logits."""
    logits = ad.matmul(ad.relu(ad.matmul(h, w1)), w2)
    raw = logits.value
    kth = np.sort(raw, axis=1)[:, -k][:, None]
    masked = np.where(raw >= kth, 0.0, -1e30)
    # keep exactly k per row even under ties: lowest column index wins
    excess = (raw >= kth).sum(axis=1) - k
    for i in np.flatnonzero(excess > 0):
        tied = np.flatnonzero(raw[i] == kth[i, 0])
        masked[i, tied[len(tied) - excess[i]:]] = -1e30
    mask_node = logits.tape.leaf(masked)  # constant, no gradient path
    return ad.rowwise_softmax(ad.add(logits, mask_node))


def route_dot_attention(h: ad.AdNode, keys: ad.AdNode) -> ad.AdNode:
    """Score each expert by <h_i, key_g>; keys is d' x 4."""
    return ad.rowwise_softmax(ad.matmul(h, keys))


def route_uniform(tape: ad.Tape, num_nodes: int) -> ad.AdNode:
    return tape.leaf(np.full((num_nodes, NUM_EXPERTS), 1.0 / NUM_EXPERTS))


def route_forced(tape: ad.Tape, num_nodes: int, expert_index: int) -> ad.AdNode:
    pi = np.zeros((num_nodes, NUM_EXPERTS))
    pi[:, expert_index] = 1.0
    return tape.leaf(pi)


def mix_experts(pi: ad.AdNode, outputs: list[ad.AdNode]) -> ad.AdNode:
    """Row-wise convex combination of the expert outputs."""
    mixed = None
    for g, out in enumerate(outputs):
        term = ad.scale_rows(out, ad.column(pi, g))
        mixed = term if mixed is None else ad.add(mixed, term)
    return mixed


def adaptive_residual(h0: ad.AdNode, h: ad.AdNode, raw: ad.AdNode,
                      gain: ad.AdNode, bias: ad.AdNode,
                      frozen_zero: bool = False) -> ad.AdNode:
    """LN(alpha * H0 + (1 - alpha) * H) with alpha = sigmoid(raw)."""
    if frozen_zero:
        return ad.layer_norm(h, gain, bias)
    alpha = ad.sigmoid(raw)
    one_minus = ad.affine(alpha, -1.0, 1.0)
    blended = ad.add(ad.smul(h0, alpha), ad.smul(h, one_minus))
    return ad.layer_norm(blended, gain, bias)


def moe_block_forward(block_index: int, pi: ad.AdNode, prop: PropagationKind,
                      ctx: GraphContext, h: ad.AdNode, h0: ad.AdNode,
                      expert_params: list[ExpertParams], residual_raw: ad.AdNode,
                      ln_gain: ad.AdNode, ln_bias: ad.AdNode, rng: RngState,
                      training: bool,
                      frozen_residual: bool = False) -> tuple[ad.AdNode, RoutingRecord]:
    outputs = [apply_expert(kind, prop, ctx, h, params, rng, training)
               for kind, params in zip(EXPERT_ORDER, expert_params)]
    mixed = mix_experts(pi, outputs)
    out = adaptive_residual(h0, mixed, residual_raw, ln_gain, ln_bias,
                            frozen_zero=frozen_residual)
    return out, RoutingRecord(block=block_index, pi_node=pi)


def routing_entropy(records: list[RoutingRecord]) -> ad.AdNode:
    """Mean Shannon entropy of routing rows over all nodes and blocks."""
    if not records:
        raise ValueError("routing_entropy needs at least one record")
    total = None
    num_nodes = records[0].weights.shape[0]
    for rec in records:
        pi = rec.pi_node
        plogp = ad.hadamard(pi, ad.log(ad.clamp_min(pi, ENTROPY_FLOOR)))
        s = ad.sum_all(plogp)
        total = s if total is None else ad.add(total, s)
    return ad.scale(total, -1.0 / (len(records) * num_nodes))
