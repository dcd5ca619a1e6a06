"""Decoupled propagation/transformation primitives and the four composite
message-passing experts PP, PT, TP, TT.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import autodiff as ad
from .graphs import GraphDataset, attention_graph, mean_neighbor_matrix, normalize_adjacency
from .kernels import segment_max, segment_sum
from .rng import RngState
from .sparse import SparseMatrix


class PropagationKind(Enum):
    GCN_LIKE = "gcn"
    SAGE_LIKE = "sage"
    GAT_LIKE = "gat"


class ExpertKind(Enum):
    PP = "PP"
    PT = "PT"
    TP = "TP"
    TT = "TT"


EXPERT_ORDER = (ExpertKind.PP, ExpertKind.PT, ExpertKind.TP, ExpertKind.TT)


@dataclass
class GraphContext:
    """Per-dataset propagation operands, built once and reused."""
    graph: GraphDataset
    a_hat: SparseMatrix
    sage_mat: SparseMatrix
    att_graph: SparseMatrix
    att_edge_rows: np.ndarray

    @classmethod
    def build(cls, g: GraphDataset) -> "GraphContext":
        att = attention_graph(g)
        return cls(graph=g, a_hat=normalize_adjacency(g),
                   sage_mat=mean_neighbor_matrix(g), att_graph=att,
                   att_edge_rows=att.edge_rows())


@dataclass
class ExpertParams:
    """Leaf AdNodes for one expert in one forward pass.

    weights: one d'xd' matrix per T stage (in application order).
    atts: one (a_src, a_dst) pair of d'x1 vectors per GAT-flavored P stage.
    """
    weights: list = field(default_factory=list)
    atts: list = field(default_factory=list)
    dropout: float = 0.0


def propagate_gcn(ctx: GraphContext, h: ad.AdNode) -> ad.AdNode:
    return ad.spmm(ctx.a_hat, h)


def propagate_sage(ctx: GraphContext, h: ad.AdNode) -> ad.AdNode:
    return ad.spmm(ctx.sage_mat, h)


def propagate_gat(ctx: GraphContext, h: ad.AdNode, a_src: ad.AdNode,
                  a_dst: ad.AdNode, slope: float = 0.2) -> ad.AdNode:
    """Single-head additive attention over N(i) ∪ {i}."""
    S = ctx.att_graph
    row = ctx.att_edge_rows
    col = S.col_idx
    hval = h.value
    p = (hval @ a_src.value)[:, 0]
    q = (hval @ a_dst.value)[:, 0]
    z = p[row] + q[col]
    e = np.where(z > 0, z, slope * z)
    m = segment_max(e, S.row_ptr)
    w = np.exp(e - m[row])
    denom = segment_sum(w, S.row_ptr)
    alpha = w / denom[row]
    att = S.with_values(alpha)
    out = att.matmul_dense(hval)

    def rule(g):
        dh = att.transpose().matmul_dense(g)
        dalpha = np.einsum("ij,ij->i", g[row], hval[col])
        dots = segment_sum(alpha * dalpha, S.row_ptr)
        de = alpha * (dalpha - dots[row])
        dz = de * np.where(z > 0, 1.0, slope)
        dp = segment_sum(dz, S.row_ptr)
        dq = np.bincount(col, weights=dz, minlength=S.rows)
        dh += dp[:, None] * a_src.value[:, 0][None, :]
        dh += dq[:, None] * a_dst.value[:, 0][None, :]
        h.accum(dh)
        a_src.accum(hval.T @ dp[:, None])
        a_dst.accum(hval.T @ dq[:, None])

    return h.tape.emit(out, rule)


def transform(h: ad.AdNode, weight: ad.AdNode, rate: float, rng: RngState,
              training: bool) -> ad.AdNode:
    return ad.dropout(ad.relu(ad.matmul(h, weight)), rate, rng, training)


def _propagate(prop: PropagationKind, ctx: GraphContext, h: ad.AdNode,
               params: ExpertParams, stage: int) -> ad.AdNode:
    if prop is PropagationKind.GCN_LIKE:
        return propagate_gcn(ctx, h)
    if prop is PropagationKind.SAGE_LIKE:
        return propagate_sage(ctx, h)
    a_src, a_dst = params.atts[stage]
    return propagate_gat(ctx, h, a_src, a_dst)


def apply_expert(kind: ExpertKind, prop: PropagationKind, ctx: GraphContext,
                 h: ad.AdNode, params: ExpertParams, rng: RngState,
                 training: bool) -> ad.AdNode:
    """Apply the expert's two stages left to right (PT = propagate, then
    transform)."""
    p_stage = 0
    t_stage = 0
    out = h
    for op in kind.value:
        if op == "P":
            out = _propagate(prop, ctx, out, params, p_stage)
            p_stage += 1
        else:
            out = transform(out, params.weights[t_stage], params.dropout,
                            rng, training)
            t_stage += 1
    return out


def stage_counts(kind: ExpertKind) -> tuple[int, int]:
    """(number of P stages, number of T stages)."""
    return kind.value.count("P"), kind.value.count("T")
