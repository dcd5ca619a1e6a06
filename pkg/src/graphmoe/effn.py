"""Enhanced feed-forward network: hard routing over three gated activation
experts plus an adaptive residual.
"""
from __future__ import annotations

from enum import Enum

from . import autodiff as ad
from .routing import adaptive_residual
from .rng import RngState


class ActivationExpertKind(Enum):
    SWISH_GLU = 0
    GEGLU = 1
    REGLU = 2


_GATES = {
    ActivationExpertKind.SWISH_GLU: ad.swish,
    ActivationExpertKind.GEGLU: ad.gelu,
    ActivationExpertKind.REGLU: ad.relu,
}


def route_hard(h: ad.AdNode, w_hr: ad.AdNode, temperature: float,
               rng: RngState, training: bool) -> ad.AdNode:
    """Graph-level selection over the three activation experts.

    Returns a 1x3 one-hot node; training uses straight-through Gumbel
    sampling, eval is a deterministic argmax (ties to the lowest index).
    """
    logits = ad.matmul(ad.mean_rows(h), w_hr)
    return ad.gumbel_softmax(logits, temperature, hard=True, rng=rng,
                             training=training)


def route_hard_per_node(h: ad.AdNode, w_hr: ad.AdNode, temperature: float,
                        rng: RngState, training: bool) -> ad.AdNode:
    """Per-node variant (|V| x 3 one-hot rows), off by default."""
    return ad.gumbel_softmax(ad.matmul(h, w_hr), temperature, hard=True,
                             rng=rng, training=training)


def gated_activation(kind: ActivationExpertKind, h: ad.AdNode, w3: ad.AdNode,
                     w4: ad.AdNode, w5: ad.AdNode) -> ad.AdNode:
    gate = _GATES[kind](ad.matmul(h, w3))
    return ad.matmul(ad.hadamard(gate, ad.matmul(h, w4)), w5)


def effn_forward(h: ad.AdNode, h0: ad.AdNode, w3: ad.AdNode, w4: ad.AdNode,
                 w5: ad.AdNode, w_hr: ad.AdNode, residual_raw: ad.AdNode,
                 ln_gain: ad.AdNode, ln_bias: ad.AdNode, temperature: float,
                 rng: RngState, training: bool,
                 per_node: bool = False,
                 forced_kind: ActivationExpertKind | None = None,
                 frozen_residual: bool = False) -> tuple[ad.AdNode, int]:
    """Select an activation expert, apply it, then adaptive residual + LN.

    Returns the output node and the selected activation index (modal index
    in per-node mode).
    """
    if forced_kind is not None:
        z = gated_activation(forced_kind, h, w3, w4, w5)
        chosen_index = forced_kind.value
    elif per_node:
        sel = route_hard_per_node(h, w_hr, temperature, rng, training)
        z = None
        for kind in ActivationExpertKind:
            branch = ad.scale_rows(gated_activation(kind, h, w3, w4, w5),
                                   ad.column(sel, kind.value))
            z = branch if z is None else ad.add(z, branch)
        chosen_index = int(sel.value.sum(axis=0).argmax())
    else:
        sel = route_hard(h, w_hr, temperature, rng, training)
        # forward weights are one-hot, so only the chosen branch is
        # materialized; straight-through gradients reach w_hr through sel
        chosen_index = int(sel.value.argmax())
        z = ad.scale_by_entry(gated_activation(ActivationExpertKind(chosen_index),
                                               h, w3, w4, w5),
                              sel, chosen_index)
    out = adaptive_residual(h0, z, residual_raw, ln_gain, ln_bias,
                            frozen_zero=frozen_residual)
    return out, chosen_index
