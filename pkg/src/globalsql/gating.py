"""Question-conditioned global relevance: a graph network over the schema
plus its global node predicts, per constant, the probability that it belongs
in the output query, supervised by a binary relevance loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor
from .linking import LinkMatrix
from .nn import GnnLayerParams, ff, gnn_propagate_matrix, register_ff
from .schema_graph import NodeId, NodeKind, SchemaError, SchemaGraph


@dataclass
class GatingInput:
    """Per-node inputs (non-global nodes, in graph order): constant embedding,
    link-weighted question summary, and local relevance scalar."""

    nodes: tuple[NodeId, ...]
    r: Tensor      # (N, embed)
    h_bar: Tensor  # (N, question state width)
    rho: Tensor    # (N,)


@dataclass
class GlobalRelevance:
    constants: tuple[NodeId, ...]
    probs: Tensor  # (|constants|,), sigmoid outputs in (0, 1)

    def value(self, node: NodeId) -> float:
        return float(self.probs.data[self.constants.index(node)])


def question_summaries(m: LinkMatrix, e_matrix: Tensor) -> Tensor:
    """All constants' summaries at once: p(word | constant)^T cdot E."""
    return ad.matmul(ad.transpose(m.p_link_given_constant), e_matrix)


def question_summary(v: NodeId, m: LinkMatrix, e) -> Tensor:
    """Weighted average of contextual word states under p(word | constant)."""
    e_matrix = e if isinstance(e, Tensor) else ad.stack_rows(list(e))
    return ad.matmul(ad.column(m.p_link_given_constant, m.col(v)), e_matrix)


def register_gating(store: ParameterStore, embed_width: int, state_width: int,
                    gnn_steps: int) -> GnnLayerParams:
    register_ff(store, "gate/in", [embed_width + state_width + 1, embed_width, embed_width])
    store.create("gate/global0", (embed_width,), init="uniform")
    gnn = GnnLayerParams.create(store, "gate/gnn", embed_width, gnn_steps)
    register_ff(store, "gate/out", [embed_width, embed_width, 1])
    return gnn


def gate(graph: SchemaGraph, inputs: GatingInput, params: ParameterStore,
         gnn: GnnLayerParams) -> GlobalRelevance:
    """Propagate over the full graph (global node included) and read out one
    probability per constant; the global node's input is a learned parameter."""
    if graph.global_node is None:
        raise SchemaError("gate requires a graph with a global node")
    if inputs.nodes != tuple(n for n in graph.nodes if n.kind is not NodeKind.GLOBAL):
        raise ValueError("gating inputs must cover the non-global nodes in graph order")
    g0 = ff(ad.concat_cols([inputs.r, inputs.h_bar,
                            ad.reshape(inputs.rho, (len(inputs.nodes), 1))]),
            "gate/in", params)
    states = ad.concat_rows([g0, ad.reshape(params.get("gate/global0"), (1, gnn.width))])
    final = gnn_propagate_matrix(states, list(graph.nodes), graph, gnn, params)
    n_const = len(graph.constants)
    logits = ff(ad.narrow_rows(final, 0, n_const), "gate/out", params)
    probs = ad.sigmoid(ad.reshape(logits, (n_const,)))
    return GlobalRelevance(graph.constants, probs)


def relevance_loss(rho_global: GlobalRelevance, gold: set[NodeId],
                   eps: float = 1e-7) -> Tensor:
    """Binary cross-entropy of the relevance probabilities against the gold
    constant set.  Log arguments are floored at eps (sigmoid saturation);
    the upper side is left exact so a perfect prediction scores 0."""
    known = set(rho_global.constants)
    for node in gold:
        if node not in known:
            raise ValueError(f"gold constant {node} is not a graph constant")
    indicator = np.array([1.0 if n in gold else 0.0 for n in rho_global.constants])
    p = rho_global.probs
    pos = ad.log(ad.clip(p, eps, None))
    neg = ad.log(ad.clip(ad.shift(ad.scale(p, -1.0), 1.0), eps, None))
    picked = ad.add(ad.mul(ad.constant(indicator), pos),
                    ad.mul(ad.constant(1.0 - indicator), neg))
    return ad.scale(ad.tsum(picked), -1.0)
