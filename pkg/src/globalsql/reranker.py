"""Discriminative re-ranking of beam candidates by their selected constant
sets: a graph network over the induced sub-graph read out at the global node,
combined with a question-alignment summary that exposes words linked to
constants the candidate left out.

The re-ranker owns private constant embeddings and propagation weights; it
reads the parser's word states and link matrix as frozen inputs, so no
gradient reaches encoder, gating, or decoder parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor
from .decoder import BeamCandidate
from .gating import GlobalRelevance
from .linking import LinkMatrix, LinkTarget, Vocab, constant_embeddings, register_linking
from .nn import GnnLayerParams, ff, gnn_propagate_matrix, register_ff
from .schema_graph import NodeId, NodeKind, SchemaGraph, induced_subgraph
from .sql_ast import SqlQuery, extract_constants


@dataclass
class AlignmentRep:
    """Per-word aligned-constant summaries, the concatenated word states,
    and their attention-pooled vector."""

    l_phi: Tensor          # (|question|, node width)
    e_align_words: Tensor  # (|question|, word width + node width)
    pooled: Tensor         # (word width + node width,)


@dataclass
class CandidateScore:
    candidate: BeamCandidate
    logit: Tensor | float
    decoder_log_prob: float

    @property
    def value(self) -> float:
        return float(self.logit.data) if isinstance(self.logit, Tensor) else float(self.logit)


def register_reranker(store: ParameterStore, vocab_size: int, embed_width: int,
                      state_width: int, gnn_steps: int) -> GnnLayerParams:
    register_linking(store, vocab_size, embed_width, prefix="rank/")
    register_ff(store, "rank/in", [embed_width + state_width, embed_width, embed_width])
    store.create("rank/global0", (embed_width,), init="uniform")
    gnn = GnnLayerParams.create(store, "rank/gnn", embed_width, gnn_steps)
    store.create("rank/w_att", (state_width + embed_width,), init="glorot")
    register_ff(store, "rank/out", [2 * embed_width + state_width, state_width, state_width])
    store.create("rank/w", (state_width,), init="glorot")
    return gnn


def _as_matrix(e) -> Tensor:
    return e if isinstance(e, Tensor) else ad.stack_rows(list(e))


def rerank_score(candidate: BeamCandidate, graph: SchemaGraph, e, m: LinkMatrix,
                 params: ParameterStore, vocab: Vocab,
                 rank_gnn: GnnLayerParams) -> CandidateScore:
    """Logit for one candidate, a function of its constant set only (plus the
    shared question states and link matrix)."""
    selected = frozenset(candidate.constants)
    unknown = selected - graph.node_set
    if unknown:
        raise ValueError(f"candidate constants {sorted(unknown, key=lambda n: n.sort_key())} "
                         "are not in the graph")
    e_matrix = _as_matrix(e)
    summaries = ad.matmul(ad.transpose(m.p_link_given_constant), e_matrix)

    adjacent_cells = [c for c in graph.cells if graph.cell_column[c] in selected]
    sub = induced_subgraph(graph, selected | set(adjacent_cells))
    inner = tuple(n for n in sub.nodes if n.kind is not NodeKind.GLOBAL)

    targets = [LinkTarget(n, graph.names[n], n.kind) for n in inner]
    col_index = {node: i for i, node in enumerate(m.constants)}

    if inner:
        r = constant_embeddings(targets, params, vocab, prefix="rank/")
        rows = [col_index[n] if n.kind is not NodeKind.CELL
                else col_index[graph.cell_column[n]] for n in inner]
        h_bar = ad.gather_rows(summaries, rows)
        f0 = ff(ad.concat_cols([r, h_bar]), "rank/in", params)
        states = ad.concat_rows([f0, ad.reshape(params.get("rank/global0"), (1, rank_gnn.width))])
    else:
        states = ad.reshape(params.get("rank/global0"), (1, rank_gnn.width))
    final = gnn_propagate_matrix(states, list(sub.nodes), sub, rank_gnn, params)
    f_set = ad.row(final, len(sub.nodes) - 1)  # the global node is last

    inner_row = {node: i for i, node in enumerate(inner)}
    const_targets = [LinkTarget(n, graph.names[n], n.kind) for n in graph.constants]
    r_all = constant_embeddings(const_targets, params, vocab, prefix="rank/")
    phi = ad.stack_rows([
        ad.row(final, inner_row[node]) if node in selected else ad.row(r_all, j)
        for j, node in enumerate(graph.constants)
    ])

    align = alignment_representation(e_matrix, m, phi, params)
    s = ad.dot(params.get("rank/w"),
               ff(ad.concat([f_set, align.pooled]), "rank/out", params))
    return CandidateScore(candidate, s, candidate.log_prob)


def alignment_representation(e_matrix: Tensor, m: LinkMatrix, phi: Tensor,
                             params: ParameterStore) -> AlignmentRep:
    """Pool [e_i; sum_v p(v|x_i) phi_v] over words by learned attention."""
    l_phi = ad.matmul(m.p_link_given_word, phi)
    e_align = ad.concat_cols([e_matrix, l_phi])
    scores = ad.matmul(e_align, params.get("rank/w_att"))
    pooled = ad.matmul(ad.softmax(scores), e_align)
    return AlignmentRep(l_phi, e_align, pooled)


def rerank_loss(scores: Sequence[CandidateScore], gold_index: int) -> Tensor:
    """Negative log probability of the gold candidate under a softmax over
    the candidate logits."""
    if len(scores) < 2:
        raise ValueError("rerank_loss needs at least two candidates")
    if not 0 <= gold_index < len(scores):
        raise ValueError(f"gold index {gold_index} out of range")
    logits = ad.concat([s.logit if isinstance(s.logit, Tensor) else ad.constant(s.logit)
                        for s in scores])
    return ad.scale(ad.element(ad.log_softmax(logits), gold_index), -1.0)


def select_final(scores: Sequence[CandidateScore]) -> BeamCandidate:
    """Argmax by logit; exact ties fall back to the decoder log-probability,
    then to beam order."""
    if not scores:
        raise ValueError("select_final on an empty candidate list")
    best = min(range(len(scores)),
               key=lambda i: (-scores[i].value, -scores[i].decoder_log_prob, i))
    winner = scores[best].candidate
    winner.rerank_logit = scores[best].value
    return winner


def oracle_relevance(gold: SqlQuery, graph: SchemaGraph) -> GlobalRelevance:
    """Indicator relevance: exactly 1.0 on the gold query's constants.

    Deliberately leaves the sigmoid's open interval; this is the perfect-
    gating substitute used by the oracle evaluation modes.
    """
    gold_set = extract_constants(gold, graph)
    probs = np.array([1.0 if n in gold_set else 0.0 for n in graph.constants])
    return GlobalRelevance(graph.constants, ad.constant(probs))
