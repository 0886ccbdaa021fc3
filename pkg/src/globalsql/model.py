"""The assembled parser: one parameter store covering linking, encoding,
gating, decoding, and re-ranking, plus the per-example forward passes that
training, evaluation, and the CLI all share.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor
from .decoder import (BeamCandidate, DecodeContext, beam_search, decoding_loss,
                      prepare_decode, register_decoder, register_encoder)
from .gating import (GatingInput, GlobalRelevance, gate, question_summaries,
                     register_gating)
from .grammar import DEFAULT_GRAMMAR, SqlGrammar
from .linking import (LinkMatrix, RelevanceVector, Vocab, build_link_matrix,
                      cell_relevance, constant_embeddings, embed_words,
                      link_targets, local_relevance, register_linking)
from .nn import GnnLayerParams, bilstm_encode
from .reranker import CandidateScore, oracle_relevance, register_reranker, rerank_score
from .schema_graph import NodeKind, SchemaGraph
from .sql_ast import SqlQuery


@dataclass(frozen=True)
class ModelConfig:
    embed_width: int = 32
    hidden_width: int = 64
    att_width: int = 32
    gnn_steps: int = 2
    max_decode_steps: int = 60


@dataclass
class Forward:
    """Everything one example's forward pass produces before decoding."""

    link: LinkMatrix
    e_states: list[Tensor]
    e_matrix: Tensor
    rho_local: RelevanceVector
    rho: GlobalRelevance | RelevanceVector
    ctx: DecodeContext


class GlobalParser:
    """Parameter owner and forward-pass entry points."""

    def __init__(self, config: ModelConfig, vocab: Vocab, seed: int,
                 grammar: SqlGrammar = DEFAULT_GRAMMAR):
        self.config = config
        self.vocab = vocab
        self.grammar = grammar
        self.store = ParameterStore(seed)
        c = config
        register_linking(self.store, len(vocab), c.embed_width)
        self.enc_gnn = register_encoder(self.store, c.embed_width, c.hidden_width, c.gnn_steps)
        self.gate_gnn = register_gating(self.store, c.embed_width, c.hidden_width, c.gnn_steps)
        register_decoder(self.store, c.embed_width, c.hidden_width, c.att_width, len(grammar))
        self.rank_gnn = register_reranker(self.store, len(vocab), c.embed_width,
                                          c.hidden_width, c.gnn_steps)

    # ------------------------------------------------------------------
    # Forward passes
    # ------------------------------------------------------------------

    def gating_input(self, graph: SchemaGraph, link: LinkMatrix,
                     e_matrix: Tensor) -> GatingInput:
        """Assemble (r, h_bar, rho) rows for every non-global node; cells use
        their column's question summary and matched-word link probability."""
        consts, cells = link_targets(graph)
        nodes = tuple(graph.constants) + tuple(graph.cells)
        r = constant_embeddings(consts + cells, self.store, self.vocab)
        summaries = question_summaries(link, e_matrix)
        rho_local = local_relevance(link)
        if cells:
            col_rows = [link.col(graph.cell_column[c.node]) for c in cells]
            h_bar = ad.concat_rows([summaries, ad.gather_rows(summaries, col_rows)])
            rho = ad.concat([rho_local.rho] + cell_relevance(graph, link))
        else:
            h_bar = summaries
            rho = rho_local.rho
        return GatingInput(nodes, r, h_bar, rho)

    def forward(self, graph: SchemaGraph, question: tuple[str, ...],
                mode: str = "gate", gold: SqlQuery | None = None) -> Forward:
        """Link, encode the question, pick the relevance source per mode, and
        prepare the decoder context.

        mode: "gate" (learned global relevance), "local" (link-derived), or
        "oracle" (indicator from the gold query, which must be given).
        """
        consts, _ = link_targets(graph)
        link = build_link_matrix(question, consts, self.store, self.vocab)
        word_matrix = embed_words(question, self.store, self.vocab)
        e_states = bilstm_encode([ad.row(word_matrix, i) for i in range(len(question))],
                                 "enc/lstm", self.store)
        e_matrix = ad.stack_rows(e_states)
        rho_local = local_relevance(link)
        if mode == "gate":
            rho = gate(graph, self.gating_input(graph, link, e_matrix),
                       self.store, self.gate_gnn)
        elif mode == "local":
            rho = rho_local
        elif mode == "oracle":
            if gold is None:
                raise ValueError("oracle mode needs the gold query")
            rho = oracle_relevance(gold, graph)
        else:
            raise ValueError(f"unknown relevance mode {mode!r}")
        ctx = prepare_decode(question, graph, rho, self.store, self.vocab,
                             self.enc_gnn, self.grammar, link=link,
                             e_states=e_states)
        return Forward(link, e_states, e_matrix, rho_local, rho, ctx)

    def beam(self, fw: Forward, beam_width: int) -> list[BeamCandidate]:
        return beam_search(fw.ctx.question, fw.ctx.graph, fw.rho, beam_width,
                           self.config.max_decode_steps, self.store, self.vocab,
                           self.enc_gnn, self.grammar, prepared=fw.ctx)

    def gold_loss(self, fw: Forward, derivation) -> Tensor:
        return decoding_loss(derivation, fw.ctx.question, fw.ctx.graph, fw.rho,
                             self.store, self.vocab, self.enc_gnn, self.grammar,
                             prepared=fw.ctx)

    def score_candidates(self, fw: Forward, candidates: list[BeamCandidate],
                         frozen: bool = False) -> list[CandidateScore]:
        """Re-rank logits for each candidate; with frozen=True the shared word
        states and link matrix are detached so only re-ranker parameters see
        gradients."""
        e_matrix = fw.e_matrix
        link = fw.link
        if frozen:
            e_matrix = e_matrix.detach()
            link = LinkMatrix(link.words, link.constants, link.scores.detach(),
                              link.p_link_given_word.detach(),
                              link.p_link_given_constant.detach())
        return [rerank_score(c, fw.ctx.graph, e_matrix, link, self.store,
                             self.vocab, self.rank_gnn) for c in candidates]
