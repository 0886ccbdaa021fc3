"""Grammar-directed decoding: graph encoding gated by relevance, an LSTM
decoder over grammar rules with constant selection through attention-weighted
link scores, pointer-copied condition values, beam search, and the
teacher-forced decoding loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import grammar as g
from .autodiff import ParameterStore, Tensor
from .gating import GlobalRelevance
from .grammar import DEFAULT_GRAMMAR, SqlGrammar
from .linking import (LinkMatrix, LinkTarget, RelevanceVector, Vocab,
                      build_link_matrix, cell_relevance, constant_embeddings,
                      embed_words, link_targets, score_matrix)
from .nn import (GnnLayerParams, attention_scores, bilstm_encode, ff,
                 gnn_propagate_matrix, lstm_cell, register_attention,
                 register_bilstm, register_ff, register_lstm)
from .schema_graph import NodeId, NodeKind, SchemaGraph, strip_global
from .sql_ast import (Aggregate, ColumnRef, Condition, OrderSpec, SqlQuery,
                      ValueRef, validate_query)

MASKED = -1e9


class DerivationError(ValueError):
    """A decision sequence cannot be built or replayed for this graph."""


@dataclass(frozen=True)
class RuleDecision:
    rule_id: int


@dataclass(frozen=True)
class ConstantDecision:
    node: NodeId


@dataclass(frozen=True)
class ValueDecision:
    text: str
    token: int | None = None
    cell: NodeId | None = None


Decision = RuleDecision | ConstantDecision | ValueDecision


def decision_sort_key(d: Decision) -> tuple:
    if isinstance(d, RuleDecision):
        return (0, d.rule_id)
    if isinstance(d, ConstantDecision):
        return (1, d.node.kind.value, d.node.index)
    if d.token is not None:
        return (2, 0, d.token)
    return (2, 1, d.cell.index)


@dataclass(frozen=True)
class Derivation:
    decisions: tuple[Decision, ...]
    query: SqlQuery


@dataclass
class BeamCandidate:
    derivation: Derivation
    log_prob: float
    constants: frozenset[NodeId]
    rerank_logit: float | None = None


def register_decoder(store: ParameterStore, embed_width: int, hidden_width: int,
                     att_width: int, n_rules: int) -> None:
    store.create("dec/start", (embed_width,), init="uniform")
    store.create("dec/value_emb", (embed_width,), init="uniform")
    store.create("dec/rule_emb", (n_rules, embed_width), init="uniform")
    register_lstm(store, "dec/lstm", 2 * embed_width + hidden_width, hidden_width)
    register_attention(store, "dec/att", hidden_width, hidden_width, att_width)
    register_ff(store, "dec/out", [2 * hidden_width, hidden_width, embed_width])


def register_encoder(store: ParameterStore, embed_width: int, hidden_width: int,
                     gnn_steps: int) -> GnnLayerParams:
    register_bilstm(store, "enc/lstm", embed_width, hidden_width // 2)
    return GnnLayerParams.create(store, "enc/gnn", embed_width, gnn_steps)


def _rho_vector(rho: GlobalRelevance | RelevanceVector) -> tuple[tuple[NodeId, ...], Tensor]:
    if isinstance(rho, GlobalRelevance):
        return rho.constants, rho.probs
    return rho.constants, rho.rho


@dataclass
class DecodeContext:
    """Per-example precomputation shared by every decoder state."""

    graph: SchemaGraph
    grammar: SqlGrammar
    question: tuple[str, ...]
    e_states: list[Tensor]
    e_matrix: Tensor
    link: LinkMatrix
    cell_targets: tuple[LinkTarget, ...]
    cell_scores: Tensor | None  # (|question|, |cells|)
    h_nodes: dict[NodeId, Tensor]
    params: ParameterStore
    hidden_width: int
    embed_width: int


def encode(question: Sequence[str], graph: SchemaGraph,
           rho: GlobalRelevance | RelevanceVector, params: ParameterStore,
           vocab: Vocab, enc_gnn: GnnLayerParams,
           link: LinkMatrix | None = None,
           e_states: list[Tensor] | None = None) -> tuple[list[Tensor], dict[NodeId, Tensor]]:
    """Contextual word states plus relevance-gated node representations."""
    if e_states is None:
        word_matrix = embed_words(question, params, vocab)
        e_states = bilstm_encode([ad.row(word_matrix, i) for i in range(len(question))],
                                 "enc/lstm", params)
    consts, cells = link_targets(graph)
    rho_consts, rho_vec = _rho_vector(rho)
    if rho_consts != graph.constants:
        raise ValueError("relevance vector does not cover the graph constants in order")
    parts = [rho_vec]
    if cells:
        if link is None:
            link = build_link_matrix(question, consts, params, vocab)
        parts.extend(cell_relevance(graph, link))
    rho_all = ad.concat(parts) if len(parts) > 1 else rho_vec
    nodes = list(graph.constants) + list(graph.cells)
    r = constant_embeddings(consts + cells, params, vocab)
    h0 = ad.scale_rows(r, rho_all)
    h = gnn_propagate_matrix(h0, nodes, strip_global(graph), enc_gnn, params)
    return e_states, {node: ad.row(h, i) for i, node in enumerate(nodes)}


def prepare_decode(question: Sequence[str], graph: SchemaGraph,
                   rho: GlobalRelevance | RelevanceVector, params: ParameterStore,
                   vocab: Vocab, enc_gnn: GnnLayerParams,
                   grammar: SqlGrammar = DEFAULT_GRAMMAR,
                   link: LinkMatrix | None = None,
                   e_states: list[Tensor] | None = None) -> DecodeContext:
    consts, cells = link_targets(graph)
    if link is None:
        link = build_link_matrix(question, consts, params, vocab)
    cell_scores = score_matrix(question, cells, params, vocab) if cells else None
    e_states, h_nodes = encode(question, graph, rho, params, vocab, enc_gnn,
                               link=link, e_states=e_states)
    return DecodeContext(
        graph=graph,
        grammar=grammar,
        question=tuple(question),
        e_states=e_states,
        e_matrix=ad.stack_rows(e_states),
        link=link,
        cell_targets=tuple(cells),
        cell_scores=cell_scores,
        h_nodes=h_nodes,
        params=params,
        hidden_width=params.get("dec/lstm/wh").data.shape[1],
        embed_width=params.get("dec/start").data.shape[0],
    )


@dataclass(frozen=True)
class DecoderState:
    """One beam hypothesis: expansion frontier (top at the end), recurrent
    state, bookkeeping for masks, and the accumulated decisions."""

    ctx: DecodeContext = field(compare=False, repr=False)
    frontier: tuple[tuple[str, int | None], ...]
    h: Tensor = field(compare=False, repr=False)
    c: Tensor = field(compare=False, repr=False)
    prev_emb: Tensor = field(compare=False, repr=False)
    prev_context: Tensor = field(compare=False, repr=False)
    decisions: tuple[Decision, ...] = ()
    log_prob: float = 0.0
    tables: tuple[NodeId, ...] = ()
    pending_agg: str | None = None
    pending_cond_col: NodeId | None = None
    sort_key: tuple = ()

    @property
    def complete(self) -> bool:
        return not self.frontier


def init_state(ctx: DecodeContext, params: ParameterStore) -> DecoderState:
    zero_h = ad.constant(np.zeros(ctx.hidden_width))
    return DecoderState(
        ctx=ctx,
        frontier=((ctx.grammar.start, None),),
        h=zero_h,
        c=zero_h,
        prev_emb=params.get("dec/start"),
        prev_context=ad.constant(np.zeros(ctx.hidden_width)),
    )


def _selectable_columns(state: DecoderState) -> list[NodeId]:
    graph = state.ctx.graph
    star = graph.star_node
    return [c for t in state.tables for c in graph.table_columns.get(t, ()) if c != star]


def _legal_tables(graph: SchemaGraph, chosen: tuple[NodeId, ...]) -> list[NodeId]:
    if not chosen:
        return list(graph.tables)
    chosen_set = set(chosen)
    return [t for t in graph.tables
            if t not in chosen_set and graph.fk_tables(t) & chosen_set]


def _rule_legal(state: DecoderState, rule: g.Rule) -> bool:
    graph = state.ctx.graph
    label = rule.label
    if label == "table_more":
        for t in _legal_tables(graph, state.tables):
            if _legal_tables(graph, state.tables + (t,)):
                return True
        return False
    needs_columns = {"item_column", "order_column", "group", "where",
                     "cond_last", "cond_more", "SUM", "AVG", "MIN", "MAX"}
    if label in needs_columns:
        return bool(_selectable_columns(state))
    if label == "COUNT":
        return graph.star_node is not None or bool(_selectable_columns(state))
    if label in ("item_agg", "order_agg"):
        return graph.star_node is not None or bool(_selectable_columns(state))
    return True


def select_db_constant(alpha: Tensor, m: LinkMatrix, kind: NodeKind,
                       allowed: set[NodeId] | None = None) -> Tensor:
    """Distribution over constants: softmax of attention-weighted link scores,
    with wrong-kind (and optionally disallowed) constants masked to zero."""
    scores = ad.matmul(alpha, m.scores)
    mask = np.array([
        node.kind is not kind or (allowed is not None and node not in allowed)
        for node in m.constants
    ])
    return ad.softmax(ad.mask_fill(scores, mask, MASKED))


@dataclass
class DecodeStep:
    state: DecoderState
    options: tuple[Decision, ...]
    distribution: Tensor
    next_h: Tensor
    next_c: Tensor
    context: Tensor

    def advance(self, choice: int) -> DecoderState:
        """The successor state after committing options[choice]."""
        s, ctx = self.state, self.state.ctx
        decision = self.options[choice]
        prob = float(self.distribution.data[choice])
        symbol, parent = s.frontier[-1]
        frontier = s.frontier[:-1]
        tables, agg, cond_col = s.tables, s.pending_agg, s.pending_cond_col

        if isinstance(decision, RuleDecision):
            rule = ctx.grammar.rule(decision.rule_id)
            frontier = frontier + tuple((sym, rule.rule_id) for sym in reversed(rule.rhs))
            if rule.label in g.AGG_OPS:
                agg = rule.label
            emb = _rule_embedding(decision.rule_id, ctx)
        elif isinstance(decision, ConstantDecision):
            if symbol == g.TABLE:
                tables = tables + (decision.node,)
            elif parent is not None and ctx.grammar.rule(parent).label == "agg_arg":
                agg = None
            if parent is not None and ctx.grammar.rule(parent).label == "cond":
                cond_col = decision.node
            emb = ctx.h_nodes[decision.node]
        else:
            cond_col = None
            if decision.cell is not None:
                emb = ctx.h_nodes[decision.cell]
            else:
                emb = ctx.params.get("dec/value_emb")
        return replace(
            s,
            frontier=frontier,
            h=self.next_h,
            c=self.next_c,
            prev_emb=emb,
            prev_context=self.context,
            decisions=s.decisions + (decision,),
            log_prob=s.log_prob + float(np.log(prob)) if prob > 0 else -np.inf,
            tables=tables,
            pending_agg=agg,
            pending_cond_col=cond_col,
            sort_key=s.sort_key + (decision_sort_key(decision),),
        )


def _rule_embedding(rule_id: int, ctx: DecodeContext) -> Tensor:
    return ad.row(ctx.params.get("dec/rule_emb"), rule_id)


def decode_step(state: DecoderState, params: ParameterStore) -> DecodeStep:
    """One decoder step: advance the LSTM, attend over the question, and
    produce the distribution over legal rules, constants, or value pointers
    for the frontier head."""
    if state.complete:
        raise DerivationError("decode_step on a completed derivation")
    ctx = state.ctx
    symbol, parent = state.frontier[-1]
    parent_emb = (_rule_embedding(parent, ctx) if parent is not None
                  else ad.constant(np.zeros(ctx.embed_width)))
    x = ad.concat([state.prev_emb, state.prev_context, parent_emb])
    h, c = lstm_cell(x, state.h, state.c, "dec/lstm", params)
    att_raw = attention_scores(h, ctx.e_matrix, "dec/att", params)
    alpha = ad.softmax(att_raw)
    context = ad.matmul(alpha, ctx.e_matrix)

    if symbol == g.TABLE:
        allowed = set(_legal_tables(ctx.graph, state.tables))
        dist = select_db_constant(alpha, ctx.link, NodeKind.TABLE, allowed)
        options = tuple(ConstantDecision(n) for n in ctx.link.constants)
    elif symbol == g.COLUMN:
        allowed = set(_selectable_columns(state))
        star = ctx.graph.star_node
        if (star is not None and parent is not None
                and ctx.grammar.rule(parent).label == "agg_arg"
                and state.pending_agg == "COUNT"):
            allowed.add(star)
        dist = select_db_constant(alpha, ctx.link, NodeKind.COLUMN, allowed)
        options = tuple(ConstantDecision(n) for n in ctx.link.constants)
    elif symbol == g.VALUE:
        options_list: list[Decision] = [
            ValueDecision(w, token=i) for i, w in enumerate(ctx.question)
        ]
        logits = [att_raw]
        col_cells = ctx.graph.column_cells.get(state.pending_cond_col, ())
        for cell in col_cells:
            j = ctx.graph.cells.index(cell)
            options_list.append(ValueDecision(ctx.graph.names[cell], cell=cell))
            logits.append(ad.matmul(alpha, ad.column(ctx.cell_scores, j)))
        dist = ad.softmax(ad.concat(logits) if len(logits) > 1 else att_raw)
        options = tuple(options_list)
    else:
        legal = [r for r in ctx.grammar.productions(symbol)
                 if _rule_legal(state, ctx.grammar.rule(r))]
        if not legal:
            legal = list(ctx.grammar.productions(symbol))  # dead end; scored anyway
        u = ff(ad.concat([h, context]), "dec/out", params)
        logits = ad.matmul(ad.gather_rows(params.get("dec/rule_emb"), legal), u)
        dist = ad.softmax(logits)
        options = tuple(RuleDecision(r) for r in legal)
    return DecodeStep(state, options, dist, h, c, context)


# ---------------------------------------------------------------------------
# Building queries from decisions and decisions from queries
# ---------------------------------------------------------------------------


def build_query(decisions: Sequence[Decision], grammar: SqlGrammar,
                graph: SchemaGraph) -> SqlQuery:
    """Replay a leftmost top-down decision sequence into a query tree."""
    it = iter(decisions)

    def take() -> Decision:
        try:
            return next(it)
        except StopIteration:
            raise DerivationError("decision sequence ended before the derivation completed")

    def expand(symbol: str):
        if symbol in (g.TABLE, g.COLUMN):
            d = take()
            if not isinstance(d, ConstantDecision):
                raise DerivationError(f"expected a constant decision for {symbol}")
            if d.node not in graph.node_set:
                raise DerivationError(f"constant {d.node} is not in the graph")
            return d.node
        if symbol == g.VALUE:
            d = take()
            if not isinstance(d, ValueDecision):
                raise DerivationError("expected a value decision")
            return ValueRef(d.text, d.token, d.cell)
        d = take()
        if not isinstance(d, RuleDecision):
            raise DerivationError(f"expected a rule decision for {symbol}")
        rule = grammar.rule(d.rule_id)
        if rule.lhs != symbol:
            raise DerivationError(f"rule {rule} cannot expand {symbol}")
        parts = [expand(sym) for sym in rule.rhs]
        return _assemble(rule, parts)

    def _assemble(rule: g.Rule, parts: list):
        label = rule.label
        if label == "query":
            from_t, select, where, group, order, limit = parts
            return SqlQuery(from_t, select, where, group, order, limit)
        if label in ("from", "select", "where", "agg_arg", "order_column_item"):
            return parts[0]
        if label in ("table_last", "item_last", "cond_last"):
            return (parts[0],)
        if label in ("table_more", "item_more", "cond_more"):
            return (parts[0],) + parts[1]
        if label == "item_column":
            return ColumnRef(parts[0])
        if label in ("item_agg", "order_agg"):
            return parts[0]
        if label == "agg":
            return Aggregate(parts[0], parts[1])
        if label in g.AGG_OPS or label in g.CMP_OPS:
            return label
        if label == "cond":
            return Condition(parts[0], parts[1], parts[2])
        if label == "no_where":
            return ()
        if label == "no_group":
            return ()
        if label == "group":
            return (parts[0],)
        if label == "no_order":
            return None
        if label == "order":
            return OrderSpec(parts[0], parts[1] == "DESC")
        if label == "order_column":
            return ColumnRef(parts[0])
        if label in ("ASC", "DESC"):
            return label
        if label == "no_limit":
            return None
        if label == "limit_one":
            return 1
        raise DerivationError(f"unhandled rule label {label!r}")

    query = expand(grammar.start)
    if next(it, None) is not None:
        raise DerivationError("extra decisions after the derivation completed")
    return query


def _rule_by_label(grammar: SqlGrammar, lhs: str, label: str) -> int:
    for rid in grammar.productions(lhs):
        if grammar.rule(rid).label == label:
            return rid
    raise DerivationError(f"grammar has no {lhs} rule labelled {label!r}")


def _resolve_value(value: ValueRef, column: NodeId, graph: SchemaGraph,
                   question: Sequence[str]) -> ValueDecision:
    text = value.text.strip().lower()
    for i, w in enumerate(question):
        if w.lower() == text:
            return ValueDecision(question[i], token=i)
    for cell in graph.column_cells.get(column, ()):
        if graph.names[cell].strip().lower() == text:
            return ValueDecision(graph.names[cell], cell=cell)
    raise DerivationError(
        f"literal {value.text!r} is not copyable from the question or the "
        f"matched cells of {graph.display(column)}")


def derivation_from_query(query: SqlQuery, graph: SchemaGraph,
                          question: Sequence[str],
                          grammar: SqlGrammar = DEFAULT_GRAMMAR) -> Derivation:
    """The canonical decision sequence for a query (leftmost, lowest rule id
    first for value pointers: question tokens before cells)."""
    validate_query(query, graph)
    out: list[Decision] = []

    def rule(lhs: str, label: str) -> None:
        out.append(RuleDecision(_rule_by_label(grammar, lhs, label)))

    def emit_list(lhs: str, items: Sequence, last: str, more: str, emit_item) -> None:
        for i, item in enumerate(items):
            rule(lhs, more if i + 1 < len(items) else last)
            emit_item(item)

    def emit_item(item) -> None:
        if isinstance(item, ColumnRef):
            out.append(ConstantDecision(item.node))
        else:
            rule(g.AGG, "agg")
            rule(g.AGG_OP, item.op)
            rule(g.AGG_ARG, "agg_arg")
            out.append(ConstantDecision(item.column))

    rule(g.QUERY, "query")
    rule(g.FROM_CLAUSE, "from")
    emit_list(g.TABLE_LIST, query.from_tables, "table_last", "table_more",
              lambda t: out.append(ConstantDecision(t)))
    rule(g.SELECT_CLAUSE, "select")

    def emit_select(item) -> None:
        if isinstance(item, ColumnRef):
            rule(g.ITEM, "item_column")
            out.append(ConstantDecision(item.node))
        else:
            rule(g.ITEM, "item_agg")
            emit_item(item)

    emit_list(g.ITEM_LIST, query.select, "item_last", "item_more", emit_select)
    if not query.where:
        rule(g.WHERE_CLAUSE, "no_where")
    else:
        rule(g.WHERE_CLAUSE, "where")

        def emit_cond(cond: Condition) -> None:
            rule(g.COND, "cond")
            out.append(ConstantDecision(cond.column))
            rule(g.CMP, cond.op)
            out.append(_resolve_value(cond.value, cond.column, graph, question))

        emit_list(g.COND_LIST, query.where, "cond_last", "cond_more", emit_cond)
    if query.group_by:
        rule(g.GROUP_CLAUSE, "group")
        out.append(ConstantDecision(query.group_by[0]))
    else:
        rule(g.GROUP_CLAUSE, "no_group")
    if query.order_by is None:
        rule(g.ORDER_CLAUSE, "no_order")
    else:
        rule(g.ORDER_CLAUSE, "order")
        if isinstance(query.order_by.item, ColumnRef):
            rule(g.ORDER_ITEM, "order_column")
            out.append(ConstantDecision(query.order_by.item.node))
        else:
            rule(g.ORDER_ITEM, "order_agg")
            emit_item(query.order_by.item)
        rule(g.DIR, "DESC" if query.order_by.descending else "ASC")
    rule(g.LIMIT_CLAUSE, "limit_one" if query.limit is not None else "no_limit")
    rebuilt = build_query(out, grammar, graph)
    return Derivation(tuple(out), rebuilt)


# ---------------------------------------------------------------------------
# Beam search and teacher forcing
# ---------------------------------------------------------------------------


def beam_search(question: Sequence[str], graph: SchemaGraph,
                rho: GlobalRelevance | RelevanceVector, beam_width: int,
                max_steps: int, params: ParameterStore, vocab: Vocab,
                enc_gnn: GnnLayerParams, grammar: SqlGrammar = DEFAULT_GRAMMAR,
                prepared: DecodeContext | None = None) -> list[BeamCandidate]:
    """Top candidates by decoder log-probability, at most `beam_width`,
    ranked descending with a lexicographic tie-break on the decisions."""
    if beam_width < 1:
        raise ValueError("beam width must be >= 1")
    ctx = prepared or prepare_decode(question, graph, rho, params, vocab,
                                     enc_gnn, grammar)
    active = [init_state(ctx, params)]
    completed: list[DecoderState] = []
    for _ in range(max_steps):
        if not active:
            break
        if len(completed) >= beam_width:
            worst_kept = sorted(completed, key=lambda s: (-s.log_prob, s.sort_key))[beam_width - 1]
            if all(s.log_prob <= worst_kept.log_prob for s in active):
                break
        expansions: list[tuple[float, tuple, DecodeStep, int]] = []
        for state in active:
            step = decode_step(state, params)
            probs = step.distribution.data
            for i in np.flatnonzero(probs > 0.0):
                score = state.log_prob + float(np.log(probs[i]))
                key = state.sort_key + (decision_sort_key(step.options[i]),)
                expansions.append((score, key, step, int(i)))
        expansions.sort(key=lambda e: (-e[0], e[1]))
        active = []
        for score, key, step, i in expansions[:beam_width]:
            child = step.advance(i)
            (completed if child.complete else active).append(child)
    completed.sort(key=lambda s: (-s.log_prob, s.sort_key))
    out = []
    for s in completed[:beam_width]:
        query = build_query(s.decisions, ctx.grammar, ctx.graph)
        from .sql_ast import extract_constants
        out.append(BeamCandidate(Derivation(s.decisions, query), s.log_prob,
                                 extract_constants(query, ctx.graph)))
    return out


def decoding_loss(gold: Derivation, question: Sequence[str], graph: SchemaGraph,
                  rho: GlobalRelevance | RelevanceVector, params: ParameterStore,
                  vocab: Vocab, enc_gnn: GnnLayerParams,
                  grammar: SqlGrammar = DEFAULT_GRAMMAR,
                  prepared: DecodeContext | None = None) -> Tensor:
    """Negative log-likelihood of the gold decisions under teacher forcing."""
    ctx = prepared or prepare_decode(question, graph, rho, params, vocab,
                                     enc_gnn, grammar)
    state = init_state(ctx, params)
    terms = []
    for decision in gold.decisions:
        step = decode_step(state, params)
        try:
            idx = step.options.index(decision)
        except ValueError:
            raise DerivationError(f"gold decision {decision} is not a legal option")
        p = float(step.distribution.data[idx])
        if p <= 0.0:
            raise DerivationError(f"gold decision {decision} is masked out")
        terms.append(ad.log(ad.element(step.distribution, idx)))
        state = step.advance(idx)
    if not state.complete:
        raise DerivationError("gold derivation does not complete the query")
    return ad.scale(ad.tsum(ad.concat(terms)), -1.0)
