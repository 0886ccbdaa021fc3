"""Reusable network blocks: feed-forward stacks, LSTM sequence encoding,
additive attention, and typed-edge graph propagation with a gated update.

Parameters are registered once under a name prefix and then referenced by
that prefix; all blocks work for both vector and row-batched matrix inputs
where noted.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, ShapeError, Tensor
from .schema_graph import EdgeType, NodeId, SchemaGraph


def register_linear(store: ParameterStore, name: str, n_in: int, n_out: int) -> None:
    store.create(f"{name}/w", (n_out, n_in), init="glorot")
    store.create(f"{name}/b", (n_out,), init="zeros")


def linear(x: Tensor, name: str, store: ParameterStore) -> Tensor:
    w = store.get(f"{name}/w")
    b = store.get(f"{name}/b")
    if x.data.ndim == 1:
        if x.data.shape[0] != w.data.shape[1]:
            raise ShapeError(f"{name}: input {x.data.shape} vs weight {w.data.shape}")
        return ad.add(ad.matmul(w, x), b)
    if x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(f"{name}: input {x.data.shape} vs weight {w.data.shape}")
    return ad.add_rowvec(ad.matmul(x, ad.transpose(w)), b)


def register_ff(store: ParameterStore, name: str, sizes: Sequence[int]) -> None:
    """A feed-forward stack with len(sizes)-1 layers and tanh between them."""
    for i in range(len(sizes) - 1):
        register_linear(store, f"{name}/{i}", sizes[i], sizes[i + 1])


def ff(x: Tensor, name: str, store: ParameterStore) -> Tensor:
    """Apply the stack registered under `name`; final layer is linear."""
    i = 0
    out = x
    while f"{name}/{i}/w" in store:
        if i > 0:
            out = ad.tanh(out)
        out = linear(out, f"{name}/{i}", store)
        i += 1
    if i == 0:
        raise KeyError(f"no feed-forward layers registered under {name!r}")
    return out


# ---------------------------------------------------------------------------
# LSTM sequence encoder
# ---------------------------------------------------------------------------


def register_lstm(store: ParameterStore, name: str, n_in: int, n_hidden: int) -> None:
    store.create(f"{name}/wi", (4 * n_hidden, n_in), init="glorot")
    store.create(f"{name}/wh", (4 * n_hidden, n_hidden), init="glorot")
    store.create(f"{name}/b", (4 * n_hidden,), init="zeros")


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, name: str, store: ParameterStore):
    nh = h.data.shape[0]
    gates = ad.add(
        ad.add(ad.matmul(store.get(f"{name}/wi"), x), ad.matmul(store.get(f"{name}/wh"), h)),
        store.get(f"{name}/b"),
    )
    i = ad.sigmoid(ad.narrow(gates, 0, nh))
    f = ad.sigmoid(ad.narrow(gates, nh, nh))
    g = ad.tanh(ad.narrow(gates, 2 * nh, nh))
    o = ad.sigmoid(ad.narrow(gates, 3 * nh, nh))
    c_next = ad.add(ad.mul(f, c), ad.mul(i, g))
    h_next = ad.mul(o, ad.tanh(c_next))
    return h_next, c_next


def register_bilstm(store: ParameterStore, name: str, n_in: int, n_hidden: int) -> None:
    """n_hidden is the per-direction width; outputs are 2 * n_hidden wide."""
    register_lstm(store, f"{name}/fw", n_in, n_hidden)
    register_lstm(store, f"{name}/bw", n_in, n_hidden)


def bilstm_encode(tokens: Sequence[Tensor], name: str, store: ParameterStore) -> list[Tensor]:
    """Per-token contextual states: concat of forward and backward passes."""
    if not tokens:
        raise ValueError("bilstm_encode: empty sequence")
    nh = store.get(f"{name}/fw/wh").data.shape[1]
    zero = ad.constant(np.zeros(nh))

    def run(seq, direction):
        h, c = zero, zero
        outs = []
        for x in seq:
            h, c = lstm_cell(x, h, c, f"{name}/{direction}", store)
            outs.append(h)
        return outs

    fw = run(tokens, "fw")
    bw = run(list(reversed(tokens)), "bw")[::-1]
    return [ad.concat([f, b]) for f, b in zip(fw, bw)]


# ---------------------------------------------------------------------------
# Additive attention
# ---------------------------------------------------------------------------


def register_attention(store: ParameterStore, name: str, d_query: int, d_key: int, d_att: int) -> None:
    store.create(f"{name}/wq", (d_att, d_query), init="glorot")
    store.create(f"{name}/uk", (d_att, d_key), init="glorot")
    store.create(f"{name}/b", (d_att,), init="zeros")
    store.create(f"{name}/v", (d_att,), init="glorot")


def attention_scores(query: Tensor, keys: Tensor, name: str, store: ParameterStore) -> Tensor:
    """Raw additive scores v . tanh(Wq q + Uk k_i + b) for a key matrix."""
    q_part = ad.add(ad.matmul(store.get(f"{name}/wq"), query), store.get(f"{name}/b"))
    proj = ad.add_rowvec(ad.matmul(keys, ad.transpose(store.get(f"{name}/uk"))), q_part)
    return ad.matmul(ad.tanh(proj), store.get(f"{name}/v"))


def additive_attention(query: Tensor, keys: Sequence[Tensor] | Tensor,
                       name: str, store: ParameterStore):
    """Softmax-normalized attention over keys plus the weighted context."""
    if isinstance(keys, Tensor):
        key_matrix = keys
    else:
        if not keys:
            raise ValueError("additive_attention: empty keys")
        key_matrix = ad.stack_rows(list(keys))
    scores = attention_scores(query, key_matrix, name, store)
    alpha = ad.softmax(scores)
    context = ad.matmul(alpha, key_matrix)
    return alpha, context


# ---------------------------------------------------------------------------
# Typed-edge graph propagation (gated recurrent state update)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GnnLayerParams:
    """Handle to one propagation stack: per-edge-type transforms plus a
    gated update cell, registered under `prefix`, applied for `steps` rounds."""

    prefix: str
    width: int
    steps: int
    tags: tuple[EdgeType, ...]

    @staticmethod
    def create(store: ParameterStore, prefix: str, width: int, steps: int,
               tags: Sequence[EdgeType] = tuple(EdgeType)) -> "GnnLayerParams":
        tags = tuple(tags)
        for tag in tags:
            store.create(f"{prefix}/edge/{tag.name}/w", (width, width), init="glorot")
            store.create(f"{prefix}/edge/{tag.name}/b", (width,), init="zeros")
        store.create(f"{prefix}/gru/wm", (3 * width, width), init="glorot")
        store.create(f"{prefix}/gru/uh", (3 * width, width), init="glorot")
        store.create(f"{prefix}/gru/b", (3 * width,), init="zeros")
        return GnnLayerParams(prefix, width, steps, tags)


def _gru_rows(msg: Tensor, state: Tensor, prefix: str, store: ParameterStore) -> Tensor:
    """Row-wise gated update: state' = (1 - z) * state + z * candidate."""
    w = store.get(f"{prefix}/gru/wm")
    u = store.get(f"{prefix}/gru/uh")
    b = store.get(f"{prefix}/gru/b")
    nh = state.data.shape[1]
    gm = ad.add_rowvec(ad.matmul(msg, ad.transpose(w)), b)
    gh = ad.matmul(state, ad.transpose(u))
    z = ad.sigmoid(ad.add(ad.narrow_cols(gm, 0, nh), ad.narrow_cols(gh, 0, nh)))
    r = ad.sigmoid(ad.add(ad.narrow_cols(gm, nh, nh), ad.narrow_cols(gh, nh, nh)))
    cand = ad.tanh(ad.add(ad.narrow_cols(gm, 2 * nh, nh),
                          ad.mul(r, ad.narrow_cols(gh, 2 * nh, nh))))
    one_minus_z = ad.shift(ad.scale(z, -1.0), 1.0)
    return ad.add(ad.mul(one_minus_z, state), ad.mul(z, cand))


def gnn_propagate_matrix(states: Tensor, order: Sequence[NodeId], graph: SchemaGraph,
                         params: GnnLayerParams, store: ParameterStore) -> Tensor:
    """Propagate row-stacked node states; `order` maps rows to node ids."""
    n = len(order)
    if states.data.shape != (n, params.width):
        raise ShapeError(f"gnn: states {states.data.shape} vs ({n}, {params.width})")
    pos = {node: i for i, node in enumerate(order)}
    groups: list[tuple[EdgeType, np.ndarray, np.ndarray]] = []
    for tag in EdgeType:
        pairs = [(pos[e.src], pos[e.tgt]) for e in graph.edges if e.tag is tag]
        if not pairs:
            continue
        if tag not in params.tags:
            raise KeyError(f"no transform registered for edge type {tag.name}")
        src, tgt = zip(*pairs)
        groups.append((tag, np.asarray(src, dtype=np.intp), np.asarray(tgt, dtype=np.intp)))

    h = states
    for _ in range(params.steps):
        msg = ad.constant(np.zeros((n, params.width)))
        for tag, src, tgt in groups:
            w = store.get(f"{params.prefix}/edge/{tag.name}/w")
            b = store.get(f"{params.prefix}/edge/{tag.name}/b")
            transformed = ad.add_rowvec(ad.matmul(ad.gather_rows(h, src), ad.transpose(w)), b)
            msg = ad.add(msg, ad.scatter_add_rows(transformed, tgt, n))
        h = _gru_rows(msg, h, params.prefix, store)
    return h


def gnn_propagate(states: Mapping[NodeId, Tensor], graph: SchemaGraph,
                  params: GnnLayerParams, store: ParameterStore) -> dict[NodeId, Tensor]:
    """Map-in, map-out wrapper over the row-stacked propagation."""
    order = list(graph.nodes)
    missing = [n for n in order if n not in states]
    if missing:
        raise KeyError(f"missing initial state for {missing[0]}")
    stacked = ad.stack_rows([states[n] for n in order])
    out = gnn_propagate_matrix(stacked, order, graph, params, store)
    return {node: ad.row(out, i) for i, node in enumerate(order)}
