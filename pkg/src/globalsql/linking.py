"""Local word-to-constant similarity: string features, learned embeddings,
the link score matrix, and the two normalized distributions derived from it.

Constant names are multi-token (split on underscores and case boundaries);
per-feature values are the best over name tokens, and a constant embeds as
the mean of its name-token embeddings plus a kind embedding.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor
from .nn import ff, register_ff
from .schema_graph import NodeId, NodeKind, SchemaGraph


UNKNOWN_WORD = "<unk>"

_NAME_SPLIT = re.compile(r"[^0-9a-zA-Z]+")
_CAMEL = re.compile(r"(?<=[a-z0-9])(?=[A-Z])")


def split_name(name: str) -> tuple[str, ...]:
    """Lowercased name tokens, split on non-alphanumerics and camelCase."""
    parts = []
    for chunk in _NAME_SPLIT.split(name):
        for piece in _CAMEL.split(chunk):
            if piece:
                parts.append(piece.lower())
    return tuple(parts)


def edit_distance(a: str, b: str) -> int:
    """Case-insensitive Levenshtein distance with unit edit costs."""
    a, b = a.lower(), b.lower()
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def overlap_fraction(a: str, b: str) -> float:
    """Longest common contiguous substring length over the longer length."""
    a, b = a.lower(), b.lower()
    if not a or not b:
        return 0.0
    best = 0
    prev = [0] * (len(b) + 1)
    for ca in a:
        cur = [0]
        for j, cb in enumerate(b, start=1):
            run = prev[j - 1] + 1 if ca == cb else 0
            cur.append(run)
            if run > best:
                best = run
        prev = cur
    return best / max(len(a), len(b))


@dataclass(frozen=True)
class LinkFeatures:
    edit_distance: int
    overlap_fraction: float
    exact_match: int
    prefix_match: int

    def as_array(self) -> np.ndarray:
        # Edit distance saturates at 10 so the scorer sees bounded inputs.
        return np.array([min(self.edit_distance, 10) / 10.0, self.overlap_fraction,
                         float(self.exact_match), float(self.prefix_match)])


def link_features(word: str, name: str) -> LinkFeatures:
    """Best feature values of the word against the name's tokens."""
    tokens = split_name(name) or (name.lower(),)
    w = word.lower()
    dist = min(edit_distance(w, t) for t in tokens)
    overlap = max(overlap_fraction(w, t) for t in tokens)
    exact = int(any(w == t for t in tokens))
    prefix = int(any(t.startswith(w) or w.startswith(t) for t in tokens if t and w))
    if exact:
        dist = 0
    return LinkFeatures(dist, overlap, exact, prefix)


class Vocab:
    """Word-to-row mapping for the shared embedding matrix; row 0 is unknown."""

    def __init__(self, words: Sequence[str] = ()):
        self.words: list[str] = [UNKNOWN_WORD]
        self._index: dict[str, int] = {UNKNOWN_WORD: 0}
        for w in words:
            self.add(w)

    def add(self, word: str) -> int:
        w = word.lower()
        if w not in self._index:
            self._index[w] = len(self.words)
            self.words.append(w)
        return self._index[w]

    def index(self, word: str) -> int:
        return self._index.get(word.lower(), 0)

    def __len__(self) -> int:
        return len(self.words)


class LinkTarget(NamedTuple):
    node: NodeId
    name: str
    kind: NodeKind


def link_targets(graph: SchemaGraph) -> tuple[list[LinkTarget], list[LinkTarget]]:
    """(constants, cells) with display-free raw names for feature computation."""
    consts = [LinkTarget(n, graph.names[n], n.kind) for n in graph.constants]
    cells = [LinkTarget(n, graph.names[n], n.kind) for n in graph.cells]
    return consts, cells


_KIND_ROW = {NodeKind.TABLE: 0, NodeKind.COLUMN: 1, NodeKind.CELL: 2}

ARTIFACT_FEATURES = 4


def register_linking(store: ParameterStore, vocab_size: int, embed_width: int, prefix: str = "") -> None:
    store.create(f"{prefix}emb/words", (vocab_size, embed_width), init="uniform")
    store.create(f"{prefix}emb/kinds", (3, embed_width), init="uniform")
    if not prefix:
        register_ff(store, "link/ff", [2 * embed_width + ARTIFACT_FEATURES, embed_width, 1])


def word_rows(words: Sequence[str], vocab: Vocab) -> list[int]:
    return [vocab.index(w) for w in words]


def embed_words(words: Sequence[str], params: ParameterStore, vocab: Vocab,
                prefix: str = "") -> Tensor:
    """(len(words), d) matrix of word embeddings; unknowns share row 0."""
    return ad.gather_rows(params.get(f"{prefix}emb/words"), word_rows(words, vocab))


def constant_embedding(target: LinkTarget, params: ParameterStore, vocab: Vocab,
                       prefix: str = "") -> Tensor:
    """Mean of name-token embeddings plus the kind embedding."""
    tokens = split_name(target.name) or (target.name,)
    toks = embed_words(tokens, params, vocab, prefix)
    mean = ad.scale(ad.sum_axis(toks, 0), 1.0 / len(tokens))
    kind = ad.row(params.get(f"{prefix}emb/kinds"), _KIND_ROW[target.kind])
    return ad.add(mean, kind)


def constant_embeddings(targets: Sequence[LinkTarget], params: ParameterStore,
                        vocab: Vocab, prefix: str = "") -> Tensor:
    """Row-stacked constant embeddings in target order."""
    return ad.stack_rows([constant_embedding(t, params, vocab, prefix) for t in targets])


def link_score(word: str, constant: tuple[str, NodeKind] | LinkTarget,
               params: ParameterStore, vocab: Vocab) -> Tensor:
    """Scalar similarity of one word against one constant."""
    if isinstance(constant, LinkTarget):
        name, kind = constant.name, constant.kind
    else:
        name, kind = constant
    target = LinkTarget(NodeId(NodeKind.COLUMN, -1), name, kind)
    w = ad.row(embed_words([word], params, vocab), 0)
    c = constant_embedding(target, params, vocab)
    feats = ad.constant(link_features(word, name).as_array())
    out = ff(ad.concat([w, c, feats]), "link/ff", params)
    return ad.element(out, 0)


def score_matrix(question: Sequence[str], targets: Sequence[LinkTarget],
                 params: ParameterStore, vocab: Vocab) -> Tensor:
    """(|question|, |targets|) link scores via one batched scorer pass."""
    n_w, n_t = len(question), len(targets)
    words = embed_words(question, params, vocab)
    consts = constant_embeddings(targets, params, vocab)
    feats = np.empty((n_w * n_t, ARTIFACT_FEATURES))
    for i, w in enumerate(question):
        for j, t in enumerate(targets):
            feats[i * n_t + j] = link_features(w, t.name).as_array()
    rows = ad.concat_cols([
        ad.repeat_rows(words, n_t),
        ad.tile_rows(consts, n_w),
        ad.constant(feats),
    ])
    return ad.reshape(ff(rows, "link/ff", params), (n_w, n_t))


@dataclass
class LinkMatrix:
    """Link scores over the graph's constants plus both normalizations."""

    words: tuple[str, ...]
    constants: tuple[NodeId, ...]
    scores: Tensor                 # (|words|, |constants|)
    p_link_given_word: Tensor      # rows sum to 1
    p_link_given_constant: Tensor  # columns sum to 1

    def col(self, node: NodeId) -> int:
        return self.constants.index(node)


@dataclass
class RelevanceVector:
    constants: tuple[NodeId, ...]
    rho: Tensor  # (|constants|,) in (0, 1]


def build_link_matrix(question: Sequence[str], constants: Sequence[LinkTarget],
                      params: ParameterStore, vocab: Vocab,
                      scores: Tensor | None = None) -> LinkMatrix:
    """Score every (word, constant) pair and normalize along both axes."""
    if not question:
        raise ValueError("build_link_matrix: empty question")
    if not constants:
        raise ValueError("build_link_matrix: empty constant list")
    if scores is None:
        scores = score_matrix(question, constants, params, vocab)
    return LinkMatrix(
        words=tuple(question),
        constants=tuple(t.node for t in constants),
        scores=scores,
        p_link_given_word=ad.softmax(scores, axis=1),
        p_link_given_constant=ad.softmax(scores, axis=0),
    )


def local_relevance(m: LinkMatrix) -> RelevanceVector:
    """Per-constant max over words of p(constant | word)."""
    return RelevanceVector(m.constants, ad.max_axis(m.p_link_given_word, axis=0))


def cell_relevance(graph: SchemaGraph, m: LinkMatrix) -> list[Tensor]:
    """Per-cell scalar relevance: the owning column's p(constant | word),
    maxed over the question words that match the cell text."""
    from .schema_graph import cell_matches_word

    out = []
    for cell in graph.cells:
        j = m.col(graph.cell_column[cell])
        matched = [i for i, w in enumerate(m.words)
                   if cell_matches_word(graph.names[cell], w)]
        if not matched:
            matched = list(range(len(m.words)))
        picks = ad.concat([ad.element(m.p_link_given_word, (i, j)) for i in matched])
        out.append(ad.element(ad.max_axis(ad.reshape(picks, (1, len(matched))), axis=1), 0))
    return out
