"""Typed graph representation of a database schema.

Tables and columns are the selectable constants; cell-value nodes are added
per question for cells that partially match a question word; a single global
node, connected to everything, supports whole-graph readouts.  All operations
are pure: they return new graphs and never mutate their inputs.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Iterable, Mapping, NamedTuple, Sequence


class SchemaError(ValueError):
    """Structural validation failure in a schema or graph operation."""


class NodeKind(Enum):
    TABLE = 0
    COLUMN = 1
    CELL = 2
    GLOBAL = 3


@dataclass(frozen=True)
class NodeId:
    kind: NodeKind
    index: int

    def sort_key(self) -> tuple[int, int]:
        return (self.kind.value, self.index)

    def __repr__(self) -> str:
        return f"{self.kind.name.lower()}:{self.index}"


class EdgeType(Enum):
    TABLE_TO_COLUMN = 0
    COLUMN_TO_TABLE = 1
    FOREIGN_TO_PRIMARY = 2
    PRIMARY_TO_FOREIGN = 3
    GLOBAL_LINK = 4
    CELL_TO_COLUMN = 5
    COLUMN_TO_CELL = 6


class Edge(NamedTuple):
    src: NodeId
    tgt: NodeId
    tag: EdgeType


class Column(NamedTuple):
    table: int  # -1 only for the `*` pseudo-column
    name: str
    value_type: str  # text | number | time | boolean | other


VALUE_TYPES = frozenset({"text", "number", "time", "boolean", "other"})
STAR = "*"


@dataclass(frozen=True)
class Schema:
    db_id: str
    tables: tuple[str, ...]
    columns: tuple[Column, ...]
    primary_keys: frozenset[int]
    foreign_keys: frozenset[tuple[int, int]]

    def validate(self) -> None:
        for ci, col in enumerate(self.columns):
            if col.table == -1 and col.name == STAR:
                continue
            if not 0 <= col.table < len(self.tables):
                raise SchemaError(f"column {ci} ({col.name!r}) references invalid table index {col.table}")
            if col.value_type not in VALUE_TYPES:
                raise SchemaError(f"column {ci} has invalid value type {col.value_type!r}")
        for pk in self.primary_keys:
            if not 0 <= pk < len(self.columns):
                raise SchemaError(f"primary key references invalid column index {pk}")
        for fk, pk in self.foreign_keys:
            for idx in (fk, pk):
                if not 0 <= idx < len(self.columns):
                    raise SchemaError(f"foreign key references invalid column index {idx}")
            if self.columns[fk].table == self.columns[pk].table:
                raise SchemaError(f"foreign key ({fk}, {pk}) must join two distinct tables")


@dataclass(frozen=True)
class CellMatch:
    column: NodeId
    text: str
    words: frozenset[int]


@dataclass(eq=True)
class SchemaGraph:
    nodes: tuple[NodeId, ...]
    names: dict[NodeId, str]
    edges: tuple[Edge, ...]
    schema: Schema = field(compare=False, repr=False, default=None)

    @cached_property
    def node_set(self) -> frozenset[NodeId]:
        return frozenset(self.nodes)

    @cached_property
    def constants(self) -> tuple[NodeId, ...]:
        return tuple(n for n in self.nodes if n.kind in (NodeKind.TABLE, NodeKind.COLUMN))

    @cached_property
    def tables(self) -> tuple[NodeId, ...]:
        return tuple(n for n in self.nodes if n.kind is NodeKind.TABLE)

    @cached_property
    def columns(self) -> tuple[NodeId, ...]:
        return tuple(n for n in self.nodes if n.kind is NodeKind.COLUMN)

    @cached_property
    def cells(self) -> tuple[NodeId, ...]:
        return tuple(n for n in self.nodes if n.kind is NodeKind.CELL)

    @cached_property
    def global_node(self) -> NodeId | None:
        for n in self.nodes:
            if n.kind is NodeKind.GLOBAL:
                return n
        return None

    @cached_property
    def star_node(self) -> NodeId | None:
        for n in self.columns:
            if self.names[n] == STAR:
                return n
        return None

    @cached_property
    def column_table(self) -> dict[NodeId, NodeId]:
        """Column node -> its table node (star column has none)."""
        out = {}
        for e in self.edges:
            if e.tag is EdgeType.TABLE_TO_COLUMN:
                out[e.tgt] = e.src
        return out

    @cached_property
    def table_columns(self) -> dict[NodeId, tuple[NodeId, ...]]:
        out: dict[NodeId, list[NodeId]] = {t: [] for t in self.tables}
        for e in self.edges:
            if e.tag is EdgeType.TABLE_TO_COLUMN:
                out[e.src].append(e.tgt)
        return {t: tuple(cols) for t, cols in out.items()}

    @cached_property
    def fk_pairs(self) -> tuple[tuple[NodeId, NodeId], ...]:
        """(foreign column, primary column) node pairs, in edge order."""
        return tuple((e.src, e.tgt) for e in self.edges if e.tag is EdgeType.FOREIGN_TO_PRIMARY)

    @cached_property
    def column_cells(self) -> dict[NodeId, tuple[NodeId, ...]]:
        out: dict[NodeId, list[NodeId]] = {}
        for e in self.edges:
            if e.tag is EdgeType.COLUMN_TO_CELL:
                out.setdefault(e.src, []).append(e.tgt)
        return {c: tuple(cells) for c, cells in out.items()}

    @cached_property
    def cell_column(self) -> dict[NodeId, NodeId]:
        return {e.src: e.tgt for e in self.edges if e.tag is EdgeType.CELL_TO_COLUMN}

    def fk_tables(self, node: NodeId) -> frozenset[NodeId]:
        """Tables joined to this table node through a declared key pair."""
        linked = set()
        for f, p in self.fk_pairs:
            tf, tp = self.column_table[f], self.column_table[p]
            if tf == node:
                linked.add(tp)
            elif tp == node:
                linked.add(tf)
        return frozenset(linked)

    def display(self, node: NodeId) -> str:
        """Human-readable name: table, table.column, cell text, or <global>."""
        if node.kind is NodeKind.COLUMN:
            table = self.column_table.get(node)
            if table is None:
                return self.names[node]
            return f"{self.names[table]}.{self.names[node]}"
        if node.kind is NodeKind.GLOBAL:
            return "<global>"
        return self.names[node]


def _word_tokens(text: str) -> list[str]:
    return re.findall(r"[a-z0-9]+", text.lower())


def build_graph(schema: Schema) -> SchemaGraph:
    """Structural graph over tables and columns with bidirectional edges."""
    schema.validate()
    nodes: list[NodeId] = []
    names: dict[NodeId, str] = {}
    for ti, tname in enumerate(schema.tables):
        node = NodeId(NodeKind.TABLE, ti)
        nodes.append(node)
        names[node] = tname
    for ci, col in enumerate(schema.columns):
        node = NodeId(NodeKind.COLUMN, ci)
        nodes.append(node)
        names[node] = col.name

    edges: list[Edge] = []
    for ci, col in enumerate(schema.columns):
        if col.table == -1:
            continue  # the `*` pseudo-column stays detached
        t = NodeId(NodeKind.TABLE, col.table)
        c = NodeId(NodeKind.COLUMN, ci)
        edges.append(Edge(t, c, EdgeType.TABLE_TO_COLUMN))
        edges.append(Edge(c, t, EdgeType.COLUMN_TO_TABLE))
    for fk, pk in sorted(schema.foreign_keys):
        f = NodeId(NodeKind.COLUMN, fk)
        p = NodeId(NodeKind.COLUMN, pk)
        edges.append(Edge(f, p, EdgeType.FOREIGN_TO_PRIMARY))
        edges.append(Edge(p, f, EdgeType.PRIMARY_TO_FOREIGN))
    return SchemaGraph(tuple(nodes), names, tuple(edges), schema)


def add_global_node(graph: SchemaGraph) -> SchemaGraph:
    """Append the single global node, linked in both directions to all nodes."""
    if graph.global_node is not None:
        raise SchemaError("graph already has a global node")
    g = NodeId(NodeKind.GLOBAL, 0)
    edges = list(graph.edges)
    for n in graph.nodes:
        edges.append(Edge(g, n, EdgeType.GLOBAL_LINK))
        edges.append(Edge(n, g, EdgeType.GLOBAL_LINK))
    names = dict(graph.names)
    names[g] = "<global>"
    return SchemaGraph(graph.nodes + (g,), names, tuple(edges), graph.schema)


def cell_matches_word(cell_text: str, word: str) -> bool:
    """Partial match: the word equals the cell text or one of its tokens."""
    w = word.lower().strip()
    if not w:
        return False
    norm = cell_text.lower().strip()
    return w == norm or w in _word_tokens(norm)


def attach_cell_nodes(
    graph: SchemaGraph,
    contents: Mapping[NodeId, Sequence[str]],
    question: Sequence[str],
) -> tuple[SchemaGraph, list[CellMatch]]:
    """Add one cell-value node per (column, cell text) that matches a question
    word, with edges in both directions; duplicate texts collapse."""
    column_set = set(graph.columns)
    for node in contents:
        if node not in column_set:
            raise SchemaError(f"contents reference non-column node {node}")

    nodes = list(graph.nodes)
    names = dict(graph.names)
    edges = list(graph.edges)
    matches: list[CellMatch] = []
    next_index = len(graph.cells)
    for col in graph.columns:
        seen: set[str] = set()
        for raw in contents.get(col, ()):
            text = str(raw).strip()
            key = text.lower()
            if not text or key in seen:
                continue
            matched = frozenset(i for i, w in enumerate(question) if cell_matches_word(text, w))
            if not matched:
                continue
            seen.add(key)
            cell = NodeId(NodeKind.CELL, next_index)
            next_index += 1
            nodes.append(cell)
            names[cell] = text
            edges.append(Edge(col, cell, EdgeType.COLUMN_TO_CELL))
            edges.append(Edge(cell, col, EdgeType.CELL_TO_COLUMN))
            matches.append(CellMatch(col, text, matched))
    if not matches:
        return graph, []
    return SchemaGraph(tuple(nodes), names, tuple(edges), graph.schema), matches


def induced_subgraph(graph: SchemaGraph, selected: Iterable[NodeId]) -> SchemaGraph:
    """Restrict to the selected nodes plus the global node, keeping every edge
    whose endpoints both survive."""
    if graph.global_node is None:
        raise SchemaError("induced_subgraph requires a graph with a global node")
    chosen = set(selected)
    for n in chosen:
        if n not in graph.node_set:
            raise SchemaError(f"selected node {n} is not in the graph")
        if n.kind is NodeKind.GLOBAL:
            raise SchemaError("the global node is implicit; do not select it")
    keep = chosen | {graph.global_node}
    nodes = tuple(n for n in graph.nodes if n in keep)
    names = {n: graph.names[n] for n in nodes}
    edges = tuple(e for e in graph.edges if e.src in keep and e.tgt in keep)
    return SchemaGraph(nodes, names, edges, graph.schema)


def strip_global(graph: SchemaGraph) -> SchemaGraph:
    """The graph without its global node (no-op if absent)."""
    g = graph.global_node
    if g is None:
        return graph
    nodes = tuple(n for n in graph.nodes if n != g)
    names = {n: graph.names[n] for n in nodes}
    edges = tuple(e for e in graph.edges if e.src != g and e.tgt != g)
    return SchemaGraph(nodes, names, edges, graph.schema)


_REVERSE = {
    EdgeType.TABLE_TO_COLUMN: EdgeType.COLUMN_TO_TABLE,
    EdgeType.COLUMN_TO_TABLE: EdgeType.TABLE_TO_COLUMN,
    EdgeType.FOREIGN_TO_PRIMARY: EdgeType.PRIMARY_TO_FOREIGN,
    EdgeType.PRIMARY_TO_FOREIGN: EdgeType.FOREIGN_TO_PRIMARY,
    EdgeType.GLOBAL_LINK: EdgeType.GLOBAL_LINK,
    EdgeType.CELL_TO_COLUMN: EdgeType.COLUMN_TO_CELL,
    EdgeType.COLUMN_TO_CELL: EdgeType.CELL_TO_COLUMN,
}


def validate_graph(graph: SchemaGraph) -> None:
    """Exhaustive structural checks; raises SchemaError on any violation."""
    node_set = graph.node_set
    if len(graph.nodes) != len(node_set):
        raise SchemaError("duplicate node ids")
    if sum(1 for n in graph.nodes if n.kind is NodeKind.GLOBAL) > 1:
        raise SchemaError("more than one global node")
    edge_set = set(graph.edges)
    if len(edge_set) != len(graph.edges):
        raise SchemaError("duplicate (source, target, tag) triple")
    for e in graph.edges:
        if e.src not in node_set or e.tgt not in node_set:
            raise SchemaError(f"edge {e} references unknown node")
        if e.tag is EdgeType.GLOBAL_LINK:
            if (e.src.kind is NodeKind.GLOBAL) == (e.tgt.kind is NodeKind.GLOBAL):
                raise SchemaError(f"global link must touch the global node on exactly one end: {e}")
        if Edge(e.tgt, e.src, _REVERSE[e.tag]) not in edge_set:
            raise SchemaError(f"missing reverse edge for {e}")
