"""SQL abstract trees, canonical rendering, and parsing of the supported
dialect: one SELECT block with aggregates, foreign-key joins, conjunctive
WHERE, GROUP BY, ORDER BY, and LIMIT 1.

Rendering is deterministic; ``parse_sql(sql_text(q), graph) == q`` for every
tree the grammar can produce.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .schema_graph import NodeId, NodeKind, SchemaGraph


class SqlParseError(ValueError):
    """The SQL text is outside the supported dialect or names don't resolve."""


class QueryError(ValueError):
    """The tree violates a structural invariant against its graph."""


@dataclass(frozen=True)
class ValueRef:
    """A literal; origin records the pointer that produced it (not compared)."""

    text: str
    token: int | None = field(default=None, compare=False)
    cell: NodeId | None = field(default=None, compare=False)


@dataclass(frozen=True)
class ColumnRef:
    node: NodeId


@dataclass(frozen=True)
class Aggregate:
    op: str  # COUNT | SUM | AVG | MIN | MAX; COUNT may take the star column
    column: NodeId


SelectItem = ColumnRef | Aggregate


@dataclass(frozen=True)
class Condition:
    column: NodeId
    op: str  # = | < | > | LIKE
    value: ValueRef


@dataclass(frozen=True)
class OrderSpec:
    item: SelectItem
    descending: bool


@dataclass(frozen=True)
class SqlQuery:
    from_tables: tuple[NodeId, ...]
    select: tuple[SelectItem, ...]
    where: tuple[Condition, ...] = ()
    group_by: tuple[NodeId, ...] = ()
    order_by: OrderSpec | None = None
    limit: int | None = None


def _item_columns(item: SelectItem) -> tuple[NodeId, ...]:
    if isinstance(item, ColumnRef):
        return (item.node,)
    return (item.column,)


def join_conditions(q: SqlQuery, graph: SchemaGraph) -> list[tuple[NodeId, NodeId]]:
    """Declared (foreign, primary) column pairs whose tables are both in the
    FROM set, in declaration order."""
    tables = set(q.from_tables)
    out = []
    for f, p in graph.fk_pairs:
        if graph.column_table[f] in tables and graph.column_table[p] in tables:
            out.append((f, p))
    return out


def validate_query(q: SqlQuery, graph: SchemaGraph) -> None:
    tables = set(q.from_tables)
    if not q.from_tables or not q.select:
        raise QueryError("query needs at least one table and one select item")
    if len(tables) != len(q.from_tables):
        raise QueryError("duplicate table in FROM")
    star = graph.star_node

    def check_column(node: NodeId, star_ok: bool) -> None:
        if node.kind is not NodeKind.COLUMN:
            raise QueryError(f"{node} is not a column")
        if node == star:
            if not star_ok:
                raise QueryError("`*` is only valid as the COUNT argument")
            return
        table = graph.column_table.get(node)
        if table is None or table not in tables:
            raise QueryError(f"column {graph.display(node)} not covered by FROM")

    for t in q.from_tables:
        if t.kind is not NodeKind.TABLE or t not in graph.node_set:
            raise QueryError(f"{t} is not a table of this graph")
    for item in q.select:
        if isinstance(item, ColumnRef):
            check_column(item.node, star_ok=False)
        else:
            check_column(item.column, star_ok=item.op == "COUNT")
    for cond in q.where:
        check_column(cond.column, star_ok=False)
    for col in q.group_by:
        check_column(col, star_ok=False)
    if q.order_by is not None:
        item = q.order_by.item
        if isinstance(item, ColumnRef):
            check_column(item.node, star_ok=False)
        else:
            check_column(item.column, star_ok=item.op == "COUNT")
    # Every table beyond the first must join to an earlier one by declared keys.
    for i, t in enumerate(q.from_tables[1:], start=1):
        earlier = set(q.from_tables[:i])
        if not (graph.fk_tables(t) & earlier):
            raise QueryError(f"table {graph.names[t]} has no key path to the earlier FROM tables")


def extract_constants(q: SqlQuery, graph: SchemaGraph) -> frozenset[NodeId]:
    """Tables and columns the query references, including derived join-key
    columns; the `*` pseudo-column is excluded."""
    star = graph.star_node
    out: set[NodeId] = set(q.from_tables)
    for item in q.select:
        out.update(_item_columns(item))
    for cond in q.where:
        out.add(cond.column)
    out.update(q.group_by)
    if q.order_by is not None:
        out.update(_item_columns(q.order_by.item))
    for f, p in join_conditions(q, graph):
        out.add(f)
        out.add(p)
    out.discard(star)
    return frozenset(out)


_NUMBER = re.compile(r"^-?\d+(\.\d+)?$")


def _render_value(v: ValueRef) -> str:
    if _NUMBER.match(v.text):
        return v.text
    return "'" + v.text.replace("'", "''") + "'"


def _render_item(item: SelectItem, graph: SchemaGraph) -> str:
    if isinstance(item, ColumnRef):
        return graph.display(item.node)
    arg = "*" if item.column == graph.star_node else graph.display(item.column)
    return f"{item.op}({arg})"


def sql_text(q: SqlQuery, graph: SchemaGraph) -> str:
    """Canonical SQL rendering of the tree."""
    validate_query(q, graph)
    parts = ["SELECT " + ", ".join(_render_item(i, graph) for i in q.select)]
    joins = join_conditions(q, graph)
    from_sql = graph.names[q.from_tables[0]]
    placed: set[NodeId] = {q.from_tables[0]}
    for t in q.from_tables[1:]:
        conds = []
        for f, p in joins:
            tf, tp = graph.column_table[f], graph.column_table[p]
            pair = {tf, tp}
            if t in pair and (pair - {t}) <= placed:
                conds.append(f"{graph.display(f)} = {graph.display(p)}")
        from_sql += f" JOIN {graph.names[t]} ON " + " AND ".join(conds)
        placed.add(t)
    parts.append("FROM " + from_sql)
    if q.where:
        parts.append("WHERE " + " AND ".join(
            f"{graph.display(c.column)} {c.op} {_render_value(c.value)}" for c in q.where))
    if q.group_by:
        parts.append("GROUP BY " + ", ".join(graph.display(c) for c in q.group_by))
    if q.order_by is not None:
        direction = "DESC" if q.order_by.descending else "ASC"
        parts.append(f"ORDER BY {_render_item(q.order_by.item, graph)} {direction}")
    if q.limit is not None:
        parts.append(f"LIMIT {q.limit}")
    return " ".join(parts)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOKEN = re.compile(r"""
    \s*(
        '(?:[^']|'')*'            # quoted string
      | "[^"]*"                   # double-quoted identifier/string
      | [A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_*][A-Za-z0-9_]*)?   # ident / t.c
      | -?\d+(?:\.\d+)?           # number
      | <=|>=|<>|!=|[(),*=<>]
    )""", re.VERBOSE)

_KEYWORDS = {"select", "from", "join", "on", "where", "and", "group", "order",
             "by", "asc", "desc", "limit", "count", "sum", "avg", "min", "max", "like"}


def _lex(text: str) -> list[str]:
    out, pos = [], 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            if text[pos:].strip() == "":
                break
            raise SqlParseError(f"cannot tokenize SQL at offset {pos}: {text[pos:pos+20]!r}")
        out.append(m.group(1))
        pos = m.end()
    return out


class _Cursor:
    def __init__(self, tokens: list[str]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> str | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self) -> str:
        tok = self.peek()
        if tok is None:
            raise SqlParseError("unexpected end of SQL")
        self.pos += 1
        return tok

    def accept(self, word: str) -> bool:
        tok = self.peek()
        if tok is not None and tok.lower() == word:
            self.pos += 1
            return True
        return False

    def expect(self, word: str) -> None:
        tok = self.next()
        if tok.lower() != word:
            raise SqlParseError(f"expected {word.upper()!r}, found {tok!r}")


class _Resolver:
    def __init__(self, graph: SchemaGraph):
        self.graph = graph
        self.tables_by_name = {graph.names[t].lower(): t for t in graph.tables}
        self.from_tables: list[NodeId] = []

    def table(self, name: str) -> NodeId:
        node = self.tables_by_name.get(name.lower())
        if node is None:
            raise SqlParseError(f"unknown table {name!r}")
        return node

    def column(self, token: str) -> NodeId:
        g = self.graph
        if token == "*":
            if g.star_node is None:
                raise SqlParseError("graph has no `*` column")
            return g.star_node
        if "." in token:
            tname, cname = token.split(".", 1)
            table = self.table(tname)
            for col in g.table_columns.get(table, ()):
                if g.names[col].lower() == cname.lower():
                    return col
            raise SqlParseError(f"unknown column {token!r}")
        hits = []
        for table in self.from_tables:
            for col in g.table_columns.get(table, ()):
                if g.names[col].lower() == token.lower():
                    hits.append(col)
        if len(hits) != 1:
            raise SqlParseError(f"column {token!r} is {'ambiguous' if hits else 'unknown'} in FROM scope")
        return hits[0]


def _parse_item(cur: _Cursor, res: _Resolver) -> SelectItem:
    tok = cur.peek()
    if tok is not None and tok.lower() in {"count", "sum", "avg", "min", "max"}:
        op = cur.next().upper()
        cur.expect("(")
        col = res.column(cur.next())
        cur.expect(")")
        if col == res.graph.star_node and op != "COUNT":
            raise SqlParseError(f"{op}(*) is not supported")
        return Aggregate(op, col)
    return ColumnRef(res.column(cur.next()))


def _parse_value(cur: _Cursor) -> ValueRef:
    tok = cur.next()
    if tok.startswith("'") and tok.endswith("'"):
        return ValueRef(tok[1:-1].replace("''", "'"))
    if tok.startswith('"') and tok.endswith('"'):
        return ValueRef(tok[1:-1])
    if _NUMBER.match(tok):
        return ValueRef(tok)
    raise SqlParseError(f"expected a literal value, found {tok!r}")


def parse_sql(text: str, graph: SchemaGraph) -> SqlQuery:
    """Parse canonical or near-canonical SQL against a schema graph.

    Raises SqlParseError for anything outside the supported dialect.
    """
    cur = _Cursor(_lex(text.strip().rstrip(";")))
    res = _Resolver(graph)
    cur.expect("select")
    # Select items are resolved after FROM so bare column names have scope.
    select_start = cur.pos
    depth = 0
    while True:
        tok = cur.peek()
        if tok is None:
            raise SqlParseError("missing FROM clause")
        if tok.lower() == "from" and depth == 0:
            break
        if tok == "(":
            depth += 1
        elif tok == ")":
            depth -= 1
        cur.next()
    select_end = cur.pos
    cur.expect("from")
    res.from_tables.append(res.table(cur.next()))
    on_pairs: list[tuple[NodeId, NodeId]] = []
    while cur.accept("join"):
        res.from_tables.append(res.table(cur.next()))
        cur.expect("on")
        while True:
            left = res.column(cur.next())
            cur.expect("=")
            right = res.column(cur.next())
            on_pairs.append((left, right))
            if not cur.accept("and"):
                break
    tail_pos = cur.pos

    item_cur = _Cursor(cur.tokens[select_start:select_end])
    select: list[SelectItem] = [_parse_item(item_cur, res)]
    while item_cur.accept(","):
        select.append(_parse_item(item_cur, res))
    if item_cur.peek() is not None:
        raise SqlParseError(f"trailing tokens in select list: {item_cur.peek()!r}")

    cur.pos = tail_pos
    where: list[Condition] = []
    if cur.accept("where"):
        while True:
            col = res.column(cur.next())
            op = cur.next()
            if op.lower() == "like":
                op = "LIKE"
            elif op not in {"=", "<", ">"}:
                raise SqlParseError(f"unsupported comparison {op!r}")
            where.append(Condition(col, op, _parse_value(cur)))
            if not cur.accept("and"):
                break
    group: list[NodeId] = []
    if cur.accept("group"):
        cur.expect("by")
        group.append(res.column(cur.next()))
        while cur.accept(","):
            group.append(res.column(cur.next()))
    order: OrderSpec | None = None
    if cur.accept("order"):
        cur.expect("by")
        item = _parse_item(cur, res)
        descending = False
        if cur.accept("desc"):
            descending = True
        else:
            cur.accept("asc")
        order = OrderSpec(item, descending)
    limit: int | None = None
    if cur.accept("limit"):
        tok = cur.next()
        if not tok.isdigit() or int(tok) != 1:
            raise SqlParseError(f"only LIMIT 1 is supported, found {tok!r}")
        limit = 1
    if cur.peek() is not None:
        raise SqlParseError(f"trailing tokens: {cur.peek()!r}")

    q = SqlQuery(tuple(res.from_tables), tuple(select), tuple(where),
                 tuple(group), order, limit)
    try:
        validate_query(q, graph)
    except QueryError as err:
        raise SqlParseError(str(err)) from err
    declared = set(join_conditions(q, graph))
    for left, right in on_pairs:
        if (left, right) not in declared and (right, left) not in declared:
            raise SqlParseError(
                f"join condition {graph.display(left)} = {graph.display(right)} "
                "is not a declared key pair")
    return q
