"""The SQL grammar driving top-down decoding.

Rules expand nonterminals into sequences of symbols.  Three special symbols
(TABLE, COLUMN, VALUE) are decision slots resolved by constant or pointer
selection instead of a production rule.  A derivation is the leftmost
top-down sequence of those decisions.
"""

from __future__ import annotations

from dataclasses import dataclass

# Nonterminals
QUERY = "QUERY"
FROM_CLAUSE = "FROM_CLAUSE"
TABLE_LIST = "TABLE_LIST"
SELECT_CLAUSE = "SELECT_CLAUSE"
ITEM_LIST = "ITEM_LIST"
ITEM = "ITEM"
AGG = "AGG"
AGG_OP = "AGG_OP"
AGG_ARG = "AGG_ARG"
WHERE_CLAUSE = "WHERE_CLAUSE"
COND_LIST = "COND_LIST"
COND = "COND"
CMP = "CMP"
GROUP_CLAUSE = "GROUP_CLAUSE"
ORDER_CLAUSE = "ORDER_CLAUSE"
ORDER_ITEM = "ORDER_ITEM"
DIR = "DIR"
LIMIT_CLAUSE = "LIMIT_CLAUSE"

# Decision slots
TABLE = "TABLE"
COLUMN = "COLUMN"
VALUE = "VALUE"

DECISION_SLOTS = frozenset({TABLE, COLUMN, VALUE})


@dataclass(frozen=True)
class Rule:
    rule_id: int
    lhs: str
    rhs: tuple[str, ...]
    label: str

    def __repr__(self) -> str:
        return f"[{self.rule_id}] {self.lhs} -> {' '.join(self.rhs) or 'eps'} ({self.label})"


@dataclass(frozen=True)
class SqlGrammar:
    rules: tuple[Rule, ...]
    start: str = QUERY

    def __post_init__(self):
        by_lhs: dict[str, list[int]] = {}
        for r in self.rules:
            by_lhs.setdefault(r.lhs, []).append(r.rule_id)
        object.__setattr__(self, "_by_lhs", {k: tuple(v) for k, v in by_lhs.items()})
        for nt in self.nonterminals:
            if not self._by_lhs.get(nt):
                raise ValueError(f"nonterminal {nt} has no production")

    @property
    def nonterminals(self) -> frozenset[str]:
        return frozenset(r.lhs for r in self.rules)

    def productions(self, lhs: str) -> tuple[int, ...]:
        return self._by_lhs[lhs]

    def rule(self, rule_id: int) -> Rule:
        return self.rules[rule_id]

    def __len__(self) -> int:
        return len(self.rules)


def _build_default() -> SqlGrammar:
    spec: list[tuple[str, tuple[str, ...], str]] = [
        (QUERY, (FROM_CLAUSE, SELECT_CLAUSE, WHERE_CLAUSE, GROUP_CLAUSE,
                 ORDER_CLAUSE, LIMIT_CLAUSE), "query"),
        (FROM_CLAUSE, (TABLE_LIST,), "from"),
        (TABLE_LIST, (TABLE,), "table_last"),
        (TABLE_LIST, (TABLE, TABLE_LIST), "table_more"),
        (SELECT_CLAUSE, (ITEM_LIST,), "select"),
        (ITEM_LIST, (ITEM,), "item_last"),
        (ITEM_LIST, (ITEM, ITEM_LIST), "item_more"),
        (ITEM, (COLUMN,), "item_column"),
        (ITEM, (AGG,), "item_agg"),
        (AGG, (AGG_OP, AGG_ARG), "agg"),
        (AGG_OP, (), "COUNT"),
        (AGG_OP, (), "SUM"),
        (AGG_OP, (), "AVG"),
        (AGG_OP, (), "MIN"),
        (AGG_OP, (), "MAX"),
        (AGG_ARG, (COLUMN,), "agg_arg"),
        (WHERE_CLAUSE, (), "no_where"),
        (WHERE_CLAUSE, (COND_LIST,), "where"),
        (COND_LIST, (COND,), "cond_last"),
        (COND_LIST, (COND, COND_LIST), "cond_more"),
        (COND, (COLUMN, CMP, VALUE), "cond"),
        (CMP, (), "="),
        (CMP, (), "<"),
        (CMP, (), ">"),
        (CMP, (), "LIKE"),
        (GROUP_CLAUSE, (), "no_group"),
        (GROUP_CLAUSE, (COLUMN,), "group"),
        (ORDER_CLAUSE, (), "no_order"),
        (ORDER_CLAUSE, (ORDER_ITEM, DIR), "order"),
        (ORDER_ITEM, (COLUMN,), "order_column"),
        (ORDER_ITEM, (AGG,), "order_agg"),
        (DIR, (), "ASC"),
        (DIR, (), "DESC"),
        (LIMIT_CLAUSE, (), "no_limit"),
        (LIMIT_CLAUSE, (), "limit_one"),
    ]
    return SqlGrammar(tuple(Rule(i, lhs, rhs, label) for i, (lhs, rhs, label) in enumerate(spec)))


DEFAULT_GRAMMAR = _build_default()

AGG_OPS = ("COUNT", "SUM", "AVG", "MIN", "MAX")
CMP_OPS = ("=", "<", ">", "LIKE")
