"""Seeded synthetic corpora: random schemas with foreign keys and contents,
plus templated question/SQL pairs covering every grammar production.

Questions are built from the constant-name tokens (so linking is learnable)
with fixed template words cueing the query structure, plus occasional
distractor suffixes.  Literals in WHERE clauses are drawn from the generated
table contents so both token and cell pointers occur.
"""

from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass
from pathlib import Path

from .linking import split_name

TABLE_WORDS = [
    "singer", "song", "concert", "album", "artist", "band", "customer",
    "invoice", "product", "store", "city", "nation", "student", "course",
    "teacher", "school", "employee", "company", "division", "book", "author",
    "movie", "actor", "team", "player", "flight", "airport", "hotel", "guest",
    "festival",
]

TEXT_COLUMNS = [
    "name", "title", "status", "type", "color", "genre", "category",
    "language", "label", "theme", "district", "region",
]

NUMBER_COLUMNS = [
    "year", "age", "price", "rating", "capacity", "budget", "salary",
    "weight", "height", "length", "level", "grade", "score", "speed",
    "distance", "duration",
]

VALUE_WORDS = [
    "red", "blue", "green", "gold", "silver", "paris", "london", "tokyo",
    "berlin", "madrid", "rock", "jazz", "pop", "folk", "opera", "math",
    "physics", "history", "biology", "art", "small", "large", "express",
    "royal", "grand", "north", "south", "east", "west", "central",
]

DISTRACTORS = ["in the database", "please", "if any", "overall", "right now"]


@dataclass(frozen=True)
class SynthSpec:
    schemas: int
    examples: int
    seed: int


@dataclass
class SynthCorpus:
    tables: list[dict]
    examples: list[dict]
    contents: dict[str, dict[str, list[list[str]]]]  # db -> table -> rows (with header)


def _phrase(name: str) -> str:
    return " ".join(split_name(name))


class _SchemaDraft:
    def __init__(self, db_id: str, rng: random.Random):
        self.db_id = db_id
        n_tables = rng.randint(2, 5)
        self.tables: list[str] = []
        pool = rng.sample(TABLE_WORDS, min(len(TABLE_WORDS), 2 * n_tables))
        for i in range(n_tables):
            if rng.random() < 0.25 and len(pool) >= 2 * (i + 1):
                self.tables.append(f"{pool.pop()}_{pool.pop()}")
            else:
                self.tables.append(pool.pop())
        # columns[i] = (table index, name, type); index 0 is `*`
        self.columns: list[tuple[int, str, str]] = [(-1, "*", "text")]
        self.primary_keys: list[int] = []
        for ti in range(n_tables):
            self.primary_keys.append(len(self.columns))
            self.columns.append((ti, "id", "number"))
            n_cols = rng.randint(2, 5)
            names = rng.sample(TEXT_COLUMNS, min(3, n_cols)) + rng.sample(
                NUMBER_COLUMNS, max(1, n_cols - 3))
            for name in names[:n_cols]:
                ctype = "text" if name in TEXT_COLUMNS else "number"
                self.columns.append((ti, name, ctype))
        self.foreign_keys: list[tuple[int, int]] = []
        pairs = [(a, b) for a in range(n_tables) for b in range(n_tables) if a != b]
        rng.shuffle(pairs)
        for child, parent in pairs[: rng.randint(1, 3)]:
            fk_idx = len(self.columns)
            self.columns.append((child, f"{self.tables[parent]}_id", "number"))
            self.foreign_keys.append((fk_idx, self.primary_keys[parent]))

    def table_columns(self, ti: int, ctype: str | None = None) -> list[int]:
        return [ci for ci, (t, name, ct) in enumerate(self.columns)
                if t == ti and name != "id" and not name.endswith("_id")
                and (ctype is None or ct == ctype)]

    def as_json(self) -> dict:
        return {
            "db_id": self.db_id,
            "table_names_original": self.tables,
            "column_names_original": [[t, name] for t, name, _ in self.columns],
            "column_types": [ct for _, _, ct in self.columns],
            "primary_keys": self.primary_keys,
            "foreign_keys": [list(fk) for fk in self.foreign_keys],
        }


def _make_contents(draft: _SchemaDraft, rng: random.Random) -> dict[str, list[list[str]]]:
    out = {}
    for ti, table in enumerate(draft.tables):
        col_ids = [ci for ci, (t, _, _) in enumerate(draft.columns) if t == ti]
        header = [draft.columns[ci][1] for ci in col_ids]
        rows = []
        for r in range(rng.randint(10, 30)):
            row = []
            for ci in col_ids:
                _, name, ctype = draft.columns[ci]
                if name == "id":
                    row.append(str(r + 1))
                elif name.endswith("_id"):
                    row.append(str(rng.randint(1, 10)))
                elif ctype == "number":
                    row.append(str(rng.randint(1990, 2025) if name == "year"
                                   else rng.randint(1, 500)))
                elif rng.random() < 0.2:
                    row.append(f"{rng.choice(VALUE_WORDS)} {rng.choice(VALUE_WORDS)}")
                else:
                    row.append(rng.choice(VALUE_WORDS))
            rows.append(row)
        out[table] = [header] + rows
    return out


class _ExampleMaker:
    """Template instantiation against one drafted schema and its contents."""

    def __init__(self, draft: _SchemaDraft, contents: dict[str, list[list[str]]],
                 rng: random.Random):
        self.d = draft
        self.contents = contents
        self.rng = rng

    def _cname(self, ci: int) -> str:
        t, name, _ = self.d.columns[ci]
        return f"{self.d.tables[t]}.{name}"

    def _literal(self, ci: int) -> str:
        """A value present in this column's generated cells."""
        t, name, _ = self.d.columns[ci]
        rows = self.contents[self.d.tables[t]]
        col_pos = rows[0].index(name)
        return self.rng.choice([row[col_pos] for row in rows[1:]])

    def _table_with(self, n_text: int = 0, n_number: int = 0, n_any: int = 1):
        order = list(range(len(self.d.tables)))
        self.rng.shuffle(order)
        for ti in order:
            if (len(self.d.table_columns(ti, "text")) >= n_text
                    and len(self.d.table_columns(ti, "number")) >= n_number
                    and len(self.d.table_columns(ti)) >= n_any):
                return ti
        return None

    def _cond(self, ci: int) -> tuple[str, str, str]:
        """(question fragment, sql op, literal) for a condition on column ci."""
        _, name, ctype = self.d.columns[ci]
        rng = self.rng
        value = self._literal(ci)
        if ctype == "number":
            kind = rng.choice(["eq", "gt", "lt"])
            if kind == "gt":
                return (f"{_phrase(name)} greater than {value}", ">", value)
            if kind == "lt":
                return (f"{_phrase(name)} less than {value}", "<", value)
            return (f"{_phrase(name)} equal to {value}", "=", value)
        if rng.random() < 0.2:
            return (f"{_phrase(name)} like {value}", "LIKE", value)
        return (f"{_phrase(name)} equal to {value}", "=", value)

    def _quote(self, ci: int, value: str) -> str:
        return value if self.d.columns[ci][2] == "number" else f"'{value}'"

    # Each template returns (question, sql) or None when inapplicable.

    def t_select_one(self):
        ti = self._table_with(n_any=1)
        cols = self.d.table_columns(ti)
        ci = self.rng.choice(cols)
        return (f"show the {_phrase(self.d.columns[ci][1])} of each {_phrase(self.d.tables[ti])}",
                f"SELECT {self._cname(ci)} FROM {self.d.tables[ti]}")

    def t_select_two(self):
        ti = self._table_with(n_any=2)
        if ti is None:
            return None
        c1, c2 = self.rng.sample(self.d.table_columns(ti), 2)
        return (f"show the {_phrase(self.d.columns[c1][1])} and the "
                f"{_phrase(self.d.columns[c2][1])} of each {_phrase(self.d.tables[ti])}",
                f"SELECT {self._cname(c1)}, {self._cname(c2)} FROM {self.d.tables[ti]}")

    def t_count(self):
        ti = self.rng.randrange(len(self.d.tables))
        return (f"how many {_phrase(self.d.tables[ti])} are there",
                f"SELECT COUNT(*) FROM {self.d.tables[ti]}")

    def t_agg(self):
        ti = self._table_with(n_number=1)
        if ti is None:
            return None
        ci = self.rng.choice(self.d.table_columns(ti, "number"))
        word, op = self.rng.choice([("total", "SUM"), ("average", "AVG"),
                                    ("smallest", "MIN"), ("largest", "MAX")])
        return (f"show the {word} {_phrase(self.d.columns[ci][1])} of the "
                f"{_phrase(self.d.tables[ti])}",
                f"SELECT {op}({self._cname(ci)}) FROM {self.d.tables[ti]}")

    def t_where(self):
        ti = self._table_with(n_any=2)
        if ti is None:
            return None
        cols = self.d.table_columns(ti)
        c1, c2 = self.rng.sample(cols, 2)
        frag, op, value = self._cond(c2)
        return (f"show the {_phrase(self.d.columns[c1][1])} of the "
                f"{_phrase(self.d.tables[ti])} with {frag}",
                f"SELECT {self._cname(c1)} FROM {self.d.tables[ti]} "
                f"WHERE {self._cname(c2)} {op} {self._quote(c2, value)}")

    def t_where_two(self):
        ti = self._table_with(n_any=3)
        if ti is None:
            return None
        c1, c2, c3 = self.rng.sample(self.d.table_columns(ti), 3)
        f2, op2, v2 = self._cond(c2)
        f3, op3, v3 = self._cond(c3)
        return (f"show the {_phrase(self.d.columns[c1][1])} of the "
                f"{_phrase(self.d.tables[ti])} with {f2} and {f3}",
                f"SELECT {self._cname(c1)} FROM {self.d.tables[ti]} "
                f"WHERE {self._cname(c2)} {op2} {self._quote(c2, v2)} "
                f"AND {self._cname(c3)} {op3} {self._quote(c3, v3)}")

    def t_join(self):
        if not self.d.foreign_keys:
            return None
        fk, pk = self.rng.choice(self.d.foreign_keys)
        child, parent = self.d.columns[fk][0], self.d.columns[pk][0]
        c1_opts = self.d.table_columns(child)
        c2_opts = self.d.table_columns(parent)
        if not c1_opts or not c2_opts:
            return None
        c1 = self.rng.choice(c1_opts)
        c2 = self.rng.choice(c2_opts)
        frag, op, value = self._cond(c2)
        t_child, t_parent = self.d.tables[child], self.d.tables[parent]
        return (f"show the {_phrase(self.d.columns[c1][1])} of the {_phrase(t_child)} "
                f"whose {_phrase(t_parent)} has {frag}",
                f"SELECT {self._cname(c1)} FROM {t_child} JOIN {t_parent} "
                f"ON {self._cname(fk)} = {self._cname(pk)} "
                f"WHERE {self._cname(c2)} {op} {self._quote(c2, value)}")

    def t_join_select(self):
        if not self.d.foreign_keys:
            return None
        fk, pk = self.rng.choice(self.d.foreign_keys)
        child, parent = self.d.columns[fk][0], self.d.columns[pk][0]
        c1_opts = self.d.table_columns(child)
        c2_opts = self.d.table_columns(parent)
        if not c1_opts or not c2_opts:
            return None
        c1, c2 = self.rng.choice(c1_opts), self.rng.choice(c2_opts)
        t_child, t_parent = self.d.tables[child], self.d.tables[parent]
        return (f"show the {_phrase(self.d.columns[c1][1])} of the {_phrase(t_child)} "
                f"and the {_phrase(self.d.columns[c2][1])} of its {_phrase(t_parent)}",
                f"SELECT {self._cname(c1)}, {self._cname(c2)} FROM {t_child} "
                f"JOIN {t_parent} ON {self._cname(fk)} = {self._cname(pk)}")

    def t_group_count(self):
        ti = self._table_with(n_text=1)
        if ti is None:
            return None
        ci = self.rng.choice(self.d.table_columns(ti, "text"))
        return (f"how many rows for each {_phrase(self.d.columns[ci][1])} of the "
                f"{_phrase(self.d.tables[ti])}",
                f"SELECT {self._cname(ci)}, COUNT(*) FROM {self.d.tables[ti]} "
                f"GROUP BY {self._cname(ci)}")

    def t_order(self):
        ti = self._table_with(n_any=2)
        if ti is None:
            return None
        c1, c2 = self.rng.sample(self.d.table_columns(ti), 2)
        word, direction = self.rng.choice([("ascending", "ASC"), ("descending", "DESC")])
        return (f"show the {_phrase(self.d.columns[c1][1])} of each "
                f"{_phrase(self.d.tables[ti])} ordered by {_phrase(self.d.columns[c2][1])} {word}",
                f"SELECT {self._cname(c1)} FROM {self.d.tables[ti]} "
                f"ORDER BY {self._cname(c2)} {direction}")

    def t_order_limit(self):
        ti = self._table_with(n_number=1, n_any=2)
        if ti is None:
            return None
        c2 = self.rng.choice(self.d.table_columns(ti, "number"))
        c1_opts = [c for c in self.d.table_columns(ti) if c != c2]
        if not c1_opts:
            return None
        c1 = self.rng.choice(c1_opts)
        word, direction = self.rng.choice([("smallest", "ASC"), ("largest", "DESC")])
        return (f"show the {_phrase(self.d.columns[c1][1])} of the "
                f"{_phrase(self.d.tables[ti])} with the {word} {_phrase(self.d.columns[c2][1])}",
                f"SELECT {self._cname(c1)} FROM {self.d.tables[ti]} "
                f"ORDER BY {self._cname(c2)} {direction} LIMIT 1")

    def t_group_order(self):
        ti = self._table_with(n_text=1)
        if ti is None:
            return None
        ci = self.rng.choice(self.d.table_columns(ti, "text"))
        return (f"for each {_phrase(self.d.columns[ci][1])} of the "
                f"{_phrase(self.d.tables[ti])} count the rows from most to fewest",
                f"SELECT {self._cname(ci)}, COUNT(*) FROM {self.d.tables[ti]} "
                f"GROUP BY {self._cname(ci)} ORDER BY COUNT(*) DESC")

    def make(self) -> tuple[str, str]:
        templates = [
            (self.t_select_one, 16), (self.t_select_two, 8), (self.t_count, 8),
            (self.t_agg, 10), (self.t_where, 16), (self.t_where_two, 6),
            (self.t_join, 12), (self.t_join_select, 6), (self.t_group_count, 6),
            (self.t_order, 6), (self.t_order_limit, 8), (self.t_group_order, 4),
        ]
        funcs, weights = zip(*templates)
        for _ in range(100):
            made = self.rng.choices(funcs, weights=weights)[0]()
            if made is not None:
                question, sql = made
                if self.rng.random() < 0.3:
                    question += " " + self.rng.choice(DISTRACTORS)
                return question, sql
        return self.t_select_one()


def generate_synthetic(spec: SynthSpec) -> SynthCorpus:
    """Deterministic corpus for the seed: exactly spec.schemas schemas and
    spec.examples examples, every grammar production covered in aggregate."""
    if spec.schemas < 1 or spec.examples < 1:
        raise ValueError("spec counts must be >= 1")
    rng = random.Random(spec.seed)
    drafts = [_SchemaDraft(f"synth_{i:03d}", rng) for i in range(spec.schemas)]
    contents = {d.db_id: _make_contents(d, rng) for d in drafts}
    makers = [_ExampleMaker(d, contents[d.db_id], rng) for d in drafts]
    examples = []
    for i in range(spec.examples):
        maker = makers[i % len(makers)]
        question, sql = maker.make()
        examples.append({"db_id": maker.d.db_id, "question": question, "query": sql})
    return SynthCorpus([d.as_json() for d in drafts], examples, contents)


def materialize_corpus(corpus: SynthCorpus, out_dir) -> None:
    """Write tables.json, examples.json, and contents/<db>/<table>.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "tables.json", "w", encoding="utf-8") as fh:
        json.dump(corpus.tables, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(out / "examples.json", "w", encoding="utf-8") as fh:
        json.dump(corpus.examples, fh, indent=1, sort_keys=True)
        fh.write("\n")
    for db_id, tables in corpus.contents.items():
        db_dir = out / "contents" / db_id
        db_dir.mkdir(parents=True, exist_ok=True)
        for table, rows in tables.items():
            with open(db_dir / f"{table}.csv", "w", newline="", encoding="utf-8") as fh:
                csv.writer(fh).writerows(rows)
