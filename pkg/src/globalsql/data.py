"""Dataset ingestion: schema files, example files, and per-table CSV contents
capped at the first 5000 rows, producing fully-prepared training examples
(per-question graph, gold tree, gold derivation, gold constant set).
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .decoder import Derivation, DerivationError, derivation_from_query
from .grammar import DEFAULT_GRAMMAR, SqlGrammar
from .schema_graph import (CellMatch, Column, NodeId, NodeKind, Schema,
                           SchemaGraph, add_global_node, attach_cell_nodes,
                           build_graph)
from .sql_ast import SqlParseError, SqlQuery, extract_constants, parse_sql

ROW_CAP = 5000

_TOKEN = re.compile(r"[a-z0-9_]+")

SPIDER_TYPES = {"text": "text", "number": "number", "time": "time",
                "boolean": "boolean", "others": "other", "other": "other"}


class DataError(ValueError):
    """Malformed input files."""


def tokenize(text: str) -> tuple[str, ...]:
    return tuple(_TOKEN.findall(text.lower()))


@dataclass
class Example:
    db_id: str
    question: tuple[str, ...]
    gold_sql: str
    query: SqlQuery
    derivation: Derivation
    gold_constants: frozenset[NodeId]
    graph: SchemaGraph
    cell_matches: tuple[CellMatch, ...]


@dataclass
class Dataset:
    schemas: dict[str, Schema]
    examples: list[Example]
    excluded: list[tuple[int, str]] = field(default_factory=list)

    @property
    def exclusions(self) -> int:
        return len(self.excluded)


def parse_tables_json(records: list[dict]) -> dict[str, Schema]:
    schemas = {}
    for i, rec in enumerate(records):
        try:
            columns = tuple(
                Column(int(t), str(name), SPIDER_TYPES.get(str(ct).lower(), "other"))
                for (t, name), ct in zip(rec["column_names_original"], rec["column_types"])
            )
            schema = Schema(
                db_id=str(rec["db_id"]),
                tables=tuple(str(t) for t in rec["table_names_original"]),
                columns=columns,
                primary_keys=frozenset(int(p) for p in rec.get("primary_keys", [])),
                foreign_keys=frozenset(
                    (int(f), int(p)) for f, p in rec.get("foreign_keys", [])),
            )
        except (KeyError, TypeError, ValueError) as err:
            raise DataError(f"tables entry {i}: {err}") from err
        schema.validate()
        schemas[schema.db_id] = schema
    return schemas


def load_contents(contents_dir: Path, schema: Schema,
                  row_cap: int = ROW_CAP) -> dict[NodeId, list[str]]:
    """Per-column cell texts from <dir>/<db_id>/<table>.csv, first row_cap
    data rows per table; missing files mean empty contents."""
    out: dict[NodeId, list[str]] = {}
    db_dir = Path(contents_dir) / schema.db_id
    for ti, table in enumerate(schema.tables):
        path = db_dir / f"{table}.csv"
        if not path.exists():
            continue
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                continue
            name_to_node: dict[str, NodeId] = {}
            for ci, col in enumerate(schema.columns):
                if col.table == ti:
                    name_to_node[col.name.lower()] = NodeId(NodeKind.COLUMN, ci)
            cols = [name_to_node.get(h.strip().lower()) for h in header]
            for r, rowvals in enumerate(reader):
                if r >= row_cap:
                    break
                for node, val in zip(cols, rowvals):
                    if node is not None and val.strip():
                        out.setdefault(node, []).append(val)
    return out


def prepare_example(index: int, db_id: str, question_text: str, gold_sql: str,
                    schema: Schema, base_graph: SchemaGraph,
                    contents: dict[NodeId, list[str]],
                    grammar: SqlGrammar = DEFAULT_GRAMMAR) -> Example:
    tokens = tokenize(question_text)
    if not tokens:
        raise DerivationError("question has no tokens")
    graph, matches = attach_cell_nodes(base_graph, contents, tokens)
    graph = add_global_node(graph)
    query = parse_sql(gold_sql, graph)
    derivation = derivation_from_query(query, graph, tokens, grammar)
    return Example(
        db_id=db_id,
        question=tokens,
        gold_sql=gold_sql,
        query=derivation.query,
        derivation=derivation,
        gold_constants=extract_constants(derivation.query, graph),
        graph=graph,
        cell_matches=tuple(matches),
    )


def _read_json(path: Path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as err:
        raise DataError(f"{path}: {err}") from err
    except json.JSONDecodeError as err:
        raise DataError(f"{path}: invalid JSON at offset {err.pos}: {err.msg}") from err


def load_dataset(tables_path, examples_path, contents_dir,
                 grammar: SqlGrammar = DEFAULT_GRAMMAR) -> Dataset:
    """Schemas plus prepared examples; gold SQL outside the grammar is
    excluded (with a reason), never fatal."""
    schemas = parse_tables_json(_read_json(Path(tables_path)))
    records = _read_json(Path(examples_path))
    graphs = {db: build_graph(s) for db, s in schemas.items()}
    contents_cache: dict[str, dict[NodeId, list[str]]] = {}
    dataset = Dataset(schemas, [])
    for i, rec in enumerate(records):
        try:
            db_id = str(rec["db_id"])
            question = str(rec["question"])
            gold_sql = str(rec["query"])
        except (KeyError, TypeError) as err:
            raise DataError(f"examples entry {i}: {err}") from err
        if db_id not in schemas:
            dataset.excluded.append((i, f"unknown db_id {db_id!r}"))
            continue
        if db_id not in contents_cache:
            contents_cache[db_id] = load_contents(Path(contents_dir), schemas[db_id])
        try:
            dataset.examples.append(prepare_example(
                i, db_id, question, gold_sql, schemas[db_id], graphs[db_id],
                contents_cache[db_id], grammar))
        except (SqlParseError, DerivationError) as err:
            dataset.excluded.append((i, str(err)))
    return dataset
