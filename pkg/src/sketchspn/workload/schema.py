"""Schemas, order-preserving dictionary encoding and CSV ingestion."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping

import numpy as np

INTEGER = "integer"
FLOAT = "float"
CATEGORICAL = "categorical"
TIMESTAMP = "timestamp"
TYPES = (INTEGER, FLOAT, CATEGORICAL, TIMESTAMP)

NULL_CODE = -1


class WorkloadError(ValueError):
    pass


@dataclass(frozen=True)
class Attribute:
    name: str
    type: str = INTEGER
    nullable: bool = True


@dataclass
class RelationSchema:
    name: str
    attributes: list[Attribute]
    file: str | None = None

    def __post_init__(self):
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise WorkloadError(f"duplicate attribute names in relation {self.name}")
        for a in self.attributes:
            if a.type not in TYPES:
                raise WorkloadError(f"{self.name}.{a.name}: unknown type {a.type!r}")

    def attribute(self, name: str) -> Attribute:
        for a in self.attributes:
            if a.name == name:
                return a
        raise WorkloadError(f"relation {self.name} has no attribute {name!r}")

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]


@dataclass
class Schema:
    relations: dict[str, RelationSchema]

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Schema":
        rels = {}
        for r in doc["relations"]:
            attrs = [Attribute(a["name"], a.get("type", INTEGER), bool(a.get("nullable", True)))
                     for a in r["attributes"]]
            if r["name"] in rels:
                raise WorkloadError(f"duplicate relation {r['name']}")
            rels[r["name"]] = RelationSchema(r["name"], attrs, r.get("file"))
        return cls(rels)

    @classmethod
    def load(cls, path) -> "Schema":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {"relations": [
            {"name": r.name, **({"file": r.file} if r.file else {}),
             "attributes": [{"name": a.name, "type": a.type, "nullable": a.nullable}
                            for a in r.attributes]}
            for r in self.relations.values()]}

    def relation(self, name: str) -> RelationSchema:
        try:
            return self.relations[name]
        except KeyError:
            raise WorkloadError(f"unknown relation {name!r}") from None


Endpoint = tuple[str, str]


@dataclass(frozen=True)
class EdgeDecl:
    edge_id: str
    left: Endpoint
    right: Endpoint

    @property
    def is_self_relation(self) -> bool:
        return self.left[0] == self.right[0]

    def orientation(self, relation: str) -> int:
        """+1 for the lexicographically smaller endpoint, -1 for the other."""
        if self.is_self_relation:
            raise WorkloadError(f"edge {self.edge_id} joins {relation} with itself")
        low = min(self.left, self.right)
        if relation == low[0]:
            return 1
        if relation in (self.left[0], self.right[0]):
            return -1
        raise WorkloadError(f"edge {self.edge_id} does not touch {relation}")

    def attribute_of(self, relation: str) -> str:
        if self.left[0] == relation:
            return self.left[1]
        if self.right[0] == relation:
            return self.right[1]
        raise WorkloadError(f"edge {self.edge_id} does not touch {relation}")


def _endpoint(text: str) -> Endpoint:
    rel, _, attr = text.partition(".")
    if not rel or not attr:
        raise WorkloadError(f"join endpoint must look like relation.attribute, got {text!r}")
    return rel, attr


@dataclass
class JoinSchema:
    edges: list[EdgeDecl] = field(default_factory=list)

    def __post_init__(self):
        ids = [e.edge_id for e in self.edges]
        if len(set(ids)) != len(ids):
            raise WorkloadError("duplicate edge ids in join schema")

    @classmethod
    def from_dict(cls, doc: Mapping) -> "JoinSchema":
        edges = []
        for i, e in enumerate(doc["edges"]):
            edges.append(EdgeDecl(str(e.get("id", f"e{i}")), _endpoint(e["left"]),
                                  _endpoint(e["right"])))
        return cls(edges)

    @classmethod
    def load(cls, path) -> "JoinSchema":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {"edges": [{"id": e.edge_id, "left": ".".join(e.left), "right": ".".join(e.right)}
                          for e in self.edges]}

    def edge(self, edge_id: str) -> EdgeDecl:
        for e in self.edges:
            if e.edge_id == edge_id:
                return e
        raise WorkloadError(f"unknown join edge {edge_id!r}")

    def find(self, a: Endpoint, b: Endpoint) -> EdgeDecl:
        for e in self.edges:
            if (e.left, e.right) in ((a, b), (b, a)):
                return e
        raise WorkloadError(f"no declared join edge between {'.'.join(a)} and {'.'.join(b)}")

    def sketch_edges(self, relation: str) -> dict[str, str]:
        """Edge id -> attribute for the edges a relation can be sketched on."""
        return {e.edge_id: e.attribute_of(relation) for e in self.edges
                if relation in (e.left[0], e.right[0]) and not e.is_self_relation}

    def validate(self, schema: Schema) -> None:
        for e in self.edges:
            types = set()
            for rel, attr in (e.left, e.right):
                types.add(schema.relation(rel).attribute(attr).type)
            if len(types) != 1:
                raise WorkloadError(f"edge {e.edge_id} joins incompatible types {sorted(types)}")


@dataclass
class DictionaryColumn:
    """Sorted distinct values; ``codes[i]`` is the rank of row i's value or -1 for null."""

    type: str
    values: np.ndarray
    codes: np.ndarray

    @property
    def domain(self) -> int:
        return len(self.values)

    def decode(self, codes=None) -> list:
        codes = self.codes if codes is None else np.asarray(codes)
        return [None if c < 0 else self.values[c].item() for c in codes]

    def code_of(self, value) -> int | None:
        i = int(np.searchsorted(self.values, value, side="left"))
        if i < len(self.values) and self.values[i] == value:
            return i
        return None


def _dtype(kind: str):
    if kind in (INTEGER, TIMESTAMP):
        return np.int64
    if kind == FLOAT:
        return np.float64
    return np.str_


def parse_timestamp(text) -> int:
    """Epoch microseconds; naive timestamps are taken as UTC."""
    if isinstance(text, (int, np.integer)):
        return int(text)
    text = str(text).strip()
    try:
        return int(text)
    except ValueError:
        pass
    stamp = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    delta = stamp - datetime(1970, 1, 1, tzinfo=timezone.utc)
    return (delta.days * 86_400 + delta.seconds) * 1_000_000 + delta.microseconds


def parse_value(kind: str, raw):
    if kind == INTEGER:
        if isinstance(raw, str):
            return int(raw.strip())
        return int(raw)
    if kind == FLOAT:
        value = float(raw)
        if math.isnan(value):
            raise ValueError("NaN is not a valid value")
        return value
    if kind == TIMESTAMP:
        return parse_timestamp(raw)
    return str(raw)


def _is_null(raw) -> bool:
    return raw is None or (isinstance(raw, str) and raw == "")


def parse_column(relation: str, attr: Attribute, raw_values, first_line: int = 2):
    """Typed value array (nulls filled with a placeholder) and a null mask."""
    n = len(raw_values)
    nulls = np.zeros(n, dtype=bool)
    parsed = []
    for i, raw in enumerate(raw_values):
        if _is_null(raw):
            if not attr.nullable:
                raise WorkloadError(
                    f"{relation}.{attr.name}: null in non-nullable column at line {first_line + i}")
            nulls[i] = True
            parsed.append(0 if attr.type != CATEGORICAL else "")
            continue
        try:
            parsed.append(parse_value(attr.type, raw))
        except (TypeError, ValueError) as exc:
            raise WorkloadError(
                f"{relation}.{attr.name}: cannot parse {raw!r} as {attr.type} "
                f"at line {first_line + i}: {exc}") from None
    values = np.array(parsed, dtype=_dtype(attr.type)) if n else np.zeros(0, dtype=_dtype(attr.type))
    return values, nulls


def encode(kind: str, parts: list[tuple[np.ndarray, np.ndarray]]) -> list[DictionaryColumn]:
    """One shared dictionary over several (values, nulls) columns."""
    pool = [v[~m] for v, m in parts]
    dtype = _dtype(kind)
    merged = np.concatenate(pool) if pool else np.zeros(0, dtype=dtype)
    dictionary = np.unique(merged.astype(dtype) if len(merged) else np.zeros(0, dtype=dtype))
    out = []
    for values, nulls in parts:
        codes = np.full(len(values), NULL_CODE, dtype=np.int64)
        if len(values):
            codes[~nulls] = np.searchsorted(dictionary, values[~nulls])
        out.append(DictionaryColumn(kind, dictionary, codes))
    return out


@dataclass
class Relation:
    name: str
    columns: dict[str, DictionaryColumn]
    rows: int

    def codes(self) -> dict[str, np.ndarray]:
        return {a: c.codes for a, c in self.columns.items()}

    def domains(self) -> dict[str, int]:
        return {a: c.domain for a, c in self.columns.items()}


@dataclass
class Database:
    schema: Schema
    joins: JoinSchema
    relations: dict[str, Relation]
    rows_read: dict[str, int] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Relation:
        return self.relations[name]

    def dictionaries(self) -> dict[str, dict[str, DictionaryColumn]]:
        return {r: rel.columns for r, rel in self.relations.items()}


def _join_groups(joins: JoinSchema) -> list[set[Endpoint]]:
    parent: dict[Endpoint, Endpoint] = {}

    def find(x):
        parent.setdefault(x, x)
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for e in joins.edges:
        a, b = find(e.left), find(e.right)
        if a != b:
            parent[max(a, b)] = min(a, b)
    groups: dict[Endpoint, set[Endpoint]] = {}
    for x in list(parent):
        groups.setdefault(find(x), set()).add(x)
    return [groups[k] for k in sorted(groups)]


def encode_tables(tables: Mapping[str, Mapping[str, list]], schema: Schema,
                  joins: JoinSchema) -> Database:
    """Dictionary-encode raw per-column value lists; join endpoints share dictionaries."""
    joins.validate(schema)
    parsed: dict[Endpoint, tuple[np.ndarray, np.ndarray]] = {}
    rows = {}
    for rel in schema.relations.values():
        if rel.name not in tables:
            raise WorkloadError(f"no data for relation {rel.name}")
        data = tables[rel.name]
        unknown = set(data) - set(rel.names)
        if unknown:
            raise WorkloadError(f"relation {rel.name}: unknown columns {sorted(unknown)}")
        missing = set(rel.names) - set(data)
        if missing:
            raise WorkloadError(f"relation {rel.name}: missing columns {sorted(missing)}")
        lengths = {len(v) for v in data.values()}
        if len(lengths) > 1:
            raise WorkloadError(f"relation {rel.name}: columns differ in length")
        rows[rel.name] = lengths.pop() if lengths else 0
        for attr in rel.attributes:
            parsed[(rel.name, attr.name)] = parse_column(rel.name, attr, list(data[attr.name]))
    encoded: dict[Endpoint, DictionaryColumn] = {}
    grouped = set()
    for group in _join_groups(joins):
        members = sorted(group)
        kind = schema.relation(members[0][0]).attribute(members[0][1]).type
        for ep, col in zip(members, encode(kind, [parsed[m] for m in members])):
            encoded[ep] = col
        grouped |= group
    for ep, part in parsed.items():
        if ep not in grouped:
            kind = schema.relation(ep[0]).attribute(ep[1]).type
            encoded[ep] = encode(kind, [part])[0]
    relations = {}
    for rel in schema.relations.values():
        cols = {a.name: encoded[(rel.name, a.name)] for a in rel.attributes}
        relations[rel.name] = Relation(rel.name, cols, rows[rel.name])
    return Database(schema, joins, relations)


def read_csv(path, relation: RelationSchema) -> tuple[dict[str, list], int]:
    """Read a header + rows CSV file in a single pass into per-column string lists."""
    columns: dict[str, list] = {}
    count = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise WorkloadError(f"{path}: missing header row") from None
        unknown = [h for h in header if h not in relation.names]
        if unknown:
            raise WorkloadError(f"{path}: unknown columns {unknown}")
        missing = [a for a in relation.names if a not in header]
        if missing:
            raise WorkloadError(f"{path}: missing columns {missing}")
        lists = [[] for _ in header]
        for line, record in enumerate(reader, start=2):
            if len(record) != len(header):
                raise WorkloadError(f"{path}: line {line} has {len(record)} fields, "
                                    f"expected {len(header)}")
            for bucket, value in zip(lists, record):
                bucket.append(value)
            count += 1
        columns = dict(zip(header, lists))
    return columns, count


def ingest(data_dir, schema: Schema, joins: JoinSchema) -> Database:
    data_dir = Path(data_dir)
    tables = {}
    rows_read = {}
    for rel in schema.relations.values():
        path = data_dir / (rel.file or f"{rel.name}.csv")
        if not path.exists():
            raise WorkloadError(f"missing data file {path}")
        tables[rel.name], rows_read[rel.name] = read_csv(path, rel)
    db = encode_tables(tables, schema, joins)
    db.rows_read = rows_read
    return db
