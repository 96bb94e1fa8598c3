"""Structured query records (one JSON object per line) and their translation to codes.

    {"id": "q1",
     "relations": [{"alias": "a", "name": "A"}, {"alias": "b", "name": "B"}],
     "joins": ["e1"] or ["a.x=b.y"],
     "filters": [["a.z", "<=", 10], {"column": "b.w", "op": "in", "value": [1, 2]}],
     "truth": 123}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from ..estimator import EstimationError, JoinEdge, JoinGraph
from ..spn.infer import Conditions, canonical_ranges, intersect_ranges
from .schema import DictionaryColumn, JoinSchema, WorkloadError, parse_value

OPS = ("=", "<", "<=", ">", ">=", "between", "in")


@dataclass
class QuerySpec:
    query_id: str
    aliases: dict[str, str]                      # alias -> relation name
    joins: list[JoinEdge] = field(default_factory=list)
    predicates: dict[str, dict[str, Conditions]] = field(default_factory=dict)
    truth: float | None = None
    record: dict = field(default_factory=dict)

    @property
    def graph(self) -> JoinGraph:
        return JoinGraph(tuple(self.aliases), tuple(self.joins), dict(self.aliases))

    def predicate(self, alias: str) -> dict[str, Conditions]:
        return self.predicates.get(alias, {})

    def filtered_aliases(self) -> list[str]:
        return [a for a in self.aliases if self.predicates.get(a)]


def literal_ranges(column: DictionaryColumn, op: str, literal) -> Conditions:
    """Translate one comparison on raw values into inclusive code ranges."""
    values = column.values
    m = len(values)

    def conv(v):
        try:
            return parse_value(column.type, v)
        except (TypeError, ValueError) as exc:
            raise WorkloadError(f"malformed literal {v!r} for a {column.type} column: {exc}") from None

    def left(v):
        return int(np.searchsorted(values, conv(v), side="left"))

    def right(v):
        return int(np.searchsorted(values, conv(v), side="right"))

    if op == "=":
        code = column.code_of(conv(literal))
        return () if code is None else ((code, code),)
    if op == "in":
        if not isinstance(literal, (list, tuple)):
            raise WorkloadError("'in' needs a list of literals")
        codes = [column.code_of(conv(v)) for v in literal]
        return canonical_ranges((c, c) for c in codes if c is not None)
    if op == "<":
        return canonical_ranges([(0, left(literal) - 1)])
    if op == "<=":
        return canonical_ranges([(0, right(literal) - 1)])
    if op == ">":
        return canonical_ranges([(right(literal), m - 1)])
    if op == ">=":
        return canonical_ranges([(left(literal), m - 1)])
    if op == "between":
        if not isinstance(literal, (list, tuple)) or len(literal) != 2:
            raise WorkloadError("'between' needs two literals")
        return canonical_ranges([(left(literal[0]), right(literal[1]) - 1)])
    raise WorkloadError(f"unknown filter operator {op!r}")


def _split_column(text: str) -> tuple[str, str]:
    alias, _, attr = str(text).partition(".")
    if not alias or not attr:
        raise WorkloadError(f"filter column must look like alias.attribute, got {text!r}")
    return alias, attr


def _filter_parts(item) -> tuple[str, str, object]:
    if isinstance(item, Mapping):
        value = item.get("value", item.get("values"))
        return item["column"], item["op"], value
    if isinstance(item, (list, tuple)) and len(item) >= 3:
        if len(item) == 3:
            return item[0], item[1], item[2]
        return item[0], item[1], list(item[2:])
    raise WorkloadError(f"malformed filter {item!r}")


def parse_query(record, joins: JoinSchema,
                dictionaries: Mapping[str, Mapping[str, DictionaryColumn]]) -> QuerySpec:
    if isinstance(record, str):
        record = json.loads(record)
    qid = str(record.get("id", ""))
    aliases: dict[str, str] = {}
    for r in record.get("relations", []):
        if isinstance(r, str):
            alias, name = r, r
        else:
            name = r["name"]
            alias = r.get("alias", name)
        if name not in dictionaries:
            raise WorkloadError(f"query {qid}: unknown relation {name!r}")
        if alias in aliases:
            raise WorkloadError(f"query {qid}: duplicate alias {alias!r}")
        aliases[alias] = name
    if not aliases:
        raise WorkloadError(f"query {qid}: no relations")

    edges: list[JoinEdge] = []
    for j in record.get("joins", []):
        if "=" in j:
            lhs, rhs = (s.strip() for s in j.split("=", 1))
            (la, lattr), (ra, rattr) = _split_column(lhs), _split_column(rhs)
            for a in (la, ra):
                if a not in aliases:
                    raise WorkloadError(f"query {qid}: unknown alias {a!r}")
            decl = joins.find((aliases[la], lattr), (aliases[ra], rattr))
            edges.append(JoinEdge(decl.edge_id, la, lattr, ra, rattr))
        else:
            decl = joins.edge(j)
            (lrel, lattr), (rrel, rattr) = decl.left, decl.right
            la = [a for a, n in aliases.items() if n == lrel]
            ra = [a for a, n in aliases.items() if n == rrel and a not in la[:1]]
            if decl.is_self_relation:
                if len(la) < 2:
                    raise WorkloadError(f"query {qid}: edge {j} needs two aliases of {lrel}")
                la, ra = la[:1], la[1:2]
            if len(la) != 1 or len(ra) != 1:
                raise WorkloadError(f"query {qid}: edge {j} does not map to unique aliases; "
                                    f"use the alias.attr=alias.attr form")
            edges.append(JoinEdge(decl.edge_id, la[0], lattr, ra[0], rattr))

    predicates: dict[str, dict[str, Conditions]] = {}
    for item in record.get("filters", []):
        column, op, value = _filter_parts(item)
        alias, attr = _split_column(column)
        if alias not in aliases:
            raise WorkloadError(f"query {qid}: unknown alias {alias!r} in filter")
        cols = dictionaries[aliases[alias]]
        if attr not in cols:
            raise WorkloadError(f"query {qid}: relation {aliases[alias]} has no attribute {attr!r}")
        if op not in OPS:
            raise WorkloadError(f"query {qid}: unknown filter operator {op!r}")
        ranges = literal_ranges(cols[attr], op, value)
        per_alias = predicates.setdefault(alias, {})
        per_alias[attr] = intersect_ranges(per_alias[attr], ranges) if attr in per_alias else ranges

    truth = record.get("truth")
    spec = QuerySpec(qid, aliases, edges, predicates,
                     None if truth is None else float(truth), dict(record))
    try:
        spec.graph
    except EstimationError as exc:
        raise WorkloadError(f"query {qid}: {exc}") from None
    return spec


def read_queries(path) -> list[dict]:
    out = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            out.append(json.loads(line))
    return out


def connected_subsets(record: Mapping, min_relations: int = 2) -> Iterable[dict]:
    """Sub-query records: every connected subset of the query's relations."""
    rels = record["relations"]
    alias_of = [r if isinstance(r, str) else r.get("alias", r["name"]) for r in rels]
    joins = list(record.get("joins", []))

    def join_aliases(j):
        if "=" in j:
            return {s.strip().partition(".")[0] for s in j.split("=", 1)}
        return None

    for k in range(min_relations, len(rels) + 1):
        for picked in combinations(range(len(rels)), k):
            chosen = {alias_of[i] for i in picked}
            sub_joins = []
            for j in joins:
                ends = join_aliases(j)
                if ends is None:
                    raise WorkloadError("sub-query enumeration needs alias.attr=alias.attr joins")
                if ends <= chosen:
                    sub_joins.append(j)
            # connectivity over the chosen aliases
            adj = {a: set() for a in chosen}
            for j in sub_joins:
                a, b = sorted(join_aliases(j)) if len(join_aliases(j)) == 2 else (None, None)
                if a is not None:
                    adj[a].add(b)
                    adj[b].add(a)
            start = next(iter(sorted(chosen)))
            seen, todo = {start}, [start]
            while todo:
                v = todo.pop()
                for u in adj[v] - seen:
                    seen.add(u)
                    todo.append(u)
            if seen != chosen:
                continue
            filters = [f for f in record.get("filters", [])
                       if _split_column(_filter_parts(f)[0])[0] in chosen]
            suffix = "-".join(alias_of[i] for i in picked)
            yield {"id": f"{record.get('id', '')}:{suffix}",
                   "relations": [rels[i] for i in picked], "joins": sub_joins, "filters": filters}
