"""A trained ensemble (one sketched SPN per relation) and query estimation on top of it."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from itertools import combinations
from typing import Mapping

import numpy as np

from .estimator import (BOUND, FAGMS_MAX, FAGMS_MEDIAN, VARIANTS, EstimationError, JoinGraph,
                        bound_arrays, combine_estimates, contract_arrays)
from .hashing import EdgeHashes
from .sketch import AGMS, COUNTMIN, DEGREE, SparseSketch, build_agms, build_countmin, \
    build_degree, frequency_table
from .spn.infer import PRODUCT, InferenceRequest, approx_counters, selection_cardinality
from .spn.learn import TrainConfig, distinct_tuples, partition_sketches, train_spn
from .spn.nodes import Node, RelationInfo, count_nodes
from .workload.query import QuerySpec
from .workload.schema import Database, DictionaryColumn, JoinSchema, Schema

log = logging.getLogger(__name__)

MAX_FULL_LATTICE = 4


def edge_subsets(edges, extra=()) -> tuple[tuple[str, ...], ...]:
    """All non-empty subsets for up to four edges, else singletons plus ``extra``."""
    edges = sorted(edges)
    if len(edges) <= MAX_FULL_LATTICE:
        out = [c for k in range(1, len(edges) + 1) for c in combinations(edges, k)]
    else:
        out = [(e,) for e in edges] + [tuple(sorted(s)) for s in extra]
    return tuple(sorted(set(out), key=lambda s: (len(s), s)))


@dataclass
class RelationModel:
    name: str
    rows: int
    dictionaries: dict[str, DictionaryColumn]
    root: Node
    subsets: tuple[tuple[str, ...], ...]
    # (edges, degree_edge) -> per-copy exact degree sketch of the whole relation
    exact_degree: dict[tuple[tuple[str, ...], str], list[SparseSketch]] = field(default_factory=dict)


@dataclass
class SketchedModel:
    config: TrainConfig
    schema: Schema
    joins: JoinSchema
    relations: dict[str, RelationModel]
    timings: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        self.hashes = EdgeHashes(self.config.seed, self.config.width, self.config.copies)

    def info(self, relation: str) -> RelationInfo:
        edge_attr = self.joins.sketch_edges(relation)
        orient = {e: self.joins.edge(e).orientation(relation) for e in edge_attr}
        subsets = self.relations[relation].subsets if relation in self.relations else ()
        return RelationInfo(relation, edge_attr, orient, self.hashes, subsets)

    def dictionaries(self) -> dict[str, dict[str, DictionaryColumn]]:
        return {r: m.dictionaries for r, m in self.relations.items()}


def relation_info(db_joins: JoinSchema, relation: str, hashes: EdgeHashes, extra=()) -> RelationInfo:
    edge_attr = db_joins.sketch_edges(relation)
    orient = {e: db_joins.edge(e).orientation(relation) for e in edge_attr}
    return RelationInfo(relation, edge_attr, orient, hashes, edge_subsets(edge_attr, extra))


def train_model(db: Database, config: TrainConfig,
                templates: Mapping[str, list[tuple[str, ...]]] | None = None) -> SketchedModel:
    """Train one SPN per relation; ``templates`` lists extra edge subsets per relation."""
    hashes = EdgeHashes(config.seed, config.width, config.copies)
    relations = {}
    timings = {"structure": 0.0, "sketching": 0.0}
    for name, rel in db.relations.items():
        info = relation_info(db.joins, name, hashes, (templates or {}).get(name, ()))
        columns = rel.codes()
        domains = rel.domains()
        t0 = time.perf_counter()
        root = train_spn(columns, domains, info, config)
        t1 = time.perf_counter()
        keys, counts = distinct_tuples({a: columns[a] for a in sorted(info.join_attributes)})
        exact = partition_sketches(keys, counts, info, kinds=(DEGREE,)) if info.subsets else {}
        timings["sketching"] += time.perf_counter() - t1
        timings["structure"] += t1 - t0
        # the model keeps dictionaries only, not the encoded rows
        dictionaries = {a: DictionaryColumn(c.type, c.values, np.zeros(0, dtype=np.int64))
                        for a, c in rel.columns.items()}
        relations[name] = RelationModel(
            name, rel.rows, dictionaries, root, info.subsets,
            {(edges, deg): sketches for (_, edges, deg), sketches in exact.items()})
        log.info("trained %s: %d rows, nodes %s", name, rel.rows, count_nodes(root))
    model = SketchedModel(config, db.schema, db.joins, relations, timings)
    return model


def _check_query(model: SketchedModel, query: QuerySpec) -> JoinGraph:
    graph = query.graph
    for e in graph.edges:
        if model.joins.edge(e.edge_id).is_self_relation:
            raise EstimationError(
                f"edge {e.edge_id} joins a relation with itself; sketches cannot be oriented")
    for v in graph.vertices:
        rel = model.relations.get(query.aliases[v])
        if rel is None:
            raise EstimationError(f"model has no relation {query.aliases[v]!r}")
        edges = graph.incident(v)
        if edges and edges not in rel.subsets:
            raise EstimationError(f"relation {rel.name} has no sketches for edges {edges}")
    return graph


@dataclass
class Estimate:
    query_id: str
    estimate: float
    per_copy: list[float]
    variant: str
    mode: str
    seconds: float = 0.0


def vertex_counters(model: SketchedModel, query: QuerySpec, vertex: str, kind: str,
                    mode: str, degree_edge: str | None = None) -> np.ndarray:
    """Approximated counters of one vertex, stacked over copies: shape (copies, w)."""
    name = query.aliases[vertex]
    info = model.info(name)
    edges = query.graph.incident(vertex)
    root = model.relations[name].root
    rows = []
    for copy in range(model.config.copies):
        req = InferenceRequest(edges, query.predicate(vertex), mode, kind, degree_edge, copy, info)
        rows.append(approx_counters(root, req))
    out = np.stack(rows)
    if kind == DEGREE:
        exact = model.relations[name].exact_degree[(edges, req.degree_edge)]
        out = np.minimum(out, np.stack([s.dense().counters for s in exact]))
    return out


def estimate_arrays(graph: JoinGraph, variant: str, agms=None, countmin=None, degree=None) -> np.ndarray:
    """Per-copy estimates from stacked per-vertex counter arrays."""
    if variant in (FAGMS_MEDIAN, FAGMS_MAX):
        return contract_arrays([agms[v] for v in graph.vertices])
    per_choice = [bound_arrays(countmin, degree, graph, v) for v in graph.vertices]
    return np.min(np.stack(per_choice), axis=0)


def estimate_query(model: SketchedModel, query: QuerySpec, variant: str = FAGMS_MEDIAN,
                   mode: str = PRODUCT) -> Estimate:
    if variant not in VARIANTS:
        raise EstimationError(f"unknown variant {variant!r}")
    t0 = time.perf_counter()
    graph = _check_query(model, query)
    if len(graph.vertices) == 1:
        (v,) = graph.vertices
        root = model.relations[query.aliases[v]].root
        card = selection_cardinality(root, query.predicate(v), mode)
        return Estimate(query.query_id, max(card, 1.0), [card], variant, mode,
                        time.perf_counter() - t0)
    if variant == BOUND and not graph.is_tree():
        raise EstimationError("bound estimation needs an acyclic join graph")
    if variant == BOUND:
        cm = {v: vertex_counters(model, query, v, COUNTMIN, mode) for v in graph.vertices}
        deg = {v: {e: vertex_counters(model, query, v, DEGREE, mode, e)
                   for e in graph.incident(v)} for v in graph.vertices}
        per_copy = estimate_arrays(graph, variant, countmin=cm, degree=deg)
    else:
        agms = {v: vertex_counters(model, query, v, AGMS, mode) for v in graph.vertices}
        per_copy = estimate_arrays(graph, variant, agms=agms)
    est = combine_estimates(per_copy, variant)
    return Estimate(query.query_id, est, [float(x) for x in per_copy], variant, mode,
                    time.perf_counter() - t0)


def selection_mask(codes: Mapping[str, np.ndarray], predicate: Mapping, rows: int) -> np.ndarray:
    mask = np.ones(rows, dtype=bool)
    for attr, ranges in predicate.items():
        col = codes[attr]
        hit = np.zeros(rows, dtype=bool)
        for lo, hi in ranges:
            hit |= (col >= lo) & (col <= hi)
        mask &= hit
    return mask


def exact_vertex_counters(db: Database, hashes: EdgeHashes, query: QuerySpec, vertex: str,
                          kind: str, degree_edge: str | None = None) -> np.ndarray:
    """Counters built directly from the filtered rows, stacked over copies."""
    name = query.aliases[vertex]
    rel = db[name]
    edge_attr = db.joins.sketch_edges(name)
    edges = query.graph.incident(vertex)
    mask = selection_mask(rel.codes(), query.predicate(vertex), rel.rows)
    keys = {e: rel.columns[edge_attr[e]].codes[mask] for e in edges}
    orient = {e: db.joins.edge(e).orientation(name) for e in edges}
    out = []
    for copy in range(hashes.copies):
        h = hashes.for_edges(edges, copy)
        if kind == AGMS:
            sk = build_agms(keys, h, orient, hashes.width, copy=copy)
        elif kind == COUNTMIN:
            sk = build_countmin(keys, h, orient, hashes.width, copy=copy)
        else:
            sk = build_degree(frequency_table(keys), h, orient, hashes.width, degree_edge, copy)
        out.append(sk.counters)
    return np.stack(out)


def exact_estimate(db: Database, hashes: EdgeHashes, query: QuerySpec,
                   variant: str = FAGMS_MEDIAN) -> Estimate:
    """The same estimators fed with exact sketches of each selection."""
    t0 = time.perf_counter()
    graph = query.graph
    if len(graph.vertices) == 1:
        (v,) = graph.vertices
        rel = db[query.aliases[v]]
        card = float(selection_mask(rel.codes(), query.predicate(v), rel.rows).sum())
        return Estimate(query.query_id, max(card, 1.0), [card], variant, "exact",
                        time.perf_counter() - t0)
    if variant == BOUND:
        cm = {v: exact_vertex_counters(db, hashes, query, v, COUNTMIN) for v in graph.vertices}
        deg = {v: {e: exact_vertex_counters(db, hashes, query, v, DEGREE, e)
                   for e in graph.incident(v)} for v in graph.vertices}
        per_copy = estimate_arrays(graph, variant, countmin=cm, degree=deg)
    else:
        agms = {v: exact_vertex_counters(db, hashes, query, v, AGMS) for v in graph.vertices}
        per_copy = estimate_arrays(graph, variant, agms=agms)
    return Estimate(query.query_id, combine_estimates(per_copy, variant),
                    [float(x) for x in per_copy], variant, "exact", time.perf_counter() - t0)
