"""L1 distance between exact and approximated Count-Min sketches of selections."""

from __future__ import annotations

import numpy as np

from ..model import SketchedModel, exact_vertex_counters, selection_mask, vertex_counters
from ..sketch import COUNTMIN
from ..spn.infer import PRODUCT, selection_cardinality
from ..workload.query import QuerySpec
from ..workload.schema import Database
from .metrics import l1_distance


def _counters(model, db, query, alias, mode):
    if query.graph.incident(alias):
        approx = vertex_counters(model, query, alias, COUNTMIN, mode)
        exact = exact_vertex_counters(db, model.hashes, query, alias, COUNTMIN)
        return approx, exact
    # no join attributes: the sketch degenerates to one counter holding the count
    rel = db[query.aliases[alias]]
    root = model.relations[query.aliases[alias]].root
    approx = np.array([[selection_cardinality(root, query.predicate(alias), mode)]])
    exact = np.array([[selection_mask(rel.codes(), query.predicate(alias), rel.rows).sum()]],
                     dtype=np.float64)
    return approx, exact


def independence_counters(model: SketchedModel, db: Database, query: QuerySpec, alias: str) -> np.ndarray:
    """Unfiltered exact sketch scaled by the product of exact per-attribute selectivities."""
    rel = db[query.aliases[alias]]
    codes = rel.codes()
    sel = 1.0
    for attr, ranges in query.predicate(alias).items():
        if rel.rows:
            sel *= selection_mask({attr: codes[attr]}, {attr: ranges}, rel.rows).mean()
    if query.graph.incident(alias):
        unfiltered = QuerySpec(query.query_id, query.aliases, query.joins, {}, None)
        full = exact_vertex_counters(db, model.hashes, unfiltered, alias, COUNTMIN)
    else:
        full = np.array([[float(rel.rows)]])
    return full * sel


def selection_errors(model: SketchedModel, db: Database, query: QuerySpec, mode: str = PRODUCT,
                     baseline: SketchedModel | None = None) -> list[dict]:
    """One record per alias of the query; unfiltered selections carry a skip marker.

    Distances are averaged over the estimator copies.
    """
    out = []
    for alias in query.aliases:
        record = {"id": query.query_id, "alias": alias, "relation": query.aliases[alias]}
        if not query.predicate(alias):
            record["skipped"] = "no-filter"
            out.append(record)
            continue
        approx, exact = _counters(model, db, query, alias, mode)
        if baseline is not None:
            base, _ = _counters(baseline, db, query, alias, mode)
        else:
            base = independence_counters(model, db, query, alias)
        record["l1_approx"] = float(np.mean([l1_distance(e, a) for e, a in zip(exact, approx)]))
        record["l1_baseline"] = float(np.mean([l1_distance(e, b) for e, b in zip(exact, base)]))
        rel = db[query.aliases[alias]]
        record["rows"] = int(selection_mask(rel.codes(), query.predicate(alias), rel.rows).sum())
        out.append(record)
    return out
