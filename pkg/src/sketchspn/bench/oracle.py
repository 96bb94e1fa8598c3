"""Exact join cardinalities by hash-join evaluation over filtered relations.

Each alias is first reduced to a frequency table over the columns it joins on.
Aliases are then joined one at a time along the join edges; columns that no remaining
edge needs are projected away (summing counts) after every step, so the
intermediate result stays a grouped table rather than a list of tuples.
"""

from __future__ import annotations

import numpy as np

from ..model import selection_mask
from ..workload.query import QuerySpec
from ..workload.schema import Database

DEFAULT_BUDGET = 10 ** 7


class BudgetExceeded(RuntimeError):
    pass


def _group(columns: list[np.ndarray], counts: np.ndarray):
    if not columns:
        return [], np.array([counts.sum()], dtype=np.int64)
    stacked = np.stack(columns, axis=1)
    uniq, inverse = np.unique(stacked, axis=0, return_inverse=True)
    summed = np.zeros(len(uniq), dtype=np.int64)
    np.add.at(summed, inverse.ravel(), counts)
    return [uniq[:, i] for i in range(uniq.shape[1])], summed


def _key_ids(left: list[np.ndarray], right: list[np.ndarray]):
    """Map multi-column keys on both sides to shared integer ids."""
    nl = len(left[0])
    both = np.stack([np.concatenate([a, b]) for a, b in zip(left, right)], axis=1)
    _, inverse = np.unique(both, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    return inverse[:nl], inverse[nl:]


def _equi_join(left_cols, left_counts, right_cols, right_counts, on, budget):
    """Join two grouped tables; ``on`` pairs (left column, right column) names."""
    if not len(left_counts) or not len(right_counts):
        names = list(left_cols) + [c for c in right_cols if c not in left_cols]
        return {c: np.zeros(0, dtype=np.int64) for c in names}, np.zeros(0, dtype=np.int64)
    lk, rk = _key_ids([left_cols[a] for a, _ in on], [right_cols[b] for _, b in on])
    order = np.argsort(rk, kind="stable")
    rk_sorted = rk[order]
    starts = np.searchsorted(rk_sorted, lk, side="left")
    ends = np.searchsorted(rk_sorted, lk, side="right")
    matches = ends - starts
    total = int(matches.sum())
    if total > budget:
        raise BudgetExceeded(f"intermediate result of {total} groups exceeds budget {budget}")
    li = np.repeat(np.arange(len(lk)), matches)
    offsets = np.arange(total) - np.repeat(np.cumsum(matches) - matches, matches)
    ri = order[np.repeat(starts, matches) + offsets]
    cols = {c: v[li] for c, v in left_cols.items()}
    for c, v in right_cols.items():
        if c not in cols:
            cols[c] = v[ri]
    return cols, left_counts[li] * right_counts[ri]


def true_cardinality(db: Database, query: QuerySpec, budget: int = DEFAULT_BUDGET) -> int:
    graph = query.graph
    # per alias: frequency table over its join columns, nulls dropped
    tables = {}
    for alias in graph.vertices:
        rel = db[query.aliases[alias]]
        codes = rel.codes()
        mask = selection_mask(codes, query.predicate(alias), rel.rows)
        attrs = sorted({e.left_attr if e.left == alias else e.right_attr
                        for e in graph.edges if alias in (e.left, e.right)})
        for a in attrs:
            mask &= codes[a] >= 0
        cols, counts = _group([codes[a][mask] for a in attrs], np.ones(int(mask.sum()), dtype=np.int64))
        tables[alias] = ({f"{alias}.{a}": c for a, c in zip(attrs, cols)}, counts)

    if len(graph.vertices) == 1:
        return int(tables[graph.vertices[0]][1].sum())

    def column(alias, attr):
        return f"{alias}.{attr}"

    start = graph.vertices[0]
    done = {start}
    cols, counts = tables[start]
    pending = list(graph.edges)
    while len(done) < len(graph.vertices):
        nxt = next(v for e in pending for v in (e.left, e.right)
                   if (e.left in done) != (e.right in done) and v not in done)
        on = []
        for e in pending:
            if e.left == nxt and e.right in done:
                on.append((column(e.right, e.right_attr), column(e.left, e.left_attr)))
            elif e.right == nxt and e.left in done:
                on.append((column(e.left, e.left_attr), column(e.right, e.right_attr)))
        rcols, rcounts = tables[nxt]
        cols, counts = _equi_join(cols, counts, rcols, rcounts, on, budget)
        done.add(nxt)
        pending = [e for e in pending if not (e.left in done and e.right in done)]
        needed = {column(e.left, e.left_attr) for e in pending if e.left in done}
        needed |= {column(e.right, e.right_attr) for e in pending if e.right in done}
        keep = sorted(needed)
        grouped, counts = _group([cols[c] for c in keep], counts)
        cols = dict(zip(keep, grouped))
    return int(counts.sum())


def oracle_record(db: Database, query: QuerySpec, budget: int = DEFAULT_BUDGET) -> dict:
    try:
        return {"id": query.query_id, "truth": true_cardinality(db, query, budget)}
    except BudgetExceeded as exc:
        return {"id": query.query_id, "truth": None, "skipped": "budget", "reason": str(exc)}
