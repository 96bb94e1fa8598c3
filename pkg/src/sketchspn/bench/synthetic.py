"""Synthetic correlated relations and conjunctive-filter workloads.

The chain A - B - C - D has skewed foreign keys and filter attributes whose
ranks correlate with the join keys, so independence assumptions between
filters and join keys are visibly wrong.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np
from scipy.stats import norm

from ..workload.schema import JoinSchema, Schema


def gaussian_for_spearman(rho: float) -> float:
    """Gaussian-copula correlation giving Spearman rank correlation ``rho``."""
    return 2.0 * math.sin(rho * math.pi / 6.0)


def correlated(base: np.ndarray, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform(0, 1) variable whose Spearman correlation with ``base`` is about ``rho``."""
    r = gaussian_for_spearman(rho)
    z = norm.ppf(np.clip(base, 1e-12, 1 - 1e-12))
    return norm.cdf(r * z + math.sqrt(1 - r * r) * rng.standard_normal(len(base)))


def to_codes(u: np.ndarray, domain: int, skew: float = 1.0) -> np.ndarray:
    """Uniform(0, 1) -> integers in [0, domain); ``skew`` > 1 piles mass near 0."""
    return np.minimum((u ** skew * domain).astype(np.int64), domain - 1)


SCHEMA = {"relations": [
    {"name": "A", "attributes": [{"name": "id", "type": "integer"},
                                 {"name": "x", "type": "integer"},
                                 {"name": "y", "type": "integer"}]},
    {"name": "B", "attributes": [{"name": "aid", "type": "integer"},
                                 {"name": "cid", "type": "integer"},
                                 {"name": "u", "type": "integer"},
                                 {"name": "v", "type": "integer"}]},
    {"name": "C", "attributes": [{"name": "id", "type": "integer"},
                                 {"name": "w", "type": "integer"}]},
    {"name": "D", "attributes": [{"name": "cid", "type": "integer"},
                                 {"name": "t", "type": "categorical"}]},
]}
JOINS = {"edges": [{"id": "ab", "left": "A.id", "right": "B.aid"},
                   {"id": "bc", "left": "B.cid", "right": "C.id"},
                   {"id": "cd", "left": "C.id", "right": "D.cid"}]}
FILTERS = {"A": ("x", "y"), "B": ("u", "v"), "C": ("w",), "D": ("t",)}
CHAIN = (("a", "A"), ("b", "B"), ("c", "C"), ("d", "D"))
CHAIN_JOINS = ("a.id=b.aid", "b.cid=c.id", "c.id=d.cid")


def chain_tables(rows_b: int = 100_000, rho: float = 0.8, seed: int = 0,
                 rows_a: int = 5_000, rows_c: int = 1_000, rows_d: int = 20_000) -> dict:
    """Raw column lists for the A - B - C - D chain."""
    rng = np.random.default_rng(seed)
    ua = rng.random(rows_a)
    a_x = to_codes(correlated(ua, rho, rng), 200)
    a = {"id": np.arange(rows_a), "x": a_x, "y": to_codes(correlated(a_x / 200.0, rho, rng), 50)}
    # B: key skew plus filters whose ranks follow the key
    ub = rng.random(rows_b)
    b_aid = to_codes(ub, rows_a, skew=2.0)
    b_u = to_codes(correlated(ub, rho, rng), 100)
    b_v = to_codes(correlated(b_u / 100.0 + rng.random(rows_b) / 100.0, rho, rng), 100)
    b_cid = to_codes(correlated(b_v / 100.0 + rng.random(rows_b) / 100.0, rho, rng),
                     rows_c, skew=1.5)
    c = {"id": np.arange(rows_c), "w": to_codes(correlated(np.arange(rows_c) / rows_c, rho, rng), 40)}
    ud = rng.random(rows_d)
    d_cid = to_codes(ud, rows_c, skew=1.5)
    labels = np.array([f"t{i:02d}" for i in range(20)])
    d_t = labels[to_codes(correlated(ud, rho, rng), 20)]
    return {
        "A": {k: list(v) for k, v in a.items()},
        "B": {"aid": list(b_aid), "cid": list(b_cid), "u": list(b_u), "v": list(b_v)},
        "C": {k: list(v) for k, v in c.items()},
        "D": {"cid": list(d_cid), "t": list(d_t)},
    }


def chain_schema() -> tuple[Schema, JoinSchema]:
    return Schema.from_dict(SCHEMA), JoinSchema.from_dict(JOINS)


def _filter(rng, alias, attr, values):
    lo, hi = np.sort(rng.choice(values, 2))
    kind = rng.integers(0, 3)
    if isinstance(lo, str) or kind == 0:
        picked = sorted(set(rng.choice(values, 3).tolist()))
        return [f"{alias}.{attr}", "in", picked]
    if kind == 1:
        return [f"{alias}.{attr}", "between", [int(lo), int(hi)]]
    return [f"{alias}.{attr}", "<=" if rng.random() < 0.5 else ">=", int(lo)]


def chain_queries(tables: dict, count: int = 40, seed: int = 1, filter_prob: float = 0.6) -> list[dict]:
    """Full-chain queries with random conjunctive filters; expand them into subqueries."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        filters = []
        for alias, name in CHAIN:
            for attr in FILTERS[name]:
                if rng.random() < filter_prob:
                    values = np.unique(np.asarray(tables[name][attr]))
                    filters.append(_filter(rng, alias, attr, values))
        out.append({"id": f"q{i:03d}", "relations": [{"alias": a, "name": n} for a, n in CHAIN],
                    "joins": list(CHAIN_JOINS), "filters": filters})
    return out


def selection_queries(tables: dict, relation: str = "B", alias: str = "b", count: int = 100,
                      seed: int = 2, edges=("ab",)) -> list[dict]:
    """Single-alias selections with one or two filters, joined on ``edges`` to a neighbour.

    Each record joins ``relation`` to the other endpoint of its edges so the
    selection's sketch is keyed by those edges.
    """
    rng = np.random.default_rng(seed)
    out = []
    attrs = FILTERS[relation]
    for i in range(count):
        filters = []
        while not filters:
            for attr in attrs:
                if rng.random() < 0.7:
                    values = np.unique(np.asarray(tables[relation][attr]))
                    filters.append(_filter(rng, alias, attr, values))
        rels = [{"alias": alias, "name": relation}]
        joins = []
        for e in edges:
            decl = next(d for d in JOINS["edges"] if d["id"] == e)
            left, right = decl["left"].split("."), decl["right"].split(".")
            mine, other = (left, right) if left[0] == relation else (right, left)
            rels.append({"alias": other[0].lower(), "name": other[0]})
            joins.append(f"{alias}.{mine[1]}={other[0].lower()}.{other[1]}")
        out.append({"id": f"s{i:03d}", "relations": rels, "joins": joins, "filters": filters})
    return out


def write_dataset(directory, tables: dict, queries: list[dict] | None = None) -> dict:
    """CSV files plus schema.json, joins.json and (optionally) queries.jsonl."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, cols in tables.items():
        names = list(cols)
        with open(d / f"{name}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            w.writerows(zip(*(cols[n] for n in names)))
    (d / "schema.json").write_text(json.dumps(SCHEMA, indent=1))
    (d / "joins.json").write_text(json.dumps(JOINS, indent=1))
    paths = {"data": d, "schema": d / "schema.json", "joins": d / "joins.json"}
    if queries is not None:
        (d / "queries.jsonl").write_text("".join(json.dumps(q) + "\n" for q in queries))
        paths["queries"] = d / "queries.jsonl"
    return paths
