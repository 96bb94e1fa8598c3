"""Approximate the sketch (or selectivity) of a filtered selection from a trained SPN.

Sketch requests are evaluated top-down: scalars from the branches that do not
hold the join attributes are folded into a running factor, and every sketch
leaf on the join-attribute path adds ``factor * sketch`` into one dense buffer.
This is the same linear functional as the bottom-up recursion.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..sketch import (AGMS, COUNTMIN, DEGREE, SketchVector, SparseSketch, build_agms,
                      build_countmin, build_degree, clamp_degree, frequency_table)
from .nodes import (Node, ProductNode, RelationInfo, SelectivityLeaf, SketchLeaf, SumNode,
                    level_family)

PRODUCT = "product"
MIN_PRODUCT = "min-product"
MODES = (PRODUCT, MIN_PRODUCT)

# inclusive code ranges, sorted and disjoint
Conditions = tuple[tuple[int, int], ...]
Predicate = Mapping[str, Conditions]


class InferenceError(ValueError):
    pass


def canonical_ranges(ranges) -> Conditions:
    """Sort and merge overlapping or adjacent inclusive ranges; drops empty ones."""
    spans = sorted((int(lo), int(hi)) for lo, hi in ranges if lo <= hi)
    merged: list[list[int]] = []
    for lo, hi in spans:
        if merged and lo <= merged[-1][1] + 1:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return tuple((lo, hi) for lo, hi in merged)


def intersect_ranges(a: Conditions, b: Conditions) -> Conditions:
    out = []
    for lo1, hi1 in a:
        for lo2, hi2 in b:
            lo, hi = max(lo1, lo2), min(hi1, hi2)
            if lo <= hi:
                out.append((lo, hi))
    return canonical_ranges(out)


def dyadic_cover(lo: int, hi: int, max_level: int | None = None) -> list[tuple[int, int]]:
    """Minimal disjoint dyadic cover of [lo, hi] as (level, index) pairs.

    (level, index) stands for the codes [index << level, ((index + 1) << level) - 1].
    """
    out = []
    while lo <= hi:
        level = 0
        while True:
            nxt = level + 1
            if max_level is not None and nxt > max_level:
                break
            if lo & ((1 << nxt) - 1) or lo + (1 << nxt) - 1 > hi:
                break
            level = nxt
        out.append((level, lo >> level))
        lo += 1 << level
    return out


def leaf_selectivity(leaf: SelectivityLeaf, conditions: Conditions | None) -> float:
    if conditions is None:
        return 1.0
    if leaf.rows == 0:
        return 0.0
    valid = leaf.rows - leaf.nulls
    top = leaf.domain - 1
    clipped = canonical_ranges((max(lo, 0), min(hi, top)) for lo, hi in conditions)
    if not clipped:
        return 0.0
    if clipped == ((0, top),):
        return valid / leaf.rows
    by_level: dict[int, list[int]] = {}
    for lo, hi in clipped:
        for level, index in dyadic_cover(lo, hi, leaf.levels):
            by_level.setdefault(level, []).append(index)
    count = 0.0
    for level, indices in by_level.items():
        family = level_family(leaf.hash_seed, level, leaf.width)
        count += float(leaf.counters[level][family(np.asarray(indices, dtype=np.int64))].sum())
    return min(count, valid) / leaf.rows


@dataclass
class InferenceRequest:
    edges: tuple[str, ...] = ()
    predicate: Predicate = field(default_factory=dict)
    mode: str = PRODUCT
    kind: str = AGMS
    degree_edge: str | None = None
    copy: int = 0
    info: RelationInfo | None = None

    def __post_init__(self):
        self.edges = tuple(sorted(self.edges))
        if self.mode not in MODES:
            raise InferenceError(f"unknown mode {self.mode!r}")
        if self.kind == DEGREE and self.degree_edge is None and len(self.edges) == 1:
            self.degree_edge = self.edges[0]
        if self.edges and self.info is None:
            raise InferenceError("sketch requests need the relation's hashing info")

    @property
    def attributes(self) -> frozenset[str]:
        return self.info.attributes_of(self.edges) if self.edges else frozenset()

    def sketch_key(self):
        return (self.kind, self.edges, self.degree_edge if self.kind == DEGREE else None)


def _combine(values: Sequence[float], mode: str) -> float:
    if not values:
        return 1.0
    if mode == MIN_PRODUCT:
        return float(min(values))
    return float(np.prod(values))


def _digest_mask(leaf: SketchLeaf, predicate: Predicate) -> np.ndarray | None:
    conds = [(a, predicate[a]) for a in leaf.attributes if a in predicate]
    if not conds:
        return None
    mask = np.ones(len(leaf.digest), dtype=bool)
    for a, ranges in conds:
        codes = leaf.digest.keys[a]
        hit = np.zeros(len(codes), dtype=bool)
        for lo, hi in ranges:
            hit |= (codes >= lo) & (codes <= hi)
        mask &= hit
    return mask


def _fallback_selectivity(leaf: SketchLeaf, predicate: Predicate, mode: str) -> float:
    sels = [leaf_selectivity(leaf.selectivity[a], predicate[a])
            for a in leaf.attributes if a in predicate]
    return _combine(sels, mode)


def _sketch_leaf_scalar(leaf: SketchLeaf, req: InferenceRequest) -> float:
    if leaf.digest is not None:
        mask = _digest_mask(leaf, req.predicate)
        if mask is None:
            return 1.0
        return float(leaf.digest.counts[mask].sum()) / leaf.rows if leaf.rows else 0.0
    return _fallback_selectivity(leaf, req.predicate, req.mode)


def scalar(node: Node, req: InferenceRequest) -> float:
    """Probability that a row of ``node``'s partition satisfies the predicate."""
    if isinstance(node, SelectivityLeaf):
        return leaf_selectivity(node, req.predicate.get(node.attribute))
    if isinstance(node, SketchLeaf):
        return _sketch_leaf_scalar(node, req)
    if isinstance(node, ProductNode):
        return _combine([scalar(c, req) for c in node.children], req.mode)
    if isinstance(node, SumNode):
        return float(sum(w * scalar(c, req) for w, c in zip(node.weights, node.children)))
    raise InferenceError(f"unknown node type {type(node).__name__}")


def _rebuild_from_digest(leaf: SketchLeaf, mask: np.ndarray, req: InferenceRequest) -> np.ndarray:
    info = req.info
    keys = {e: leaf.digest.keys[info.edge_attr[e]][mask] for e in req.edges}
    counts = leaf.digest.counts[mask]
    hashes = info.hashes.for_edges(req.edges, req.copy)
    orient = {e: info.orientations[e] for e in req.edges}
    if req.kind == AGMS:
        sk = build_agms(keys, hashes, orient, info.width, counts, req.copy)
    elif req.kind == COUNTMIN:
        sk = build_countmin(keys, hashes, orient, info.width, counts, req.copy)
    else:
        sk = build_degree(frequency_table(keys, counts), hashes, orient, info.width,
                          req.degree_edge, req.copy)
    return sk.counters


def _accumulate(node: Node, req: InferenceRequest, factor: float, out: np.ndarray) -> None:
    if factor == 0.0:
        return
    if isinstance(node, SketchLeaf):
        stored = node.sketches.get(req.sketch_key())
        if stored is None:
            raise InferenceError(f"leaf holds no sketch for {req.sketch_key()}")
        if node.digest is not None:
            mask = _digest_mask(node, req.predicate)
            if mask is not None:
                if mask.any():
                    out += factor * _rebuild_from_digest(node, mask, req)
                return
        elif any(a in req.predicate for a in node.attributes):
            factor *= _fallback_selectivity(node, req.predicate, req.mode)
            if factor == 0.0:
                return
        stored[req.copy].add_into(out, factor)
        return
    if isinstance(node, SumNode):
        for child in node.children:
            _accumulate(child, req, factor, out)
        return
    if isinstance(node, ProductNode):
        wanted = req.attributes
        holders = [c for c in node.children if wanted <= set(c.scope)]
        if len(holders) != 1:
            raise InferenceError(
                f"join attributes {sorted(wanted)} are not held by exactly one product child")
        holder = holders[0]
        others = [scalar(c, req) for c in node.children if c is not holder]
        _accumulate(holder, req, factor * _combine(others, req.mode), out)
        return
    raise InferenceError(f"no sketch for {sorted(req.attributes)} below a {type(node).__name__}")


def approx_counters(root: Node, req: InferenceRequest) -> np.ndarray:
    out = np.zeros(req.info.width)
    _accumulate(root, req, 1.0, out)
    return out


def approx_sketch(root: Node, req: InferenceRequest):
    """Approximate sketch of the selection for ``req.edges``, or its selectivity if no edges."""
    if not req.edges:
        return scalar(root, req)
    if not req.attributes <= set(root.scope):
        raise InferenceError(f"relation has no attributes {sorted(req.attributes)}")
    counters = approx_counters(root, req)
    orient = tuple(req.info.orientations[e] for e in req.edges)
    return SketchVector(counters, req.kind, req.edges, orient, req.copy,
                        req.degree_edge if req.kind == DEGREE else None)


def approx_bound_sketches(root: Node, req: InferenceRequest,
                          exact_degree: Mapping) -> tuple[SketchVector, dict[str, SketchVector]]:
    """Count-Min approximation plus one clamped degree approximation per edge of the subset.

    ``exact_degree`` maps (edges, degree_edge) to the unfiltered relation's exact
    degree sketches, one per copy.
    """
    cm_req = InferenceRequest(req.edges, req.predicate, req.mode, COUNTMIN, None, req.copy, req.info)
    cm = approx_sketch(root, cm_req)
    degrees = {}
    for e in req.edges:
        key = (req.edges, e)
        if key not in exact_degree:
            raise InferenceError(f"no exact root degree sketch for {key}")
        d_req = InferenceRequest(req.edges, req.predicate, req.mode, DEGREE, e, req.copy, req.info)
        approx = approx_sketch(root, d_req)
        exact = exact_degree[key][req.copy]
        if isinstance(exact, SparseSketch):
            exact = exact.dense()
        degrees[e] = clamp_degree(approx, exact)
    return cm, degrees


def selection_cardinality(root: Node, predicate: Predicate, mode: str = PRODUCT) -> float:
    return root.rows * scalar(root, InferenceRequest((), predicate, mode))
