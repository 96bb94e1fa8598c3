"""Fast-AGMS, Count-Min and max-degree sketch kernels.

A join key tuple is passed column-wise: ``keys`` maps each edge id of the sketch's
edge subset to an integer array holding, per row, the code of the attribute
incident to that edge. Negative codes mark nulls; such rows never equi-join and
are skipped by every builder.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .hashing import EdgeHashAssignment, eval_location, eval_sign

AGMS = "agms"
COUNTMIN = "countmin"
DEGREE = "degree"
KINDS = (AGMS, COUNTMIN, DEGREE)


class SketchError(ValueError):
    pass


@dataclass
class SketchVector:
    counters: np.ndarray
    kind: str
    edges: tuple[str, ...]
    orientations: tuple[int, ...]
    copy: int = 0
    # degree sketches only: the edge whose attribute value defines a "degree"
    degree_edge: str | None = None

    @property
    def width(self) -> int:
        return len(self.counters)

    @property
    def config(self) -> tuple:
        return (self.kind, self.width, self.edges, self.orientations, self.copy, self.degree_edge)

    def with_counters(self, counters: np.ndarray) -> "SketchVector":
        return SketchVector(counters, self.kind, self.edges, self.orientations, self.copy,
                            self.degree_edge)

    def sparse(self) -> "SparseSketch":
        idx = np.flatnonzero(self.counters).astype(np.uint32)
        return SparseSketch(idx, self.counters[idx].astype(np.float64), self.width, self.kind,
                            self.edges, self.orientations, self.copy, self.degree_edge)

    def total(self) -> float:
        return float(self.counters.sum())


@dataclass
class SparseSketch:
    """Storage form of a sketch: sorted nonzero (index, value) pairs."""

    index: np.ndarray
    values: np.ndarray
    width: int
    kind: str
    edges: tuple[str, ...]
    orientations: tuple[int, ...]
    copy: int = 0
    degree_edge: str | None = None

    def dense(self) -> SketchVector:
        counters = np.zeros(self.width)
        counters[self.index.astype(np.int64)] = self.values
        return SketchVector(counters, self.kind, self.edges, self.orientations, self.copy,
                            self.degree_edge)

    def add_into(self, out: np.ndarray, factor: float = 1.0) -> None:
        out[self.index.astype(np.int64)] += factor * self.values


@dataclass
class FrequencyTable:
    """Distinct join key tuples of a partition with their multiplicities."""

    keys: dict[str, np.ndarray]
    counts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __len__(self) -> int:
        return len(self.counts)


def _edges_of(keys: Mapping[str, np.ndarray]) -> tuple[str, ...]:
    return tuple(sorted(keys))


def _check_edges(assignments: Mapping, orientations: Mapping, keys: Mapping) -> tuple[str, ...]:
    edges = _edges_of(keys)
    if set(assignments) != set(edges) or set(orientations) != set(edges):
        raise SketchError(
            f"edge sets differ: keys {sorted(keys)}, hashes {sorted(assignments)}, "
            f"orientations {sorted(orientations)}")
    return edges


def non_null_mask(keys: Mapping[str, np.ndarray]) -> np.ndarray:
    cols = [np.asarray(keys[e]) for e in _edges_of(keys)]
    if not cols:
        return np.zeros(0, dtype=bool)
    mask = np.ones(len(cols[0]), dtype=bool)
    for c in cols:
        mask &= c >= 0
    return mask


def locate(assignments: Mapping[str, EdgeHashAssignment], orientations: Mapping[str, int],
           keys: Mapping[str, np.ndarray], width: int) -> np.ndarray:
    """Composite bucket: sum of orientation-signed per-edge locations, mod width."""
    edges = _check_edges(assignments, orientations, keys)
    n = len(np.asarray(keys[edges[0]])) if edges else 0
    bucket = np.zeros(n, dtype=np.int64)
    for e in edges:
        h = eval_location(assignments[e].location, keys[e])
        if orientations[e] >= 0:
            bucket += h
        else:
            bucket -= h
    return np.mod(bucket, width)


def sign_product(assignments: Mapping[str, EdgeHashAssignment],
                 keys: Mapping[str, np.ndarray]) -> np.ndarray:
    edges = _edges_of(keys)
    if set(assignments) != set(edges):
        raise SketchError(f"edge sets differ: keys {sorted(keys)}, hashes {sorted(assignments)}")
    n = len(np.asarray(keys[edges[0]])) if edges else 0
    sign = np.ones(n, dtype=np.int64)
    for e in edges:
        sign *= eval_sign(assignments[e].sign, keys[e])
    return sign


def _prepare(keys, assignments, orientations, counts):
    edges = _check_edges(assignments, orientations, keys)
    if not edges:
        raise SketchError("a sketch needs at least one edge")
    keys = {e: np.asarray(keys[e], dtype=np.int64) for e in edges}
    mask = non_null_mask(keys)
    keys = {e: v[mask] for e, v in keys.items()}
    if counts is None:
        weights = np.ones(int(mask.sum()))
    else:
        weights = np.asarray(counts, dtype=np.float64)[mask]
    orient = tuple(1 if orientations[e] >= 0 else -1 for e in edges)
    return edges, keys, weights, orient


def build_agms(keys, assignments, orientations, width: int, counts=None, copy: int = 0) -> SketchVector:
    """Fast-AGMS sketch: counter[locate(key)] += sign_product(key) per row (times its count)."""
    edges, keys, weights, orient = _prepare(keys, assignments, orientations, counts)
    buckets = locate(assignments, orientations, keys, width)
    signs = sign_product(assignments, keys)
    counters = np.bincount(buckets, weights=weights * signs, minlength=width).astype(np.float64)
    return SketchVector(counters, AGMS, edges, orient, copy)


def build_countmin(keys, assignments, orientations, width: int, counts=None, copy: int = 0) -> SketchVector:
    edges, keys, weights, orient = _prepare(keys, assignments, orientations, counts)
    buckets = locate(assignments, orientations, keys, width)
    counters = np.bincount(buckets, weights=weights, minlength=width).astype(np.float64)
    return SketchVector(counters, COUNTMIN, edges, orient, copy)


def frequency_table(keys: Mapping[str, np.ndarray], counts=None) -> FrequencyTable:
    """Exact multiplicity of each distinct non-null key tuple."""
    edges = _edges_of(keys)
    cols = [np.asarray(keys[e], dtype=np.int64) for e in edges]
    mask = non_null_mask(keys)
    weights = np.ones(int(mask.sum()), dtype=np.int64) if counts is None \
        else np.asarray(counts, dtype=np.int64)[mask]
    if not cols or not mask.any():
        return FrequencyTable({e: np.zeros(0, dtype=np.int64) for e in edges},
                              np.zeros(0, dtype=np.int64))
    stacked = np.stack([c[mask] for c in cols], axis=1)
    uniq, inverse = np.unique(stacked, axis=0, return_inverse=True)
    freq = np.bincount(inverse.reshape(-1), weights=weights, minlength=len(uniq)).astype(np.int64)
    return FrequencyTable({e: uniq[:, i].copy() for i, e in enumerate(edges)}, freq)


def build_degree(freq: FrequencyTable, assignments, orientations, width: int,
                 degree_edge: str | None = None, copy: int = 0) -> SketchVector:
    """Per-bucket maximum degree.

    With ``degree_edge`` set, a degree is the number of rows sharing one value of
    that edge's attribute inside the bucket; otherwise it is the frequency of one
    full key tuple. For a single-edge subset both coincide.
    """
    edges = _check_edges(assignments, orientations, freq.keys)
    if degree_edge is None and len(edges) == 1:
        degree_edge = edges[0]
    if degree_edge is not None and degree_edge not in edges:
        raise SketchError(f"degree edge {degree_edge!r} not in {edges}")
    orient = tuple(1 if orientations[e] >= 0 else -1 for e in edges)
    counters = np.zeros(width)
    if len(freq):
        buckets = locate(assignments, orientations, freq.keys, width)
        if degree_edge is None or len(edges) == 1:
            np.maximum.at(counters, buckets, freq.counts.astype(np.float64))
        else:
            pairs = np.stack([freq.keys[degree_edge], buckets], axis=1)
            uniq, inverse = np.unique(pairs, axis=0, return_inverse=True)
            sums = np.bincount(inverse.reshape(-1), weights=freq.counts, minlength=len(uniq))
            np.maximum.at(counters, uniq[:, 1], sums)
    return SketchVector(counters, DEGREE, edges, orient, copy,
                        degree_edge if len(edges) > 1 else edges[0])


def _check_same(a: SketchVector, b: SketchVector) -> None:
    if a.config != b.config:
        raise SketchError(f"sketch configurations differ: {a.config} vs {b.config}")


def add(a: SketchVector, b: SketchVector) -> SketchVector:
    _check_same(a, b)
    return a.with_counters(a.counters + b.counters)


def scale(a: SketchVector, c: float) -> SketchVector:
    if not 0.0 <= c <= 1.0:
        raise SketchError(f"scale factor must lie in [0, 1], got {c}")
    return a.with_counters(a.counters * c)


def clamp_degree(approx: SketchVector, exact_root: SketchVector) -> SketchVector:
    """Cap an approximated degree sketch by the unfiltered relation's exact one."""
    _check_same(approx, exact_root)
    if approx.kind != DEGREE:
        raise SketchError("clamp_degree applies to degree sketches")
    return approx.with_counters(np.minimum(approx.counters, exact_root.counters))
