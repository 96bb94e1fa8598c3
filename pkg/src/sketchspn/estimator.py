"""Join-graph sketch contraction.

Every edge is sketched at one endpoint with location +h and at the other with
-h. Matching tuples therefore land on bucket combinations whose locations sum to
0 (mod w), and the DFT-domain product picks out exactly that phase-0 mass:

    estimate = Re( (1/w) * sum_k prod_v DFT(s_v)[k] )
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .sketch import AGMS, COUNTMIN, DEGREE, SketchVector

FAGMS_MEDIAN = "fagms-median"
FAGMS_MAX = "fagms-max"
BOUND = "bound"
VARIANTS = (FAGMS_MEDIAN, FAGMS_MAX, BOUND)


class EstimationError(ValueError):
    pass


def _check_pow2(n: int) -> None:
    if n < 1 or n & (n - 1):
        raise EstimationError(f"DFT length must be a power of two, got {n}")


_BITREV: dict[int, np.ndarray] = {}
_TWIDDLE: dict[int, np.ndarray] = {}


def _bit_reversal(n: int) -> np.ndarray:
    perm = _BITREV.get(n)
    if perm is None:
        bits = n.bit_length() - 1
        idx = np.arange(n)
        perm = np.zeros(n, dtype=np.int64)
        for b in range(bits):
            perm |= ((idx >> b) & 1) << (bits - 1 - b)
        _BITREV[n] = perm
    return perm


def _twiddles(size: int) -> np.ndarray:
    tw = _TWIDDLE.get(size)
    if tw is None:
        tw = np.exp(-2j * np.pi * np.arange(size // 2) / size)
        _TWIDDLE[size] = tw
    return tw


def dft(x) -> np.ndarray:
    """Unnormalized forward DFT along the last axis (iterative radix-2)."""
    a = np.asarray(x, dtype=np.complex128)
    n = a.shape[-1]
    _check_pow2(n)
    batch = a.shape[:-1]
    a = a[..., _bit_reversal(n)]
    size = 2
    while size <= n:
        half = size // 2
        blocks = a.reshape(*batch, n // size, size)
        even = blocks[..., :half]
        odd = blocks[..., half:] * _twiddles(size)
        a = np.concatenate([even + odd, even - odd], axis=-1).reshape(*batch, n)
        size *= 2
    return a


def idft(x) -> np.ndarray:
    """Inverse of :func:`dft`; carries the 1/w factor."""
    a = np.asarray(x, dtype=np.complex128)
    return np.conj(dft(np.conj(a))) / a.shape[-1]


@dataclass(frozen=True)
class JoinEdge:
    edge_id: str
    left: str
    left_attr: str
    right: str
    right_attr: str

    def other(self, vertex: str) -> str:
        return self.right if vertex == self.left else self.left


@dataclass
class JoinGraph:
    vertices: tuple[str, ...]
    edges: tuple[JoinEdge, ...] = ()
    relations: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = tuple(self.vertices)
        self.edges = tuple(self.edges)
        ids = [e.edge_id for e in self.edges]
        if len(set(ids)) != len(ids):
            raise EstimationError("an edge id may appear at most once per join graph")
        for e in self.edges:
            if e.left not in self.vertices or e.right not in self.vertices:
                raise EstimationError(f"edge {e.edge_id} references an unknown vertex")
            if e.left == e.right:
                raise EstimationError(f"edge {e.edge_id} joins vertex {e.left} with itself")
        if not self.is_connected():
            raise EstimationError("join graph is not connected")

    def incident(self, vertex: str) -> tuple[str, ...]:
        return tuple(sorted(e.edge_id for e in self.edges if vertex in (e.left, e.right)))

    def edge(self, edge_id: str) -> JoinEdge:
        for e in self.edges:
            if e.edge_id == edge_id:
                return e
        raise KeyError(edge_id)

    def neighbors(self, vertex: str) -> list[tuple[str, JoinEdge]]:
        return [(e.other(vertex), e) for e in self.edges if vertex in (e.left, e.right)]

    def is_connected(self) -> bool:
        if not self.vertices:
            return False
        seen = {self.vertices[0]}
        todo = [self.vertices[0]]
        while todo:
            v = todo.pop()
            for u, _ in self.neighbors(v):
                if u not in seen:
                    seen.add(u)
                    todo.append(u)
        return len(seen) == len(self.vertices)

    def is_tree(self) -> bool:
        return self.is_connected() and len(self.edges) == len(self.vertices) - 1

    def parent_edges(self, root: str) -> dict[str, str]:
        """For every non-root vertex, the edge leading towards ``root``."""
        parent: dict[str, str] = {}
        seen = {root}
        queue = deque([root])
        while queue:
            v = queue.popleft()
            for u, e in self.neighbors(v):
                if u not in seen:
                    seen.add(u)
                    parent[u] = e.edge_id
                    queue.append(u)
        return parent


def _validate(sketches: Mapping[str, SketchVector], graph: JoinGraph) -> None:
    if set(sketches) != set(graph.vertices):
        raise EstimationError("need exactly one sketch per join-graph vertex")
    widths = {s.width for s in sketches.values()}
    copies = {s.copy for s in sketches.values()}
    if len(widths) != 1 or len(copies) != 1:
        raise EstimationError(f"sketches disagree on width/copy: {widths} {copies}")
    for v, s in sketches.items():
        if tuple(s.edges) != graph.incident(v):
            raise EstimationError(
                f"sketch of {v} covers edges {s.edges}, graph needs {graph.incident(v)}")
    for e in graph.edges:
        a, b = sketches[e.left], sketches[e.right]
        oa = a.orientations[a.edges.index(e.edge_id)]
        ob = b.orientations[b.edges.index(e.edge_id)]
        if oa != -ob:
            raise EstimationError(f"edge {e.edge_id} is not oppositely oriented at its endpoints")


def contract_arrays(arrays: Sequence[np.ndarray]) -> np.ndarray:
    """Phase-0 contraction of counter arrays shaped (..., w); one value per leading index."""
    if not arrays:
        raise EstimationError("nothing to contract")
    w = arrays[0].shape[-1]
    spectrum = dft(arrays[0])
    for a in arrays[1:]:
        spectrum = spectrum * dft(a)
    return spectrum.sum(axis=-1).real / w


def contract(sketches: Mapping[str, SketchVector], graph: JoinGraph) -> float:
    _validate(sketches, graph)
    return float(contract_arrays([sketches[v].counters for v in graph.vertices]))


def bound_arrays(countmin: Mapping[str, np.ndarray],
                 degree: Mapping[str, Mapping[str, np.ndarray]],
                 graph: JoinGraph, choice: str) -> np.ndarray:
    parents = graph.parent_edges(choice)
    arrays = [countmin[choice]] + [degree[v][parents[v]] for v in graph.vertices if v != choice]
    return np.maximum(contract_arrays(arrays), 0.0)


def contract_bound(countmin: Mapping[str, SketchVector],
                   degree: Mapping[str, Mapping[str, SketchVector]],
                   graph: JoinGraph, choice: str) -> float:
    """Bound-sketch product with ``choice`` contributing counts and all others degrees.

    Each non-chosen vertex uses the degree sketch keyed by its edge towards the
    chosen vertex, which keeps the product an upper bound for tree-shaped joins.
    """
    if choice not in graph.vertices:
        raise EstimationError(f"unknown vertex {choice!r}")
    if not graph.is_tree():
        raise EstimationError("bound estimation needs an acyclic join graph")
    _validate(countmin, graph)
    parents = graph.parent_edges(choice)
    for v in graph.vertices:
        if v == choice:
            continue
        s = degree[v][parents[v]]
        if s.kind != DEGREE or s.edges != countmin[v].edges or s.orientations != countmin[v].orientations:
            raise EstimationError(f"degree sketch of {v} does not match its count sketch")
    if countmin[choice].kind != COUNTMIN:
        raise EstimationError("the chosen vertex must supply a count-min sketch")
    return float(bound_arrays({v: s.counters for v, s in countmin.items()},
                              {v: {e: s.counters for e, s in d.items()} for v, d in degree.items()},
                              graph, choice))


def bound_estimate(countmin, degree, graph: JoinGraph) -> float:
    return min(contract_bound(countmin, degree, graph, v) for v in graph.vertices)


def combine_estimates(estimates: Iterable[float], variant: str) -> float:
    values = np.asarray(list(estimates), dtype=np.float64)
    if values.size == 0:
        raise EstimationError("no estimates to combine")
    if variant == FAGMS_MEDIAN:
        result = float(np.median(values))
    elif variant == FAGMS_MAX:
        result = float(values.max())
    elif variant == BOUND:
        result = float(values.min())
    else:
        raise EstimationError(f"unknown variant {variant!r}")
    return max(result, 1.0)


def sketch_kind_for(variant: str) -> str:
    return AGMS if variant in (FAGMS_MEDIAN, FAGMS_MAX) else COUNTMIN
