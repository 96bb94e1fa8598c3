from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Union

import numpy as np

from ..hashing import LOCATION, EdgeHashes, derive_seed, make_family
from ..sketch import SparseSketch

SELECTIVITY_WIDTH = 2048


@dataclass
class RelationInfo:
    """What a relation's SPN needs to know about the join schema and hashing."""

    name: str
    edge_attr: dict[str, str]          # edge id -> this relation's attribute on that edge
    orientations: dict[str, int]       # edge id -> +1 / -1
    hashes: EdgeHashes
    subsets: tuple[tuple[str, ...], ...] = ()

    @property
    def width(self) -> int:
        return self.hashes.width

    @property
    def copies(self) -> int:
        return self.hashes.copies

    @property
    def join_attributes(self) -> frozenset[str]:
        return frozenset(self.edge_attr.values())

    def attributes_of(self, edges) -> frozenset[str]:
        return frozenset(self.edge_attr[e] for e in edges)


@dataclass
class SumNode:
    scope: tuple[str, ...]
    rows: int
    weights: list[float]
    children: list["Node"]


@dataclass
class ProductNode:
    scope: tuple[str, ...]
    rows: int
    children: list["Node"]


@lru_cache(maxsize=4096)
def level_family(hash_seed: int, level: int, width: int):
    return make_family(LOCATION, 4, width, derive_seed(hash_seed, "level", level))


@dataclass
class SelectivityLeaf:
    """One attribute's codes summarized by one Count-Min row per dyadic level."""

    attribute: str
    rows: int
    nulls: int
    domain: int
    width: int
    hash_seed: int
    counters: list[np.ndarray]
    distinct: int = 0

    @property
    def scope(self) -> tuple[str, ...]:
        return (self.attribute,)

    @property
    def levels(self) -> int:
        return len(self.counters) - 1

    def point(self, level: int, index: int) -> float:
        family = level_family(self.hash_seed, level, self.width)
        return float(self.counters[level][int(family(np.array([index]))[0])])


@dataclass
class Digest:
    """Exact distinct join-key tuples of a small sketch leaf (nulls coded -1)."""

    keys: dict[str, np.ndarray]
    counts: np.ndarray

    def __len__(self) -> int:
        return len(self.counts)


# (kind, edge subset, degree edge or None)
SketchKey = tuple[str, tuple[str, ...], Union[str, None]]


@dataclass
class SketchLeaf:
    attributes: tuple[str, ...]
    rows: int
    sketches: dict[SketchKey, list[SparseSketch]] = field(default_factory=dict)
    digest: Digest | None = None
    selectivity: dict[str, SelectivityLeaf] = field(default_factory=dict)

    @property
    def scope(self) -> tuple[str, ...]:
        return self.attributes


Node = Union[SumNode, ProductNode, SelectivityLeaf, SketchLeaf]


def iter_nodes(node: Node):
    yield node
    for child in getattr(node, "children", ()):
        yield from iter_nodes(child)


def count_nodes(node: Node) -> dict[str, int]:
    counts = {"sum": 0, "product": 0, "selectivity": 0, "sketch": 0}
    names = {SumNode: "sum", ProductNode: "product", SelectivityLeaf: "selectivity",
             SketchLeaf: "sketch"}
    for n in iter_nodes(node):
        counts[names[type(n)]] += 1
    return counts
