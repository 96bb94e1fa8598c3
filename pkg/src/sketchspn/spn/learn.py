"""Structure learning for one relation's sketched SPN.

Recursion per partition: single attribute or join-only scope -> leaf; small
partition -> product of per-attribute leaves; RDC-independent groups -> product
node; otherwise a two-way row clustering -> sum node.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..hashing import derive_seed
from ..sketch import (AGMS, COUNTMIN, DEGREE, build_agms, build_countmin, build_degree,
                      frequency_table)
from .nodes import (SELECTIVITY_WIDTH, Digest, Node, ProductNode, RelationInfo,
                    SelectivityLeaf, SketchLeaf, SumNode, level_family)
from .rdc import RDC_FEATURES, RDC_SCALE, rdc_matrix, sine_features

HARD_EM = "hard-em"
KMEANS = "k-means"


class TrainError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    rdc_threshold: float = 0.0
    cluster_fraction: float = 0.1
    cluster_method: str = HARD_EM
    width: int = 1 << 17
    copies: int = 5
    seed: int = 0
    rdc_features: int = RDC_FEATURES
    rdc_scale: float = RDC_SCALE
    rdc_sample: int = 10_000
    digest_limit: int = 4096
    cluster_iterations: int = 50
    em_bins: int = 256

    def __post_init__(self):
        if not -1.0 <= self.rdc_threshold <= 1.0:
            raise TrainError(f"rdc threshold must lie in [-1, 1], got {self.rdc_threshold}")
        if not 0.0 < self.cluster_fraction <= 1.0:
            raise TrainError(f"cluster fraction must lie in (0, 1], got {self.cluster_fraction}")
        if self.cluster_method not in (HARD_EM, KMEANS):
            raise TrainError(f"unknown cluster method {self.cluster_method!r}")
        if self.width < 1 or self.width & (self.width - 1):
            raise TrainError(f"width must be a power of two, got {self.width}")
        if self.copies < 1:
            raise TrainError("need at least one sketch copy")

    def to_dict(self) -> dict:
        return asdict(self)


def dependency_components(matrix: np.ndarray, threshold: float,
                          tied: list[list[int]] | None = None) -> list[list[int]]:
    """Connected components of the graph with an edge wherever rdc > threshold.

    ``tied`` lists index groups that are always kept in one component.
    """
    n = len(matrix)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    for i in range(n):
        for j in range(i + 1, n):
            if matrix[i, j] > threshold:
                union(i, j)
    for group in tied or ():
        for j in group[1:]:
            union(group[0], j)
    comps: dict[int, list[int]] = {}
    for i in range(n):
        comps.setdefault(find(i), []).append(i)
    return sorted(comps.values(), key=lambda c: c[0])


def _bin_codes(column: np.ndarray, domain: int, bins: int) -> tuple[np.ndarray, int]:
    # nulls go to an extra last category
    codes = np.asarray(column, dtype=np.int64)
    if domain > bins:
        binned = np.where(codes >= 0, codes * bins // domain, bins)
        return binned, bins + 1
    return np.where(codes >= 0, codes, max(domain, 1)), max(domain, 1) + 1


def _fallback_split(data: np.ndarray, domains: list[int]) -> np.ndarray:
    scaled = np.column_stack([
        np.where(data[:, j] >= 0, data[:, j], -1) / max(domains[j] - 1, 1)
        for j in range(data.shape[1])])
    col = scaled[:, int(np.argmax(scaled.var(axis=0)))]
    med = np.median(col)
    labels = (col > med).astype(np.int64)
    if labels.min() == labels.max():
        labels = (col >= med).astype(np.int64)
    if labels.min() == labels.max():
        labels = (np.arange(len(col)) >= len(col) // 2).astype(np.int64)
    return labels


def _hard_em(data, domains, rng, iterations, bins):
    n, a = data.shape
    binned = [_bin_codes(data[:, j], domains[j], bins) for j in range(a)]
    labels = rng.integers(0, 2, size=n)
    for _ in range(iterations):
        loglik = np.zeros((n, 2))
        for k in (0, 1):
            member = labels == k
            size = int(member.sum())
            if size == 0:
                return labels
            loglik[:, k] = math.log((size + 1) / (n + 2))
            for codes, cats in binned:
                counts = np.bincount(codes[member], minlength=cats)
                loglik[:, k] += np.log((counts + 1.0) / (size + cats))[codes]
        new = (loglik[:, 1] > loglik[:, 0]).astype(np.int64)
        if np.array_equal(new, labels):
            break
        labels = new
    return labels


def _kmeans(data, domains, rng, iterations, k, s):
    feats = [sine_features(data[:, j], k, s, rng) for j in range(data.shape[1])]
    feats = [f for f in feats if f is not None]
    if not feats:
        return np.zeros(len(data), dtype=np.int64)
    x = np.hstack(feats)
    distinct = np.unique(x, axis=0)
    if len(distinct) < 2:
        return np.zeros(len(data), dtype=np.int64)
    centroids = distinct[rng.choice(len(distinct), size=2, replace=False)]
    labels = np.zeros(len(x), dtype=np.int64)
    for it in range(iterations):
        dist = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new = np.argmin(dist, axis=1)
        if it and np.array_equal(new, labels):
            break
        labels = new
        for c in (0, 1):
            if np.any(labels == c):
                centroids[c] = x[labels == c].mean(axis=0)
    return labels


def cluster_rows(data, domains, method: str = HARD_EM, seed=0, iterations: int = 50,
                 bins: int = 256, k: int = RDC_FEATURES, s: float = RDC_SCALE) -> np.ndarray:
    """Split rows (n x attributes code matrix) into two non-empty blocks; returns 0/1 labels."""
    data = np.asarray(data, dtype=np.int64)
    if data.ndim == 1:
        data = data[:, None]
    if len(data) < 2:
        raise TrainError("clustering needs at least two rows")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if method == HARD_EM:
        labels = _hard_em(data, list(domains), rng, iterations, bins)
    elif method == KMEANS:
        labels = _kmeans(data, list(domains), rng, iterations, k, s)
    else:
        raise TrainError(f"unknown cluster method {method!r}")
    if labels.min() == labels.max():
        labels = _fallback_split(data, list(domains))
    return labels


def build_selectivity_leaf(column, domain: int, width: int, hash_seed: int,
                           attribute: str = "") -> SelectivityLeaf:
    codes = np.asarray(column, dtype=np.int64)
    valid = codes[codes >= 0]
    levels = math.ceil(math.log2(domain)) if domain > 1 else 0
    width = min(width, SELECTIVITY_WIDTH)
    counters = []
    for level in range(levels + 1):
        family = level_family(hash_seed, level, width)
        buckets = family(valid >> level) if len(valid) else np.zeros(0, dtype=np.int64)
        counters.append(np.bincount(buckets, minlength=width).astype(np.float64))
    return SelectivityLeaf(attribute, len(codes), int(len(codes) - len(valid)), domain, width,
                           hash_seed, counters, int(len(np.unique(valid))))


def distinct_tuples(columns: dict[str, np.ndarray]) -> tuple[dict[str, np.ndarray], np.ndarray]:
    names = list(columns)
    stacked = np.stack([np.asarray(columns[a], dtype=np.int64) for a in names], axis=1)
    if len(stacked) == 0:
        return {a: np.zeros(0, dtype=np.int64) for a in names}, np.zeros(0, dtype=np.int64)
    uniq, counts = np.unique(stacked, axis=0, return_counts=True)
    return {a: uniq[:, i].copy() for i, a in enumerate(names)}, counts.astype(np.int64)


def sketch_subset(keys_by_attr: dict[str, np.ndarray], counts: np.ndarray, info: RelationInfo,
                  subset: tuple[str, ...], copy: int, kinds=(AGMS, COUNTMIN, DEGREE)):
    """Yield ((kind, subset, degree_edge), SketchVector) for one edge subset and copy."""
    keys = {e: keys_by_attr[info.edge_attr[e]] for e in subset}
    hashes = info.hashes.for_edges(subset, copy)
    orient = {e: info.orientations[e] for e in subset}
    if AGMS in kinds:
        yield (AGMS, subset, None), build_agms(keys, hashes, orient, info.width, counts, copy)
    if COUNTMIN in kinds:
        yield (COUNTMIN, subset, None), build_countmin(keys, hashes, orient, info.width, counts, copy)
    if DEGREE in kinds:
        freq = frequency_table(keys, counts)
        for e in subset:
            yield (DEGREE, subset, e), build_degree(freq, hashes, orient, info.width, e, copy)


def partition_sketches(keys_by_attr, counts, info: RelationInfo, kinds=(AGMS, COUNTMIN, DEGREE)):
    out: dict = {}
    for subset in info.subsets:
        for copy in range(info.copies):
            for key, sk in sketch_subset(keys_by_attr, counts, info, subset, copy, kinds):
                out.setdefault(key, []).append(sk.sparse())
    return out


def build_sketch_leaf(columns: dict[str, np.ndarray], info: RelationInfo, domains: dict[str, int],
                      config: TrainConfig) -> SketchLeaf:
    attrs = tuple(columns)
    for a in attrs:
        if a not in info.join_attributes:
            raise TrainError(f"attribute {a!r} of {info.name} has no declared join edge")
    rows = len(next(iter(columns.values()))) if columns else 0
    keys, counts = distinct_tuples(columns)
    leaf = SketchLeaf(attrs, rows)
    # subsets restricted to this leaf's attributes
    local = RelationInfo(info.name, info.edge_attr, info.orientations, info.hashes,
                         tuple(s for s in info.subsets if info.attributes_of(s) <= set(attrs)))
    leaf.sketches = partition_sketches(keys, counts, local)
    if len(counts) <= config.digest_limit:
        leaf.digest = Digest(keys, counts)
    else:
        for a in attrs:
            leaf.selectivity[a] = build_selectivity_leaf(
                columns[a], domains[a], config.width, selectivity_seed(config.seed, info.name, a), a)
    return leaf


def selectivity_seed(seed: int, relation: str, attribute: str) -> int:
    return derive_seed(seed, "selectivity", relation, attribute)


class _Trainer:
    def __init__(self, columns, domains, info: RelationInfo, config: TrainConfig):
        self.columns = {a: np.asarray(c, dtype=np.int64) for a, c in columns.items()}
        self.domains = domains
        self.info = info
        self.config = config
        self.total = len(next(iter(self.columns.values()))) if self.columns else 0
        self.rng = np.random.default_rng(derive_seed(config.seed, "train", info.name))
        self.join = info.join_attributes

    def node(self, rows: np.ndarray, scope: tuple[str, ...]) -> Node:
        if len(rows) == 0:
            raise TrainError("cannot train on an empty partition")
        n = len(rows)
        if len(scope) == 1 or all(a in self.join for a in scope):
            return self.leaf(rows, scope)
        if n < 2 or n <= self.config.cluster_fraction * self.total:
            return self.factorize(rows, scope)
        groups = self.decompose(rows, scope)
        if len(groups) > 1:
            return ProductNode(scope, n, [self.node(rows, g) for g in groups])
        data = np.column_stack([self.columns[a][rows] for a in scope])
        labels = cluster_rows(data, [self.domains[a] for a in scope], self.config.cluster_method,
                              self.rng, self.config.cluster_iterations, self.config.em_bins,
                              self.config.rdc_features, self.config.rdc_scale)
        blocks = [rows[labels == 0], rows[labels == 1]]
        return SumNode(scope, n, [len(b) / n for b in blocks],
                       [self.node(b, scope) for b in blocks])

    def leaf(self, rows, scope) -> Node:
        if all(a in self.join for a in scope):
            cols = {a: self.columns[a][rows] for a in scope}
            return build_sketch_leaf(cols, self.info, self.domains, self.config)
        (a,) = scope
        return build_selectivity_leaf(self.columns[a][rows], self.domains[a], self.config.width,
                                      selectivity_seed(self.config.seed, self.info.name, a), a)

    def factorize(self, rows, scope) -> Node:
        join = tuple(a for a in scope if a in self.join)
        children = [self.leaf(rows, (a,)) for a in scope if a not in self.join]
        if join:
            children.append(self.leaf(rows, join))
        return ProductNode(scope, len(rows), children)

    def decompose(self, rows, scope) -> list[tuple[str, ...]]:
        sample = rows
        if len(rows) > self.config.rdc_sample:
            sample = np.sort(self.rng.choice(rows, size=self.config.rdc_sample, replace=False))
        matrix = rdc_matrix([self.columns[a][sample] for a in scope], self.config.rdc_features,
                            self.config.rdc_scale, self.rng)
        tied = [[i for i, a in enumerate(scope) if a in self.join]]
        comps = dependency_components(matrix, self.config.rdc_threshold, tied)
        return [tuple(scope[i] for i in c) for c in comps]


def train_spn(columns: dict[str, np.ndarray], domains: dict[str, int], info: RelationInfo,
              config: TrainConfig, rows: np.ndarray | None = None,
              scope: tuple[str, ...] | None = None) -> Node:
    trainer = _Trainer(columns, domains, info, config)
    if rows is None:
        rows = np.arange(trainer.total)
    if scope is None:
        scope = tuple(columns)
    if trainer.total == 0:
        # an empty relation still gets a (zero-row) leaf per attribute
        return trainer.factorize(np.asarray(rows, dtype=np.int64), tuple(scope))
    return trainer.node(np.asarray(rows), tuple(scope))
