"""Shared oracles: nested-loop joins, direct sketch construction, phase enumeration."""

import itertools

import numpy as np
import pytest

from sketchspn.estimator import JoinEdge, JoinGraph
from sketchspn.sketch import build_agms, build_countmin, build_degree, frequency_table, locate


def make_graph(vertices, edges):
    """edges: (edge_id, left, left_attr, right, right_attr) tuples."""
    return JoinGraph(tuple(vertices), tuple(JoinEdge(*e) for e in edges))


def orientation(graph, vertex, edge_id):
    return 1 if graph.edge(edge_id).left == vertex else -1


def attr_of(graph, vertex, edge_id):
    e = graph.edge(edge_id)
    return e.left_attr if e.left == vertex else e.right_attr


def vertex_keys(tables, graph, v):
    return {e: np.asarray(tables[v][attr_of(graph, v, e)]) for e in graph.incident(v)}


def vertex_orient(graph, v):
    return {e: orientation(graph, v, e) for e in graph.incident(v)}


def build_vertex(tables, graph, hashes, v, kind, copy=0, degree_edge=None):
    edges = graph.incident(v)
    keys = vertex_keys(tables, graph, v)
    h = hashes.for_edges(edges, copy)
    orient = vertex_orient(graph, v)
    if kind == "agms":
        return build_agms(keys, h, orient, hashes.width, copy=copy)
    if kind == "countmin":
        return build_countmin(keys, h, orient, hashes.width, copy=copy)
    return build_degree(frequency_table(keys), h, orient, hashes.width, degree_edge, copy)


def agms_sketches(tables, graph, hashes, copy=0):
    return {v: build_vertex(tables, graph, hashes, v, "agms", copy) for v in graph.vertices}


def bound_sketches(tables, graph, hashes, copy=0):
    cm = {v: build_vertex(tables, graph, hashes, v, "countmin", copy) for v in graph.vertices}
    deg = {v: {e: build_vertex(tables, graph, hashes, v, "degree", copy, e)
               for e in graph.incident(v)} for v in graph.vertices}
    return cm, deg


def nested_loop_join(tables, graph):
    """Join size by enumerating every row combination."""
    verts = list(graph.vertices)
    sizes = [len(next(iter(tables[v].values()))) for v in verts]
    pos = {v: i for i, v in enumerate(verts)}
    total = 0
    for combo in itertools.product(*(range(n) for n in sizes)):
        ok = True
        for e in graph.edges:
            lv = tables[e.left][e.left_attr][combo[pos[e.left]]]
            rv = tables[e.right][e.right_attr][combo[pos[e.right]]]
            if lv != rv or lv < 0:
                ok = False
                break
        total += ok
    return total


def spurious_phase_zero(tables, graph, hashes, copy=0):
    """Count distinct-key combinations that do not join but land at total phase 0."""
    verts = list(graph.vertices)
    w = hashes.width
    per_vertex = []
    for v in verts:
        keys = vertex_keys(tables, graph, v)
        edges = graph.incident(v)
        stacked = np.unique(np.stack([keys[e] for e in edges], axis=1), axis=0)
        distinct = {e: stacked[:, i] for i, e in enumerate(edges)}
        phase = locate(hashes.for_edges(edges, copy), vertex_orient(graph, v), distinct, w)
        per_vertex.append((edges, distinct, phase))
    grids = np.meshgrid(*(np.arange(len(p[2])) for p in per_vertex), indexing="ij")
    grids = [g.ravel() for g in grids]
    phase = sum(p[2][g] for p, g in zip(per_vertex, grids)) % w
    joins = np.ones(len(phase), dtype=bool)
    for e in graph.edges:
        ends = [(p[1][e.edge_id], g) for p, g in zip(per_vertex, grids) if e.edge_id in p[0]]
        (a, ga), (b, gb) = ends
        joins &= a[ga] == b[gb]
    return int(np.sum((phase == 0) & ~joins))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
