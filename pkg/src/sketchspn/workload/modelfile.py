"""Versioned little-endian model container.

Layout: b"SSPN" | u16 version | u64 payload length | payload | sha256(payload).
The payload is written in one canonical order (sorted keys everywhere), so a
loaded model re-serializes to identical bytes.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np

from ..sketch import SparseSketch
from ..spn.learn import TrainConfig
from ..spn.nodes import Digest, ProductNode, SelectivityLeaf, SketchLeaf, SumNode
from .schema import CATEGORICAL, FLOAT, DictionaryColumn, JoinSchema, Schema

MAGIC = b"SSPN"
VERSION = 1
_KIND_CODES = {"agms": 0, "countmin": 1, "degree": 2}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}
_SUM, _PRODUCT, _SELECTIVITY, _SKETCH = range(4)


class ModelFileError(ValueError):
    pass


class _Writer:
    def __init__(self):
        self.buf = io.BytesIO()

    def pack(self, fmt, *values):
        self.buf.write(struct.pack("<" + fmt, *values))

    def u8(self, v): self.pack("B", v)
    def u32(self, v): self.pack("I", v)
    def u64(self, v): self.pack("Q", v)
    def i64(self, v): self.pack("q", v)
    def f64(self, v): self.pack("d", v)

    def text(self, s: str):
        data = s.encode("utf-8")
        self.u32(len(data))
        self.buf.write(data)

    def texts(self, items):
        self.u32(len(items))
        for s in items:
            self.text(s)

    def array(self, arr, dtype):
        arr = np.ascontiguousarray(arr, dtype=dtype)
        self.u64(len(arr))
        self.buf.write(arr.tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.view = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.view):
            raise ModelFileError("model file is truncated")
        out = self.view[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        size = struct.calcsize("<" + fmt)
        return struct.unpack("<" + fmt, self.take(size))

    def u8(self): return self.unpack("B")[0]
    def u32(self): return self.unpack("I")[0]
    def u64(self): return self.unpack("Q")[0]
    def i64(self): return self.unpack("q")[0]
    def f64(self): return self.unpack("d")[0]

    def text(self) -> str:
        return bytes(self.take(self.u32())).decode("utf-8")

    def texts(self) -> list[str]:
        return [self.text() for _ in range(self.u32())]

    def array(self, dtype) -> np.ndarray:
        n = self.u64()
        dt = np.dtype(dtype)
        return np.frombuffer(bytes(self.take(n * dt.itemsize)), dtype=dt).copy()


def _write_sparse(w: _Writer, s: SparseSketch):
    w.u8(_KIND_CODES[s.kind])
    w.u32(s.width)
    w.u32(s.copy)
    w.texts(list(s.edges))
    bits = 0
    for i, o in enumerate(s.orientations):
        if o < 0:
            bits |= 1 << i
    w.u64(bits)
    w.text(s.degree_edge or "")
    order = np.argsort(s.index, kind="stable")
    w.array(np.asarray(s.index)[order], "<u4")
    w.array(np.asarray(s.values)[order], "<f8")


def _read_sparse(r: _Reader) -> SparseSketch:
    kind = _KIND_NAMES[r.u8()]
    width = r.u32()
    copy = r.u32()
    edges = tuple(r.texts())
    bits = r.u64()
    orient = tuple(-1 if bits >> i & 1 else 1 for i in range(len(edges)))
    degree_edge = r.text() or None
    index = r.array("<u4").astype(np.uint32)
    values = r.array("<f8").astype(np.float64)
    if len(index) != len(values):
        raise ModelFileError("sparse sketch index/value counts differ")
    return SparseSketch(index, values, width, kind, edges, orient, copy, degree_edge)


def _write_selectivity(w: _Writer, leaf: SelectivityLeaf):
    w.text(leaf.attribute)
    w.u64(leaf.rows)
    w.u64(leaf.nulls)
    w.u64(leaf.domain)
    w.u32(leaf.width)
    w.u64(leaf.hash_seed)
    w.u64(leaf.distinct)
    w.u32(len(leaf.counters))
    for level in leaf.counters:
        idx = np.flatnonzero(level)
        w.array(idx, "<u4")
        w.array(level[idx], "<f8")


def _read_selectivity(r: _Reader) -> SelectivityLeaf:
    attribute = r.text()
    rows, nulls, domain = r.u64(), r.u64(), r.u64()
    width = r.u32()
    seed = r.u64()
    distinct = r.u64()
    counters = []
    for _ in range(r.u32()):
        idx = r.array("<u4").astype(np.int64)
        vals = r.array("<f8")
        level = np.zeros(width)
        level[idx] = vals
        counters.append(level)
    return SelectivityLeaf(attribute, rows, nulls, domain, width, seed, counters, distinct)


def _sketch_key_order(key):
    kind, edges, deg = key
    return (_KIND_CODES[kind], len(edges), edges, deg or "")


def _write_node(w: _Writer, node):
    if isinstance(node, SumNode):
        w.u8(_SUM)
        w.texts(list(node.scope))
        w.u64(node.rows)
        w.u32(len(node.children))
        for weight in node.weights:
            w.f64(weight)
        for c in node.children:
            _write_node(w, c)
    elif isinstance(node, ProductNode):
        w.u8(_PRODUCT)
        w.texts(list(node.scope))
        w.u64(node.rows)
        w.u32(len(node.children))
        for c in node.children:
            _write_node(w, c)
    elif isinstance(node, SelectivityLeaf):
        w.u8(_SELECTIVITY)
        _write_selectivity(w, node)
    elif isinstance(node, SketchLeaf):
        w.u8(_SKETCH)
        w.texts(list(node.attributes))
        w.u64(node.rows)
        keys = sorted(node.sketches, key=_sketch_key_order)
        w.u32(len(keys))
        for key in keys:
            kind, edges, deg = key
            w.u8(_KIND_CODES[kind])
            w.texts(list(edges))
            w.text(deg or "")
            w.u32(len(node.sketches[key]))
            for s in node.sketches[key]:
                _write_sparse(w, s)
        if node.digest is None:
            w.u8(0)
        else:
            w.u8(1)
            names = sorted(node.digest.keys)
            w.texts(names)
            for a in names:
                w.array(node.digest.keys[a], "<i8")
            w.array(node.digest.counts, "<i8")
        names = sorted(node.selectivity)
        w.u32(len(names))
        for a in names:
            _write_selectivity(w, node.selectivity[a])
    else:
        raise ModelFileError(f"cannot serialize {type(node).__name__}")


def _read_node(r: _Reader):
    tag = r.u8()
    if tag == _SUM:
        scope = tuple(r.texts())
        rows = r.u64()
        n = r.u32()
        weights = [r.f64() for _ in range(n)]
        return SumNode(scope, rows, weights, [_read_node(r) for _ in range(n)])
    if tag == _PRODUCT:
        scope = tuple(r.texts())
        rows = r.u64()
        n = r.u32()
        return ProductNode(scope, rows, [_read_node(r) for _ in range(n)])
    if tag == _SELECTIVITY:
        return _read_selectivity(r)
    if tag == _SKETCH:
        attrs = tuple(r.texts())
        rows = r.u64()
        sketches = {}
        for _ in range(r.u32()):
            kind = _KIND_NAMES[r.u8()]
            edges = tuple(r.texts())
            deg = r.text() or None
            sketches[(kind, edges, deg)] = [_read_sparse(r) for _ in range(r.u32())]
        digest = None
        if r.u8():
            names = r.texts()
            keys = {a: r.array("<i8") for a in names}
            digest = Digest(keys, r.array("<i8"))
        selectivity = {}
        for _ in range(r.u32()):
            leaf = _read_selectivity(r)
            selectivity[leaf.attribute] = leaf
        return SketchLeaf(attrs, rows, sketches, digest, selectivity)
    raise ModelFileError(f"unknown node tag {tag}")


def _write_dictionary(w: _Writer, col: DictionaryColumn):
    w.text(col.type)
    if col.type == CATEGORICAL:
        w.texts([str(v) for v in col.values])
    elif col.type == FLOAT:
        w.array(col.values, "<f8")
    else:
        w.array(col.values, "<i8")


def _read_dictionary(r: _Reader) -> DictionaryColumn:
    kind = r.text()
    if kind == CATEGORICAL:
        items = r.texts()
        values = np.array(items, dtype=np.str_) if items else np.zeros(0, dtype=np.str_)
    elif kind == FLOAT:
        values = r.array("<f8")
    else:
        values = r.array("<i8")
    return DictionaryColumn(kind, values, np.zeros(0, dtype=np.int64))


def _canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def serialize(model) -> bytes:
    w = _Writer()
    w.u64(model.config.seed & 0xFFFFFFFFFFFFFFFF)
    w.text(_canonical_json(model.config.to_dict()))
    w.text(_canonical_json(model.schema.to_dict()))
    w.text(_canonical_json(model.joins.to_dict()))
    names = sorted(model.relations)
    w.u32(len(names))
    for name in names:
        rel = model.relations[name]
        w.text(name)
        w.u64(rel.rows)
        attrs = sorted(rel.dictionaries)
        w.u32(len(attrs))
        for a in attrs:
            w.text(a)
            _write_dictionary(w, rel.dictionaries[a])
        w.u32(len(rel.subsets))
        for s in rel.subsets:
            w.texts(list(s))
        _write_node(w, rel.root)
        keys = sorted(rel.exact_degree, key=lambda k: (len(k[0]), k[0], k[1]))
        w.u32(len(keys))
        for edges, deg in keys:
            w.texts(list(edges))
            w.text(deg)
            sketches = rel.exact_degree[(edges, deg)]
            w.u32(len(sketches))
            for s in sketches:
                _write_sparse(w, s)
    payload = w.buf.getvalue()
    header = MAGIC + struct.pack("<HQ", VERSION, len(payload))
    return header + payload + hashlib.sha256(payload).digest()


def checksum(data: bytes) -> str:
    """Hex checksum of a serialized model (the stored payload digest)."""
    return data[-32:].hex()


def deserialize(data: bytes):
    from ..model import RelationModel, SketchedModel

    if len(data) < 14 + 32 or data[:4] != MAGIC:
        raise ModelFileError("not a sketched-SPN model file")
    version, length = struct.unpack("<HQ", data[4:14])
    if version != VERSION:
        raise ModelFileError(f"unsupported model format version {version}")
    if len(data) != 14 + length + 32:
        raise ModelFileError("model file is truncated or has trailing bytes")
    payload = data[14:14 + length]
    if hashlib.sha256(payload).digest() != data[14 + length:]:
        raise ModelFileError("model checksum mismatch")
    r = _Reader(payload)
    seed = r.u64()
    config = TrainConfig(**json.loads(r.text()))
    if config.seed & 0xFFFFFFFFFFFFFFFF != seed:
        raise ModelFileError("seed field disagrees with the embedded configuration")
    schema = Schema.from_dict(json.loads(r.text()))
    joins = JoinSchema.from_dict(json.loads(r.text()))
    relations = {}
    for _ in range(r.u32()):
        name = r.text()
        rows = r.u64()
        dictionaries = {}
        for _ in range(r.u32()):
            a = r.text()
            dictionaries[a] = _read_dictionary(r)
        subsets = tuple(tuple(r.texts()) for _ in range(r.u32()))
        root = _read_node(r)
        exact = {}
        for _ in range(r.u32()):
            edges = tuple(r.texts())
            deg = r.text()
            exact[(edges, deg)] = [_read_sparse(r) for _ in range(r.u32())]
        relations[name] = RelationModel(name, rows, dictionaries, root, subsets, exact)
    if r.pos != len(payload):
        raise ModelFileError("unexpected bytes after the last relation")
    return SketchedModel(config, schema, joins, relations)


def save_model(model, path) -> str:
    data = serialize(model)
    Path(path).write_bytes(data)
    return checksum(data)


def load_model(path):
    return deserialize(Path(path).read_bytes())
