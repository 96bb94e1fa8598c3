import csv
import itertools
import json

import numpy as np
import pytest

from sketchspn.bench.metrics import (MetricError, nearest_rank, percentile_table, q_error,
                                     summarize)
from sketchspn.bench.oracle import oracle_record, true_cardinality
from sketchspn.bench.synthetic import chain_queries, chain_tables, selection_queries, write_dataset
from sketchspn.cli import main
from sketchspn.workload.modelfile import load_model
from sketchspn.workload.query import parse_query
from sketchspn.workload.schema import JoinSchema, Schema, encode_tables


def self_join_db(keys):
    s = Schema.from_dict({"relations": [{"name": "R", "attributes": [{"name": "k"}, {"name": "f"}]}]})
    j = JoinSchema.from_dict({"edges": [{"id": "rr", "left": "R.k", "right": "R.k"}]})
    return encode_tables({"R": {"k": list(keys), "f": list(range(len(keys)))}}, s, j)


def test_oracle_self_join_and_empty_selection():
    rng = np.random.default_rng(0)
    keys = rng.integers(0, 30, 500)
    db = self_join_db(keys)
    rec = {"id": "q", "relations": [{"alias": "r1", "name": "R"}, {"alias": "r2", "name": "R"}],
           "joins": ["r1.k=r2.k"]}
    q = parse_query(rec, db.joins, db.dictionaries())
    assert true_cardinality(db, q) == int((np.bincount(keys) ** 2).sum())
    q = parse_query(dict(rec, filters=[["r1.f", "<", 0]]), db.joins, db.dictionaries())
    assert true_cardinality(db, q) == 0


def nested_loop(tables, spec):
    """Row-by-row enumeration over the aliases of a parsed query."""
    aliases = list(spec.aliases)
    rows = {a: range(len(next(iter(tables[spec.aliases[a]].values())))) for a in aliases}
    total = 0
    for combo in itertools.product(*(rows[a] for a in aliases)):
        pick = dict(zip(aliases, combo))
        ok = True
        for e in spec.joins:
            lv = tables[spec.aliases[e.left]][e.left_attr][pick[e.left]]
            rv = tables[spec.aliases[e.right]][e.right_attr][pick[e.right]]
            ok &= lv == rv and lv != ""
        total += ok
    return total


def test_oracle_three_chain_matches_nested_loop():
    rng = np.random.default_rng(1)
    schema = Schema.from_dict({"relations": [
        {"name": "A", "attributes": [{"name": "x"}, {"name": "p"}]},
        {"name": "B", "attributes": [{"name": "x"}, {"name": "y"}]},
        {"name": "C", "attributes": [{"name": "y"}]}]})
    joins = JoinSchema.from_dict({"edges": [{"id": "e1", "left": "A.x", "right": "B.x"},
                                            {"id": "e2", "left": "B.y", "right": "C.y"}]})
    for trial in range(3):
        tables = {"A": {"x": rng.integers(0, 8, 100).tolist(), "p": rng.integers(0, 4, 100).tolist()},
                  "B": {"x": rng.integers(0, 8, 100).tolist(), "y": rng.integers(0, 8, 100).tolist()},
                  "C": {"y": rng.integers(0, 8, 100).tolist()}}
        tables["B"]["y"][:5] = [""] * 5
        db = encode_tables(tables, schema, joins)
        rec = {"id": "q", "relations": ["A", "B", "C"], "joins": ["e1", "e2"],
               "filters": [["A.p", "<=", trial]]}
        q = parse_query(rec, joins, db.dictionaries())
        filtered = {k: dict(v) for k, v in tables.items()}
        keep = [i for i, p in enumerate(tables["A"]["p"]) if p <= trial]
        filtered["A"] = {c: [tables["A"][c][i] for i in keep] for c in ("x", "p")}
        assert true_cardinality(db, q) == nested_loop(filtered, q)


def test_oracle_budget_skip():
    # the budget counts intermediate key groups, so use many distinct keys
    db = self_join_db(list(range(2000)) * 2)
    rec = {"id": "big", "relations": [{"alias": "r1", "name": "R"}, {"alias": "r2", "name": "R"}],
           "joins": ["rr"]}
    q = parse_query(rec, db.joins, db.dictionaries())
    out = oracle_record(db, q, budget=1000)
    assert out["truth"] is None and out["skipped"] == "budget"
    assert oracle_record(db, q)["truth"] == 8000


def test_metrics():
    assert q_error(10, 2) == 5 and q_error(2, 10) == 5
    s = summarize({"a": 3.0, "b": 7.0}, {"a": 3.0, "b": 7.0})
    assert all(v == 1.0 for v in s.q_error.values())
    values = [15, 20, 35, 40, 50]
    assert nearest_rank(values, 30) == 20
    assert nearest_rank(values, 40) == 20
    assert nearest_rank(values, 50) == 35
    assert nearest_rank(values, 100) == 50
    assert set(percentile_table(values)) == {"p50", "p90", "p95", "p99", "max"}
    with pytest.raises(MetricError):
        summarize({"a": 1.0}, {"b": 1.0})
    with pytest.raises(MetricError):
        nearest_rank([], 50)
    s = summarize({"a": 5.0, "b": 0.2, "c": 9.0}, {"a": 0.0, "b": 4.0, "c": None})
    assert s.count == 2 and s.clamped == 1
    assert s.q_error["max"] == 5.0
    assert s.underestimation_rate == 0.5


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    tables = chain_tables(rows_b=3000, rows_a=300, rows_c=100, rows_d=1000, seed=3)
    queries = chain_queries(tables, count=4, seed=4)
    d = tmp_path_factory.mktemp("chain")
    paths = write_dataset(d, tables, queries)
    sel = d / "sel.jsonl"
    sel.write_text("".join(json.dumps(q) + "\n" for q in selection_queries(tables, count=6, seed=5)))
    paths["selections"] = sel
    return paths


def train(paths, out, *extra):
    return main(["train", "--data", str(paths["data"]), "--schema", str(paths["schema"]),
                 "--joins", str(paths["joins"]), "--out", str(out), "--width", "256",
                 "--copies", "2", *extra])


def read_lines(path):
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def test_cli_train_deterministic(dataset, tmp_path, capsys, monkeypatch):
    assert train(dataset, tmp_path / "a.sspn", "--seed", "7") == 0
    first = json.loads(capsys.readouterr().out)
    assert train(dataset, tmp_path / "b.sspn", "--seed", "7") == 0
    second = json.loads(capsys.readouterr().out)
    assert first["checksum"] == second["checksum"]
    assert (tmp_path / "a.sspn").read_bytes() == (tmp_path / "b.sspn").read_bytes()
    assert set(first["timings"]) >= {"ingest", "structure", "sketching"}
    monkeypatch.setenv("SSPN_SEED", "7")
    assert train(dataset, tmp_path / "c.sspn") == 0
    assert json.loads(capsys.readouterr().out)["checksum"] == first["checksum"]
    monkeypatch.setenv("SSPN_SEED", "8")
    assert train(dataset, tmp_path / "d.sspn") == 0
    assert json.loads(capsys.readouterr().out)["checksum"] != first["checksum"]


def test_cli_cluster_fraction_one_has_no_sum_nodes(dataset, tmp_path):
    from sketchspn.spn.nodes import count_nodes
    assert train(dataset, tmp_path / "m.sspn", "--cluster-fraction", "1.0") == 0
    model = load_model(tmp_path / "m.sspn")
    assert all(count_nodes(r.root)["sum"] == 0 for r in model.relations.values())


@pytest.fixture(scope="module")
def model_path(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("model") / "m.sspn"
    assert train(dataset, out) == 0
    return out


def test_cli_estimate_deterministic_and_threads(dataset, model_path, tmp_path):
    base = ["estimate", "--model", str(model_path), "--queries", str(dataset["queries"]),
            "--subqueries"]
    assert main(base + ["--out", str(tmp_path / "a.jsonl")]) == 0
    assert main(base + ["--out", str(tmp_path / "b.jsonl"), "--threads", "4"]) == 0
    a, b = read_lines(tmp_path / "a.jsonl"), read_lines(tmp_path / "b.jsonl")
    assert len(a) == 24
    assert [r["id"] for r in a] == [r["id"] for r in b]
    assert [r["estimate"] for r in a] == [r["estimate"] for r in b]


def test_cli_oracle_evaluate_and_exact_bound(dataset, model_path, tmp_path, capsys):
    truths = tmp_path / "truth.jsonl"
    assert main(["oracle", "--data", str(dataset["data"]), "--schema", str(dataset["schema"]),
                 "--joins", str(dataset["joins"]), "--queries", str(dataset["queries"]),
                 "--subqueries", "--out", str(truths)]) == 0
    exact = tmp_path / "exact.jsonl"
    assert main(["estimate", "--model", str(model_path), "--queries", str(dataset["queries"]),
                 "--subqueries", "--variant", "bound", "--data", str(dataset["data"]),
                 "--out", str(exact)]) == 0
    truth = {r["id"]: r["truth"] for r in read_lines(truths)}
    for r in read_lines(exact):
        assert r["estimate"] >= max(truth[r["id"]], 1) * (1 - 1e-9)
    capsys.readouterr()
    table = tmp_path / "rows.csv"
    assert main(["evaluate", "--estimates", str(exact), "--truths", str(truths),
                 "--csv", str(table)]) == 0
    summary = json.loads(capsys.readouterr().out.splitlines()[0])
    assert summary["label"] == "bound" and summary["count"] == 24
    with open(table) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 24 and all(float(r["q_error"]) >= 1 for r in rows)


def test_cli_sketch_error(dataset, model_path, tmp_path):
    out = tmp_path / "err.jsonl"
    assert main(["sketch-error", "--model", str(model_path), "--data", str(dataset["data"]),
                 "--queries", str(dataset["selections"]), "--out", str(out)]) == 0
    recs = read_lines(out)
    assert any(r.get("skipped") == "no-filter" for r in recs)
    scored = [r for r in recs if "l1_approx" in r]
    assert scored and all(r["l1_approx"] >= 0 and r["l1_baseline"] >= 0 for r in scored)


def test_cli_exit_codes(dataset, tmp_path, monkeypatch):
    assert main([]) == 1
    assert main(["estimate", "--model", str(tmp_path / "none.sspn"),
                 "--queries", str(dataset["queries"])]) == 1
    bad = tmp_path / "bad.sspn"
    bad.write_bytes(b"garbage")
    assert main(["estimate", "--model", str(bad), "--queries", str(dataset["queries"])]) == 1
    monkeypatch.setenv("SSPN_SEED", "abc")
    assert train(dataset, tmp_path / "x.sspn") == 1

    import sketchspn.cli as cli

    def boom(*a, **k):
        raise RuntimeError("unexpected")
    monkeypatch.setattr(cli, "train_model", boom)
    assert train(dataset, tmp_path / "y.sspn", "--seed", "1") == 2
