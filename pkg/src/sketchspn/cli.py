"""Command-line entry point: ``sspn train | estimate | oracle | evaluate | sketch-error``.

Exit codes: 0 success, 1 input error, 2 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .bench.errors import selection_errors
from .bench.metrics import MetricError, format_table, percentile_table, q_error, summarize
from .bench.oracle import DEFAULT_BUDGET, oracle_record
from .estimator import VARIANTS, EstimationError, FAGMS_MEDIAN
from .hashing import HashError
from .model import estimate_query, exact_estimate, train_model
from .sketch import SketchError
from .spn.infer import MODES, PRODUCT, InferenceError
from .spn.learn import HARD_EM, KMEANS, TrainConfig, TrainError
from .workload.modelfile import ModelFileError, load_model, save_model
from .workload.query import connected_subsets, parse_query, read_queries
from .workload.schema import JoinSchema, Schema, WorkloadError, ingest

log = logging.getLogger("sspn")

INPUT_ERRORS = (WorkloadError, EstimationError, ModelFileError, MetricError, TrainError,
                HashError, SketchError, InferenceError, OSError, json.JSONDecodeError, KeyError)


class InputError(Exception):
    pass


def resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return seed
    env = os.environ.get("SSPN_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise InputError(f"SSPN_SEED must be an integer, got {env!r}") from None


def _records(path, subqueries: bool) -> list[dict]:
    records = read_queries(path)
    if not subqueries:
        return records
    out = []
    for r in records:
        out.extend(connected_subsets(r))
    return out


def _write_lines(records, out):
    for r in records:
        out.write(json.dumps(r, sort_keys=True) + "\n")


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w", encoding="utf-8"), True


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def cmd_train(args) -> int:
    seed = resolve_seed(args.seed)
    config = TrainConfig(rdc_threshold=args.rdc_threshold, cluster_fraction=args.cluster_fraction,
                         cluster_method=args.cluster_method, width=args.width,
                         copies=args.copies, seed=seed)
    t0 = time.perf_counter()
    schema = Schema.load(args.schema)
    joins = JoinSchema.load(args.joins)
    db = ingest(args.data, schema, joins)
    t_ingest = time.perf_counter() - t0
    model = train_model(db, config)
    digest = save_model(model, args.out)
    timings = {"ingest": t_ingest, **model.timings}
    for phase, secs in timings.items():
        log.info("%s: %.3f s", phase, secs)
    report = {"model": str(args.out), "checksum": digest, "seed": seed,
              "rows": {r: m.rows for r, m in sorted(model.relations.items())},
              "timings": timings}
    print(json.dumps(report, sort_keys=True))
    return 0


def _estimate_one(model, db, variant, mode):
    def run(record):
        qid = str(record.get("id", ""))
        try:
            query = parse_query(record, model.joins, model.dictionaries())
            if db is not None:
                est = exact_estimate(db, model.hashes, query, variant)
            else:
                est = estimate_query(model, query, variant, mode)
        except (WorkloadError, EstimationError, InferenceError) as exc:
            return {"id": qid, "error": str(exc), "variant": variant}
        out = {"id": qid, "estimate": est.estimate, "variant": variant, "mode": est.mode,
               "per_copy": est.per_copy, "seconds": est.seconds}
        if query.truth is not None:
            out["truth"] = query.truth
        return out
    return run


def cmd_estimate(args) -> int:
    model = load_model(args.model)
    db = ingest(args.data, model.schema, model.joins) if args.data else None
    records = _records(args.queries, args.subqueries)
    results = _map(_estimate_one(model, db, args.variant, args.mode), records, args.threads)
    out, close = _open_out(args.out)
    try:
        _write_lines(results, out)
    finally:
        if close:
            out.close()
    failed = [r for r in results if "error" in r]
    if failed:
        log.warning("%d of %d queries failed", len(failed), len(results))
    scored = [q_error(max(r["estimate"], 1.0), max(r["truth"], 1.0))
              for r in results if "truth" in r and "estimate" in r]
    if scored:
        sys.stderr.write(format_table({args.variant: percentile_table(scored)}) + "\n")
    return 0


def cmd_oracle(args) -> int:
    schema = Schema.load(args.schema)
    joins = JoinSchema.load(args.joins)
    db = ingest(args.data, schema, joins)
    records = _records(args.queries, args.subqueries)

    def run(record):
        query = parse_query(record, joins, db.dictionaries())
        return oracle_record(db, query, args.budget)

    results = _map(run, records, args.threads)
    skipped = sum(1 for r in results if r.get("skipped"))
    if skipped:
        log.warning("%d queries exceeded the oracle budget", skipped)
    out, close = _open_out(args.out)
    try:
        _write_lines(results, out)
    finally:
        if close:
            out.close()
    return 0


def _read_json_lines(path) -> list[dict]:
    return read_queries(path)


def cmd_evaluate(args) -> int:
    truths = {}
    for r in _read_json_lines(args.truths):
        truths[str(r["id"])] = None if r.get("truth") is None else float(r["truth"])
    summaries = {}
    csv_rows = []
    for path in args.estimates:
        rows = _read_json_lines(path)
        ok = {str(r["id"]): float(r["estimate"]) for r in rows if "estimate" in r}
        failed = [str(r["id"]) for r in rows if "estimate" not in r]
        if failed:
            log.warning("%s: %d queries without an estimate are excluded", path, len(failed))
        label = rows[0].get("variant", Path(path).stem) if rows else Path(path).stem
        if label in summaries:
            label = f"{label}:{Path(path).stem}"
        summary = summarize(ok, {q: t for q, t in truths.items() if q not in failed})
        summaries[label] = summary
        for qid, rel in summary.relative_errors.items():
            t = max(truths[qid], 1.0)
            e = max(ok[qid], 1.0)
            csv_rows.append([label, qid, ok[qid], truths[qid], q_error(e, t), rel])
    for label, s in summaries.items():
        print(json.dumps({"label": label, **s.to_dict()}, sort_keys=True))
    sys.stderr.write(format_table({k: s.q_error for k, s in summaries.items()}) + "\n")
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["label", "id", "estimate", "truth", "q_error", "relative_error"])
            w.writerows(csv_rows)
    return 0


def cmd_sketch_error(args) -> int:
    model = load_model(args.model)
    baseline = load_model(args.baseline_model) if args.baseline_model else None
    db = ingest(args.data, model.schema, model.joins)
    records = _records(args.queries, args.subqueries)

    def run(record):
        qid = str(record.get("id", ""))
        try:
            query = parse_query(record, model.joins, model.dictionaries())
            return selection_errors(model, db, query, args.mode, baseline)
        except (WorkloadError, EstimationError, InferenceError) as exc:
            return [{"id": qid, "error": str(exc)}]

    results = [r for group in _map(run, records, args.threads) for r in group]
    out, close = _open_out(args.out)
    try:
        _write_lines(results, out)
    finally:
        if close:
            out.close()
    scored = [r for r in results if "l1_approx" in r]
    if scored:
        approx = np.array([r["l1_approx"] for r in scored])
        base = np.array([r["l1_baseline"] for r in scored])
        sys.stderr.write(f"selections {len(scored)}  mean L1 approx {approx.mean():.1f} "
                         f"(median {np.median(approx):.1f})  baseline {base.mean():.1f} "
                         f"(median {np.median(base):.1f})\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sspn", description="Sketched SPN join cardinality estimation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="learn one sketched SPN per relation")
    t.add_argument("--data", required=True, help="directory of CSV files")
    t.add_argument("--schema", required=True)
    t.add_argument("--joins", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=None, help="defaults to $SSPN_SEED, then 0")
    t.add_argument("--width", type=int, default=TrainConfig.width)
    t.add_argument("--copies", type=int, default=TrainConfig.copies)
    t.add_argument("--rdc-threshold", type=float, default=TrainConfig.rdc_threshold)
    t.add_argument("--cluster-fraction", type=float, default=TrainConfig.cluster_fraction)
    t.add_argument("--cluster-method", choices=(HARD_EM, KMEANS), default=HARD_EM)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("estimate", help="estimate query cardinalities")
    e.add_argument("--model", required=True)
    e.add_argument("--queries", required=True)
    e.add_argument("--variant", choices=VARIANTS, default=FAGMS_MEDIAN)
    e.add_argument("--mode", choices=MODES, default=PRODUCT)
    e.add_argument("--data", help="build exact sketches from this data directory instead")
    e.add_argument("--subqueries", action="store_true", help="expand every connected subquery")
    e.add_argument("--threads", type=int, default=1)
    e.add_argument("--out", default="-")
    e.set_defaults(func=cmd_estimate)

    o = sub.add_parser("oracle", help="exact cardinalities by hash joins")
    o.add_argument("--data", required=True)
    o.add_argument("--schema", required=True)
    o.add_argument("--joins", required=True)
    o.add_argument("--queries", required=True)
    o.add_argument("--budget", type=int, default=DEFAULT_BUDGET,
                   help="largest intermediate result before a query is skipped")
    o.add_argument("--subqueries", action="store_true")
    o.add_argument("--threads", type=int, default=1)
    o.add_argument("--out", default="-")
    o.set_defaults(func=cmd_oracle)

    v = sub.add_parser("evaluate", help="q-error and relative error summaries")
    v.add_argument("--estimates", required=True, nargs="+")
    v.add_argument("--truths", required=True)
    v.add_argument("--csv", help="per-query rows for plotting")
    v.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sketch-error", help="L1 distance of approximated selection sketches")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--baseline-model", help="compare against this model instead of independence")
    s.add_argument("--mode", choices=MODES, default=PRODUCT)
    s.add_argument("--subqueries", action="store_true")
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_sketch_error)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "threads", 1) < 1:
        sys.stderr.write("sspn: --threads must be at least 1\n")
        return 1
    try:
        return args.func(args)
    except InputError as exc:
        sys.stderr.write(f"sspn: {exc}\n")
        return 1
    except INPUT_ERRORS as exc:
        sys.stderr.write(f"sspn: {type(exc).__name__}: {exc}\n")
        return 1
    except Exception:
        log.exception("internal error")
        return 2


if __name__ == "__main__":
    sys.exit(main())
