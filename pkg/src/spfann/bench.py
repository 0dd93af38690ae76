"""Benchmark harness: run workloads, score recall, aggregate, report.

Deterministic outputs (results, router decisions, aggregate recall and
page counts) are kept separate from wall-clock timing, which varies run to
run; identical seeds therefore produce byte-identical result files.
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .costs import RouterConfig
from .data import QUERY_META_FILE, TRUTH_FILE, load_queries, load_truth
from .engine import SearchIndex, SearchParams

RESULTS_FILE = "results.csv"
ROUTER_FILE = "router.csv"
SUMMARY_FILE = "summary.json"
TIMING_FILE = "timing.csv"
TIMING_SUMMARY_FILE = "timing_summary.json"

SELECTIVITY_BUCKETS = (0.001, 0.01, 0.1, 0.5, 1.01)

RESULT_COLUMNS = [
    "qid",
    "kind",
    "target_selectivity",
    "measured_selectivity",
    "mechanism",
    "recall",
    "pages_read",
    "attr_pages_read",
    "records_fetched",
    "pq_distances",
    "approx_checks",
    "explored",
    "escalations",
    "small_valid",
    "hits",
]

ROUTER_COLUMNS = [
    "qid",
    "selectivity",
    "precision_pre",
    "precision_in",
    "total_pre",
    "total_in",
    "total_post",
    "chosen",
]


def selectivity_bucket(s: float) -> str:
    lo = 0.0
    for hi in SELECTIVITY_BUCKETS:
        if s < hi:
            return f"[{lo:g},{min(hi, 1.0):g})"
        lo = hi
    return f"[{SELECTIVITY_BUCKETS[-2]:g},1]"


def recall_against(hits: list, truth_row: dict, k: int) -> tuple[float, bool]:
    """recall@k with the denominator guarded by the valid-set size."""
    denom = min(k, truth_row["valid_count"])
    small = truth_row["valid_count"] < k
    if denom == 0:
        return 1.0, True
    truth_ids = {h[0] for h in truth_row["hits"][:k]}
    got = sum(1 for h in hits[:k] if h[0] in truth_ids)
    return got / denom, small


@dataclass
class BenchReport:
    records: list
    router_rows: list
    aggregates: dict
    timings_ms: list
    threads: int = 1
    wall_seconds: float = 0.0

    def timing_summary(self) -> dict:
        """Latency percentiles and throughput; informational, varies by run."""
        xs = sorted(self.timings_ms)
        if not xs:
            return {}
        mid = xs[len(xs) // 2]
        p99 = xs[min(len(xs) - 1, int(0.99 * len(xs)))]
        return {
            "threads": self.threads,
            "mean_ms": sum(xs) / len(xs),
            "median_ms": mid,
            "p99_ms": p99,
            "qps": len(xs) / self.wall_seconds if self.wall_seconds > 0 else 0.0,
        }


def run_bench(
    data_dir,
    params: SearchParams,
    threads: int = 1,
    router: RouterConfig | None = None,
    out_dir=None,
) -> BenchReport:
    """Execute all generated queries against the built index."""
    queries = load_queries(data_dir)
    truth = load_truth(os.path.join(data_dir, TRUTH_FILE))
    with open(os.path.join(data_dir, QUERY_META_FILE)) as f:
        qmeta = {row["qid"]: row for row in json.load(f)}
    index = SearchIndex(data_dir, router=router)

    def one(item):
        qid, qvec, sel = item
        if qid not in truth:
            raise KeyError(f"query {qid} missing from the ground-truth file")
        t0 = time.perf_counter()
        res = index.search(qvec, sel, params)
        elapsed_ms = (time.perf_counter() - t0) * 1000.0
        recall, small = recall_against(res.hits, truth[qid], params.k)
        meta = qmeta[qid]
        record = {
            "qid": qid,
            "kind": meta["kind"],
            "target_selectivity": meta["target_selectivity"],
            "measured_selectivity": meta["measured_selectivity"],
            "mechanism": res.mechanism,
            "recall": recall,
            "pages_read": res.io.pages_read,
            "attr_pages_read": res.io.attr_pages_read,
            "records_fetched": res.io.records_fetched,
            "pq_distances": res.io.pq_distances,
            "approx_checks": res.io.approx_checks,
            "explored": res.explored,
            "escalations": res.escalations,
            "small_valid": int(small),
            "hits": ";".join(f"{i}:{d!r}" for i, d in res.hits),
        }
        router_row = {
            "qid": qid,
            "selectivity": res.estimate.selectivity,
            "precision_pre": res.estimate.precision_pre,
            "precision_in": res.estimate.precision_in,
            **{
                f"total_{name}": total
                for name, total in res.decision.totals(index.router).items()
            },
            "chosen": res.decision.chosen,
        }
        return record, router_row, elapsed_ms

    t0 = time.perf_counter()
    try:
        if threads <= 1:
            rows = [one(q) for q in queries]
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                rows = list(pool.map(one, queries))
    finally:
        index.close()
    wall = time.perf_counter() - t0

    records = [r[0] for r in rows]
    router_rows = [r[1] for r in rows]
    timings = [r[2] for r in rows]
    aggregates = aggregate(records)
    report = BenchReport(
        records, router_rows, aggregates, timings, threads=threads, wall_seconds=wall
    )
    if out_dir is not None:
        write_report(report, out_dir)
    return report


def aggregate(records: list) -> dict:
    """Per (kind, selectivity bucket, mechanism) means, recomputable from
    the raw records."""
    groups: dict = {}
    for rec in records:
        key = (
            rec["kind"],
            selectivity_bucket(rec["measured_selectivity"]),
            rec["mechanism"],
        )
        groups.setdefault(key, []).append(rec)
    out = {}
    for (kind, bucket, mech), rows in sorted(groups.items()):
        out[f"{kind}|{bucket}|{mech}"] = {
            "queries": len(rows),
            "mean_recall": sum(r["recall"] for r in rows) / len(rows),
            "mean_pages_read": sum(r["pages_read"] for r in rows) / len(rows),
            "mean_explored": sum(r["explored"] for r in rows) / len(rows),
        }
    return out


def write_report(report: BenchReport, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, RESULTS_FILE), "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=RESULT_COLUMNS)
        w.writeheader()
        for rec in report.records:
            w.writerow({k: rec[k] for k in RESULT_COLUMNS})
    with open(os.path.join(out_dir, ROUTER_FILE), "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=ROUTER_COLUMNS)
        w.writeheader()
        for row in report.router_rows:
            w.writerow({k: row[k] for k in ROUTER_COLUMNS})
    with open(os.path.join(out_dir, SUMMARY_FILE), "w") as f:
        json.dump(report.aggregates, f, indent=2, sort_keys=True)
        f.write("\n")
    # Wall time lives apart from the deterministic artifacts.
    with open(os.path.join(out_dir, TIMING_FILE), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["qid", "wall_ms"])
        for rec, ms in zip(report.records, report.timings_ms):
            w.writerow([rec["qid"], f"{ms:.3f}"])
    with open(os.path.join(out_dir, TIMING_SUMMARY_FILE), "w") as f:
        json.dump(report.timing_summary(), f, indent=2, sort_keys=True)
        f.write("\n")


def selectivity_curves(bench_dir) -> list[dict]:
    """Recall/IO per (kind, bucket) rows for plotting, from results.csv."""
    rows = []
    with open(os.path.join(bench_dir, RESULTS_FILE), newline="") as f:
        records = [
            {
                **r,
                "recall": float(r["recall"]),
                "pages_read": int(r["pages_read"]),
                "measured_selectivity": float(r["measured_selectivity"]),
            }
            for r in csv.DictReader(f)
        ]
    groups: dict = {}
    for rec in records:
        key = (rec["kind"], selectivity_bucket(rec["measured_selectivity"]))
        groups.setdefault(key, []).append(rec)
    for (kind, bucket), recs in sorted(groups.items()):
        rows.append(
            {
                "kind": kind,
                "bucket": bucket,
                "queries": len(recs),
                "mean_recall": sum(r["recall"] for r in recs) / len(recs),
                "mean_pages_read": sum(r["pages_read"] for r in recs) / len(recs),
            }
        )
    return rows
