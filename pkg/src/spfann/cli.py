"""Command-line surface for dataset generation, index building, and
benchmarking. Everything reads and writes one --data-dir."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import data as datamod
from .bench import run_bench, selectivity_curves, write_report
from .costs import RouterConfig
from .data import (
    ATTRS_FILE,
    VECTORS_FILE,
    DatasetSpec,
    WorkloadSpec,
    gen_dataset,
    gen_queries,
    ground_truth,
    load_attrs,
    load_dataset_meta,
    load_queries,
)
from .engine import SearchIndex, SearchParams
from .graph import BuildParams
from .indexer import DEFAULT_ATTR_BYTES, DEFAULT_SUBSPACES, build_index
from .selectors import parse_selector


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data-dir", required=True, help="dataset/index directory")
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--k", type=int, default=10)
    parser.add_argument("--search-L", type=int, default=100, dest="search_l")
    parser.add_argument(
        "--mechanism",
        choices=["auto", "pre", "in", "post", "strict-in"],
        default="auto",
    )
    parser.add_argument("--w-io", type=float, default=10.0, dest="w_io")
    parser.add_argument("--w-cpu", type=float, default=1.0, dest="w_cpu")


def _params(args) -> SearchParams:
    return SearchParams(
        k=args.k, pool_len=args.search_l, mechanism=args.mechanism
    )


def _router(args) -> RouterConfig:
    return RouterConfig(io_weight=args.w_io, compute_weight=args.w_cpu)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="spfann",
        description="disk-resident filtered ANN search with speculative filtering",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    _common(p)
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--clusters", type=int, default=64)
    p.add_argument("--vocab", type=int, default=1000)
    p.add_argument("--zipf", type=float, default=1.0)
    p.add_argument("--labels-mean", type=float, default=3.0)
    p.add_argument("--range-dist", choices=["uniform", "clustered"], default="uniform")

    p = sub.add_parser("gen-queries", help="generate a query workload")
    _common(p)
    p.add_argument("--n-queries", type=int, default=100)
    p.add_argument(
        "--kinds",
        default="label,labeland,labelor,range,hybrid",
        help="comma-separated subset of label,labeland,labelor,range,hybrid",
    )
    p.add_argument(
        "--selectivities",
        default="0.001,0.01,0.1,0.5",
        help="comma-separated target selectivities",
    )

    p = sub.add_parser("build-index", help="build PQ + graph index files")
    _common(p)
    p.add_argument("--max-degree", type=int, default=32)
    p.add_argument("--dense-degree", type=int, default=640)
    p.add_argument("--build-pool", type=int, default=64)
    p.add_argument("--prune-alpha", type=float, default=1.2)
    p.add_argument("--subspaces", type=int, default=DEFAULT_SUBSPACES)
    p.add_argument("--attr-bytes", type=int, default=DEFAULT_ATTR_BYTES)

    p = sub.add_parser("build-attrs", help="(re)build the attribute indexes")
    _common(p)

    p = sub.add_parser("ground-truth", help="exact filtered top-k per query")
    _common(p)

    p = sub.add_parser("search", help="run one query and print the result")
    _common(p)
    p.add_argument("--query-id", type=int, default=None)
    p.add_argument("--expr", default=None, help="selector expression")
    p.add_argument("--vector-id", type=int, default=None, help="use a base vector as query")

    p = sub.add_parser("bench", help="run the full benchmark")
    _common(p)
    p.add_argument("--out-dir", default=None, help="defaults to <data-dir>/bench")

    p = sub.add_parser("report", help="per-selectivity recall/IO curves")
    _common(p)
    p.add_argument("--bench-dir", default=None)
    p.add_argument("--out", default=None, help="CSV path; stdout by default")

    args = parser.parse_args(argv)
    return _dispatch(args)


def _dispatch(args) -> int:
    if args.command == "gen-data":
        spec = DatasetSpec(
            n_vectors=args.n,
            dim=args.dim,
            n_clusters=args.clusters,
            label_vocab=args.vocab,
            label_zipf_s=args.zipf,
            labels_per_vector_mean=args.labels_mean,
            range_dist=args.range_dist,
            seed=args.seed,
        )
        gen_dataset(spec, args.data_dir)
        print(f"wrote dataset to {args.data_dir}")
        return 0

    if args.command == "gen-queries":
        spec = WorkloadSpec(
            n_queries=args.n_queries,
            kinds=tuple(k.strip() for k in args.kinds.split(",") if k.strip()),
            target_selectivities=tuple(
                float(s) for s in args.selectivities.split(",") if s.strip()
            ),
            seed=args.seed,
        )
        records = gen_queries(args.data_dir, spec)
        print(f"wrote {len(records)} queries to {args.data_dir}")
        return 0

    if args.command == "build-index":
        vectors = np.load(os.path.join(args.data_dir, VECTORS_FILE))
        attrs = load_attrs(os.path.join(args.data_dir, ATTRS_FILE))
        meta = load_dataset_meta(args.data_dir)
        params = BuildParams(
            max_degree=args.max_degree,
            dense_degree=args.dense_degree,
            build_pool=args.build_pool,
            prune_alpha=args.prune_alpha,
            seed=args.seed,
        )
        gmeta = build_index(
            vectors,
            attrs.as_list(),
            meta["label_vocab"],
            args.data_dir,
            params=params,
            n_subspaces=args.subspaces,
            attr_bytes_max=args.attr_bytes,
        )
        print(
            f"built index: {gmeta.n_nodes} nodes, entry {gmeta.entry_node}, "
            f"{gmeta.base_pages}+1 pages/record"
        )
        return 0

    if args.command == "build-attrs":
        from .attrs import build_attr_indexes

        attrs = load_attrs(os.path.join(args.data_dir, ATTRS_FILE))
        meta = load_dataset_meta(args.data_dir)
        build_attr_indexes(
            attrs.as_list(), meta["label_vocab"], args.seed, args.data_dir
        ).close()
        print(f"rebuilt attribute indexes in {args.data_dir}")
        return 0

    if args.command == "ground-truth":
        rows = ground_truth(args.data_dir, args.k)
        print(f"wrote ground truth for {len(rows)} queries")
        return 0

    if args.command == "search":
        return _run_single(args)

    if args.command == "bench":
        out_dir = args.out_dir or os.path.join(args.data_dir, "bench")
        report = run_bench(
            args.data_dir,
            _params(args),
            threads=args.threads,
            router=_router(args),
            out_dir=out_dir,
        )
        mean_recall = sum(r["recall"] for r in report.records) / len(report.records)
        print(
            f"{len(report.records)} queries, mean recall {mean_recall:.4f}, "
            f"report in {out_dir}"
        )
        return 0

    if args.command == "report":
        bench_dir = args.bench_dir or os.path.join(args.data_dir, "bench")
        rows = selectivity_curves(bench_dir)
        out = open(args.out, "w", newline="") if args.out else sys.stdout
        try:
            w = csv.DictWriter(
                out,
                fieldnames=["kind", "bucket", "queries", "mean_recall", "mean_pages_read"],
            )
            w.writeheader()
            for row in rows:
                w.writerow(row)
        finally:
            if args.out:
                out.close()
        return 0

    raise SystemExit(f"unknown command {args.command!r}")


def _run_single(args) -> int:
    index = SearchIndex(args.data_dir, router=_router(args))
    try:
        if args.expr is not None:
            sel = parse_selector(args.expr)
            if args.vector_id is not None:
                vectors = np.load(os.path.join(args.data_dir, VECTORS_FILE))
                qvec = vectors[args.vector_id]
            else:
                raise SystemExit("--expr requires --vector-id for the query vector")
        elif args.query_id is not None:
            queries = {q[0]: q for q in load_queries(args.data_dir)}
            _, qvec, sel = queries[args.query_id]
        else:
            raise SystemExit("need --query-id or --expr")
        res = index.search(qvec, sel, _params(args))
        print(
            json.dumps(
                {
                    "mechanism": res.mechanism,
                    "hits": [[i, d] for i, d in res.hits],
                    "pages_read": res.io.pages_read,
                    "pq_distances": res.io.pq_distances,
                    "approx_checks": res.io.approx_checks,
                    "explored": res.explored,
                },
                indent=2,
            )
        )
        return 0
    finally:
        index.close()


if __name__ == "__main__":
    raise SystemExit(main())
