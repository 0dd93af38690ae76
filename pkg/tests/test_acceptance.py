"""Acceptance suite: every gate criterion at its stated tolerance, run
against the default desk-scale corpus (100k vectors, dim 64, degree 32,
densified degree 640, 16-byte PQ codes, 1000-label Zipf vocabulary).

Each test prints one PASS/FAIL line, echoed in the terminal summary. Run:

    pytest tests/test_acceptance.py -v
"""

import math
import time

import numpy as np
import pytest

from conftest import acceptance_lines, build_bridge_fixture
from spfann.attrdata import VectorAttrs
from spfann.attrs import BLOOM_BITS, BLOOM_HASHES, build_attr_indexes
from spfann.bench import RESULTS_FILE, ROUTER_FILE, SUMMARY_FILE, run_bench
from spfann.costs import CostInputs, RouterConfig, estimate_in, estimate_post, estimate_pre, route
from spfann.data import (
    ATTRS_FILE,
    VECTORS_FILE,
    DatasetSpec,
    WorkloadSpec,
    _QueryBuilder,
    gen_dataset,
    gen_queries,
    ground_truth,
    load_attrs,
)
from spfann.engine import SearchIndex, SearchParams
from spfann.graph import BuildParams
from spfann.indexer import build_index
from spfann.selectors import LabelOrSelector, estimate_filter, pre_filter_approx, prepare_query
from spfann.pagestore import IoCounters

N_CORPUS = 100_000
DIM = 64
VOCAB = 1000
POOL = 100
K = 10


def record(criterion: str, ok: bool, detail: str) -> None:
    status = "PASS" if ok else "FAIL"
    acceptance_lines.append(f"[{status}] {criterion}: {detail}")
    print(acceptance_lines[-1])
    assert ok, f"{criterion}: {detail}"


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    """Default corpus, fully built index, benchmark workload and truth."""
    out = tmp_path_factory.mktemp("acceptance")
    gen_dataset(
        DatasetSpec(
            n_vectors=N_CORPUS, dim=DIM, n_clusters=64, label_vocab=VOCAB,
            label_zipf_s=1.0, labels_per_vector_mean=3.0,
            range_dist="uniform", seed=42,
        ),
        str(out),
    )
    vectors = np.load(out / VECTORS_FILE)
    attr_data = load_attrs(str(out / ATTRS_FILE))
    t0 = time.time()
    build_index(
        vectors,
        attr_data.as_list(),
        VOCAB,
        str(out),
        params=BuildParams(
            max_degree=32, dense_degree=640, build_pool=64, prune_alpha=1.2, seed=42
        ),
        n_subspaces=16,
        attr_bytes_max=512,
    )
    print(f"[fixture] index build took {time.time() - t0:.0f}s")
    gen_queries(
        str(out),
        WorkloadSpec(
            n_queries=36,
            kinds=("label", "labelor", "range", "hybrid"),
            target_selectivities=(0.01, 0.1, 0.3),
            seed=7,
        ),
    )
    ground_truth(str(out), k=K)
    index = SearchIndex(str(out))
    builder = _QueryBuilder(attr_data, VOCAB, np.random.default_rng(505))
    yield {
        "dir": str(out),
        "vectors": vectors,
        "attrs": attr_data,
        "index": index,
        "builder": builder,
    }
    index.close()


def make_query_set(corpus, kind_targets, per_combo, seed):
    """Selectors with exactly measured selectivities plus query vectors."""
    builder = corpus["builder"]
    rng = np.random.default_rng(seed)
    vectors = corpus["vectors"]
    out = []
    for kind, targets in kind_targets:
        for target in targets:
            for _ in range(per_combo):
                sel, measured = builder.build(kind, target)
                qvec = vectors[int(rng.integers(0, len(vectors)))]
                out.append((kind, target, measured, sel, qvec))
    return out


def filtered_truth_ids(corpus, sel, qvec, k):
    mask = corpus["attrs"].valid_mask(sel)
    ids = np.flatnonzero(mask)
    if ids.size == 0:
        return [], 0
    d = ((corpus["vectors"][ids] - qvec) ** 2).sum(axis=1)
    order = np.lexsort((ids, d))[:k]
    return [int(ids[i]) for i in order], int(ids.size)


def recall_of(hits, truth_ids, valid_count, k):
    denom = min(k, valid_count)
    if denom == 0:
        return 1.0
    return len({h[0] for h in hits} & set(truth_ids)) / denom


def test_c01_superset_soundness(corpus):
    t0 = time.time()
    kind_targets = [
        ("label", (0.001, 0.002, 0.005, 0.01, 0.05, 0.1)),
        ("labeland", (0.001, 0.005, 0.01, 0.05)),
        ("labelor", (0.01, 0.05, 0.1, 0.3, 0.5)),
        ("range", (0.001, 0.01, 0.1, 0.5, 0.9)),
        ("hybrid", (0.02, 0.1, 0.3, 0.5)),
    ]
    # 6+4+5+5+4 = 24 combos; 42 queries each > 1000 total
    queries = make_query_set(corpus, kind_targets, per_combo=42, seed=1)
    index = corpus["index"]
    attrs = corpus["attrs"]
    all_ids = np.arange(N_CORPUS)
    approx_violations = 0
    scan_violations = 0
    evaluations = 0
    for kind, target, measured, sel, _ in queries:
        exact = attrs.valid_mask(sel)
        prepared = prepare_query(sel, index.attrs, 16, IoCounters())
        approx = prepared.test_many(all_ids)
        evaluations += N_CORPUS
        approx_violations += int((exact & ~approx).sum())
        superset = pre_filter_approx(sel, index.attrs, IoCounters())
        scan_violations += int(np.setdiff1d(np.flatnonzero(exact), superset).size)
    elapsed = time.time() - t0
    record(
        "criterion 1 superset soundness",
        approx_violations == 0 and scan_violations == 0 and elapsed < 120,
        f"{len(queries)} queries, {evaluations} membership checks, "
        f"{approx_violations} approx violations, {scan_violations} scan "
        f"violations, {elapsed:.0f}s",
    )


@pytest.fixture(scope="module")
def bench_runs(corpus, tmp_path_factory):
    """Auto-routed benchmark plus per-mechanism overrides, reused by
    several criteria."""
    out = tmp_path_factory.mktemp("benchout")
    auto = run_bench(
        corpus["dir"], SearchParams(k=K, pool_len=POOL), out_dir=str(out / "auto")
    )
    overrides = {}
    for mech in ("pre", "in", "post"):
        overrides[mech] = run_bench(
            corpus["dir"], SearchParams(k=K, pool_len=POOL, mechanism=mech)
        )
    return {"auto": auto, "overrides": overrides, "out": str(out)}


def test_c02_result_soundness(corpus, bench_runs):
    attrs = corpus["attrs"]
    violations = 0
    hits_seen = 0
    from spfann.data import load_queries

    selectors = {qid: sel for qid, _, sel in load_queries(corpus["dir"])}
    from conftest import oracle_is_member

    for name, report in [("auto", bench_runs["auto"])] + list(
        bench_runs["overrides"].items()
    ):
        for rec in report.records:
            sel = selectors[rec["qid"]]
            for token in filter(None, rec["hits"].split(";")):
                node_id = int(token.split(":")[0])
                hits_seen += 1
                a = VectorAttrs(
                    labels=attrs.labels_of(node_id), value=float(attrs.values[node_id])
                )
                if not oracle_is_member(sel, a):
                    violations += 1
    record(
        "criterion 2 result soundness",
        violations == 0 and hits_seen > 0,
        f"{hits_seen} hits across auto+pre+in+post runs, {violations} invalid",
    )


def test_c03_cost_formula_fidelity():
    t0 = time.time()
    rng = np.random.default_rng(77)
    worst = 0.0
    for _ in range(1000):
        i = CostInputs(
            n_vectors=int(rng.integers(1000, 10**8)),
            selectivity=float(rng.uniform(1e-6, 1.0)),
            precision_pre=float(rng.uniform(0.01, 1.0)),
            precision_in=float(rng.uniform(0.01, 1.0)),
            scan_pages_pre=float(rng.uniform(0, 500)),
            scan_pages_in=float(rng.uniform(0, 64)),
            pool_len=int(rng.integers(1, 500)),
            max_degree=int(rng.integers(8, 128)),
            dense_degree=int(rng.integers(160, 2000)),
            base_pages=int(rng.integers(1, 4)),
            full_pages=int(rng.integers(2, 5)),
            approx_check_cost=float(rng.uniform(0.0, 0.2)),
        )
        # independent transcription of the published cost table
        pre_io = i.scan_pages_pre + i.pool_len / i.precision_pre * i.base_pages
        pre_cpu = i.selectivity * i.n_vectors / i.precision_pre
        if i.selectivity * i.dense_degree / i.precision_in <= i.max_degree:
            hops = (i.pool_len / i.selectivity) * (i.max_degree / i.dense_degree)
            in_mech = "in_low"
            in_io = i.scan_pages_in + hops * i.full_pages
            in_cpu = (hops + i.approx_check_cost * i.pool_len / i.selectivity) * i.max_degree
        else:
            in_mech = "in_high"
            in_io = i.scan_pages_in + i.pool_len / i.precision_in * i.full_pages
            in_cpu = (i.pool_len / i.precision_in) * (
                i.max_degree + i.approx_check_cost * i.dense_degree
            )
        post_io = i.pool_len / i.selectivity * i.base_pages
        post_cpu = i.pool_len / i.selectivity * i.max_degree

        got_pre = estimate_pre(i)
        got_in = estimate_in(i)
        got_post = estimate_post(i)
        assert got_in.mechanism == in_mech
        for got, want in [
            (got_pre.est_io_pages, pre_io),
            (got_pre.est_compute, pre_cpu),
            (got_in.est_io_pages, in_io),
            (got_in.est_compute, in_cpu),
            (got_post.est_io_pages, post_io),
            (got_post.est_compute, post_cpu),
        ]:
            rel = abs(got - want) / max(1e-12, abs(want))
            worst = max(worst, rel)
    elapsed = time.time() - t0
    record(
        "criterion 3 cost formula fidelity",
        worst <= 1e-9 and elapsed < 1.0,
        f"1000 random inputs, worst relative error {worst:.2e}, {elapsed:.2f}s",
    )


def test_c04_cost_model_calibration(corpus):
    t0 = time.time()
    kind_targets = [
        ("range", (0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5)),
        ("labelor", (0.01, 0.05, 0.1, 0.3)),
    ]
    queries = make_query_set(corpus, kind_targets, per_combo=4, seed=2)
    index = corpus["index"]
    ratios = []
    for kind, target, measured, sel, qvec in queries:
        params = SearchParams(k=K, pool_len=POOL, mechanism="in")
        inputs, est = index.cost_inputs(sel, params)
        predicted = estimate_in(inputs).est_io_pages
        res = index.search_in(qvec, sel, params)
        if res.io.pages_read > 0:
            ratios.append(predicted / res.io.pages_read)
    median = float(np.median(ratios))
    elapsed = time.time() - t0
    record(
        "criterion 4 cost model calibration",
        0.5 <= median <= 3.0 and elapsed < 300,
        f"{len(ratios)} in-filter queries, median est/measured pages "
        f"{median:.2f}, {elapsed:.0f}s",
    )


def test_c05_routing_sanity(corpus):
    t0 = time.time()
    low = make_query_set(
        corpus,
        [("label", (0.0005, 0.0008)), ("range", (0.0005, 0.0008))],
        per_combo=6,
        seed=3,
    )
    low = [q for q in low if q[2] <= 0.001]
    high = make_query_set(
        corpus,
        [("range", (0.55, 0.7)), ("labelor", (0.55,)), ("hybrid", (0.6,))],
        per_combo=6,
        seed=4,
    )
    high = [q for q in high if q[2] >= 0.5]
    index = corpus["index"]
    params = SearchParams(k=K, pool_len=POOL)
    low_pre = sum(
        1
        for _, _, _, sel, _ in low
        if route(index.cost_inputs(sel, params)[0], index.router).chosen == "pre"
    )
    high_away = sum(
        1
        for _, _, _, sel, _ in high
        if route(index.cost_inputs(sel, params)[0], index.router).chosen != "pre"
    )
    elapsed = time.time() - t0
    ok = (
        len(low) >= 10
        and len(high) >= 10
        and low_pre >= 0.95 * len(low)
        and high_away >= 0.95 * len(high)
    )
    record(
        "criterion 5 routing sanity",
        ok and elapsed < 60,
        f"low-selectivity to pre {low_pre}/{len(low)}, high-selectivity away "
        f"from pre {high_away}/{len(high)}, {elapsed:.0f}s",
    )


def test_c06_recall_at_desk_scale(corpus):
    t0 = time.time()
    index = corpus["index"]

    def run(kind_targets, method, per_combo, seed):
        queries = make_query_set(corpus, kind_targets, per_combo, seed)
        scores = []
        for kind, target, measured, sel, qvec in queries:
            res = method(qvec, sel, SearchParams(k=K, pool_len=POOL))
            truth_ids, valid_count = filtered_truth_ids(corpus, sel, qvec, K)
            scores.append(recall_of(res.hits, truth_ids, valid_count, K))
        return float(np.mean(scores)), len(queries)

    in_recall, n_in = run(
        [("range", (0.01, 0.05, 0.1, 0.3, 0.5)), ("labelor", (0.01, 0.1, 0.5))],
        index.search_in,
        per_combo=4,
        seed=5,
    )
    pre_recall, n_pre = run(
        [("label", (0.001, 0.003)), ("range", (0.002, 0.005))],
        index.search_pre,
        per_combo=5,
        seed=6,
    )
    post_recall, n_post = run(
        [("range", (0.35, 0.5, 0.7)), ("labelor", (0.4,))],
        index.search_post,
        per_combo=4,
        seed=7,
    )
    elapsed = time.time() - t0
    ok = in_recall >= 0.9 and pre_recall >= 0.95 and post_recall >= 0.9
    record(
        "criterion 6 recall at desk scale",
        ok and elapsed < 600,
        f"in {in_recall:.3f} (n={n_in}, floor 0.9), pre {pre_recall:.3f} "
        f"(n={n_pre}, floor 0.95), post {post_recall:.3f} (n={n_post}, "
        f"floor 0.9), {elapsed:.0f}s",
    )


def test_c07_free_verification(bench_runs):
    attr_pages = 0
    counted = 0
    for name in ("in", "post"):
        for rec in bench_runs["overrides"][name].records:
            attr_pages += rec["attr_pages_read"]
            counted += 1
    for rec in bench_runs["auto"].records:
        if rec["mechanism"] in ("in", "post"):
            attr_pages += rec["attr_pages_read"]
            counted += 1
    record(
        "criterion 7 free verification",
        counted > 0 and attr_pages == 0,
        f"{counted} in/post searches, {attr_pages} attribute-only pages read",
    )


def test_c08_strict_vs_speculative_io(corpus):
    t0 = time.time()
    queries = make_query_set(
        corpus, [("range", (0.1,)), ("labelor", (0.1,))], per_combo=5, seed=8
    )
    index = corpus["index"]
    spec_pages, strict_pages, recalls = [], [], []
    for kind, target, measured, sel, qvec in queries:
        params = SearchParams(k=K, pool_len=POOL)
        res = index.search_in(qvec, sel, params)
        truth_ids, valid_count = filtered_truth_ids(corpus, sel, qvec, K)
        recalls.append(recall_of(res.hits, truth_ids, valid_count, K))
        spec_pages.append(res.io.pages_read)
        strict = index.search_in_strict_baseline(qvec, sel, params)
        strict_pages.append(strict.io.pages_read)
    gap = float(np.mean(strict_pages)) / float(np.mean(spec_pages))
    mean_recall = float(np.mean(recalls))
    elapsed = time.time() - t0
    record(
        "criterion 8 strict vs speculative I/O",
        gap >= 5.0 and mean_recall >= 0.9 and elapsed < 300,
        f"speculative recall {mean_recall:.3f} at s=0.1, strict/speculative "
        f"page ratio {gap:.1f}x (floor 5x), {elapsed:.0f}s",
    )


def test_c09_bloom_calibration(tmp_path):
    t0 = time.time()
    n_vectors, n_labels = 2000, 10
    rng = np.random.default_rng(13)
    vocab = 200_000
    attrs = [
        VectorAttrs(
            labels=np.sort(rng.choice(vocab // 2, n_labels, replace=False)),
            value=0.0,
        )
        for _ in range(n_vectors)
    ]
    idx = build_attr_indexes(attrs, vocab, seed=11, out_dir=str(tmp_path))
    trials = 1_000_000
    probe_v = rng.integers(0, n_vectors, size=trials)
    probe_l = rng.integers(vocab // 2, vocab, size=trials)
    measured = float(idx.bloom.might_contain_pairs(probe_v, probe_l).mean())
    idx.close()
    analytic = (1 - math.exp(-BLOOM_HASHES * n_labels / BLOOM_BITS)) ** BLOOM_HASHES
    elapsed = time.time() - t0
    record(
        "criterion 9 bloom calibration",
        abs(measured - analytic) <= 0.5 * analytic and elapsed < 60,
        f"measured FP {measured:.4f} vs analytic {analytic:.4f} over "
        f"{trials} trials, {elapsed:.0f}s",
    )


def test_c10_bridge_connectivity(tmp_path):
    t0 = time.time()
    vectors, attrs = build_bridge_fixture(tmp_path)
    index = SearchIndex(str(tmp_path))
    try:
        sel = LabelOrSelector(np.asarray([1]))
        with_bridges = index.search_in(
            vectors[0] + 0.1, sel, SearchParams(k=10, pool_len=12)
        )
        without = index.search_in(
            vectors[0] + 0.1, sel,
            SearchParams(k=10, pool_len=12, bridge_padding=False),
        )
    finally:
        index.close()
    far = {8, 9, 10, 11}
    found = {i for i, _ in with_bridges.hits}
    found_ablated = {i for i, _ in without.hits}
    elapsed = time.time() - t0
    record(
        "criterion 10 bridge connectivity",
        far <= found and not (far & found_ablated) and elapsed < 1.0,
        f"bridged run found far ids {sorted(found & far)}, ablated run found "
        f"{sorted(found_ablated)}, {elapsed:.2f}s",
    )


def test_c11_memory_footprint(corpus):
    mem = corpus["index"].attrs.memory_bytes()
    per_vector = (mem["bloom"] + mem["bucket_codes"]) / N_CORPUS
    overhead = mem["bounds_and_quantiles"] + mem["label_directory"]
    # directory: offsets u64 + counts i64 + stats view per label, plus the
    # 1257 float bounds/quantile block
    overhead_bound = 24 * VOCAB + 4 * 1257 + 64
    ok = per_vector <= 5.0 and overhead <= overhead_bound
    record(
        "criterion 11 memory footprint",
        ok,
        f"{per_vector:.2f} bytes/vector (cap 5), overhead {overhead} bytes "
        f"(cap {overhead_bound})",
    )


def test_c12_determinism(corpus, tmp_path):
    r1 = run_bench(
        corpus["dir"], SearchParams(k=K, pool_len=POOL), out_dir=str(tmp_path / "r1")
    )
    r2 = run_bench(
        corpus["dir"], SearchParams(k=K, pool_len=POOL), out_dir=str(tmp_path / "r2")
    )
    same = True
    for name in (RESULTS_FILE, ROUTER_FILE, SUMMARY_FILE):
        with open(tmp_path / "r1" / name, "rb") as f:
            a = f.read()
        with open(tmp_path / "r2" / name, "rb") as f:
            b = f.read()
        same = same and a == b
    record(
        "criterion 12 determinism",
        same,
        "two full benchmark runs produced byte-identical deterministic reports",
    )
