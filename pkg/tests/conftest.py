"""Shared corpus builders and independent oracles for the test suite."""

import numpy as np
import pytest

# One line per acceptance criterion, echoed in the terminal summary.
acceptance_lines = []


def pytest_terminal_summary(terminalreporter):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)

from spfann.attrdata import VectorAttrs
from spfann.selectors import (
    AndSelector,
    LabelAndSelector,
    LabelOrSelector,
    OrSelector,
    RangeSelector,
)


def make_attr_corpus(n, vocab, seed, zipf=1.0, mean_labels=3.0):
    """Zipf-labeled corpus with uniform range values."""
    rng = np.random.default_rng(seed)
    probs = np.arange(1, vocab + 1, dtype=np.float64) ** -zipf
    probs /= probs.sum()
    attrs = []
    for _ in range(n):
        c = max(1, int(rng.poisson(mean_labels)))
        labels = np.unique(rng.choice(vocab, size=min(c, vocab), p=probs))
        attrs.append(VectorAttrs(labels=labels, value=float(rng.uniform())))
    return attrs


def oracle_is_member(sel, attrs: VectorAttrs) -> bool:
    """Independent re-evaluation of a selector on raw attributes, using
    plain python set logic rather than the production code path."""
    if isinstance(sel, LabelAndSelector):
        return set(sel.labels.tolist()) <= set(attrs.labels.tolist())
    if isinstance(sel, LabelOrSelector):
        return bool(set(sel.labels.tolist()) & set(attrs.labels.tolist()))
    if isinstance(sel, RangeSelector):
        return sel.lo <= attrs.value < sel.hi
    if isinstance(sel, AndSelector):
        return all(oracle_is_member(c, attrs) for c in sel.children)
    if isinstance(sel, OrSelector):
        return any(oracle_is_member(c, attrs) for c in sel.children)
    raise TypeError(type(sel))


def oracle_mask(sel, attrs_list) -> np.ndarray:
    return np.asarray([oracle_is_member(sel, a) for a in attrs_list])


def random_selector(rng, vocab, depth=1):
    """Random selector tree covering every kind, for property tests."""
    kinds = ["labeland", "labelor", "range"]
    if depth > 0:
        kinds += ["and", "or"]
    kind = kinds[int(rng.integers(0, len(kinds)))]
    if kind == "labeland":
        k = int(rng.integers(1, 3))
        return LabelAndSelector(rng.choice(vocab, size=k, replace=False))
    if kind == "labelor":
        k = int(rng.integers(1, 4))
        return LabelOrSelector(rng.choice(vocab, size=k, replace=False))
    if kind == "range":
        lo, hi = np.sort(rng.uniform(-0.1, 1.1, size=2))
        return RangeSelector(float(lo), float(hi))
    children = [random_selector(rng, vocab, depth - 1) for _ in range(2)]
    return AndSelector(children) if kind == "and" else OrSelector(children)


def build_index_from_parts(
    out_dir, vectors, attrs, adjacency, dense, vocab, max_degree, dense_degree, seed=0
):
    """Assemble a full index directory around a hand-built graph."""
    import os

    from spfann import quantizer
    from spfann.attrs import build_attr_indexes
    from spfann.engine import CODEBOOK_FILE, CODES_FILE, GRAPH_FILE
    from spfann.graph import GraphMeta, record_layout, serialize_index
    from spfann.indexer import train_sample

    vectors = np.ascontiguousarray(vectors, dtype=np.float32)
    os.makedirs(out_dir, exist_ok=True)
    book = quantizer.train_codebook(
        train_sample(vectors, seed), n_subspaces=2 if vectors.shape[1] % 2 == 0 else 1,
        seed=seed,
    )
    quantizer.save_codebook(book, os.path.join(out_dir, CODEBOOK_FILE))
    quantizer.save_codes(
        quantizer.encode_many(book, vectors), os.path.join(out_dir, CODES_FILE)
    )
    base_pages, full_pages = record_layout(vectors.shape[1], max_degree, 64)
    meta = GraphMeta(
        n_nodes=vectors.shape[0],
        dim=vectors.shape[1],
        max_degree=max_degree,
        dense_degree=dense_degree,
        base_pages=base_pages,
        full_pages=full_pages,
        entry_node=0,
        attr_bytes_max=64,
    )
    serialize_index(
        vectors, attrs, adjacency, dense, meta, os.path.join(out_dir, GRAPH_FILE)
    )
    build_attr_indexes(attrs, vocab, seed, out_dir).close()
    return meta


def build_bridge_fixture(out_dir):
    """Twelve chained nodes whose valid regions (0-2 and 8-11, label 1) are
    separated by an invalid wall (3-7, label 2); no 2-hop lists, so only
    bridge padding can cross. Returns (vectors, attrs)."""
    n = 12
    positions = np.arange(n, dtype=np.float32)
    vectors = np.stack([positions, np.zeros(n, dtype=np.float32)], axis=1)
    valid = {0, 1, 2, 8, 9, 10, 11}
    attrs = [
        VectorAttrs(labels=np.asarray([1 if i in valid else 2]), value=0.0)
        for i in range(n)
    ]
    adjacency = []
    for i in range(n):
        row = [j for j in (i - 1, i + 1) if 0 <= j < n]
        adjacency.append(np.asarray(row, dtype=np.int64))
    dense = [np.empty(0, dtype=np.int64)] * n
    build_index_from_parts(
        str(out_dir), vectors, attrs, adjacency, dense,
        vocab=4, max_degree=2, dense_degree=20,
    )
    return vectors, attrs


@pytest.fixture(scope="session")
def engine_index(tmp_path_factory):
    """A fully built 10k-vector index bundle for engine-level tests."""
    from spfann.data import AttrData, save_attrs
    from spfann.graph import BuildParams
    from spfann.indexer import build_index

    out = tmp_path_factory.mktemp("engineidx")
    rng = np.random.default_rng(1001)
    n, dim, vocab = 10_000, 64, 64
    centers = rng.normal(0, 4, size=(16, dim)).astype(np.float32)
    assign = rng.integers(0, 16, n)
    vectors = centers[assign] + rng.normal(0, 1, (n, dim)).astype(np.float32)
    probs = np.arange(1, vocab + 1, dtype=np.float64) ** -1.0
    probs /= probs.sum()
    attrs = []
    counts = []
    flats = []
    values = rng.uniform(0, 1, n).astype(np.float32)
    for i in range(n):
        c = max(1, int(rng.poisson(3)))
        labels = np.unique(rng.choice(vocab, size=min(c, vocab), p=probs))
        attrs.append(VectorAttrs(labels=labels, value=float(values[i])))
        counts.append(labels.size)
        flats.append(labels)
    build_index(
        vectors,
        attrs,
        vocab,
        str(out),
        params=BuildParams(max_degree=32, dense_degree=640, build_pool=64, seed=3),
        n_subspaces=16,
        attr_bytes_max=128,
    )
    np.save(out / "vectors.npy", vectors)
    save_attrs(
        AttrData(
            counts=np.asarray(counts),
            flat_labels=np.concatenate(flats),
            values=values,
        ),
        str(out / "attrs.bin"),
    )
    return str(out), vectors, attrs


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """10k-vector attribute corpus with built indexes, shared per session.

    Labels are drawn from [0, 200) but the declared vocabulary is 210, so
    ids 200..209 are guaranteed absent from the corpus.
    """
    from spfann.attrs import build_attr_indexes

    out = tmp_path_factory.mktemp("smallcorpus")
    attrs = make_attr_corpus(10_000, 200, seed=42)
    idx = build_attr_indexes(attrs, 210, seed=42, out_dir=str(out))
    yield attrs, idx
    idx.close()
