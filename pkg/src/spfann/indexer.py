"""Offline index construction: PQ training, graph build, serialization."""

from __future__ import annotations

import os

import numpy as np

from . import quantizer
from .attrdata import VectorAttrs
from .attrs import build_attr_indexes
from .engine import CODEBOOK_FILE, CODES_FILE, GRAPH_FILE
from .graph import BuildParams, GraphMeta, build_graph, densify, record_layout, serialize_index

PQ_TRAIN_CAP = 100_000
DEFAULT_SUBSPACES = 16
DEFAULT_ATTR_BYTES = 512


def train_sample(vectors: np.ndarray, seed: int) -> np.ndarray:
    """Seeded uniform training sample, never larger than the cap.

    Tiny corpora are jittered up to the 256-vector training minimum so the
    codec stays usable on unit-test-sized fixtures.
    """
    rng = np.random.default_rng(seed)
    n = vectors.shape[0]
    if n >= quantizer.CENTROIDS_PER_SUBSPACE:
        take = min(PQ_TRAIN_CAP, n)
        idx = rng.choice(n, size=take, replace=False) if take < n else np.arange(n)
        return vectors[idx]
    reps = -(-quantizer.CENTROIDS_PER_SUBSPACE // n)
    tiled = np.tile(vectors, (reps, 1))[: quantizer.CENTROIDS_PER_SUBSPACE]
    jitter = rng.normal(0.0, 1e-3, size=tiled.shape).astype(np.float32)
    return tiled + jitter


def build_index(
    vectors: np.ndarray,
    attrs: list[VectorAttrs],
    vocab_size: int,
    out_dir,
    params: BuildParams | None = None,
    n_subspaces: int = DEFAULT_SUBSPACES,
    attr_bytes_max: int = DEFAULT_ATTR_BYTES,
) -> GraphMeta:
    """Build the full index bundle (graph + PQ + attribute indexes)."""
    params = params if params is not None else BuildParams()
    vectors = np.ascontiguousarray(vectors, dtype=np.float32)
    os.makedirs(out_dir, exist_ok=True)

    codebook = quantizer.train_codebook(
        train_sample(vectors, params.seed), n_subspaces, params.seed
    )
    quantizer.save_codebook(codebook, os.path.join(out_dir, CODEBOOK_FILE))
    codes = quantizer.encode_many(codebook, vectors)
    quantizer.save_codes(codes, os.path.join(out_dir, CODES_FILE))

    adjacency, entry = build_graph(vectors, params)
    dense = densify(
        adjacency, vectors, params.max_degree, params.dense_degree, params.seed
    )
    base_pages, full_pages = record_layout(
        vectors.shape[1], params.max_degree, attr_bytes_max
    )
    meta = GraphMeta(
        n_nodes=vectors.shape[0],
        dim=vectors.shape[1],
        max_degree=params.max_degree,
        dense_degree=params.dense_degree,
        base_pages=base_pages,
        full_pages=full_pages,
        entry_node=entry,
        attr_bytes_max=attr_bytes_max,
    )
    serialize_index(
        vectors, attrs, adjacency, dense, meta, os.path.join(out_dir, GRAPH_FILE)
    )
    build_attr_indexes(attrs, vocab_size, params.seed, out_dir).close()
    return meta
