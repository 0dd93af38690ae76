"""Synthetic datasets, workloads, and the brute-force ground truth.

Vectors come from a seeded Gaussian mixture; labels follow a Zipf law over
the vocabulary with a Poisson count per vector; the range value is either
uniform or correlated with the vector's cluster. Query generation rejection
samples selector expressions until their exact measured selectivity lands
within 30 percent of the requested target, so benchmark buckets mean what
they say.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .attrdata import VectorAttrs
from .errors import BuildError, CorruptFileError, GenerationError
from .pagestore import HEADER_LEN, file_header
from .quantizer import exact_distances
from .selectors import (
    AndSelector,
    LabelAndSelector,
    LabelOrSelector,
    OrSelector,
    RangeSelector,
    Selector,
    parse_selector,
    selector_to_expr,
)

ATTRS_MAGIC = b"SPFATTR1"

VECTORS_FILE = "vectors.npy"
CENTERS_FILE = "centers.npy"
ATTRS_FILE = "attrs.bin"
DATASET_META_FILE = "dataset.json"
QUERY_VECTORS_FILE = "queries.npy"
QUERIES_FILE = "queries.txt"
QUERY_META_FILE = "queries_meta.json"
TRUTH_FILE = "truth.jsonl"

QUERY_KINDS = ("label", "labeland", "labelor", "range", "hybrid")

SELECTIVITY_SLACK = 0.3  # accepted relative error of measured vs target
MAX_ATTEMPTS = 1000


@dataclass
class DatasetSpec:
    n_vectors: int = 100_000
    dim: int = 64
    n_clusters: int = 64
    label_vocab: int = 1000
    label_zipf_s: float = 1.0
    labels_per_vector_mean: float = 3.0
    range_dist: str = "uniform"  # or "clustered"
    seed: int = 42

    def validate(self) -> None:
        if min(self.n_vectors, self.dim, self.n_clusters, self.label_vocab) <= 0:
            raise BuildError("dataset counts must be positive")
        if self.label_zipf_s <= 0:
            raise BuildError("zipf exponent must be positive")
        if self.range_dist not in ("uniform", "clustered"):
            raise BuildError(f"unknown range_dist {self.range_dist!r}")


@dataclass
class WorkloadSpec:
    n_queries: int = 100
    kinds: tuple = QUERY_KINDS
    target_selectivities: tuple = (0.001, 0.01, 0.1, 0.5)
    seed: int = 7

    def validate(self) -> None:
        for s in self.target_selectivities:
            if not (0.0 < s <= 1.0):
                raise BuildError(f"target selectivity {s} outside (0, 1]")
        for kind in self.kinds:
            if kind not in QUERY_KINDS:
                raise BuildError(f"unknown workload kind {kind!r}")


class AttrData:
    """Columnar view of per-vector attributes, for fast exact oracles."""

    def __init__(self, counts: np.ndarray, flat_labels: np.ndarray, values: np.ndarray):
        self.counts = counts
        self.flat_labels = flat_labels
        self.values = values
        self.offsets = np.zeros(len(counts) + 1, dtype=np.int64)
        np.cumsum(counts, out=self.offsets[1:])
        self.n = len(counts)
        self._sorted_labels = None
        self._sorted_owners = None

    def labels_of(self, i: int) -> np.ndarray:
        return self.flat_labels[self.offsets[i] : self.offsets[i + 1]]

    def as_list(self) -> list[VectorAttrs]:
        return [
            VectorAttrs(labels=self.labels_of(i), value=float(self.values[i]))
            for i in range(self.n)
        ]

    def label_postings(self, label: int) -> np.ndarray:
        if self._sorted_labels is None:
            owners = np.repeat(np.arange(self.n), self.counts)
            order = np.lexsort((owners, self.flat_labels))
            self._sorted_labels = self.flat_labels[order]
            self._sorted_owners = owners[order]
        lo = np.searchsorted(self._sorted_labels, label, side="left")
        hi = np.searchsorted(self._sorted_labels, label, side="right")
        return self._sorted_owners[lo:hi]

    def valid_mask(self, sel: Selector) -> np.ndarray:
        """Exact full-scan membership of every vector, straight from the
        raw attributes; the independent oracle for everything downstream."""
        if isinstance(sel, (LabelAndSelector, LabelOrSelector)):
            fold_all = isinstance(sel, LabelAndSelector)
            mask = np.full(self.n, fold_all, dtype=bool)
            for label in sel.labels:
                has = np.zeros(self.n, dtype=bool)
                has[self.label_postings(int(label))] = True
                mask = (mask & has) if fold_all else (mask | has)
            return mask
        if isinstance(sel, RangeSelector):
            return (self.values >= sel.lo) & (self.values < sel.hi)
        if isinstance(sel, AndSelector):
            mask = np.ones(self.n, dtype=bool)
            for c in sel.children:
                mask &= self.valid_mask(c)
            return mask
        if isinstance(sel, OrSelector):
            mask = np.zeros(self.n, dtype=bool)
            for c in sel.children:
                mask |= self.valid_mask(c)
            return mask
        raise TypeError(f"unknown selector {type(sel)!r}")


def save_attrs(attrs: AttrData, path: str) -> None:
    with open(path, "wb") as f:
        f.write(file_header(ATTRS_MAGIC))
        f.write(struct.pack("<II", attrs.n, len(attrs.flat_labels)))
        f.write(attrs.counts.astype("<u2").tobytes())
        f.write(attrs.flat_labels.astype("<u4").tobytes())
        f.write(attrs.values.astype("<f4").tobytes())


def load_attrs(path: str) -> AttrData:
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != ATTRS_MAGIC:
        raise CorruptFileError(f"{path}: not an attrs file")
    n, total = struct.unpack_from("<II", data, HEADER_LEN)
    off = HEADER_LEN + 8
    counts = np.frombuffer(data, dtype="<u2", count=n, offset=off).astype(np.int64)
    off += 2 * n
    flat = np.frombuffer(data, dtype="<u4", count=total, offset=off).astype(np.int64)
    off += 4 * total
    values = np.frombuffer(data, dtype="<f4", count=n, offset=off).astype(np.float32)
    return AttrData(counts=counts, flat_labels=flat, values=values)


def _zipf_probs(vocab: int, exponent: float) -> np.ndarray:
    ranks = np.arange(1, vocab + 1, dtype=np.float64)
    p = ranks ** (-exponent)
    return p / p.sum()


def _sample_labels(
    rng: np.random.Generator, probs: np.ndarray, counts: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Distinct labels per vector via the Gumbel top-k trick, chunked."""
    n = len(counts)
    vocab = len(probs)
    log_p = np.log(probs)
    flat_parts = []
    chunk = max(1, 8_000_000 // vocab)
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        gumbel = rng.gumbel(size=(hi - lo, vocab))
        keys = log_p[None, :] + gumbel
        order = np.argsort(-keys, axis=1)
        for row, c in enumerate(counts[lo:hi]):
            flat_parts.append(np.sort(order[row, :c]))
    flat = np.concatenate(flat_parts) if flat_parts else np.empty(0, dtype=np.int64)
    return flat.astype(np.int64), counts


def gen_dataset(spec: DatasetSpec, out_dir) -> None:
    """Write vectors.npy, centers.npy, attrs.bin, and dataset.json."""
    spec.validate()
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    centers = rng.normal(0.0, 4.0, size=(spec.n_clusters, spec.dim)).astype(np.float32)
    assign = rng.integers(0, spec.n_clusters, size=spec.n_vectors)
    noise = rng.normal(0.0, 1.0, size=(spec.n_vectors, spec.dim)).astype(np.float32)
    vectors = centers[assign] + noise

    counts = np.maximum(1, rng.poisson(spec.labels_per_vector_mean, spec.n_vectors))
    counts = np.minimum(counts, min(spec.label_vocab, 64)).astype(np.int64)
    probs = _zipf_probs(spec.label_vocab, spec.label_zipf_s)
    flat, counts = _sample_labels(rng, probs, counts)

    if spec.range_dist == "uniform":
        values = rng.uniform(0.0, 1.0, spec.n_vectors).astype(np.float32)
    else:
        jitter = rng.beta(2.0, 2.0, spec.n_vectors)
        values = ((assign + jitter) / spec.n_clusters).astype(np.float32)

    np.save(os.path.join(out_dir, VECTORS_FILE), vectors)
    np.save(os.path.join(out_dir, CENTERS_FILE), centers)
    save_attrs(
        AttrData(counts=counts, flat_labels=flat, values=values),
        os.path.join(out_dir, ATTRS_FILE),
    )
    with open(os.path.join(out_dir, DATASET_META_FILE), "w") as f:
        json.dump(
            {
                "n_vectors": spec.n_vectors,
                "dim": spec.dim,
                "n_clusters": spec.n_clusters,
                "label_vocab": spec.label_vocab,
                "label_zipf_s": spec.label_zipf_s,
                "labels_per_vector_mean": spec.labels_per_vector_mean,
                "range_dist": spec.range_dist,
                "seed": spec.seed,
            },
            f,
            indent=2,
            sort_keys=True,
        )
        f.write("\n")


def load_dataset_meta(data_dir) -> dict:
    with open(os.path.join(data_dir, DATASET_META_FILE)) as f:
        return json.load(f)


# ---------------------------------------------------------------------------
# Query generation


class _QueryBuilder:
    def __init__(self, attrs: AttrData, vocab: int, rng: np.random.Generator):
        self.attrs = attrs
        self.vocab = vocab
        self.rng = rng
        self.n = attrs.n
        self.freqs = np.bincount(attrs.flat_labels, minlength=vocab)
        self.present = np.flatnonzero(self.freqs)
        self.sorted_values = np.sort(attrs.values, kind="stable")

    def measured(self, sel: Selector) -> float:
        return float(self.attrs.valid_mask(sel).sum()) / self.n

    def _in_band(self, s: float, target: float) -> bool:
        return abs(s - target) <= SELECTIVITY_SLACK * target

    def build(self, kind: str, target: float) -> tuple[Selector, float]:
        for _ in range(MAX_ATTEMPTS):
            sel = self._propose(kind, target)
            if sel is None:
                continue
            s = self.measured(sel)
            if self._in_band(s, target):
                return sel, s
        raise GenerationError(
            f"could not hit selectivity {target} for kind {kind!r} "
            f"after {MAX_ATTEMPTS} attempts"
        )

    def _propose(self, kind: str, target: float) -> Selector | None:
        if kind == "label":
            sel_band = self.present[
                np.abs(self.freqs[self.present] / self.n - target)
                <= SELECTIVITY_SLACK * target
            ]
            if sel_band.size == 0:
                return None
            return LabelOrSelector(np.asarray([self.rng.choice(sel_band)]))
        if kind == "labeland":
            # anchor on a frequent label, then pick a partner whose marginal
            # selectivity puts the independent product near the target
            weights = self.freqs[self.present] / self.freqs[self.present].sum()
            b = int(self.rng.choice(self.present, p=weights))
            s_b = self.freqs[b] / self.n
            want = target / max(s_b, 1e-12)
            if want > 1.0:
                return None
            sels = self.freqs[self.present] / self.n
            band = (
                (sels >= want * (1 - SELECTIVITY_SLACK / 2))
                & (sels <= want * (1 + SELECTIVITY_SLACK / 2))
                & (self.present != b)
            )
            cands = self.present[band]
            if cands.size == 0:
                return None
            a = int(self.rng.choice(cands))
            return LabelAndSelector(np.asarray([a, b]))
        if kind == "labelor":
            # draw labels no bigger than the target, frequency-weighted, and
            # stop once the exact running union reaches the band
            sels = self.freqs[self.present] / self.n
            pool = self.present[sels <= target]
            if pool.size == 0:
                return None
            weights = self.freqs[pool].astype(np.float64)
            weights /= weights.sum()
            order = self.rng.choice(
                pool, size=min(64, pool.size), replace=False, p=weights
            )
            chosen: list[int] = []
            union = np.zeros(self.n, dtype=bool)
            for label in order:
                chosen.append(int(label))
                union[self.attrs.label_postings(int(label))] = True
                if union.sum() / self.n >= (1 - SELECTIVITY_SLACK / 2) * target:
                    break
            return LabelOrSelector(np.asarray(chosen)) if chosen else None
        if kind == "range":
            return self._range_at(target)
        if kind == "hybrid":
            split = self.rng.uniform(0.25, 0.75)
            label_part = self._propose("labelor", target * split)
            range_part = self._range_at(target * (1 - split))
            if label_part is None or range_part is None:
                return None
            return OrSelector([label_part, range_part])
        raise GenerationError(f"unknown query kind {kind!r}")

    def _range_at(self, target: float) -> Selector | None:
        sv = self.sorted_values
        if target >= 1.0:
            return RangeSelector(float(sv[0]) - 1.0, float(sv[-1]) + 1.0)
        width = max(1, int(round(target * self.n)))
        if width >= self.n:
            return RangeSelector(float(sv[0]) - 1.0, float(sv[-1]) + 1.0)
        start = int(self.rng.integers(0, self.n - width))
        lo = float(sv[start])
        hi = float(sv[start + width])
        if lo == hi:
            return None
        return RangeSelector(lo, hi)


def gen_queries(data_dir, spec: WorkloadSpec) -> list[dict]:
    """Write queries.npy / queries.txt / queries_meta.json; returns metadata."""
    spec.validate()
    attrs = load_attrs(os.path.join(data_dir, ATTRS_FILE))
    centers = np.load(os.path.join(data_dir, CENTERS_FILE))
    meta = load_dataset_meta(data_dir)
    rng = np.random.default_rng(spec.seed)
    builder = _QueryBuilder(attrs, meta["label_vocab"], rng)

    records = []
    vectors = []
    lines = []
    combos = [(k, t) for k in spec.kinds for t in spec.target_selectivities]
    for qid in range(spec.n_queries):
        kind, target = combos[qid % len(combos)]
        sel, measured = builder.build(kind, target)
        center = centers[rng.integers(0, centers.shape[0])]
        qvec = center + rng.normal(0.0, 1.0, size=center.shape).astype(np.float32)
        vectors.append(qvec.astype(np.float32))
        expr = selector_to_expr(sel)
        lines.append(f"{qid} {expr}")
        records.append(
            {
                "qid": qid,
                "kind": kind,
                "target_selectivity": target,
                "measured_selectivity": measured,
                "expr": expr,
            }
        )
    np.save(os.path.join(data_dir, QUERY_VECTORS_FILE), np.stack(vectors))
    with open(os.path.join(data_dir, QUERIES_FILE), "w") as f:
        f.write("\n".join(lines) + "\n")
    with open(os.path.join(data_dir, QUERY_META_FILE), "w") as f:
        json.dump(records, f, indent=2, sort_keys=True)
        f.write("\n")
    return records


def load_queries(data_dir) -> list[tuple[int, np.ndarray, Selector]]:
    qvecs = np.load(os.path.join(data_dir, QUERY_VECTORS_FILE))
    out = []
    with open(os.path.join(data_dir, QUERIES_FILE)) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            qid_s, expr = line.split(" ", 1)
            qid = int(qid_s)
            out.append((qid, qvecs[qid], parse_selector(expr)))
    return out


def ground_truth(data_dir, k: int, out_path=None) -> list[dict]:
    """Exact filtered top-k per query by full scan; ties break by id."""
    vectors = np.load(os.path.join(data_dir, VECTORS_FILE))
    attrs = load_attrs(os.path.join(data_dir, ATTRS_FILE))
    queries = load_queries(data_dir)
    out_path = out_path or os.path.join(data_dir, TRUTH_FILE)
    rows = []
    for qid, qvec, sel in queries:
        mask = attrs.valid_mask(sel)
        valid_ids = np.flatnonzero(mask)
        if valid_ids.size:
            dists = exact_distances(qvec, vectors[valid_ids])
            order = np.lexsort((valid_ids, dists))[:k]
            hits = [[int(valid_ids[i]), float(dists[i])] for i in order]
        else:
            hits = []
        rows.append({"qid": qid, "valid_count": int(valid_ids.size), "hits": hits})
    with open(out_path, "w") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")
    return rows


def load_truth(path) -> dict:
    truth = {}
    with open(path) as f:
        for line in f:
            if line.strip():
                row = json.loads(line)
                truth[row["qid"]] = row
    return truth
