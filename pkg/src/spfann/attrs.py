"""Attribute indexes: on-disk exact structures and in-memory sketches.

Labels get an inverted index on disk (per label, the ascending ids of
vectors carrying it) plus a 32-bit-per-vector Bloom filter in memory.
The range attribute gets a value-sorted (id, value) array on disk plus a
1-byte equal-frequency bucket code per vector in memory, with 257 bucket
boundaries and a 1000-point quantile summary for selectivity estimates.

The in-memory side costs 5 bytes per vector plus small fixed overhead; it
exists so membership can be tested approximately with zero disk reads and
no false negatives.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .attrdata import VectorAttrs
from .errors import BuildError, CorruptFileError, PageBoundsError
from .pagestore import PAGE_SIZE, HEADER_LEN, IoCounters, PageFile, file_header

LABELS_MAGIC = b"SPFLBL01"
RANGE_MAGIC = b"SPFRNG01"
BLOOM_MAGIC = b"SPFBLM01"
BUCKET_MAGIC = b"SPFBKT01"

BLOOM_BITS = 32
BLOOM_HASHES = 2
N_BUCKETS = 256
N_QUANTILES = 1000

LABELS_FILE = "labels.bin"
RANGE_FILE = "range.bin"
BLOOM_FILE = "bloom.bin"
BUCKET_FILE = "buckets.bin"

_MIX_A = np.uint64(0xBF58476D1CE4E5B9)
_MIX_B = np.uint64(0x94D049BB133111EB)
_SALT_A = np.uint64(0x9E3779B97F4A7C15)
_SALT_B = np.uint64(0xC2B2AE3D27D4EB4F)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX_A
    z = (z ^ (z >> np.uint64(27))) * _MIX_B
    return z ^ (z >> np.uint64(31))


def _bloom_masks(vec_ids: np.ndarray, label: np.ndarray, salt: int) -> np.ndarray:
    """32-bit masks with the two hash positions set, one per (vector, label)."""
    with np.errstate(over="ignore"):
        key = (vec_ids.astype(np.uint64) << np.uint64(32)) ^ np.asarray(
            label, dtype=np.uint64
        )
        key ^= np.uint64(salt) * _SALT_A
        h_a = _mix64(key ^ _SALT_A)
        h_b = _mix64(key ^ _SALT_B)
        p0 = (h_a % np.uint64(BLOOM_BITS)).astype(np.uint32)
        p1 = ((h_a + h_b) % np.uint64(BLOOM_BITS)).astype(np.uint32)
    return (np.uint32(1) << p0) | (np.uint32(1) << p1)


@dataclass
class VectorBloom:
    """One 32-bit Bloom filter per vector over its label set."""

    words: np.ndarray
    salt: int
    k_hashes: int = BLOOM_HASHES

    def might_contain(self, v: int, label: int) -> bool:
        mask = _bloom_masks(np.asarray([v]), np.asarray([label]), self.salt)[0]
        return bool((self.words[v] & mask) == mask)

    def might_contain_many(self, ids: np.ndarray, label: int) -> np.ndarray:
        masks = _bloom_masks(ids, np.full(len(ids), label), self.salt)
        return (self.words[ids] & masks) == masks

    def might_contain_pairs(self, ids: np.ndarray, labels: np.ndarray) -> np.ndarray:
        """Vectorized membership over aligned (vector, label) pairs."""
        masks = _bloom_masks(np.asarray(ids), np.asarray(labels), self.salt)
        return (self.words[ids] & masks) == masks


@dataclass
class LabelStats:
    """Per-label corpus frequencies, the input to selectivity estimates."""

    counts: np.ndarray
    n_vectors: int

    def selectivity(self, label: int) -> float:
        return float(self.counts[label]) / max(1, self.n_vectors)


class LabelIndex:
    """Inverted label index: directory in memory, postings on disk."""

    def __init__(self, store: PageFile, offsets: np.ndarray, counts: np.ndarray):
        self.store = store
        self.offsets = offsets
        self.counts = counts
        self.vocab_size = len(counts)

    def posting_pages(self, label: int) -> int:
        """Pages a posting-list read will be charged, from the directory."""
        return -(-int(self.counts[label]) * 4 // PAGE_SIZE)


class RangeIndex:
    """Value-sorted pairs on disk; bucket codes and quantiles in memory."""

    def __init__(
        self,
        store: PageFile,
        n: int,
        bucket_codes: np.ndarray,
        bucket_bounds: np.ndarray,
        quantiles: np.ndarray,
    ):
        self.store = store
        self.n = n
        self.bucket_codes = bucket_codes
        self.bucket_bounds = bucket_bounds
        self.quantiles = quantiles


@dataclass
class AttributeIndexSet:
    labels: LabelIndex
    bloom: VectorBloom
    ranges: RangeIndex
    stats: LabelStats
    n_vectors: int

    def close(self) -> None:
        self.labels.store.close()
        self.ranges.store.close()

    def memory_bytes(self) -> dict:
        """Footprint of the in-memory structures, split per component."""
        return {
            "bloom": int(self.bloom.words.nbytes),
            "bucket_codes": int(self.ranges.bucket_codes.nbytes),
            "bounds_and_quantiles": int(
                self.ranges.bucket_bounds.nbytes + self.ranges.quantiles.nbytes
            ),
            "label_directory": int(
                self.labels.offsets.nbytes
                + self.labels.counts.nbytes
                + self.stats.counts.nbytes
            ),
        }


def build_attr_indexes(
    attrs: list[VectorAttrs], vocab_size: int, seed: int, out_dir
) -> AttributeIndexSet:
    """Build and persist all four attribute structures, then open them.

    The seed salts the Bloom hash family; everything else is deterministic
    in the input order.
    """
    import os

    n = len(attrs)
    if n == 0:
        raise BuildError("cannot index an empty corpus")
    counts = np.zeros(vocab_size, dtype=np.int64)
    pair_v: list[np.ndarray] = []
    pair_l: list[np.ndarray] = []
    values = np.empty(n, dtype=np.float32)
    for i, a in enumerate(attrs):
        labels = np.asarray(a.labels, dtype=np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= vocab_size):
            raise BuildError(f"vector {i}: label id outside vocab of {vocab_size}")
        if not np.isfinite(a.value):
            raise BuildError(f"vector {i}: non-finite range value")
        np.add.at(counts, labels, 1)
        pair_v.append(np.full(labels.size, i, dtype=np.int64))
        pair_l.append(labels)
        values[i] = a.value
    all_v = np.concatenate(pair_v) if pair_v else np.empty(0, dtype=np.int64)
    all_l = np.concatenate(pair_l) if pair_l else np.empty(0, dtype=np.int64)

    # Postings: group pair stream by (label, vector id); ids end up ascending
    # inside each label's slice because the sort is stable on (label, id).
    order = np.lexsort((all_v, all_l))
    sorted_l = all_l[order]
    sorted_v = all_v[order].astype("<u4")
    offsets = np.zeros(vocab_size, dtype=np.uint64)
    dir_bytes = HEADER_LEN + 4 + vocab_size * 12
    starts = np.zeros(vocab_size + 1, dtype=np.int64)
    np.cumsum(np.bincount(sorted_l, minlength=vocab_size), out=starts[1:])
    offsets[:] = dir_bytes + 4 * starts[:-1].astype(np.uint64)

    labels_path = os.path.join(out_dir, LABELS_FILE)
    with open(labels_path, "wb") as f:
        f.write(file_header(LABELS_MAGIC))
        f.write(struct.pack("<I", vocab_size))
        directory = np.empty(vocab_size, dtype=[("off", "<u8"), ("cnt", "<u4")])
        directory["off"] = offsets
        directory["cnt"] = counts.astype(np.uint32)
        f.write(directory.tobytes())
        f.write(sorted_v.tobytes())
        f.write(b"\x00" * (-f.tell() % PAGE_SIZE))

    # Range index, sorted by (value, id) so builds are deterministic.
    vorder = np.lexsort((np.arange(n), values))
    sorted_vals = values[vorder]
    range_path = os.path.join(out_dir, RANGE_FILE)
    with open(range_path, "wb") as f:
        f.write(file_header(RANGE_MAGIC))
        f.write(struct.pack("<I", n))
        pairs = np.empty(n, dtype=[("id", "<u4"), ("value", "<f4")])
        pairs["id"] = vorder.astype(np.uint32)
        pairs["value"] = sorted_vals
        f.write(pairs.tobytes())
        f.write(b"\x00" * (-f.tell() % PAGE_SIZE))

    internal = sorted_vals[(np.arange(1, N_BUCKETS) * n) // N_BUCKETS]
    bounds = np.empty(N_BUCKETS + 1, dtype=np.float32)
    bounds[0] = sorted_vals[0]
    bounds[1:N_BUCKETS] = internal
    bounds[N_BUCKETS] = sorted_vals[-1]
    codes = np.searchsorted(internal, values, side="right").astype(np.uint8)
    quantiles = sorted_vals[(np.arange(N_QUANTILES) * n) // N_QUANTILES].astype(
        np.float32
    )
    bucket_path = os.path.join(out_dir, BUCKET_FILE)
    with open(bucket_path, "wb") as f:
        f.write(file_header(BUCKET_MAGIC))
        f.write(struct.pack("<I", n))
        f.write(codes.tobytes())
        f.write(bounds.astype("<f4").tobytes())
        f.write(quantiles.astype("<f4").tobytes())
        f.write(b"\x00" * (-f.tell() % PAGE_SIZE))

    words = np.zeros(n, dtype=np.uint32)
    if all_v.size:
        masks = _bloom_masks(all_v, all_l, seed)
        np.bitwise_or.at(words, all_v, masks)
    bloom_path = os.path.join(out_dir, BLOOM_FILE)
    with open(bloom_path, "wb") as f:
        f.write(file_header(BLOOM_MAGIC))
        f.write(struct.pack("<IIQ", n, BLOOM_HASHES, seed & 0xFFFFFFFFFFFFFFFF))
        f.write(words.astype("<u4").tobytes())
        f.write(b"\x00" * (-f.tell() % PAGE_SIZE))

    return open_attr_indexes(out_dir)


def open_attr_indexes(index_dir) -> AttributeIndexSet:
    import os

    labels_store = PageFile(os.path.join(index_dir, LABELS_FILE), LABELS_MAGIC)
    ctr = IoCounters()
    head = labels_store.read_pages(0, 1, ctr)
    (vocab_size,) = struct.unpack_from("<I", head, HEADER_LEN)
    dir_len = vocab_size * 12
    raw = labels_store.read_span(HEADER_LEN + 4, dir_len, ctr)
    directory = np.frombuffer(raw, dtype=[("off", "<u8"), ("cnt", "<u4")])
    label_index = LabelIndex(
        labels_store,
        offsets=directory["off"].astype(np.uint64),
        counts=directory["cnt"].astype(np.int64),
    )

    with open(os.path.join(index_dir, RANGE_FILE), "rb") as f:
        rhead = f.read(HEADER_LEN + 4)
    if rhead[:8] != RANGE_MAGIC:
        raise CorruptFileError("bad range file magic")
    (n,) = struct.unpack_from("<I", rhead, HEADER_LEN)
    range_store = PageFile(os.path.join(index_dir, RANGE_FILE), RANGE_MAGIC)

    with open(os.path.join(index_dir, BUCKET_FILE), "rb") as f:
        bdata = f.read()
    if bdata[:8] != BUCKET_MAGIC:
        raise CorruptFileError("bad bucket file magic")
    (bn,) = struct.unpack_from("<I", bdata, HEADER_LEN)
    off = HEADER_LEN + 4
    codes = np.frombuffer(bdata, dtype=np.uint8, count=bn, offset=off).copy()
    off += bn
    bounds = np.frombuffer(bdata, dtype="<f4", count=N_BUCKETS + 1, offset=off).copy()
    off += (N_BUCKETS + 1) * 4
    quantiles = np.frombuffer(bdata, dtype="<f4", count=N_QUANTILES, offset=off).copy()
    range_index = RangeIndex(range_store, n, codes, bounds, quantiles)

    with open(os.path.join(index_dir, BLOOM_FILE), "rb") as f:
        fdata = f.read()
    if fdata[:8] != BLOOM_MAGIC:
        raise CorruptFileError("bad bloom file magic")
    fn, k, salt = struct.unpack_from("<IIQ", fdata, HEADER_LEN)
    words = np.frombuffer(
        fdata, dtype="<u4", count=fn, offset=HEADER_LEN + 16
    ).copy()
    bloom = VectorBloom(words=words, salt=salt, k_hashes=k)

    stats = LabelStats(counts=label_index.counts, n_vectors=n)
    return AttributeIndexSet(
        labels=label_index, bloom=bloom, ranges=range_index, stats=stats, n_vectors=n
    )


def lookup_postings(idx: LabelIndex, label: int, ctr: IoCounters) -> np.ndarray:
    """Exact ascending posting list for one label; absent labels are empty."""
    if not (0 <= label < idx.vocab_size):
        raise PageBoundsError(f"label {label} outside vocab of {idx.vocab_size}")
    count = int(idx.counts[label])
    if count == 0:
        return np.empty(0, dtype=np.int64)
    raw = idx.store.read_span(int(idx.offsets[label]), 4 * count, ctr)
    return np.frombuffer(raw, dtype="<u4").astype(np.int64)


def scan_range(idx: RangeIndex, lo: float, hi: float, ctr: IoCounters) -> np.ndarray:
    """Ids with value in [lo, hi), returned ascending by id.

    The quantile summary narrows the scan to a rank window before any read,
    so pages beyond the matching span are limited to the window slack.
    """
    if lo > hi:
        raise ValueError(f"invalid range [{lo}, {hi})")
    if lo == hi or idx.n == 0:
        return np.empty(0, dtype=np.int64)
    q = idx.quantiles
    i = int(np.searchsorted(q, lo, side="left")) - 1
    rank_start = 0 if i < 0 else (i * idx.n) // N_QUANTILES
    j = int(np.searchsorted(q, hi, side="left"))
    rank_stop = idx.n if j >= N_QUANTILES else (j * idx.n) // N_QUANTILES
    if rank_start >= rank_stop:
        return np.empty(0, dtype=np.int64)
    data_base = HEADER_LEN + 4
    byte_lo = data_base + 8 * rank_start
    byte_hi = data_base + 8 * rank_stop
    page_lo = byte_lo // PAGE_SIZE
    page_hi = -(-byte_hi // PAGE_SIZE)
    block = idx.store.read_pages(page_lo, page_hi - page_lo, ctr)
    start = byte_lo - page_lo * PAGE_SIZE
    pairs = np.frombuffer(
        block[start : start + 8 * (rank_stop - rank_start)],
        dtype=[("id", "<u4"), ("value", "<f4")],
    )
    hit = (pairs["value"] >= lo) & (pairs["value"] < hi)
    return np.sort(pairs["id"][hit].astype(np.int64))


def bloom_might_contain(bloom: VectorBloom, v: int, label: int) -> bool:
    return bloom.might_contain(v, label)


def bucket_of(idx: RangeIndex, v: int) -> int:
    return int(idx.bucket_codes[v])


def bucket_overlap_mask(idx: RangeIndex, lo: float, hi: float) -> np.ndarray:
    """Boolean per bucket: does [lo, hi) intersect the bucket's value span.

    Buckets are right-open except the last, which is closed at the maximum;
    a vector whose value lies in [lo, hi) always lands in an overlapping
    bucket, which is the no-false-negative guarantee.
    """
    b = idx.bucket_bounds.astype(np.float64)
    starts, ends = b[:-1], b[1:]
    mask = (starts < hi) & (ends > lo)
    # The last bucket includes its upper bound, so touching that closed end
    # counts as overlap too.
    mask[-1] = (starts[-1] < hi) & (ends[-1] >= lo)
    return mask


def selectivity_from_quantiles(idx: RangeIndex, lo: float, hi: float) -> float:
    """Fraction of the corpus with value in [lo, hi), from the summary."""
    if lo > hi:
        raise ValueError(f"invalid range [{lo}, {hi})")
    if lo == hi:
        return 0.0
    return max(0.0, _quantile_cdf(idx, hi) - _quantile_cdf(idx, lo))


def _quantile_cdf(idx: RangeIndex, x: float) -> float:
    q = idx.quantiles.astype(np.float64)
    if x <= q[0]:
        return 0.0
    if x > q[-1]:
        return 1.0
    fractions = np.arange(N_QUANTILES, dtype=np.float64) / N_QUANTILES
    return float(np.interp(x, q, fractions))
