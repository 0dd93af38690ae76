"""Exact distances and the product-quantization codec.

Distances are squared Euclidean throughout: monotone-equivalent to L2 and
one square root cheaper. The codec splits vectors into equal subspaces,
each quantized against 256 centroids so a code costs exactly one byte per
subspace. Query-time scoring builds a per-query table of query-to-centroid
distances and sums table entries per code (asymmetric distance).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CorruptFileError, TrainingError
from .pagestore import HEADER_LEN, file_header

CENTROIDS_PER_SUBSPACE = 256
KMEANS_ITERATIONS = 15

CODEBOOK_MAGIC = b"PQCBOOK1"
CODES_MAGIC = b"PQCODES1"


def exact_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Squared Euclidean distance between two equal-length vectors."""
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    diff = a.astype(np.float64) - b.astype(np.float64)
    return float(np.dot(diff, diff))


def exact_distances(query: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Squared distances from one query to every row of ``matrix``."""
    query = np.asarray(query, dtype=np.float64)
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] != query.shape[0]:
        raise ValueError(f"dimension mismatch: {m.shape} vs {query.shape}")
    diff = m - query[None, :]
    return np.einsum("ij,ij->i", diff, diff)


@dataclass
class PqCodebook:
    """Per-subspace centroid tables: shape (n_subspaces, 256, sub_dim)."""

    centroids: np.ndarray
    inertia_history: list | None = None

    @property
    def n_subspaces(self) -> int:
        return self.centroids.shape[0]

    @property
    def sub_dim(self) -> int:
        return self.centroids.shape[2]

    @property
    def dim(self) -> int:
        return self.n_subspaces * self.sub_dim

    @property
    def bytes_per_vector(self) -> int:
        return self.n_subspaces


def _kmeans_pp_seed(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ initial centroids: D^2-weighted sequential picks."""
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centers[0] = x[first]
    d2 = np.einsum("ij,ij->i", x - centers[0], x - centers[0])
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # All remaining points coincide with a chosen center.
            centers[j:] = centers[0]
            break
        probs = d2 / total
        pick = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
        pick = min(pick, n - 1)
        centers[j] = x[pick]
        cand = np.einsum("ij,ij->i", x - centers[j], x - centers[j])
        np.minimum(d2, cand, out=d2)
    return centers


def _assign(x: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-center assignment; ties resolve to the lowest index."""
    # ||x - c||^2 = ||x||^2 - 2 x.c + ||c||^2; the ||x||^2 term is constant
    # per point so it is omitted from the argmin but restored for inertia.
    cross = x @ centers.T
    cnorm = np.einsum("ij,ij->i", centers, centers)
    scores = cnorm[None, :] - 2.0 * cross
    codes = np.argmin(scores, axis=1)
    xnorm = np.einsum("ij,ij->i", x, x)
    d2 = xnorm + scores[np.arange(x.shape[0]), codes]
    np.maximum(d2, 0.0, out=d2)
    return codes, d2


def _kmeans(x: np.ndarray, k: int, rng: np.random.Generator) -> tuple[np.ndarray, list]:
    centers = _kmeans_pp_seed(x, k, rng)
    history = []
    for _ in range(KMEANS_ITERATIONS):
        codes, d2 = _assign(x, centers)
        history.append(float(d2.mean()))
        counts = np.bincount(codes, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, codes, x)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        # Empty clusters restart at the point currently farthest from its
        # center so the iteration cannot stall with dead centroids.
        for j in np.flatnonzero(~nonempty):
            far = int(np.argmax(d2))
            centers[j] = x[far]
            d2[far] = 0.0
    return centers, history


def train_codebook(sample: np.ndarray, n_subspaces: int, seed: int) -> PqCodebook:
    """Train per-subspace k-means centroids on a sample of vectors.

    Deterministic for a given seed. Requires at least 256 samples and a
    dimension divisible by ``n_subspaces``.
    """
    sample = np.asarray(sample, dtype=np.float32)
    if sample.ndim != 2:
        raise TrainingError("sample must be a 2-D array of vectors")
    n, dim = sample.shape
    if n < CENTROIDS_PER_SUBSPACE:
        raise TrainingError(
            f"need at least {CENTROIDS_PER_SUBSPACE} training vectors, got {n}"
        )
    if dim % n_subspaces != 0:
        raise TrainingError(f"n_subspaces={n_subspaces} does not divide dim={dim}")
    sub_dim = dim // n_subspaces
    rng = np.random.default_rng(seed)
    centroids = np.empty(
        (n_subspaces, CENTROIDS_PER_SUBSPACE, sub_dim), dtype=np.float32
    )
    history = []
    x64 = sample.astype(np.float64)
    for m in range(n_subspaces):
        sub = x64[:, m * sub_dim : (m + 1) * sub_dim]
        centers, hist = _kmeans(sub, CENTROIDS_PER_SUBSPACE, rng)
        centroids[m] = centers.astype(np.float32)
        history.append(hist)
    return PqCodebook(centroids=centroids, inertia_history=history)


def encode(codebook: PqCodebook, v: np.ndarray) -> np.ndarray:
    """Code one vector: per subspace, the index of its nearest centroid."""
    return encode_many(codebook, np.asarray(v, dtype=np.float32)[None, :])[0]


def encode_many(codebook: PqCodebook, vectors: np.ndarray) -> np.ndarray:
    """Code a batch of vectors; returns uint8 array (n, n_subspaces)."""
    vectors = np.asarray(vectors, dtype=np.float32)
    if vectors.ndim != 2 or vectors.shape[1] != codebook.dim:
        raise ValueError(
            f"vectors shape {vectors.shape} does not match codebook dim {codebook.dim}"
        )
    n = vectors.shape[0]
    sub_dim = codebook.sub_dim
    codes = np.empty((n, codebook.n_subspaces), dtype=np.uint8)
    x64 = vectors.astype(np.float64)
    for m in range(codebook.n_subspaces):
        sub = x64[:, m * sub_dim : (m + 1) * sub_dim]
        assigned, _ = _assign(sub, codebook.centroids[m].astype(np.float64))
        codes[:, m] = assigned.astype(np.uint8)
    return codes


def reconstruct(codebook: PqCodebook, codes: np.ndarray) -> np.ndarray:
    """Decode codes back to centroid vectors (the quantized approximation)."""
    codes = np.atleast_2d(np.asarray(codes))
    parts = [
        codebook.centroids[m][codes[:, m]] for m in range(codebook.n_subspaces)
    ]
    return np.concatenate(parts, axis=1)


def adc_table(codebook: PqCodebook, query: np.ndarray) -> np.ndarray:
    """Per-query lookup table: [m][c] = squared distance from the query's
    m-th sub-vector to centroid c of subspace m."""
    query = np.asarray(query, dtype=np.float32)
    if query.shape != (codebook.dim,):
        raise ValueError(
            f"query shape {query.shape} does not match codebook dim {codebook.dim}"
        )
    sub_dim = codebook.sub_dim
    q = query.astype(np.float64).reshape(codebook.n_subspaces, 1, sub_dim)
    diff = codebook.centroids.astype(np.float64) - q
    return np.einsum("mcd,mcd->mc", diff, diff).astype(np.float32)


def adc_distance(table: np.ndarray, code: np.ndarray) -> float:
    """Approximate squared distance: sum of table entries picked by the code."""
    code = np.asarray(code)
    if code.shape[0] != table.shape[0]:
        raise ValueError(
            f"code length {code.shape[0]} does not match table rows {table.shape[0]}"
        )
    return float(table[np.arange(table.shape[0]), code].sum())


def adc_distances(table: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Batch form of adc_distance over a (n, n_subspaces) code matrix."""
    codes = np.asarray(codes)
    picked = table[np.arange(table.shape[0])[None, :], codes.astype(np.intp)]
    return picked.sum(axis=1, dtype=np.float64).astype(np.float32)


def save_codebook(codebook: PqCodebook, path: str) -> None:
    with open(path, "wb") as f:
        f.write(file_header(CODEBOOK_MAGIC))
        f.write(struct.pack("<II", codebook.dim, codebook.n_subspaces))
        f.write(np.ascontiguousarray(codebook.centroids, dtype="<f4").tobytes())


def load_codebook(path: str) -> PqCodebook:
    with open(path, "rb") as f:
        data = f.read()
    if data[: len(CODEBOOK_MAGIC)] != CODEBOOK_MAGIC:
        raise CorruptFileError(f"{path}: not a codebook file")
    dim, m = struct.unpack_from("<II", data, HEADER_LEN)
    sub_dim = dim // m
    want = m * CENTROIDS_PER_SUBSPACE * sub_dim
    arr = np.frombuffer(data, dtype="<f4", count=want, offset=HEADER_LEN + 8)
    return PqCodebook(centroids=arr.reshape(m, CENTROIDS_PER_SUBSPACE, sub_dim).copy())


def save_codes(codes: np.ndarray, path: str) -> None:
    codes = np.asarray(codes, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(file_header(CODES_MAGIC))
        f.write(struct.pack("<II", codes.shape[0], codes.shape[1]))
        f.write(codes.tobytes())


def load_codes(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if data[: len(CODES_MAGIC)] != CODES_MAGIC:
        raise CorruptFileError(f"{path}: not a codes file")
    count, m = struct.unpack_from("<II", data, HEADER_LEN)
    arr = np.frombuffer(data, dtype=np.uint8, count=count * m, offset=HEADER_LEN + 8)
    return arr.reshape(count, m).copy()
