"""Proximity-graph index: build, densify, serialize, fetch.

The on-disk layout packs, per node, one record holding the full vector, its
serialized attributes, its direct out-neighbors, and (on a dedicated
overflow page) a random sample of 2-hop neighbors. Records sit at a uniform
stride so a node's offset is pure arithmetic. The 2-hop page is read only
when the caller asks for it, costing exactly one extra page.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .attrdata import VectorAttrs, decode_attrs, encode_attrs
from .errors import BuildError, CorruptFileError, PageBoundsError
from .pagestore import PAGE_SIZE, HEADER_LEN, IoCounters, PageFile, file_header

GRAPH_MAGIC = b"SPFGRAF1"

# Reciprocal edges accumulate in this much slack before a re-prune, which
# amortizes pruning cost during build without changing the final degree cap.
_DEGREE_SLACK = 8

_META_FIELDS = 8  # dim, N, R, R_d, S_r, S_d, entry, attr_bytes_max as u32


@dataclass
class BuildParams:
    """Graph construction knobs; deterministic for a fixed seed."""

    max_degree: int = 32
    dense_degree: int = 640
    build_pool: int = 64
    prune_alpha: float = 1.2
    seed: int = 0

    def validate(self) -> None:
        if self.build_pool < self.max_degree:
            raise BuildError("build_pool must be >= max_degree")
        if self.prune_alpha < 1.0:
            raise BuildError("prune_alpha must be >= 1.0")


@dataclass
class GraphMeta:
    """Layout header of a serialized graph file."""

    n_nodes: int
    dim: int
    max_degree: int
    dense_degree: int
    base_pages: int
    full_pages: int
    entry_node: int
    attr_bytes_max: int

    def validate(self) -> None:
        if self.full_pages != self.base_pages + 1:
            raise BuildError("full record must span exactly one page more than base")
        if not (10 * self.max_degree <= self.dense_degree <= 20 * self.max_degree):
            raise BuildError(
                f"dense_degree {self.dense_degree} outside 10-20x max_degree "
                f"{self.max_degree}"
            )
        if not (0 <= self.entry_node < self.n_nodes):
            raise BuildError("entry node out of range")


@dataclass
class NodeRecord:
    node_id: int
    vector: np.ndarray
    attrs: VectorAttrs
    direct_neighbors: np.ndarray
    dense_neighbors: np.ndarray


def record_layout(dim: int, max_degree: int, attr_bytes_max: int) -> tuple[int, int]:
    """(base_pages, full_pages) for the fixed-slot record layout."""
    base_bytes = 4 * dim + attr_bytes_max + 2 + 4 * max_degree
    base_pages = -(-base_bytes // PAGE_SIZE)
    return base_pages, base_pages + 1


def _pick_medoid(vectors: np.ndarray, rng: np.random.Generator) -> int:
    n = vectors.shape[0]
    take = min(10_000, n)
    sample = rng.choice(n, size=take, replace=False) if take < n else np.arange(n)
    sub = vectors[sample].astype(np.float64)
    centroid = sub.mean(axis=0)
    d = np.einsum("ij,ij->i", sub - centroid, sub - centroid)
    return int(sample[int(np.argmin(d))])


def robust_prune(
    node_id: int,
    cand_ids: np.ndarray,
    cand_dists: np.ndarray,
    vectors: np.ndarray,
    max_degree: int,
    prune_alpha: float,
) -> np.ndarray:
    """Degree-bounded neighbor selection with alpha domination.

    Candidates are taken closest-first; once a neighbor p is kept, any
    remaining candidate c with prune_alpha * d(p, c) <= d(node, c) is
    discarded. Distances are squared L2, ties broken by id.
    """
    cand_ids = np.asarray(cand_ids, dtype=np.int64)
    keep_mask = cand_ids != node_id
    cand_ids = cand_ids[keep_mask]
    cand_dists = np.asarray(cand_dists, dtype=np.float32)[keep_mask]
    if cand_ids.size == 0:
        return np.empty(0, dtype=np.int64)
    order = np.lexsort((cand_ids, cand_dists))
    cand_ids = cand_ids[order]
    cand_dists = cand_dists[order]
    n_cand = cand_ids.size
    alive = np.ones(n_cand, dtype=bool)
    kept = []
    cursor = 0
    while len(kept) < max_degree:
        # Entries are only ever killed, so a forward cursor finds the next
        # survivor without rescanning the prefix.
        while cursor < n_cand and not alive[cursor]:
            cursor += 1
        if cursor == n_cand:
            break
        p = cand_ids[cursor]
        kept.append(p)
        alive[cursor] = False
        cursor += 1
        if cursor >= n_cand:
            break
        tail = slice(cursor, n_cand)
        diff = vectors[cand_ids[tail]] - vectors[p]
        dp = np.einsum("ij,ij->i", diff, diff)
        alive[tail] &= prune_alpha * dp > cand_dists[tail]
    return np.asarray(kept, dtype=np.int64)


class _BeamState:
    """Preallocated scratch for repeated in-memory beam searches."""

    def __init__(self, n_nodes: int, pool_len: int, max_degree: int):
        cap = pool_len + max_degree + _DEGREE_SLACK + 1
        self.ids = np.empty(cap, dtype=np.int64)
        self.dists = np.empty(cap, dtype=np.float32)
        self.expanded = np.empty(cap, dtype=bool)
        self.stamp = np.zeros(n_nodes, dtype=np.int64)
        self.epoch = 0


def _beam_search(
    vectors: np.ndarray,
    adj_ids: np.ndarray,
    adj_deg: np.ndarray,
    entry: int,
    query: np.ndarray,
    pool_len: int,
    state: _BeamState,
) -> tuple[list, list]:
    """Best-first search over the in-memory adjacency; returns the expanded
    (id, dist) trail used as prune candidates."""
    state.epoch += 1
    epoch = state.epoch
    ids, dists, expanded = state.ids, state.dists, state.expanded
    d0 = query - vectors[entry]
    ids[0] = entry
    dists[0] = np.dot(d0, d0)
    expanded[0] = False
    size = 1
    state.stamp[entry] = epoch
    trail_ids: list = []
    trail_dists: list = []
    while True:
        pos = int(np.argmax(~expanded[:size]))
        if expanded[pos]:
            break
        u = int(ids[pos])
        expanded[pos] = True
        trail_ids.append(u)
        trail_dists.append(float(dists[pos]))
        nbrs = adj_ids[u, : adj_deg[u]]
        if nbrs.size == 0:
            continue
        fresh = nbrs[state.stamp[nbrs] != epoch]
        if fresh.size == 0:
            continue
        state.stamp[fresh] = epoch
        diff = vectors[fresh] - query
        nd = np.einsum("ij,ij->i", diff, diff)
        merged_ids = np.concatenate([ids[:size], fresh])
        merged_d = np.concatenate([dists[:size], nd])
        merged_exp = np.concatenate([expanded[:size], np.zeros(fresh.size, bool)])
        order = np.lexsort((merged_ids, merged_d))[:pool_len]
        size = order.size
        ids[:size] = merged_ids[order]
        dists[:size] = merged_d[order]
        expanded[:size] = merged_exp[order]
    return trail_ids, trail_dists


def search_adjacency(
    vectors: np.ndarray,
    adjacency: list[np.ndarray],
    entry: int,
    query: np.ndarray,
    pool_len: int,
) -> tuple[np.ndarray, np.ndarray]:
    """In-memory best-first search over explicit adjacency lists.

    Returns the explored (ids, squared distances) ordered by distance;
    handy for checking a freshly built graph before serialization.
    """
    vectors = np.ascontiguousarray(vectors, dtype=np.float32)
    n = vectors.shape[0]
    max_deg = max((a.size for a in adjacency), default=1)
    adj_ids = np.zeros((n, max(1, max_deg)), dtype=np.int64)
    adj_deg = np.zeros(n, dtype=np.int32)
    for i, row in enumerate(adjacency):
        adj_ids[i, : row.size] = row
        adj_deg[i] = row.size
    state = _BeamState(n, pool_len, max(1, max_deg))
    ids, dists = _beam_search(
        vectors, adj_ids, adj_deg, entry, np.asarray(query, dtype=np.float32),
        pool_len, state
    )
    ids = np.asarray(ids)
    dists = np.asarray(dists)
    order = np.lexsort((ids, dists))
    return ids[order], dists[order]


def build_graph(
    vectors: np.ndarray, params: BuildParams
) -> tuple[list[np.ndarray], int]:
    """Construct the pruned proximity graph; returns (adjacency, entry node).

    Nodes are inserted in seeded random order; each insertion searches the
    graph built so far, prunes the search trail into its out-edges, and adds
    reciprocal edges (re-pruned only when a node overflows its slack).
    Reachability from the entry node is verified by BFS.
    """
    params.validate()
    vectors = np.ascontiguousarray(vectors, dtype=np.float32)
    n = vectors.shape[0]
    if n < 2:
        raise BuildError("graph build needs at least 2 vectors")
    r = params.max_degree
    cap = r + _DEGREE_SLACK
    rng = np.random.default_rng(params.seed)

    adj_ids = np.zeros((n, cap), dtype=np.int64)
    adj_deg = np.zeros(n, dtype=np.int32)
    init_deg = min(r, n - 1)
    init = rng.integers(0, n - 1, size=(n, init_deg))
    init += init >= np.arange(n)[:, None]  # shift past self
    adj_ids[:, :init_deg] = init
    adj_deg[:] = init_deg

    entry = _pick_medoid(vectors, rng)
    state = _BeamState(n, params.build_pool, r)

    def reprune(node: int, extra: int) -> None:
        cands = np.concatenate([adj_ids[node, : adj_deg[node]], [extra]])
        cands = np.unique(cands)
        diff = vectors[cands] - vectors[node]
        d = np.einsum("ij,ij->i", diff, diff)
        kept = robust_prune(node, cands, d, vectors, r, params.prune_alpha)
        adj_deg[node] = kept.size
        adj_ids[node, : kept.size] = kept

    for u in rng.permutation(n):
        u = int(u)
        trail_ids, trail_dists = _beam_search(
            vectors, adj_ids, adj_deg, entry, vectors[u], params.build_pool, state
        )
        cands = np.concatenate([trail_ids, adj_ids[u, : adj_deg[u]]])
        cands, first = np.unique(cands, return_index=True)
        diff = vectors[cands] - vectors[u]
        d = np.einsum("ij,ij->i", diff, diff)
        kept = robust_prune(u, cands, d, vectors, r, params.prune_alpha)
        adj_deg[u] = kept.size
        adj_ids[u, : kept.size] = kept
        for j in kept:
            j = int(j)
            row = adj_ids[j, : adj_deg[j]]
            if u in row:
                continue
            if adj_deg[j] < cap:
                adj_ids[j, adj_deg[j]] = u
                adj_deg[j] += 1
            else:
                reprune(j, u)

    # Slack capacity may leave nodes above the degree cap; trim them now.
    for j in np.flatnonzero(adj_deg > r):
        j = int(j)
        cands = adj_ids[j, : adj_deg[j]]
        diff = vectors[cands] - vectors[j]
        d = np.einsum("ij,ij->i", diff, diff)
        kept = robust_prune(j, cands, d, vectors, r, params.prune_alpha)
        adj_deg[j] = kept.size
        adj_ids[j, : kept.size] = kept

    _repair_connectivity(vectors, adj_ids, adj_deg, entry, r)

    adjacency = [adj_ids[i, : adj_deg[i]].copy() for i in range(n)]
    reached = _bfs_reach(adjacency, entry)
    if reached < 0.99 * n:
        raise BuildError(
            f"graph reaches only {reached}/{n} nodes from the entry point"
        )
    return adjacency, entry


def _repair_connectivity(vectors, adj_ids, adj_deg, entry: int, r: int) -> None:
    """Wire every BFS-unreachable node to its nearest reachable node.

    Pruning occasionally strands a few nodes; an edge from the nearest
    reachable node restores them without breaking the degree cap (the donor
    drops its farthest neighbor when full).
    """
    n = vectors.shape[0]
    for _ in range(10):
        seen = np.zeros(n, dtype=bool)
        seen[entry] = True
        frontier = np.asarray([entry])
        while frontier.size:
            nbrs = np.concatenate(
                [adj_ids[int(u), : adj_deg[int(u)]] for u in frontier]
            )
            nbrs = np.unique(nbrs)
            nbrs = nbrs[~seen[nbrs]]
            seen[nbrs] = True
            frontier = nbrs
        unreached = np.flatnonzero(~seen)
        if unreached.size == 0:
            return
        reached_ids = np.flatnonzero(seen)
        for u in unreached:
            u = int(u)
            diff = vectors[reached_ids] - vectors[u]
            d = np.einsum("ij,ij->i", diff, diff)
            v = int(reached_ids[np.lexsort((reached_ids, d))[0]])
            row = adj_ids[v, : adj_deg[v]]
            if u in row:
                continue
            if adj_deg[v] < r:
                adj_ids[v, adj_deg[v]] = u
                adj_deg[v] += 1
            else:
                dndiff = vectors[row] - vectors[v]
                dn = np.einsum("ij,ij->i", dndiff, dndiff)
                adj_ids[v, int(np.argmax(dn))] = u


def _bfs_reach(adjacency: list[np.ndarray], entry: int) -> int:
    n = len(adjacency)
    seen = np.zeros(n, dtype=bool)
    seen[entry] = True
    frontier = [entry]
    count = 1
    while frontier:
        nxt = np.unique(np.concatenate([adjacency[u] for u in frontier]))
        nxt = nxt[~seen[nxt]]
        seen[nxt] = True
        count += nxt.size
        frontier = nxt.tolist()
    return count


def densify(
    adjacency: list[np.ndarray],
    vectors: np.ndarray,
    max_degree: int,
    dense_degree: int,
    seed: int,
) -> list[np.ndarray]:
    """Sample 2-hop neighbors per node, uniformly without replacement.

    The sample excludes the node itself and its direct neighbors, and is
    capped at dense_degree - max_degree entries. Each list is stored
    nearest-first (distance to the owning node, ties by id) so that
    search-time prefix scans of the list favor local edges.
    """
    budget = dense_degree - max_degree
    if budget < 0:
        raise BuildError("dense_degree must be >= max_degree")
    vectors = np.ascontiguousarray(vectors, dtype=np.float32)
    rng = np.random.default_rng(seed)
    out = []
    for u, direct in enumerate(adjacency):
        if direct.size == 0:
            out.append(np.empty(0, dtype=np.int64))
            continue
        pool = np.unique(np.concatenate([adjacency[int(v)] for v in direct]))
        pool = np.setdiff1d(pool, np.append(direct, u), assume_unique=False)
        k = min(budget, pool.size)
        if k == pool.size:
            pick = pool
        else:
            pick = rng.choice(pool, size=k, replace=False)
        pick = pick.astype(np.int64)
        diff = vectors[pick] - vectors[u]
        d = np.einsum("ij,ij->i", diff, diff)
        out.append(pick[np.lexsort((pick, d))])
    return out


def serialize_index(
    vectors: np.ndarray,
    attrs: list[VectorAttrs],
    adjacency: list[np.ndarray],
    dense: list[np.ndarray],
    meta: GraphMeta,
    path: str,
) -> None:
    """Write the graph file: one header page, then records at a uniform
    stride of meta.full_pages pages per node."""
    meta.validate()
    n, dim = vectors.shape
    if n != meta.n_nodes or dim != meta.dim:
        raise BuildError("meta does not match vectors")
    base_pages, full_pages = record_layout(dim, meta.max_degree, meta.attr_bytes_max)
    if (base_pages, full_pages) != (meta.base_pages, meta.full_pages):
        raise BuildError("meta page counts do not match the record layout")
    dense_cap = (PAGE_SIZE - 2) // 4
    if meta.dense_degree - meta.max_degree > dense_cap:
        raise BuildError("dense page cannot hold dense_degree - max_degree ids")

    base_bytes = meta.base_pages * PAGE_SIZE
    with open(path, "wb") as f:
        header = file_header(GRAPH_MAGIC) + struct.pack(
            "<8I",
            meta.dim,
            meta.n_nodes,
            meta.max_degree,
            meta.dense_degree,
            meta.base_pages,
            meta.full_pages,
            meta.entry_node,
            meta.attr_bytes_max,
        )
        f.write(header.ljust(PAGE_SIZE, b"\x00"))
        for i in range(n):
            direct = np.asarray(adjacency[i], dtype=np.int64)
            if direct.size > meta.max_degree:
                raise BuildError(f"node {i}: {direct.size} direct neighbors > cap")
            if i in direct:
                raise BuildError(f"node {i}: self loop")
            dn = np.asarray(dense[i], dtype=np.int64)
            if dn.size > meta.dense_degree - meta.max_degree:
                raise BuildError(f"node {i}: dense list too long")
            rec = bytearray(base_bytes)
            off = 0
            vec = np.ascontiguousarray(vectors[i], dtype="<f4").tobytes()
            rec[off : off + len(vec)] = vec
            off += len(vec)
            rec[off : off + meta.attr_bytes_max] = encode_attrs(
                attrs[i], meta.attr_bytes_max
            )
            off += meta.attr_bytes_max
            struct.pack_into("<H", rec, off, direct.size)
            off += 2
            ndat = direct.astype("<u4").tobytes()
            rec[off : off + len(ndat)] = ndat
            f.write(rec)
            dpage = bytearray(PAGE_SIZE)
            struct.pack_into("<H", dpage, 0, dn.size)
            ddat = dn.astype("<u4").tobytes()
            dpage[2 : 2 + len(ddat)] = ddat
            f.write(dpage)


def load_meta(store: PageFile) -> GraphMeta:
    ctr = IoCounters()
    head = store.read_pages(0, 1, ctr)
    if head[:8] != GRAPH_MAGIC:
        raise CorruptFileError(f"{store.path}: not a graph file")
    vals = struct.unpack_from(f"<{_META_FIELDS}I", head, HEADER_LEN)
    meta = GraphMeta(
        dim=vals[0],
        n_nodes=vals[1],
        max_degree=vals[2],
        dense_degree=vals[3],
        base_pages=vals[4],
        full_pages=vals[5],
        entry_node=vals[6],
        attr_bytes_max=vals[7],
    )
    meta.validate()
    return meta


def fetch_node(
    store: PageFile,
    meta: GraphMeta,
    node_id: int,
    with_dense: bool,
    ctr: IoCounters,
) -> NodeRecord:
    """Read one node record; base_pages pages normally, one more when the
    2-hop page is requested. Attributes always arrive with the record."""
    if not (0 <= node_id < meta.n_nodes):
        raise PageBoundsError(f"node {node_id} out of range ({meta.n_nodes} nodes)")
    start = 1 + node_id * meta.full_pages
    n_pages = meta.full_pages if with_dense else meta.base_pages
    data = store.read_pages(start, n_pages, ctr)
    ctr.records_fetched += 1
    return decode_record(data, meta, node_id, with_dense)


def decode_record(
    data: bytes, meta: GraphMeta, node_id: int, with_dense: bool
) -> NodeRecord:
    off = 0
    vector = np.frombuffer(data, dtype="<f4", count=meta.dim, offset=off).copy()
    off += 4 * meta.dim
    attrs = decode_attrs(data[off : off + meta.attr_bytes_max])
    off += meta.attr_bytes_max
    (n_direct,) = struct.unpack_from("<H", data, off)
    off += 2
    direct = np.frombuffer(data, dtype="<u4", count=n_direct, offset=off).astype(
        np.int64
    )
    dense = np.empty(0, dtype=np.int64)
    if with_dense:
        doff = meta.base_pages * PAGE_SIZE
        (n_dense,) = struct.unpack_from("<H", data, doff)
        dense = np.frombuffer(
            data, dtype="<u4", count=n_dense, offset=doff + 2
        ).astype(np.int64)
    return NodeRecord(
        node_id=node_id,
        vector=vector,
        attrs=attrs,
        direct_neighbors=direct,
        dense_neighbors=dense,
    )
