"""Query execution: speculative pre-filtering, speculative in-filtering,
post-filtering, and a strict in-filtering baseline for comparison.

All paths share two guarantees. Every returned hit was exactly verified
against the attributes stored in its fetched record, so verification rides
on the record reads the search performs anyway. And results are ordered by
exact distance with id tie-breaks, so a fixed index and query always
reproduce the same answer and the same counters.

The in-filtering path explores a superset of the valid vectors: neighbors
passing the approximate membership test enter the candidate pool as
possibly valid, and when fewer than the degree cap pass, invalid direct
neighbors pad out the batch as bridges that keep fragmented valid regions
reachable. Bridges are explored only after the possibly-valid frontier
empties, and only while the result set can still improve: the bridge must
sit closer than the current k-th hit, and hops past the k-th hit stop once
the traversal has spent the cost model's predicted fetch budget. A final
verify-only pass re-ranks the best window-evicted candidates so pool
pruning under quantization noise cannot silently drop a true neighbor.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import quantizer
from .attrs import AttributeIndexSet, open_attr_indexes
from .costs import (
    DEFAULT_APPROX_CHECK_COST,
    CostInputs,
    RouteDecision,
    RouterConfig,
    route,
)
from .errors import BuildError
from .graph import GRAPH_MAGIC, GraphMeta, NodeRecord, fetch_node, load_meta
from .pagestore import PAGE_SIZE, IoCounters, PageFile
from .selectors import (
    DEFAULT_PREPARE_BUDGET_PAGES,
    FilterEstimate,
    Selector,
    estimate_filter,
    pre_filter_approx,
    predict_prepare_pages,
    predict_scan_pages,
    prepare_query,
)

GRAPH_FILE = "graph.bin"
CODEBOOK_FILE = "pq_codebook.bin"
CODES_FILE = "pq_codes.bin"

# Candidate validity states.
POSSIBLY_VALID = 0
INVALID_BRIDGE = 1
VERIFIED_VALID = 2
VERIFIED_INVALID = 3

_EXPLORE_FLOOR = 1e-4


@dataclass
class Candidate:
    """One pool entry; exact distance appears only after exploration."""

    node_id: int
    approx_dist: float
    validity: int = POSSIBLY_VALID
    explored: bool = False
    exact_dist: float | None = None


@dataclass
class SearchParams:
    k: int = 10
    pool_len: int = 100
    pool_max: int | None = None  # post-filter escalation cap; default 16x
    mechanism: str = "auto"  # auto | pre | in | post | strict-in
    bridge_padding: bool = True
    prepare_budget_pages: int = DEFAULT_PREPARE_BUDGET_PAGES

    def __post_init__(self):
        if self.pool_max is None:
            self.pool_max = 16 * self.pool_len
        if not (self.k <= self.pool_len <= self.pool_max):
            raise ValueError("need k <= pool_len <= pool_max")


@dataclass
class SearchResult:
    hits: list  # [(node_id, exact_dist)] ascending by distance
    mechanism: str
    io: IoCounters
    decision: RouteDecision | None = None
    estimate: FilterEstimate | None = None
    explored: int = 0
    escalations: int = 0


class _Pool:
    """Bounded candidate pool ordered by (demoted, approx_dist, id).

    With prefer_valid set, bridges and verified-invalid entries rank after
    every possibly/verified-valid entry, so the retained window tracks the
    best valid candidates the way the termination rule expects.

    With keep_overflow set, unexplored entries that fall off the window are
    stashed in a bounded reservoir per kind instead of vanishing; the
    search re-admits them while they could still improve the result set.
    """

    def __init__(self, cap: int, prefer_valid: bool, keep_overflow: bool = False):
        self.cap = cap
        self.prefer_valid = prefer_valid
        self.keep_overflow = keep_overflow
        self.ids = np.empty(0, dtype=np.int64)
        self.adc = np.empty(0, dtype=np.float32)
        self.validity = np.empty(0, dtype=np.int8)
        self.explored = np.empty(0, dtype=bool)
        self._res: dict = {
            POSSIBLY_VALID: (np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float32)),
            INVALID_BRIDGE: (np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float32)),
        }

    def _order(self, ids, adc, validity):
        if self.prefer_valid:
            demoted = (validity == INVALID_BRIDGE) | (validity == VERIFIED_INVALID)
            return np.lexsort((ids, adc, demoted))
        return np.lexsort((ids, adc))

    def _apply(self, ids, adc, val, exp) -> None:
        order = self._order(ids, adc, val)
        kept = order[: self.cap]
        if self.keep_overflow and order.size > self.cap:
            dropped = order[self.cap :]
            dropped = dropped[~exp[dropped]]
            for kind in (POSSIBLY_VALID, INVALID_BRIDGE):
                sel = dropped[val[dropped] == kind]
                if sel.size:
                    self._stash(kind, ids[sel], adc[sel])
        self.ids = ids[kept]
        self.adc = adc[kept]
        self.validity = val[kept]
        self.explored = exp[kept]

    def _stash(self, kind: int, ids: np.ndarray, adc: np.ndarray) -> None:
        old_ids, old_adc = self._res[kind]
        all_ids = np.concatenate([old_ids, ids])
        all_adc = np.concatenate([old_adc, adc])
        order = np.lexsort((all_ids, all_adc))[: 4 * self.cap]
        self._res[kind] = (all_ids[order], all_adc[order])

    def pop_overflow(self, kind: int, limit: float) -> int | None:
        """Best stashed id of the given kind with estimate below the limit."""
        ids, adc = self._res[kind]
        if ids.size == 0 or adc[0] >= limit:
            return None
        self._res[kind] = (ids[1:], adc[1:])
        return int(ids[0])

    def insert(self, ids: np.ndarray, adc: np.ndarray, validity: np.ndarray) -> None:
        self._apply(
            np.concatenate([self.ids, ids]),
            np.concatenate([self.adc, adc.astype(np.float32)]),
            np.concatenate([self.validity, validity.astype(np.int8)]),
            np.concatenate([self.explored, np.zeros(len(ids), dtype=bool)]),
        )

    def insert_settled(self, node_id: int, exact_dist: float, validity: int) -> None:
        """Insert an already-explored entry (a re-admitted eviction)."""
        self._apply(
            np.concatenate([self.ids, [node_id]]),
            np.concatenate([self.adc, np.float32([exact_dist])]),
            np.concatenate([self.validity, np.int8([validity])]),
            np.concatenate([self.explored, [True]]),
        )

    def resort(self) -> None:
        self._apply(self.ids, self.adc, self.validity, self.explored)

    def settle(self, pos: int, exact_dist: float, validity: int) -> None:
        """Swap an explored entry's key to its exact distance and re-rank.

        Fetched records carry full-precision vectors, so the pool window
        can order explored entries by true distance instead of the PQ
        estimate; unexplored entries keep their estimate.
        """
        self.adc[pos] = exact_dist
        self.validity[pos] = validity
        self.explored[pos] = True
        self.resort()

    def next_unexplored(self, validity: int, window: int | None = None) -> int:
        """Index of the best unexplored entry with the given validity."""
        stop = len(self.ids) if window is None else min(window, len(self.ids))
        mask = ~self.explored[:stop] & (self.validity[:stop] == validity)
        hits = np.flatnonzero(mask)
        return int(hits[0]) if hits.size else -1


class SearchIndex:
    """Opened index bundle: graph file, PQ data, and attribute indexes."""

    def __init__(self, index_dir: str, router: RouterConfig | None = None):
        self.dir = str(index_dir)
        self.store = PageFile(os.path.join(index_dir, GRAPH_FILE), GRAPH_MAGIC)
        self.meta: GraphMeta = load_meta(self.store)
        self.codebook = quantizer.load_codebook(os.path.join(index_dir, CODEBOOK_FILE))
        self.codes = quantizer.load_codes(os.path.join(index_dir, CODES_FILE))
        self.attrs: AttributeIndexSet = open_attr_indexes(index_dir)
        self.router = router if router is not None else RouterConfig()
        if self.codes.shape[0] != self.meta.n_nodes:
            raise BuildError("PQ codes do not cover the graph")
        self.adc_bias = self._estimate_adc_bias()

    def _estimate_adc_bias(self, sample: int = 64) -> float:
        """Mean squared reconstruction error over a seeded record sample.

        Approximate distances overshoot exact ones by about this much near
        the query, so improvement cut-offs pad by it. Costs a few page
        reads once at open time, charged to no query.
        """
        rng = np.random.default_rng(0)
        n = self.meta.n_nodes
        ids = rng.choice(n, size=min(sample, n), replace=False)
        scratch = IoCounters()
        err = 0.0
        for node_id in ids:
            rec = fetch_node(self.store, self.meta, int(node_id), False, scratch)
            recon = quantizer.reconstruct(self.codebook, self.codes[node_id])[0]
            err += quantizer.exact_distance(rec.vector, recon)
        return err / len(ids)

    def close(self) -> None:
        self.store.close()
        self.attrs.close()

    # -- routing -----------------------------------------------------------

    def cost_inputs(
        self, sel: Selector, params: SearchParams
    ) -> tuple[CostInputs, FilterEstimate]:
        est = estimate_filter(sel, self.attrs, params.prepare_budget_pages)
        inputs = CostInputs(
            n_vectors=self.meta.n_nodes,
            selectivity=est.selectivity,
            precision_pre=est.precision_pre,
            precision_in=est.precision_in,
            scan_pages_pre=predict_scan_pages(sel, self.attrs),
            scan_pages_in=predict_prepare_pages(
                sel, self.attrs, params.prepare_budget_pages
            ),
            pool_len=params.pool_len,
            max_degree=self.meta.max_degree,
            dense_degree=self.meta.dense_degree,
            base_pages=self.meta.base_pages,
            full_pages=self.meta.full_pages,
            approx_check_cost=DEFAULT_APPROX_CHECK_COST,
        )
        return inputs, est

    def search(self, query: np.ndarray, sel: Selector, params: SearchParams) -> SearchResult:
        """Route the query to its cheapest mechanism and execute it."""
        query = self._check_query(query)
        inputs, est = self.cost_inputs(sel, params)
        decision = route(inputs, self.router)
        mech = params.mechanism if params.mechanism != "auto" else decision.chosen
        if mech == "pre":
            result = self.search_pre(query, sel, params, est)
        elif mech == "in":
            result = self.search_in(query, sel, params, est)
        elif mech == "post":
            result = self.search_post(query, sel, params, est)
        elif mech == "strict-in":
            result = self.search_in_strict_baseline(query, sel, params, est)
        else:
            raise ValueError(f"unknown mechanism {mech!r}")
        result.decision = decision
        return result

    def _check_query(self, query: np.ndarray) -> np.ndarray:
        query = np.asarray(query, dtype=np.float32)
        if query.shape != (self.meta.dim,):
            raise ValueError(
                f"query shape {query.shape} does not match index dim {self.meta.dim}"
            )
        return query

    def _estimate(self, sel: Selector, params: SearchParams) -> FilterEstimate:
        return estimate_filter(sel, self.attrs, params.prepare_budget_pages)

    def _explore_cap(self, params: SearchParams, selectivity: float) -> int:
        s = max(selectivity, _EXPLORE_FLOOR)
        return int(max(10.0 * params.pool_len / s, 10_000))

    # -- speculative pre-filtering ------------------------------------------

    def search_pre(
        self,
        query: np.ndarray,
        sel: Selector,
        params: SearchParams,
        est: FilterEstimate | None = None,
    ) -> SearchResult:
        """Batched superset scan, in-memory PQ brute force, exact re-rank."""
        query = self._check_query(query)
        est = est if est is not None else self._estimate(sel, params)
        ctr = IoCounters()
        superset = pre_filter_approx(sel, self.attrs, ctr)
        if superset.size == 0:
            return SearchResult([], "pre", ctr, estimate=est)
        table = quantizer.adc_table(self.codebook, query)
        adc = quantizer.adc_distances(table, self.codes[superset])
        ctr.pq_distances += int(superset.size)
        # The extra fetches beyond pool_len absorb the superset's false
        # positives: pool/precision plus k keeps k exact results reachable.
        budget = int(np.ceil(params.pool_len / est.precision_pre)) + params.k
        take = min(superset.size, budget)
        order = np.lexsort((superset, adc))[:take]
        hits = []
        for node_id in superset[order]:
            rec = fetch_node(self.store, self.meta, int(node_id), False, ctr)
            if sel.is_member(rec.attrs):
                hits.append((int(node_id), quantizer.exact_distance(query, rec.vector)))
        hits.sort(key=lambda h: (h[1], h[0]))
        return SearchResult(
            hits[: params.k], "pre", ctr, estimate=est, explored=int(take)
        )

    # -- speculative in-filtering -------------------------------------------

    def search_in(
        self,
        query: np.ndarray,
        sel: Selector,
        params: SearchParams,
        est: FilterEstimate | None = None,
    ) -> SearchResult:
        """Graph traversal over the approximate-valid superset with bridge
        padding, verifying each explored record in place."""
        query = self._check_query(query)
        est = est if est is not None else self._estimate(sel, params)
        ctr = IoCounters()
        prepared = prepare_query(sel, self.attrs, params.prepare_budget_pages, ctr)
        table = quantizer.adc_table(self.codebook, query)
        meta = self.meta
        r_cap = meta.max_degree
        cap = self._explore_cap(params, est.selectivity)
        # The cost model's own fetch prediction bounds how much bridge
        # draining is worth: below it, invalid hops ride along as free
        # connectivity; beyond it they are pure overhead.
        s_est = est.selectivity
        if s_est * meta.dense_degree / est.precision_in <= meta.max_degree:
            model_fetches = (params.pool_len / s_est) * (
                meta.max_degree / meta.dense_degree
            )
        else:
            model_fetches = params.pool_len / est.precision_in
        drain_allowance = int(np.ceil(model_fetches))

        pool = _Pool(params.pool_len, prefer_valid=True, keep_overflow=True)
        inserted = np.zeros(meta.n_nodes, dtype=bool)
        entry = np.asarray([meta.entry_node])
        entry_ok = prepared.test_many(entry, ctr)[0]
        adc0 = quantizer.adc_distances(table, self.codes[entry])
        ctr.pq_distances += 1
        pool.insert(
            entry, adc0, np.asarray([POSSIBLY_VALID if entry_ok else INVALID_BRIDGE])
        )
        inserted[meta.entry_node] = True

        results: dict[int, float] = {}
        explored = 0

        def explore(node_id: int, pos: int) -> int:
            """Fetch, verify in place, enqueue up to R neighbors; returns the
            number of possibly-valid neighbors discovered."""
            nonlocal explored
            rec = fetch_node(self.store, meta, node_id, True, ctr)
            explored += 1
            exact = quantizer.exact_distance(query, rec.vector)
            valid = sel.is_member(rec.attrs)
            state = VERIFIED_VALID if valid else VERIFIED_INVALID
            if pos >= 0:
                pool.settle(pos, exact, state)
            else:
                pool.insert_settled(node_id, exact, state)
            if valid:
                results[node_id] = exact
            nbrs = np.concatenate([rec.direct_neighbors, rec.dense_neighbors])
            nbrs = nbrs[~inserted[nbrs]]
            if nbrs.size == 0:
                return 0
            _, first = np.unique(nbrs, return_index=True)
            nbrs = nbrs[np.sort(first)]
            ok = prepared.test_many(nbrs, ctr)
            picked = nbrs[ok][:r_cap]
            n_possible = int(picked.size)
            validity = np.full(picked.size, POSSIBLY_VALID, dtype=np.int8)
            if params.bridge_padding and picked.size < r_cap:
                # bridges come from invalid direct neighbors, in listing order
                is_direct = np.isin(nbrs, rec.direct_neighbors)
                bridges = nbrs[is_direct & ~ok][: r_cap - picked.size]
                picked = np.concatenate([picked, bridges])
                validity = np.concatenate(
                    [validity, np.full(bridges.size, INVALID_BRIDGE, dtype=np.int8)]
                )
            if picked.size:
                inserted[picked] = True
                adc = quantizer.adc_distances(table, self.codes[picked])
                ctr.pq_distances += int(picked.size)
                pool.insert(picked, adc, validity)
            return n_possible

        def can_improve_limit(pad: float = 0.0) -> float:
            """Distance a candidate must beat for the results to improve;
            the verify-only tail pads it by the PQ overestimate bias."""
            if len(results) < params.k:
                return np.inf
            return sorted(results.values())[params.k - 1] + pad

        # Exploration order: best possibly-valid in the window first;
        # bridges only when none remain, and only while the result set can
        # still improve. A run of pool_len bridge hops surfacing nothing
        # possibly valid ends the rescue.
        fruitless_bridges = 0
        while explored < cap:
            pos = pool.next_unexplored(POSSIBLY_VALID)
            if pos >= 0:
                fruitless_bridges = 0
                explore(int(pool.ids[pos]), pos)
                continue
            if fruitless_bridges >= params.pool_len:
                break
            if len(results) >= params.k and explored >= drain_allowance:
                break
            limit = can_improve_limit()
            bpos = pool.next_unexplored(INVALID_BRIDGE)
            bkey = float(pool.adc[bpos]) if bpos >= 0 else np.inf
            stashed = pool.pop_overflow(INVALID_BRIDGE, min(bkey, limit))
            if stashed is not None:
                found = explore(stashed, -1)
            elif bpos >= 0 and bkey < limit:
                found = explore(int(pool.ids[bpos]), bpos)
            else:
                break
            fruitless_bridges = 0 if found else fruitless_bridges + 1

        # Verify-only tail: candidates the window evicted may still beat the
        # k-th hit once their exact distance is known. Fetch just their base
        # records (no neighbor expansion), bounded like the pre-filter
        # route's over-fetch margin.
        tail_budget = params.k + max(
            0, int(np.ceil(params.pool_len / est.precision_in)) - params.pool_len
        ) + params.pool_len // 2
        while tail_budget > 0 and explored < cap:
            revived = pool.pop_overflow(POSSIBLY_VALID, can_improve_limit(self.adc_bias))
            if revived is None:
                break
            rec = fetch_node(self.store, meta, revived, False, ctr)
            explored += 1
            tail_budget -= 1
            if sel.is_member(rec.attrs):
                results[revived] = quantizer.exact_distance(query, rec.vector)

        hits = sorted(results.items(), key=lambda h: (h[1], h[0]))[: params.k]
        return SearchResult(
            [(i, d) for i, d in hits], "in", ctr, estimate=est, explored=explored
        )

    # -- post-filtering -------------------------------------------------------

    def search_post(
        self,
        query: np.ndarray,
        sel: Selector,
        params: SearchParams,
        est: FilterEstimate | None = None,
    ) -> SearchResult:
        """Attribute-blind traversal; validity falls out of the records the
        search fetches anyway. The window doubles until k hits or the cap."""
        query = self._check_query(query)
        est = est if est is not None else self._estimate(sel, params)
        ctr = IoCounters()
        table = quantizer.adc_table(self.codebook, query)
        meta = self.meta
        cap = self._explore_cap(params, est.selectivity)

        # Entries are retained to the escalation cap; the active window is
        # the first pool_len (then 2x, 4x, ...) of them.
        pool = _Pool(params.pool_max, prefer_valid=False)
        inserted = np.zeros(meta.n_nodes, dtype=bool)
        entry = np.asarray([meta.entry_node])
        adc0 = quantizer.adc_distances(table, self.codes[entry])
        ctr.pq_distances += 1
        pool.insert(entry, adc0, np.asarray([POSSIBLY_VALID]))
        inserted[meta.entry_node] = True

        window = params.pool_len
        results: dict[int, float] = {}
        explored = 0
        escalations = 0
        while explored < cap:
            pos = self._next_in_window(pool, window)
            if pos < 0:
                if len(results) >= params.k or window >= params.pool_max:
                    break
                window = min(2 * window, params.pool_max)
                escalations += 1
                continue
            node_id = int(pool.ids[pos])
            rec = fetch_node(self.store, meta, node_id, False, ctr)
            explored += 1
            exact = quantizer.exact_distance(query, rec.vector)
            if sel.is_member(rec.attrs):
                pool.settle(pos, exact, VERIFIED_VALID)
                results[node_id] = exact
            else:
                pool.settle(pos, exact, VERIFIED_INVALID)

            nbrs = rec.direct_neighbors
            nbrs = nbrs[~inserted[nbrs]]
            if nbrs.size == 0:
                continue
            nbrs = np.unique(nbrs)
            inserted[nbrs] = True
            adc = quantizer.adc_distances(table, self.codes[nbrs])
            ctr.pq_distances += int(nbrs.size)
            pool.insert(nbrs, adc, np.full(nbrs.size, POSSIBLY_VALID, dtype=np.int8))

        hits = sorted(results.items(), key=lambda h: (h[1], h[0]))[: params.k]
        return SearchResult(
            [(i, d) for i, d in hits],
            "post",
            ctr,
            estimate=est,
            explored=explored,
            escalations=escalations,
        )

    @staticmethod
    def _next_in_window(pool: _Pool, window: int) -> int:
        stop = min(window, len(pool.ids))
        live = np.flatnonzero(~pool.explored[:stop])
        return int(live[0]) if live.size else -1

    # -- strict in-filtering baseline ----------------------------------------

    def search_in_strict_baseline(
        self,
        query: np.ndarray,
        sel: Selector,
        params: SearchParams,
        est: FilterEstimate | None = None,
    ) -> SearchResult:
        """Traversal that decides every neighbor's validity by reading its
        attributes from disk before enqueueing it. Exists to measure the I/O
        the speculative path avoids; one page per distinct neighbor checked."""
        query = self._check_query(query)
        est = est if est is not None else self._estimate(sel, params)
        ctr = IoCounters()
        table = quantizer.adc_table(self.codebook, query)
        meta = self.meta
        cap = self._explore_cap(params, est.selectivity)

        pool = _Pool(params.pool_len, prefer_valid=False)
        inserted = np.zeros(meta.n_nodes, dtype=bool)
        checked = np.zeros(meta.n_nodes, dtype=np.int8)  # 0 unknown, 1 valid, 2 not
        entry = np.asarray([meta.entry_node])
        adc0 = quantizer.adc_distances(table, self.codes[entry])
        ctr.pq_distances += 1
        pool.insert(entry, adc0, np.asarray([POSSIBLY_VALID]))
        inserted[meta.entry_node] = True

        results: dict[int, float] = {}
        explored = 0
        while explored < cap:
            pos = self._next_in_window(pool, params.pool_len)
            if pos < 0:
                break
            node_id = int(pool.ids[pos])
            rec = fetch_node(self.store, meta, node_id, False, ctr)
            explored += 1
            exact = quantizer.exact_distance(query, rec.vector)
            if sel.is_member(rec.attrs):
                pool.settle(pos, exact, VERIFIED_VALID)
                results[node_id] = exact
            else:
                pool.settle(pos, exact, VERIFIED_INVALID)

            valid_new = []
            for nbr in rec.direct_neighbors.tolist():
                if inserted[nbr]:
                    continue
                if checked[nbr] == 0:
                    attrs = self._read_attrs_only(nbr, ctr)
                    checked[nbr] = 1 if sel.is_member(attrs) else 2
                if checked[nbr] == 1:
                    valid_new.append(nbr)
            if not valid_new:
                continue
            picked = np.asarray(valid_new, dtype=np.int64)
            inserted[picked] = True
            adc = quantizer.adc_distances(table, self.codes[picked])
            ctr.pq_distances += int(picked.size)
            pool.insert(picked, adc, np.full(picked.size, POSSIBLY_VALID, dtype=np.int8))

        hits = sorted(results.items(), key=lambda h: (h[1], h[0]))[: params.k]
        return SearchResult(
            [(i, d) for i, d in hits], "strict-in", ctr, estimate=est, explored=explored
        )

    def _read_attrs_only(self, node_id: int, ctr: IoCounters):
        """Read just the pages holding one node's attribute block."""
        from .attrdata import decode_attrs

        meta = self.meta
        rec_page = 1 + node_id * meta.full_pages
        attr_lo = 4 * meta.dim
        attr_hi = attr_lo + meta.attr_bytes_max
        page_lo = attr_lo // PAGE_SIZE
        page_hi = -(-attr_hi // PAGE_SIZE)
        n_pages = page_hi - page_lo
        data = self.store.read_pages(rec_page + page_lo, n_pages, ctr)
        ctr.attr_pages_read += n_pages
        start = attr_lo - page_lo * PAGE_SIZE
        return decode_attrs(data[start : start + meta.attr_bytes_max])
