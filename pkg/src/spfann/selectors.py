"""Composable attribute filters with exact and superset evaluation.

Every selector answers three questions about a vector: exact membership
(from decoded record attributes), approximate membership (from in-memory
sketches only, never falsely negative), and a batched superset scan over
the on-disk attribute indexes. It also estimates its own selectivity and
the precision of both approximate routes, which feed the cost router.

Label constraints take a hybrid approximate route: posting lists of rare
query labels are fetched up front (within a page budget) and merged into
an exact id list, while frequent labels fall back to per-vector Bloom
checks. Range constraints compare the vector's 1-byte bucket against the
query interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .attrdata import VectorAttrs
from .attrs import (
    BLOOM_BITS,
    BLOOM_HASHES,
    N_BUCKETS,
    AttributeIndexSet,
    bucket_overlap_mask,
    lookup_postings,
    scan_range,
    selectivity_from_quantiles,
)
from .pagestore import PAGE_SIZE, IoCounters

DEFAULT_PREPARE_BUDGET_PAGES = 16

SELECTIVITY_FLOOR = 1e-6
PRECISION_FLOOR = 1e-2

# Children of an And are skipped in the batched scan only when they are
# this unselective and a sibling this selective stays to anchor the scan.
AND_PRUNE_THRESHOLD = 0.1
AND_ANCHOR_THRESHOLD = 0.05


@dataclass
class QueryAttrs:
    """Flat view of a query's attribute constraints."""

    labels: np.ndarray
    range: tuple[float, float] | None


@dataclass
class FilterEstimate:
    """Estimated selectivity plus the precision of each approximate route."""

    selectivity: float
    precision_pre: float
    precision_in: float


class Selector:
    """Base filter node; concrete kinds implement the evaluation hooks."""

    def is_member(self, attrs: VectorAttrs) -> bool:
        raise NotImplementedError

    def query_attrs(self) -> QueryAttrs:
        labels: list = []
        rng = [None]

        def walk(node):
            if isinstance(node, (LabelAndSelector, LabelOrSelector)):
                labels.extend(node.labels.tolist())
            elif isinstance(node, RangeSelector):
                rng[0] = (node.lo, node.hi)
            else:
                for c in node.children:
                    walk(c)

        walk(self)
        return QueryAttrs(labels=np.unique(np.asarray(labels, dtype=np.int64)),
                          range=rng[0])


@dataclass
class LabelAndSelector(Selector):
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.unique(np.asarray(self.labels, dtype=np.int64))

    def is_member(self, attrs: VectorAttrs) -> bool:
        return bool(np.isin(self.labels, attrs.labels).all())


@dataclass
class LabelOrSelector(Selector):
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.unique(np.asarray(self.labels, dtype=np.int64))

    def is_member(self, attrs: VectorAttrs) -> bool:
        return bool(np.isin(self.labels, attrs.labels).any())


@dataclass
class RangeSelector(Selector):
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"invalid range [{self.lo}, {self.hi})")

    def is_member(self, attrs: VectorAttrs) -> bool:
        return self.lo <= attrs.value < self.hi


@dataclass
class AndSelector(Selector):
    children: list

    def is_member(self, attrs: VectorAttrs) -> bool:
        return all(c.is_member(attrs) for c in self.children)


@dataclass
class OrSelector(Selector):
    children: list

    def is_member(self, attrs: VectorAttrs) -> bool:
        return any(c.is_member(attrs) for c in self.children)


def is_member(sel: Selector, attrs: VectorAttrs) -> bool:
    """Exact membership of a vector's decoded attributes."""
    return sel.is_member(attrs)


# ---------------------------------------------------------------------------
# Query preparation and approximate membership


@dataclass
class _LabelPlan:
    """Rare/frequent split of every label in the query, budget applied."""

    rare: dict  # label -> predicted posting pages
    frequent: set
    pages: int  # total predicted pages for the rare fetches


def _plan_labels(sel: Selector, idx: AttributeIndexSet, budget_pages: int) -> _LabelPlan:
    labels = sel.query_attrs().labels
    if budget_pages <= 0:
        return _LabelPlan(rare={}, frequent=set(labels.tolist()), pages=0)
    freqs = idx.stats.counts[labels]
    order = np.lexsort((labels, freqs))
    remaining = budget_pages
    rare: dict = {}
    frequent: set = set()
    for pos in order:
        label = int(labels[pos])
        pages = idx.labels.posting_pages(label)
        if pages <= remaining:
            rare[label] = pages
            remaining -= pages
        else:
            frequent.add(label)
    return _LabelPlan(rare=rare, frequent=frequent, pages=budget_pages - remaining)


class _PreparedNode:
    def test_many(self, ids: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class _PreparedLabel(_PreparedNode):
    def __init__(self, merged: np.ndarray | None, frequent: list, bloom, is_and: bool):
        self.merged = merged  # None means no rare labels constrain the test
        self.frequent = frequent
        self.bloom = bloom
        self.is_and = is_and

    def _in_merged(self, ids: np.ndarray) -> np.ndarray:
        if self.merged.size == 0:
            return np.zeros(ids.size, dtype=bool)
        pos = np.searchsorted(self.merged, ids)
        pos = np.minimum(pos, self.merged.size - 1)
        return self.merged[pos] == ids

    def test_many(self, ids: np.ndarray) -> np.ndarray:
        if self.is_and:
            mask = (
                np.ones(ids.size, dtype=bool)
                if self.merged is None
                else self._in_merged(ids)
            )
            for label in self.frequent:
                if not mask.any():
                    break
                mask &= self.bloom.might_contain_many(ids, label)
            return mask
        mask = (
            np.zeros(ids.size, dtype=bool)
            if self.merged is None
            else self._in_merged(ids)
        )
        for label in self.frequent:
            if mask.all():
                break
            mask |= self.bloom.might_contain_many(ids, label)
        return mask


class _PreparedRange(_PreparedNode):
    def __init__(self, overlap: np.ndarray, bucket_codes: np.ndarray):
        self.overlap = overlap
        self.bucket_codes = bucket_codes

    def test_many(self, ids: np.ndarray) -> np.ndarray:
        return self.overlap[self.bucket_codes[ids]]


class _PreparedBool(_PreparedNode):
    def __init__(self, children: list, is_and: bool):
        self.children = children
        self.is_and = is_and

    def test_many(self, ids: np.ndarray) -> np.ndarray:
        it = iter(self.children)
        mask = next(it).test_many(ids)
        for child in it:
            if self.is_and:
                mask = mask & child.test_many(ids)
            else:
                mask = mask | child.test_many(ids)
        return mask


@dataclass
class PreparedQuery:
    """Per-query state for approximate membership: merged rare-label lists,
    the frequent-label fallback set, and range bucket overlaps."""

    selector: Selector
    root: _PreparedNode
    scan_pages: int  # pages spent fetching rare posting lists

    def test(self, v: int, ctr: IoCounters | None = None) -> bool:
        if ctr is not None:
            ctr.approx_checks += 1
        return bool(self.root.test_many(np.asarray([v]))[0])

    def test_many(self, ids: np.ndarray, ctr: IoCounters | None = None) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size == 0:
            return np.zeros(0, dtype=bool)
        if ctr is not None:
            ctr.approx_checks += int(ids.size)
        return self.root.test_many(ids)


def prepare_query(
    sel: Selector,
    idx: AttributeIndexSet,
    io_budget_pages: int = DEFAULT_PREPARE_BUDGET_PAGES,
    ctr: IoCounters | None = None,
) -> PreparedQuery:
    """Fetch rare posting lists within the page budget and build the
    in-memory test tree used by approximate membership."""
    ctr = ctr if ctr is not None else IoCounters()
    plan = _plan_labels(sel, idx, io_budget_pages)
    before = ctr.pages_read
    postings = {
        label: lookup_postings(idx.labels, label, ctr) for label in sorted(plan.rare)
    }
    spent = ctr.pages_read - before

    def build(node: Selector) -> _PreparedNode:
        if isinstance(node, (LabelAndSelector, LabelOrSelector)):
            is_and = isinstance(node, LabelAndSelector)
            rare = [int(l) for l in node.labels if int(l) in plan.rare]
            frequent = [int(l) for l in node.labels if int(l) in plan.frequent]
            merged = None
            if rare:
                merged = postings[rare[0]]
                for label in rare[1:]:
                    if is_and:
                        merged = np.intersect1d(merged, postings[label])
                    else:
                        merged = np.union1d(merged, postings[label])
            return _PreparedLabel(merged, frequent, idx.bloom, is_and)
        if isinstance(node, RangeSelector):
            overlap = bucket_overlap_mask(idx.ranges, node.lo, node.hi)
            return _PreparedRange(overlap, idx.ranges.bucket_codes)
        if isinstance(node, AndSelector):
            return _PreparedBool([build(c) for c in node.children], is_and=True)
        if isinstance(node, OrSelector):
            return _PreparedBool([build(c) for c in node.children], is_and=False)
        raise TypeError(f"unknown selector {type(node)!r}")

    return PreparedQuery(selector=sel, root=build(sel), scan_pages=spent)


def is_member_approx(
    sel: Selector, v: int, prepared: PreparedQuery, ctr: IoCounters | None = None
) -> bool:
    """Superset membership from in-memory state only; never falsely negative."""
    if prepared.selector is not sel:
        raise ValueError("prepared query belongs to a different selector")
    return prepared.test(v, ctr)


# ---------------------------------------------------------------------------
# Batched superset scan (pre-filtering route)


def _and_keep_mask(selectivities: list[float]) -> list[bool]:
    """Which And children stay in the batched scan under the prune rule."""
    if not selectivities:
        return []
    if min(selectivities) >= AND_ANCHOR_THRESHOLD:
        return [True] * len(selectivities)
    return [s <= AND_PRUNE_THRESHOLD for s in selectivities]


def pre_filter_approx(
    sel: Selector, idx: AttributeIndexSet, ctr: IoCounters
) -> np.ndarray:
    """Scan the on-disk attribute indexes for a superset of valid ids.

    Or branches are always scanned (skipping one would drop valid ids);
    unselective And branches are skipped and left to exact verification.
    """
    if isinstance(sel, LabelOrSelector):
        lists = [lookup_postings(idx.labels, int(l), ctr) for l in sel.labels]
        return _union_all(lists)
    if isinstance(sel, LabelAndSelector):
        sels = [idx.stats.selectivity(int(l)) for l in sel.labels]
        keep = _and_keep_mask(sels)
        lists = [
            lookup_postings(idx.labels, int(l), ctr)
            for l, k in zip(sel.labels, keep)
            if k
        ]
        return _intersect_all(lists)
    if isinstance(sel, RangeSelector):
        return scan_range(idx.ranges, sel.lo, sel.hi, ctr)
    if isinstance(sel, AndSelector):
        sels = [estimate_filter(c, idx).selectivity for c in sel.children]
        keep = _and_keep_mask(sels)
        lists = [
            pre_filter_approx(c, idx, ctr)
            for c, k in zip(sel.children, keep)
            if k
        ]
        return _intersect_all(lists)
    if isinstance(sel, OrSelector):
        return _union_all([pre_filter_approx(c, idx, ctr) for c in sel.children])
    raise TypeError(f"unknown selector {type(sel)!r}")


def _union_all(lists: list) -> np.ndarray:
    if not lists:
        return np.empty(0, dtype=np.int64)
    return np.unique(np.concatenate(lists))


def _intersect_all(lists: list) -> np.ndarray:
    if not lists:
        return np.empty(0, dtype=np.int64)
    out = lists[0]
    for arr in lists[1:]:
        out = np.intersect1d(out, arr, assume_unique=True)
    return out


def predict_prepare_pages(
    sel: Selector,
    idx: AttributeIndexSet,
    io_budget_pages: int = DEFAULT_PREPARE_BUDGET_PAGES,
) -> int:
    """Pages prepare_query would spend on rare postings, before any read."""
    return _plan_labels(sel, idx, io_budget_pages).pages


def predict_scan_pages(sel: Selector, idx: AttributeIndexSet) -> int:
    """Pages a batched scan would read, from directory arithmetic alone."""
    if isinstance(sel, LabelOrSelector):
        return sum(idx.labels.posting_pages(int(l)) for l in sel.labels)
    if isinstance(sel, LabelAndSelector):
        sels = [idx.stats.selectivity(int(l)) for l in sel.labels]
        keep = _and_keep_mask(sels)
        return sum(
            idx.labels.posting_pages(int(l))
            for l, k in zip(sel.labels, keep)
            if k
        )
    if isinstance(sel, RangeSelector):
        est = selectivity_from_quantiles(idx.ranges, sel.lo, sel.hi)
        return math.ceil(8 * est * idx.n_vectors / PAGE_SIZE) + 2
    if isinstance(sel, AndSelector):
        sels = [estimate_filter(c, idx).selectivity for c in sel.children]
        keep = _and_keep_mask(sels)
        return sum(
            predict_scan_pages(c, idx) for c, k in zip(sel.children, keep) if k
        )
    if isinstance(sel, OrSelector):
        return sum(predict_scan_pages(c, idx) for c in sel.children)
    raise TypeError(f"unknown selector {type(sel)!r}")


# ---------------------------------------------------------------------------
# Selectivity and precision estimation


def _bloom_fp_rate(idx: AttributeIndexSet) -> float:
    """Analytic per-label false-positive rate at the corpus's mean label
    count: (1 - e^(-k*n/m))^k."""
    mean_labels = float(idx.stats.counts.sum()) / max(1, idx.n_vectors)
    return (1.0 - math.exp(-BLOOM_HASHES * mean_labels / BLOOM_BITS)) ** BLOOM_HASHES


def _clamp_s(s: float) -> float:
    return min(1.0, max(SELECTIVITY_FLOOR, s))


def _clamp_p(p: float) -> float:
    return min(1.0, max(PRECISION_FLOOR, p))


def estimate_filter(
    sel: Selector,
    idx: AttributeIndexSet,
    io_budget_pages: int = DEFAULT_PREPARE_BUDGET_PAGES,
) -> FilterEstimate:
    """Selectivity and precision estimates assuming independent attributes.

    Label selectivities come from stored counts, range selectivity from the
    quantile summary; Bloom false positives use the analytic rate at the
    corpus's mean labels per vector.
    """
    plan = _plan_labels(sel, idx, io_budget_pages)
    f_bloom = _bloom_fp_rate(idx)

    def walk(node: Selector) -> FilterEstimate:
        if isinstance(node, LabelOrSelector):
            sels = [idx.stats.selectivity(int(l)) for l in node.labels]
            s = 1.0 - math.prod(1.0 - x for x in sels)
            n_freq = sum(1 for l in node.labels if int(l) in plan.frequent)
            f_or = 1.0 - (1.0 - f_bloom) ** n_freq
            approx = s + (1.0 - s) * f_or
            p_in = s / approx if approx > 0 else 1.0
            return FilterEstimate(_clamp_s(s), 1.0, _clamp_p(p_in))
        if isinstance(node, LabelAndSelector):
            sels = [idx.stats.selectivity(int(l)) for l in node.labels]
            s = math.prod(sels) if sels else 1.0
            approx = 1.0
            for l, sl in zip(node.labels, sels):
                if int(l) in plan.frequent:
                    approx *= sl + (1.0 - sl) * f_bloom
                else:
                    approx *= sl
            p_in = s / approx if approx > 0 else 1.0
            keep = _and_keep_mask(sels)
            returned = math.prod(
                sl for sl, k in zip(sels, keep) if k
            ) if sels else 1.0
            p_pre = s / returned if returned > 0 else 1.0
            return FilterEstimate(_clamp_s(s), _clamp_p(p_pre), _clamp_p(p_in))
        if isinstance(node, RangeSelector):
            s = selectivity_from_quantiles(idx.ranges, node.lo, node.hi)
            n_overlap = int(bucket_overlap_mask(idx.ranges, node.lo, node.hi).sum())
            s_bucket = n_overlap / N_BUCKETS
            p_in = s / s_bucket if s_bucket > 0 else 1.0
            return FilterEstimate(_clamp_s(s), 1.0, _clamp_p(p_in))
        if isinstance(node, AndSelector):
            parts = [walk(c) for c in node.children]
            s = math.prod(p.selectivity for p in parts)
            p_in = math.prod(p.precision_in for p in parts)
            keep = _and_keep_mask([p.selectivity for p in parts])
            returned = math.prod(
                p.selectivity / p.precision_pre
                for p, k in zip(parts, keep)
                if k
            )
            p_pre = s / returned if returned > 0 else 1.0
            return FilterEstimate(_clamp_s(s), _clamp_p(p_pre), _clamp_p(p_in))
        if isinstance(node, OrSelector):
            parts = [walk(c) for c in node.children]
            s = 1.0 - math.prod(1.0 - p.selectivity for p in parts)
            approx_in = 1.0 - math.prod(
                1.0 - min(1.0, p.selectivity / p.precision_in) for p in parts
            )
            approx_pre = 1.0 - math.prod(
                1.0 - min(1.0, p.selectivity / p.precision_pre) for p in parts
            )
            p_in = s / approx_in if approx_in > 0 else 1.0
            p_pre = s / approx_pre if approx_pre > 0 else 1.0
            return FilterEstimate(_clamp_s(s), _clamp_p(p_pre), _clamp_p(p_in))
        raise TypeError(f"unknown selector {type(node)!r}")

    return walk(sel)


# ---------------------------------------------------------------------------
# Wire format: prefix expressions like and(labelor(3,17),range(0.2,0.5))


def parse_selector(text: str) -> Selector:
    """Parse the one-line query grammar into a selector tree."""
    expr, rest = _parse_expr(text.strip(), 0)
    if rest != len(text.strip()):
        raise ValueError(f"trailing input in selector expression: {text!r}")
    return expr


def _parse_expr(text: str, pos: int) -> tuple[Selector, int]:
    for name in ("labeland", "labelor", "range", "and", "or"):
        if text.startswith(name + "(", pos):
            break
    else:
        raise ValueError(f"expected a selector at {text[pos:pos + 20]!r}")
    pos += len(name) + 1
    if name in ("labeland", "labelor"):
        end = text.index(")", pos)
        ids = [int(t) for t in text[pos:end].split(",") if t.strip()]
        if not ids:
            raise ValueError("label selector needs at least one label id")
        node = (LabelAndSelector if name == "labeland" else LabelOrSelector)(
            np.asarray(ids)
        )
        return node, end + 1
    if name == "range":
        end = text.index(")", pos)
        lo_s, hi_s = text[pos:end].split(",")
        return RangeSelector(float(lo_s), float(hi_s)), end + 1
    children = []
    while True:
        child, pos = _parse_expr(text, pos)
        children.append(child)
        if pos >= len(text):
            raise ValueError("unterminated boolean selector")
        if text[pos] == ",":
            pos += 1
            continue
        if text[pos] == ")":
            return (AndSelector if name == "and" else OrSelector)(children), pos + 1
        raise ValueError(f"unexpected character {text[pos]!r} in selector")


def selector_to_expr(sel: Selector) -> str:
    """Serialize a selector tree back to the one-line grammar."""
    if isinstance(sel, LabelAndSelector):
        return "labeland(" + ",".join(str(int(l)) for l in sel.labels) + ")"
    if isinstance(sel, LabelOrSelector):
        return "labelor(" + ",".join(str(int(l)) for l in sel.labels) + ")"
    if isinstance(sel, RangeSelector):
        return f"range({sel.lo!r},{sel.hi!r})"
    if isinstance(sel, AndSelector):
        return "and(" + ",".join(selector_to_expr(c) for c in sel.children) + ")"
    if isinstance(sel, OrSelector):
        return "or(" + ",".join(selector_to_expr(c) for c in sel.children) + ")"
    raise TypeError(f"unknown selector {type(sel)!r}")
