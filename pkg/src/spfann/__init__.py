"""Disk-resident filtered ANN search with speculative filtering.

The search engine keeps its graph and attribute indexes on disk in
page-aligned files and answers filtered top-k queries by routing each one,
via an analytical cost model, to speculative pre-filtering, speculative
in-filtering, or post-filtering. Approximate membership comes from small
in-memory sketches (per-vector Bloom filters, quantized range buckets)
that never reject a valid vector; exact verification happens on the same
record reads re-ranking performs anyway.
"""

from .attrdata import VectorAttrs
from .attrs import AttributeIndexSet, build_attr_indexes, open_attr_indexes
from .costs import CostEstimate, CostInputs, RouteDecision, RouterConfig, route
from .engine import SearchIndex, SearchParams, SearchResult
from .errors import (
    BuildError,
    CorruptFileError,
    GenerationError,
    PageBoundsError,
    SpfannError,
    TrainingError,
)
from .graph import BuildParams, GraphMeta, NodeRecord
from .indexer import build_index
from .pagestore import IoCounters, PageFile
from .quantizer import PqCodebook, adc_distance, adc_table, encode, exact_distance, train_codebook
from .selectors import (
    AndSelector,
    FilterEstimate,
    LabelAndSelector,
    LabelOrSelector,
    OrSelector,
    PreparedQuery,
    RangeSelector,
    Selector,
    estimate_filter,
    is_member,
    is_member_approx,
    parse_selector,
    pre_filter_approx,
    prepare_query,
    selector_to_expr,
)

__all__ = [
    "AndSelector",
    "AttributeIndexSet",
    "BuildError",
    "BuildParams",
    "CorruptFileError",
    "CostEstimate",
    "CostInputs",
    "FilterEstimate",
    "GenerationError",
    "GraphMeta",
    "IoCounters",
    "LabelAndSelector",
    "LabelOrSelector",
    "NodeRecord",
    "OrSelector",
    "PageBoundsError",
    "PageFile",
    "PqCodebook",
    "PreparedQuery",
    "RangeSelector",
    "RouteDecision",
    "RouterConfig",
    "SearchIndex",
    "SearchParams",
    "SearchResult",
    "Selector",
    "SpfannError",
    "TrainingError",
    "VectorAttrs",
    "adc_distance",
    "adc_table",
    "build_attr_indexes",
    "build_index",
    "encode",
    "estimate_filter",
    "exact_distance",
    "is_member",
    "is_member_approx",
    "open_attr_indexes",
    "parse_selector",
    "pre_filter_approx",
    "prepare_query",
    "route",
    "selector_to_expr",
    "train_codebook",
]
