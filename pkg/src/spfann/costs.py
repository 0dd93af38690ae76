"""Per-mechanism cost estimates and the routing decision.

Each filtering mechanism gets a predicted page-read count and a predicted
compute count (in distance-computation units). Two scaling principles
drive the estimates: finding enough valid results among a fraction s of
the corpus inflates work by 1/s, and a filter precision p inflates the
candidate pool to 1/p of its nominal size. In-filtering splits into two
regimes: while the expected approximately-valid neighbors per node fit
under the graph degree, false positives ride along as connectivity bridges
and cost nothing extra; past that point they consume pool slots.

The route minimizes a weighted sum of the two costs. The default weights
charge a page read ten times a distance computation.
"""

from __future__ import annotations

from dataclasses import dataclass

DEFAULT_IO_WEIGHT = 10.0
DEFAULT_COMPUTE_WEIGHT = 1.0
DEFAULT_APPROX_CHECK_COST = 0.05

MECH_PRE = "pre"
MECH_IN_LOW = "in_low"
MECH_IN_HIGH = "in_high"
MECH_POST = "post"


@dataclass
class RouterConfig:
    io_weight: float = DEFAULT_IO_WEIGHT
    compute_weight: float = DEFAULT_COMPUTE_WEIGHT

    def validate(self) -> None:
        if self.io_weight < 0 or self.compute_weight < 0:
            raise ValueError("cost weights must be non-negative")


@dataclass
class CostInputs:
    """Everything the estimators need, already resolved to numbers."""

    n_vectors: int
    selectivity: float
    precision_pre: float
    precision_in: float
    scan_pages_pre: float
    scan_pages_in: float
    pool_len: int
    max_degree: int
    dense_degree: int
    base_pages: int
    full_pages: int
    approx_check_cost: float = DEFAULT_APPROX_CHECK_COST


@dataclass
class CostEstimate:
    mechanism: str
    est_io_pages: float
    est_compute: float

    def total(self, cfg: RouterConfig) -> float:
        return cfg.io_weight * self.est_io_pages + cfg.compute_weight * self.est_compute


def estimate_pre(inputs: CostInputs) -> CostEstimate:
    """Batched scan, in-memory brute force over the superset, then fetch
    pool/precision base records for re-ranking."""
    io = (
        inputs.scan_pages_pre
        + (inputs.pool_len / inputs.precision_pre) * inputs.base_pages
    )
    compute = inputs.selectivity * inputs.n_vectors / inputs.precision_pre
    return CostEstimate(MECH_PRE, io, compute)


def estimate_in(inputs: CostInputs) -> CostEstimate:
    """Speculative traversal over the densified graph, regime chosen by
    whether approximate-valid neighbors per node fit under the degree cap."""
    s = inputs.selectivity
    p = inputs.precision_in
    pool = inputs.pool_len
    gam = inputs.approx_check_cost
    if s * inputs.dense_degree / p <= inputs.max_degree:
        hops = (pool / s) * (inputs.max_degree / inputs.dense_degree)
        io = inputs.scan_pages_in + hops * inputs.full_pages
        compute = (hops + gam * (pool / s)) * inputs.max_degree
        return CostEstimate(MECH_IN_LOW, io, compute)
    io = inputs.scan_pages_in + (pool / p) * inputs.full_pages
    compute = (pool / p) * (inputs.max_degree + gam * inputs.dense_degree)
    return CostEstimate(MECH_IN_HIGH, io, compute)


def estimate_post(inputs: CostInputs) -> CostEstimate:
    """Unfiltered traversal stretched by 1/selectivity to surface enough
    valid results."""
    stretch = inputs.pool_len / inputs.selectivity
    return CostEstimate(MECH_POST, stretch * inputs.base_pages, stretch * inputs.max_degree)


@dataclass
class RouteDecision:
    chosen: str  # "pre", "in", or "post"
    pre: CostEstimate
    infilter: CostEstimate
    post: CostEstimate

    def totals(self, cfg: RouterConfig) -> dict:
        return {
            "pre": self.pre.total(cfg),
            "in": self.infilter.total(cfg),
            "post": self.post.total(cfg),
        }


def route(inputs: CostInputs, cfg: RouterConfig | None = None) -> RouteDecision:
    """Pick the cheapest mechanism; ties prefer pre, then in, then post,
    because exact scans verify more cheaply at equal predicted cost."""
    cfg = cfg if cfg is not None else RouterConfig()
    cfg.validate()
    pre = estimate_pre(inputs)
    infilter = estimate_in(inputs)
    post = estimate_post(inputs)
    ranked = [
        (pre.total(cfg), 0, "pre"),
        (infilter.total(cfg), 1, "in"),
        (post.total(cfg), 2, "post"),
    ]
    chosen = min(ranked)[2]
    return RouteDecision(chosen=chosen, pre=pre, infilter=infilter, post=post)
