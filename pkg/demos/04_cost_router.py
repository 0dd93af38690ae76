"""The routing crossover: which mechanism wins at which selectivity.

Sweeps selectivity through the per-mechanism cost estimates at the default
graph geometry and prints the weighted totals plus the winner. Rare
filters go to the batched pre-scan, the broad ones to attribute-blind
post-filtering, the middle band to speculative in-filtering.
"""

import numpy as np

from spfann.costs import CostInputs, RouterConfig, route

cfg = RouterConfig()  # page read weighted 10x a distance computation
print(f"weights: io {cfg.io_weight:g}, compute {cfg.compute_weight:g}")
print(f"{'s':>8} {'total pre':>12} {'total in':>12} {'total post':>12}   chosen")

for s in (0.0002, 0.001, 0.005, 0.02, 0.1, 0.3, 0.6, 0.9):
    inputs = CostInputs(
        n_vectors=100_000,
        selectivity=s,
        precision_pre=1.0,
        precision_in=0.85,
        scan_pages_pre=max(1.0, s * 100_000 * 4 / 4096),
        scan_pages_in=min(16.0, s * 100_000 * 4 / 4096),
        pool_len=100,
        max_degree=32,
        dense_degree=640,
        base_pages=1,
        full_pages=2,
    )
    decision = route(inputs, cfg)
    totals = decision.totals(cfg)
    print(f"{s:>8g} {totals['pre']:>12.0f} {totals['in']:>12.0f} "
          f"{totals['post']:>12.0f}   {decision.chosen}")

print("\nthe in-filter estimate switches regimes once the expected "
      "approximately-valid neighbors per node exceed the degree cap;")
print("below that point false positives ride along as free bridge edges")
