"""Composable filters: exact membership, superset membership, estimates.

A selector tree wires label and range constraints through AND/OR. Each
tree can be evaluated exactly (from record attributes), approximately
(from in-memory sketches, superset-only error), or as a batched index
scan; it also predicts its own selectivity and precision for the router.
"""

import tempfile

import numpy as np

from spfann import VectorAttrs, build_attr_indexes, estimate_filter, parse_selector
from spfann.pagestore import IoCounters
from spfann.selectors import pre_filter_approx, prepare_query, selector_to_expr

rng = np.random.default_rng(11)
n, vocab = 20_000, 300
probs = np.arange(1, vocab + 1, dtype=np.float64) ** -1.0
probs /= probs.sum()
attrs = []
for i in range(n):
    labels = np.unique(rng.choice(vocab, size=max(1, rng.poisson(3)), p=probs))
    attrs.append(VectorAttrs(labels=labels, value=float(rng.uniform())))
idx = build_attr_indexes(attrs, vocab, seed=5, out_dir=tempfile.mkdtemp())

expr = "and(labelor(3,17),range(0.2,0.5))"
sel = parse_selector(expr)
print(f"query: {selector_to_expr(sel)}")

exact = np.asarray([sel.is_member(a) for a in attrs])
print(f"exact matches: {int(exact.sum())} of {n} "
      f"(selectivity {exact.mean():.4f})")

est = estimate_filter(sel, idx)
print(f"estimated selectivity {est.selectivity:.4f}, "
      f"in-filter precision {est.precision_in:.3f}, "
      f"pre-scan precision {est.precision_pre:.3f}")

ctr = IoCounters()
prepared = prepare_query(sel, idx, io_budget_pages=16, ctr=ctr)
approx = prepared.test_many(np.arange(n))
fp = int((approx & ~exact).sum())
fn = int((exact & ~approx).sum())
print(f"\napproximate membership: {int(approx.sum())} positives, "
      f"{fp} false positives, {fn} false negatives "
      f"({ctr.pages_read} pages spent on rare posting lists)")

ctr = IoCounters()
superset = pre_filter_approx(sel, idx, ctr)
missing = np.setdiff1d(np.flatnonzero(exact), superset)
print(f"batched scan: {superset.size} candidate ids in {ctr.pages_read} "
      f"pages, {missing.size} true matches missing")
idx.close()
