"""The in-memory attribute sketches and their one-sided error.

Five bytes per vector (a 32-bit Bloom filter over its labels plus a 1-byte
range bucket) answer "could this vector match?" with zero disk reads. The
answer may be wrongly yes, never wrongly no; exact verification happens
later, on record fetches the search pays for anyway.
"""

import tempfile

import numpy as np

from spfann import VectorAttrs, build_attr_indexes
from spfann.attrs import bucket_overlap_mask, lookup_postings, scan_range
from spfann.pagestore import IoCounters

rng = np.random.default_rng(7)
n, vocab = 20_000, 500
attrs = []
for i in range(n):
    labels = np.unique(rng.choice(vocab, size=max(1, rng.poisson(3))))
    attrs.append(VectorAttrs(labels=labels, value=float(rng.uniform())))

workdir = tempfile.mkdtemp()
idx = build_attr_indexes(attrs, vocab, seed=3, out_dir=workdir)
mem = idx.memory_bytes()
print(f"in-memory: bloom {mem['bloom']} B + buckets {mem['bucket_codes']} B "
      f"= {(mem['bloom'] + mem['bucket_codes']) / n:.1f} bytes/vector")

# Bloom: never a false negative, occasionally a false positive.
label = 42
truly_has = lookup_postings(idx.labels, label, IoCounters())
hits = np.flatnonzero(idx.bloom.might_contain_many(np.arange(n), label))
print(f"\nlabel {label}: {truly_has.size} true members, "
      f"{hits.size} bloom positives "
      f"(missed: {np.setdiff1d(truly_has, hits).size})")

# Buckets: a range query maps to overlapping buckets; every true match's
# bucket overlaps.
lo, hi = 0.30, 0.33
mask = bucket_overlap_mask(idx.ranges, lo, hi)
values = np.asarray([a.value for a in attrs])
valid = np.flatnonzero((values >= lo) & (values < hi))
bucket_pass = mask[idx.ranges.bucket_codes]
print(f"\nrange [{lo}, {hi}): {valid.size} true matches, "
      f"{int(bucket_pass.sum())} bucket positives "
      f"(missed: {int((~bucket_pass[valid]).sum())})")

# The on-disk side is exact and counts its pages.
ctr = IoCounters()
ids = scan_range(idx.ranges, lo, hi, ctr)
print(f"\nexact disk scan returned {ids.size} ids using {ctr.pages_read} "
      f"pages of the sorted array")
idx.close()
