"""
The synthetic fundus benchmark
==============================

Discs and cups are ellipses on a noisy background. One group gets larger
cups and lower contrast, which makes it the hard case for a segmenter.
"""

from collections import Counter

import numpy as np

from fairseg.core import vertical_cdr
from fairseg.synth import SynthConfig, generate

cfg = SynthConfig(n_samples=300, seed=1)
images, masks, records = generate(cfg)

print("groups:", dict(Counter(r.race for r in records)))
print("splits:", dict(Counter(r.split for r in records)))

for race in ("asian", "black", "white"):
    idx = [i for i, r in enumerate(records) if r.race == race]
    cdr = [vertical_cdr(masks[i]) for i in idx]
    cup_intensity = [images[i][masks[i].labels == 2].mean() for i in idx]
    print(f"{race:6s} mean CDR {np.mean(cdr):.3f}  mean cup intensity {np.mean(cup_intensity):.3f}")

# A text rendering of one mask: '.' background, 'o' rim, '#' cup.
labels = masks[0].labels
rows, cols = np.nonzero(labels)
mask = labels[rows.min() - 2 : rows.max() + 3 : 2, cols.min() - 2 : cols.max() + 3]
print("\n".join("".join(".o#"[v] for v in row) for row in mask))
