"""
Equity-scaled Dice on a toy evaluation
======================================

Overall Dice hides how unevenly a model serves different groups. The
equity-scaled score divides it by one plus the spread of the group means.
"""

import numpy as np

from fairseg.core import AttributeRecord, GroupPartition, LabelMask
from fairseg.metrics import equity_scaled, format_table, group_report, score_dataset

# Two models scored on six subjects, two per group.
records = [AttributeRecord(f"s{i}", race, "female", "hispanic", "english", "test")
           for i, race in enumerate(["asian", "asian", "black", "black", "white", "white"])]
partition = GroupPartition.from_records(records, "race")


def cup_mask(radius):
    yy, xx = np.mgrid[:32, :32]
    labels = np.where((yy - 16) ** 2 + (xx - 16) ** 2 <= radius**2, 2, 0)
    return LabelMask(labels.astype(np.uint8))


truth = [cup_mask(8) for _ in records]

# "even" misses a little on everyone; "skewed" is perfect except on one group.
# The skewed model wins on overall Dice but loses once the spread is charged.
even = [cup_mask(7) for _ in records]
skewed = [cup_mask(8), cup_mask(8), cup_mask(5), cup_mask(6), cup_mask(8), cup_mask(8)]

ids = [r.id for r in records]
for name, preds in [("even", even), ("skewed", skewed)]:
    scores = score_dataset(list(zip(ids, preds)), list(zip(ids, truth)), "cup")
    report = group_report(scores, partition)
    print(format_table([report], label=name))
    print()

# The scaling on its own: same overall, growing spread.
for spread in (0.0, 0.01, 0.05, 0.1):
    sd, es = equity_scaled(0.85, [0.85 - spread, 0.85, 0.85 + spread])
    print(f"spread {spread:.2f}  stdev {sd:.3f}  ES {es:.4f}")
