"""Hard-mask Dice/IoU, group-stratified aggregation and equity-scaled scores.

The equity-scaled version of a metric is the overall value divided by one
plus the sample standard deviation (ddof=1) of the per-group means.
"""

from __future__ import annotations

import csv
import io
import statistics
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import GroupPartition, LabelMask, derive_region

EVAL_REGIONS = ("cup", "rim")


@dataclass(frozen=True)
class SampleScore:
    id: str
    region: str
    dice: float
    iou: float


@dataclass(frozen=True)
class GroupStats:
    group: str
    mean_dice: float
    mean_iou: float
    n: int


@dataclass(frozen=True)
class GroupedReport:
    region: str
    attribute: str
    overall_dice: float
    overall_iou: float
    per_group: tuple[GroupStats, ...]
    stdev_dice: float
    stdev_iou: float
    es_dice: float
    es_iou: float

    def columns(self) -> list[tuple[str, float]]:
        """(header, value) pairs in the published table order."""
        cols = [
            ("Overall ES-Dice", self.es_dice),
            ("Overall Dice", self.overall_dice),
            ("Overall ES-IoU", self.es_iou),
            ("Overall IoU", self.overall_iou),
        ]
        cols += [(f"{g.group} Dice", g.mean_dice) for g in self.per_group]
        cols += [(f"{g.group} IoU", g.mean_iou) for g in self.per_group]
        return cols


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: prediction {pred.shape} vs ground truth {gt.shape}")
    return pred, gt


def dice_hard(pred, gt, both_empty: float = 1.0, one_empty: float = 0.0) -> float:
    pred, gt = _check_pair(pred, gt)
    p, g = int(pred.sum()), int(gt.sum())
    if p == 0 and g == 0:
        return both_empty
    if p == 0 or g == 0:
        return one_empty
    return 2.0 * int(np.count_nonzero(pred & gt)) / (p + g)


def iou_hard(pred, gt, both_empty: float = 1.0, one_empty: float = 0.0) -> float:
    pred, gt = _check_pair(pred, gt)
    p, g = int(pred.sum()), int(gt.sum())
    if p == 0 and g == 0:
        return both_empty
    if p == 0 or g == 0:
        return one_empty
    return int(np.count_nonzero(pred & gt)) / int(np.count_nonzero(pred | gt))


def score_dataset(
    preds: Sequence[tuple[str, LabelMask]],
    gts: Sequence[tuple[str, LabelMask]],
    region: str,
    both_empty: float = 1.0,
    one_empty: float = 0.0,
) -> list[SampleScore]:
    """Per-sample scores for ``region``; both inputs are ``(id, mask)`` pairs in matching order."""
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions for {len(gts)} ground-truth masks")
    scores = []
    for (pid, pred), (gid, gt) in zip(preds, gts):
        if pid != gid:
            raise ValueError(f"sample id mismatch: prediction {pid!r} vs ground truth {gid!r}")
        p = derive_region(pred, region)
        g = derive_region(gt, region)
        scores.append(
            SampleScore(
                pid,
                region,
                dice_hard(p, g, both_empty, one_empty),
                iou_hard(p, g, both_empty, one_empty),
            )
        )
    return scores


def equity_scaled(overall: float, group_values: Iterable[float]) -> tuple[float, float]:
    """Return ``(stdev, overall / (1 + stdev))`` over per-group values."""
    values = [float(v) for v in group_values]
    if len(values) < 2:
        raise ValueError("group standard deviation needs at least 2 non-empty groups")
    stdev = statistics.stdev(values)
    return stdev, overall / (1.0 + stdev)


def _mean(values: list[float]) -> float:
    # exact rational mean: independent of sample order, and exact for equal values
    return statistics.mean(values) if values else float("nan")


def group_report(
    scores: Sequence[SampleScore],
    partition: GroupPartition,
    single_group: bool = False,
) -> GroupedReport:
    """Overall, per-group and equity-scaled Dice/IoU for one region.

    With fewer than two non-empty groups the standard deviation is undefined
    and a ``ValueError`` is raised, unless ``single_group`` is set, in which
    case the stdev is taken as 0.
    """
    if not scores:
        raise ValueError("no scores to aggregate")
    regions = {s.region for s in scores}
    if len(regions) != 1:
        raise ValueError(f"scores mix regions {sorted(regions)}")
    dice_by_group: list[list[float]] = [[] for _ in partition.groups]
    iou_by_group: list[list[float]] = [[] for _ in partition.groups]
    for s in scores:
        k = partition.group_of(s.id)
        dice_by_group[k].append(s.dice)
        iou_by_group[k].append(s.iou)

    per_group = tuple(
        GroupStats(name, _mean(d), _mean(i), len(d))
        for name, d, i in zip(partition.groups, dice_by_group, iou_by_group)
    )
    overall_dice = _mean([s.dice for s in scores])
    overall_iou = _mean([s.iou for s in scores])
    present = [g for g in per_group if g.n > 0]
    if len(present) < 2:
        if not single_group:
            raise ValueError(
                f"only {len(present)} non-empty group(s) for {partition.attribute!r}; "
                "stdev is undefined (use single_group=True to score without equity scaling)"
            )
        sd_dice = sd_iou = 0.0
        es_dice, es_iou = overall_dice, overall_iou
    else:
        sd_dice, es_dice = equity_scaled(overall_dice, [g.mean_dice for g in present])
        sd_iou, es_iou = equity_scaled(overall_iou, [g.mean_iou for g in present])
    return GroupedReport(
        region=regions.pop(),
        attribute=partition.attribute,
        overall_dice=overall_dice,
        overall_iou=overall_iou,
        per_group=per_group,
        stdev_dice=sd_dice,
        stdev_iou=sd_iou,
        es_dice=es_dice,
        es_iou=es_iou,
    )


def reports_to_csv(reports: Sequence[GroupedReport]) -> str:
    """Long-format CSV: one row per (region, column)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["region", "attribute", "column", "value"])
    for rep in reports:
        for name, value in rep.columns():
            writer.writerow([rep.region, rep.attribute, name, f"{value:.6f}"])
        writer.writerow([rep.region, rep.attribute, "Stdev Dice", f"{rep.stdev_dice:.6f}"])
        writer.writerow([rep.region, rep.attribute, "Stdev IoU", f"{rep.stdev_iou:.6f}"])
    return buf.getvalue()


def format_table(reports: Sequence[GroupedReport], label: str = "") -> str:
    """Aligned text table, one row per region, in the published column order."""
    if not reports:
        return ""
    headers = ["Region", "Method"] + [name for name, _ in reports[0].columns()]
    rows = [
        [rep.region.capitalize(), label or "-"] + [f"{v:.4f}" for _, v in rep.columns()]
        for rep in reports
    ]
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows]
    return "\n".join(lines) + "\n"
