"""Cross-run comparison tables with stratified bootstrap intervals on ES-Dice."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import GroupPartition
from .metrics import GroupedReport, SampleScore, group_report


@dataclass(frozen=True)
class ComparisonRow:
    run: str
    region: str
    report: GroupedReport
    ci_low: float | None = None
    ci_high: float | None = None


def bootstrap_es_dice(
    scores: Sequence[SampleScore],
    partition: GroupPartition,
    n_boot: int,
    seed: int,
    alpha: float = 0.05,
) -> tuple[float, float]:
    """Percentile interval of ES-Dice over subject resamples.

    Subjects are resampled with replacement within each group, so every
    replicate keeps the observed group sizes and the stdev stays defined.
    """
    if n_boot < 1:
        raise ValueError("n_boot must be positive")
    rng = np.random.default_rng(seed)
    by_group: dict[int, list[SampleScore]] = {}
    for s in scores:
        by_group.setdefault(partition.group_of(s.id), []).append(s)
    strata = [by_group[k] for k in sorted(by_group)]
    stats = np.empty(n_boot)
    for b in range(n_boot):
        sample, members = [], {}
        for k, stratum in zip(sorted(by_group), strata):
            for i in rng.integers(0, len(stratum), size=len(stratum)):
                # a subject drawn twice needs two distinct ids
                sid = f"{len(sample)}"
                sample.append(SampleScore(sid, stratum[i].region, stratum[i].dice, stratum[i].iou))
                members[sid] = k
        boot_partition = GroupPartition(partition.attribute, partition.groups, members)
        stats[b] = group_report(sample, boot_partition).es_dice
    lo, hi = np.quantile(stats, [alpha / 2, 1 - alpha / 2])
    return float(lo), float(hi)


def compare(
    runs: Sequence[tuple[str, dict[str, list[SampleScore]]]],
    partition: GroupPartition,
    n_boot: int = 0,
    seed: int = 0,
) -> list[ComparisonRow]:
    """One row per (run, region). Each run is ``(label, {region: scores})``."""
    rows = []
    for label, per_region in runs:
        for r_index, (region, scores) in enumerate(sorted(per_region.items())):
            rep = group_report(scores, partition)
            lo = hi = None
            if n_boot > 0:
                # same stream for every run, so duplicated runs give identical rows
                lo, hi = bootstrap_es_dice(scores, partition, n_boot, seed=hash_seed(seed, r_index))
            rows.append(ComparisonRow(label, region, rep, lo, hi))
    return rows


def hash_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _fmt(v: float | None) -> str:
    return "" if v is None else f"{v:.4f}"


def comparison_csv(rows: Sequence[ComparisonRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["run", "region", "es_dice", "dice", "es_iou", "iou", "stdev_dice", "es_dice_ci_low", "es_dice_ci_high"])
    for row in rows:
        r = row.report
        writer.writerow(
            [row.run, row.region]
            + [f"{v:.6f}" for v in (r.es_dice, r.overall_dice, r.es_iou, r.overall_iou, r.stdev_dice)]
            + ["" if row.ci_low is None else f"{row.ci_low:.6f}", "" if row.ci_high is None else f"{row.ci_high:.6f}"]
        )
    return buf.getvalue()


def comparison_table(rows: Sequence[ComparisonRow]) -> str:
    with_ci = any(r.ci_low is not None for r in rows)
    headers = ["Region", "Run", "ES-Dice", "Dice", "ES-IoU", "IoU", "Stdev Dice"]
    if with_ci:
        headers.append("ES-Dice 95% CI")
    body = []
    for row in rows:
        r = row.report
        cells = [row.region.capitalize(), row.run] + [
            f"{v:.4f}" for v in (r.es_dice, r.overall_dice, r.es_iou, r.overall_iou, r.stdev_dice)
        ]
        if with_ci:
            cells.append("" if row.ci_low is None else f"[{_fmt(row.ci_low)}, {_fmt(row.ci_high)}]")
        body.append(cells)
    widths = [max([len(h)] + [len(b[i]) for b in body]) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths)), "  ".join("-" * w for w in widths)]
    lines += ["  ".join(c.ljust(w) for c, w in zip(b, widths)) for b in body]
    return "\n".join(lines) + "\n"
