"""Domain types for disc/cup segmentation with sensitive attributes.

Masks store mutually exclusive labels: 0 background, 1 neuroretinal rim,
2 optic cup. The optic disc is never stored; it is the union of rim and cup.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

BACKGROUND, RIM, CUP = 0, 1, 2
CLASS_NAMES = ("background", "rim", "cup")
NUM_CLASSES = len(CLASS_NAMES)

REGION_LABELS = {
    "cup": (CUP,),
    "rim": (RIM,),
    "disc": (RIM, CUP),
}

# Declaration order is the report order.
ATTRIBUTE_GROUPS: dict[str, tuple[str, ...]] = {
    "race": ("asian", "black", "white"),
    "gender": ("female", "male"),
    "ethnicity": ("hispanic", "nonhispanic"),
    "language": ("english", "spanish", "other"),
}
SPLITS = ("train", "test")

PROB_SUM_TOL = 1e-4


@dataclass(frozen=True)
class LabelMask:
    """Hard per-pixel class labels for one image, shape ``(height, width)``."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ValueError(f"label mask must be 2-D, got shape {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() >= NUM_CLASSES):
            raise ValueError("label values must lie in {0, 1, 2}")
        labels = labels.astype(np.uint8)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


@dataclass(frozen=True)
class SoftPrediction:
    """Per-pixel class probabilities, shape ``(height, width, class_count)``."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 3:
            raise ValueError(f"soft prediction must be 3-D, got shape {probs.shape}")
        if probs.size:
            if probs.min() < 0.0 or probs.max() > 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
            sums = probs.sum(axis=-1)
            if np.abs(sums - 1.0).max() > PROB_SUM_TOL:
                raise ValueError("per-pixel class probabilities must sum to 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def height(self) -> int:
        return self.probs.shape[0]

    @property
    def width(self) -> int:
        return self.probs.shape[1]

    @property
    def class_count(self) -> int:
        return self.probs.shape[2]

    def argmax(self) -> LabelMask:
        # np.argmax returns the first maximum, so ties go to the lowest class.
        return LabelMask(np.argmax(self.probs, axis=-1))


@dataclass(frozen=True)
class AttributeRecord:
    id: str
    race: str
    gender: str
    ethnicity: str
    language: str
    split: str

    def __post_init__(self):
        if not self.id:
            raise ValueError("record id must be non-empty")
        for attribute, groups in ATTRIBUTE_GROUPS.items():
            value = getattr(self, attribute)
            if value not in groups:
                raise ValueError(f"{attribute}={value!r} not in {groups}")
        if self.split not in SPLITS:
            raise ValueError(f"split={self.split!r} not in {SPLITS}")

    def group(self, attribute: str) -> str:
        if attribute not in ATTRIBUTE_GROUPS:
            raise KeyError(f"unknown attribute {attribute!r}")
        return getattr(self, attribute)


@dataclass(frozen=True)
class GroupPartition:
    """Assignment of sample ids to the groups of one sensitive attribute."""

    attribute: str
    groups: tuple[str, ...]
    membership: Mapping[str, int] = field(repr=False)

    def __post_init__(self):
        for sid, index in self.membership.items():
            if not 0 <= index < len(self.groups):
                raise ValueError(f"sample {sid!r} has invalid group index {index}")

    @classmethod
    def from_records(cls, records: Sequence[AttributeRecord], attribute: str) -> "GroupPartition":
        if attribute not in ATTRIBUTE_GROUPS:
            raise KeyError(f"unknown attribute {attribute!r}")
        groups = ATTRIBUTE_GROUPS[attribute]
        lookup = {g: i for i, g in enumerate(groups)}
        membership = {}
        for record in records:
            if record.id in membership:
                raise ValueError(f"duplicate sample id {record.id!r}")
            membership[record.id] = lookup[record.group(attribute)]
        return cls(attribute, groups, membership)

    @classmethod
    def single(cls, ids: Sequence[str], name: str = "all") -> "GroupPartition":
        """Every sample in one group."""
        return cls(name, (name,), {sid: 0 for sid in ids})

    def group_of(self, sid: str) -> int:
        try:
            return self.membership[sid]
        except KeyError:
            raise KeyError(f"sample {sid!r} has no group for attribute {self.attribute!r}") from None

    def indices(self, ids: Sequence[str]) -> np.ndarray:
        return np.array([self.group_of(sid) for sid in ids], dtype=np.intp)


def derive_region(mask: LabelMask, region: str) -> np.ndarray:
    """Boolean map of the pixels belonging to ``region`` (cup, rim or disc)."""
    try:
        labels = REGION_LABELS[region]
    except KeyError:
        raise ValueError(f"unknown region {region!r}; expected one of {sorted(REGION_LABELS)}") from None
    return np.isin(mask.labels, labels)


def _row_span(binary: np.ndarray) -> int:
    rows = np.flatnonzero(binary.any(axis=1))
    if rows.size == 0:
        return 0
    return int(rows[-1] - rows[0] + 1)


def vertical_cdr(mask: LabelMask) -> float | None:
    """Vertical cup-to-disc ratio, or ``None`` when the disc is empty.

    Diameters are row spans (max row - min row + 1) of the cup and disc
    regions, irrespective of column alignment.
    """
    disc_span = _row_span(derive_region(mask, "disc"))
    if disc_span == 0:
        return None
    return _row_span(derive_region(mask, "cup")) / disc_span
