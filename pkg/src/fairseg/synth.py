"""Seeded synthetic fundus-like disc/cup benchmark with group-dependent shifts.

Each sample draws its attributes, then a disc ellipse and a concentric cup
whose vertical ratio is the sample's cup-to-disc ratio. The race group sets
the CDR distribution and an intensity (contrast) multiplier, so some groups
are harder to segment than others. Every sample has its own RNG stream
seeded from ``(seed, index)``, so output does not depend on generation order.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from .core import ATTRIBUTE_GROUPS, BACKGROUND, CUP, RIM, AttributeRecord, LabelMask

# Asian/Black/White sample counts of the clinical cohort: 919 / 1473 / 7608.
RACE_PROPORTIONS = {"asian": 0.0919, "black": 0.1473, "white": 0.7608}


def _default_proportions() -> dict[str, dict[str, float]]:
    return {
        "race": dict(RACE_PROPORTIONS),
        "gender": {"female": 0.585, "male": 0.415},
        # cohort percentages with the unknown share dropped and renormalised
        "ethnicity": {"hispanic": 0.906 / 0.943, "nonhispanic": 0.037 / 0.943},
        "language": {"english": 0.924 / 0.949, "spanish": 0.015 / 0.949, "other": 0.010 / 0.949},
    }


def _default_cdr() -> dict[str, tuple[float, float]]:
    return {"asian": (0.45, 0.08), "black": (0.65, 0.08), "white": (0.45, 0.08)}


def _default_contrast() -> dict[str, float]:
    return {"asian": 1.0, "black": 0.75, "white": 1.0}


INTENSITY = {BACKGROUND: 0.2, RIM: 0.6, CUP: 0.9}


@dataclass
class SynthConfig:
    n_samples: int = 1000
    image_size: tuple[int, int] = (128, 128)
    train_fraction: float = 0.8
    proportions: dict[str, dict[str, float]] = field(default_factory=_default_proportions)
    cdr: dict[str, tuple[float, float]] = field(default_factory=_default_cdr)
    contrast: dict[str, float] = field(default_factory=_default_contrast)
    noise_sd: float = 0.08
    disc_radius: tuple[float, float] = (16.0, 26.0)
    aspect: tuple[float, float] = (0.85, 1.0)
    center_jitter: int = 12
    seed: int = 42

    def __post_init__(self):
        self.image_size = tuple(int(v) for v in self.image_size)
        self.disc_radius = tuple(float(v) for v in self.disc_radius)
        self.aspect = tuple(float(v) for v in self.aspect)
        self.cdr = {k: tuple(float(x) for x in v) for k, v in self.cdr.items()}
        self.validate()

    def validate(self) -> None:
        if self.n_samples < 0:
            raise ValueError("n_samples must be nonnegative")
        if not 0.0 <= self.train_fraction <= 1.0:
            raise ValueError("train_fraction must lie in [0, 1]")
        for attribute, groups in ATTRIBUTE_GROUPS.items():
            props = self.proportions.get(attribute)
            if props is None or set(props) != set(groups):
                raise ValueError(f"proportions for {attribute!r} must cover exactly {groups}")
            if any(v < 0 for v in props.values()) or abs(sum(props.values()) - 1.0) > 1e-9:
                raise ValueError(f"proportions for {attribute!r} must be nonnegative and sum to 1")
        for race in ATTRIBUTE_GROUPS["race"]:
            if race not in self.cdr or race not in self.contrast:
                raise ValueError(f"missing CDR/contrast settings for race {race!r}")
            mean, sd = self.cdr[race]
            if not 0.0 < mean < 1.0 or sd < 0:
                raise ValueError(f"CDR mean for {race!r} must lie in (0, 1) with sd >= 0")
            if self.contrast[race] <= 0:
                raise ValueError("contrast multipliers must be positive")
        lo, hi = self.disc_radius
        if not 0 < lo <= hi:
            raise ValueError("disc radius bounds must satisfy 0 < lo <= hi")
        if min(self.image_size) < 3:
            raise ValueError("image_size must be at least 3x3")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class Sample:
    image: np.ndarray  # float64 in [0, 1], quantised to multiples of 1/255
    mask: LabelMask
    record: AttributeRecord
    cdr: float  # the drawn (pre-discretisation) cup-to-disc ratio


def _choice(rng: np.random.Generator, probs: dict[str, float], order: tuple[str, ...]) -> str:
    p = np.array([probs[g] for g in order])
    return order[int(rng.choice(len(order), p=p / p.sum()))]


def _ellipse(shape, cy, cx, ry, rx) -> np.ndarray:
    rows = np.arange(shape[0])[:, None] - cy
    cols = np.arange(shape[1])[None, :] - cx
    return (rows / ry) ** 2 + (cols / rx) ** 2 <= 1.0


def sample_id(index: int) -> str:
    return f"s{index:05d}"


def _sample_rng(cfg: SynthConfig, index: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, index])


def _draw_record(cfg: SynthConfig, index: int, rng: np.random.Generator) -> AttributeRecord:
    values = {attr: _choice(rng, cfg.proportions[attr], groups) for attr, groups in ATTRIBUTE_GROUPS.items()}
    n_train = int(round(cfg.train_fraction * cfg.n_samples))
    return AttributeRecord(id=sample_id(index), split="train" if index < n_train else "test", **values)


def sample_record(cfg: SynthConfig, index: int) -> AttributeRecord:
    """The attribute record of sample ``index`` without rendering its image."""
    return _draw_record(cfg, index, _sample_rng(cfg, index))


def generate_sample(cfg: SynthConfig, index: int) -> Sample:
    rng = _sample_rng(cfg, index)
    record = _draw_record(cfg, index, rng)

    h, w = cfg.image_size
    mean, sd = cfg.cdr[record.race]
    cdr = float(np.clip(rng.normal(mean, sd), 0.1, 0.9))
    for _ in range(100):
        ry = rng.uniform(*cfg.disc_radius)
        rx = ry * rng.uniform(*cfg.aspect)
        # integer centres keep the top and bottom rows of each ellipse populated
        cy = h // 2 + int(rng.integers(-cfg.center_jitter, cfg.center_jitter + 1))
        cx = w // 2 + int(rng.integers(-cfg.center_jitter, cfg.center_jitter + 1))
        if cy - ry >= 1 and cy + ry <= h - 2 and cx - rx >= 1 and cx + rx <= w - 2:
            break
    else:
        raise RuntimeError(f"sample {index}: no feasible disc geometry after 100 attempts")

    labels = np.full((h, w), BACKGROUND, dtype=np.uint8)
    labels[_ellipse((h, w), cy, cx, ry, rx)] = RIM
    labels[_ellipse((h, w), cy, cx, cdr * ry, cdr * rx)] = CUP

    base = np.choose(labels, [INTENSITY[BACKGROUND], INTENSITY[RIM], INTENSITY[CUP]])
    image = base * cfg.contrast[record.race] + rng.normal(0.0, cfg.noise_sd, size=(h, w))
    image = np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0
    return Sample(image, LabelMask(labels), record, cdr)


def generate(cfg: SynthConfig) -> tuple[list[np.ndarray], list[LabelMask], list[AttributeRecord]]:
    """Images, ground-truth masks and attribute records for ``cfg.n_samples`` subjects."""
    samples = [generate_sample(cfg, i) for i in range(cfg.n_samples)]
    return [s.image for s in samples], [s.mask for s in samples], [s.record for s in samples]
