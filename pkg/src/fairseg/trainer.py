"""Linear-softmax pixel classifier trained by SGD in ERM, FEBS or GroupDRO mode.

The model maps eight fixed per-pixel features to class logits through a
``(3, 8)`` matrix. Gradients are analytic; all reductions go through
``np.einsum`` (no BLAS), so results do not depend on the thread count.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import uniform_filter

from .baselines import GroupDROState, dro_sample_weights, dro_update
from .core import ATTRIBUTE_GROUPS, NUM_CLASSES, AttributeRecord, GroupPartition, LabelMask, SoftPrediction
from .loss import DiceLossConfig, GroupWeights, batch_objective, febs_update, softmax
from .metrics import EVAL_REGIONS, GroupedReport, group_report, score_dataset

log = logging.getLogger(__name__)

MODES = ("erm", "febs", "groupdro")
FEATURE_NAMES = ("bias", "intensity", "blur2", "blur5", "x", "y", "r", "r2")
FEATURE_COUNT = len(FEATURE_NAMES)
BLUR_RADII = (2, 5)


class NumericalError(RuntimeError):
    """Training diverged (non-finite loss or parameters)."""


IMAGE_FEATURES = (1, 2, 3)  # intensity and blurs: vary per image
COORD_FEATURES = (0, 4, 5, 6, 7)  # bias and geometry: shared by all images


def coordinate_features(shape: tuple[int, int]) -> np.ndarray:
    """``(5, H*W)``: bias, x, y, r, r^2 on a [-1, 1] grid."""
    h, w = shape
    y = np.linspace(-1.0, 1.0, h) if h > 1 else np.zeros(1)
    x = np.linspace(-1.0, 1.0, w) if w > 1 else np.zeros(1)
    yy, xx = np.meshgrid(y, x, indexing="ij")
    r2 = xx**2 + yy**2
    return np.stack([np.ones_like(xx), xx, yy, np.sqrt(r2), r2]).reshape(5, -1)


def image_features(image: np.ndarray) -> np.ndarray:
    """``(3, H*W)``: intensity and box blurs of radius 2 and 5."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"image must be 2-D, got shape {image.shape}")
    out = np.empty((3,) + image.shape)
    out[0] = image
    for j, radius in enumerate(BLUR_RADII):
        out[1 + j] = uniform_filter(image, size=2 * radius + 1, mode="nearest")
    return out.reshape(3, -1)


def extract_features(image: np.ndarray) -> np.ndarray:
    """``(H, W, 8)`` features: bias, intensity, two box blurs, x, y, r, r^2."""
    h, w = np.shape(image)
    feats = np.empty((FEATURE_COUNT, h * w))
    feats[list(IMAGE_FEATURES)] = image_features(image)
    feats[list(COORD_FEATURES)] = coordinate_features((h, w))
    return feats.T.reshape(h, w, FEATURE_COUNT)


@dataclass
class PixelClassifier:
    theta: np.ndarray = field(default_factory=lambda: np.zeros((NUM_CLASSES, FEATURE_COUNT)))

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.shape != (NUM_CLASSES, FEATURE_COUNT):
            raise ValueError(f"theta must have shape {(NUM_CLASSES, FEATURE_COUNT)}, got {self.theta.shape}")
        if not np.all(np.isfinite(self.theta)):
            raise NumericalError("theta has non-finite entries")

    def logits(self, features: np.ndarray) -> np.ndarray:
        if features.shape[-1] != FEATURE_COUNT:
            raise ValueError(f"expected {FEATURE_COUNT} features, got {features.shape[-1]}")
        return np.einsum("...f,kf->...k", features, self.theta)

    def batch_logits(self, img_feats: np.ndarray, coord_feats: np.ndarray) -> np.ndarray:
        """``(B, K, P)`` logits from ``(B, 3, P)`` image and ``(5, P)`` shared features."""
        th_img = self.theta[:, IMAGE_FEATURES]
        th_coord = self.theta[:, COORD_FEATURES]
        out = np.einsum("kf,fp->kp", th_coord, coord_feats)[None].repeat(img_feats.shape[0], axis=0)
        for j in range(img_feats.shape[1]):
            out += th_img[None, :, j, None] * img_feats[:, None, j, :]
        return out

    def predict_masks(self, images: Sequence[np.ndarray], batch_size: int = 32) -> list[LabelMask]:
        out = []
        for start in range(0, len(images), batch_size):
            chunk = images[start : start + batch_size]
            shape = np.shape(chunk[0])
            logits = self.batch_logits(_image_batch(chunk), coordinate_features(shape))
            # first maximum wins: ties go to the lowest class index
            labels = np.argmax(logits, axis=1)
            out.extend(LabelMask(lab.reshape(shape)) for lab in labels)
        return out


def forward(model: PixelClassifier, features: np.ndarray) -> SoftPrediction:
    """Per-pixel softmax over ``theta @ features``."""
    return SoftPrediction(softmax(model.logits(features)))


@dataclass
class TrainConfig:
    mode: str = "erm"
    attribute: str = "race"
    seed: int = 0
    epochs: int = 60
    batch_size: int = 32
    learning_rate: float = 0.5
    lr_decay: float = 0.97
    lambda_ce: float = 0.5
    lambda_dice: float = 0.5
    gamma: float = 1.0
    momentum: float = 0.9
    eta: float = 0.01
    epsilon: float = 1e-5
    class_weights: tuple[float, ...] = (1.0, 1.0, 1.0)
    # "sample": mean over the batch; "group": mean of group means
    erm_reduction: str = "sample"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.attribute not in ATTRIBUTE_GROUPS:
            raise ValueError(f"unknown attribute {self.attribute!r}")
        if self.seed is None:
            raise ValueError("a seed is required")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not self.learning_rate > 0 or not 0 < self.lr_decay <= 1:
            raise ValueError("learning rate must be positive and decay in (0, 1]")
        if self.lambda_ce < 0 or self.lambda_dice < 0 or self.lambda_ce + self.lambda_dice == 0:
            raise ValueError("lambda_ce and lambda_dice must be nonnegative and not both zero")
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if self.erm_reduction not in ("sample", "group"):
            raise ValueError("erm_reduction must be 'sample' or 'group'")
        self.class_weights = tuple(float(w) for w in self.class_weights)
        self.dice_config  # validates epsilon and class weights

    @property
    def dice_config(self) -> DiceLossConfig:
        return DiceLossConfig(self.epsilon, self.class_weights)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainLog:
    """Per-epoch group losses and group weights (FEBS W or GroupDRO q)."""

    groups: tuple[str, ...]
    mode: str
    epoch_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    group_loss: list[np.ndarray] = field(default_factory=list)
    group_weight: list[np.ndarray | None] = field(default_factory=list)
    final_state: GroupWeights | GroupDROState | None = None

    def rows(self) -> list[tuple[int, str, float, float | None]]:
        out = []
        for epoch, (losses, weights) in enumerate(zip(self.group_loss, self.group_weight), start=1):
            for k, group in enumerate(self.groups):
                w = None if weights is None else float(weights[k])
                out.append((epoch, group, float(losses[k]), w))
        return out


def _train_partition(records: Sequence[AttributeRecord], attribute: str | None) -> GroupPartition:
    if attribute is None:
        return GroupPartition.single([r.id for r in records])
    return GroupPartition.from_records(records, attribute)


def _image_batch(images: Sequence[np.ndarray]) -> np.ndarray:
    shapes = {np.shape(img) for img in images}
    if len(shapes) != 1:
        raise ValueError(f"all images in a batch must share one shape, got {sorted(shapes)}")
    return np.stack([image_features(img) for img in images])


def _gradient(dlogits: np.ndarray, img_feats: np.ndarray, coord_feats: np.ndarray) -> np.ndarray:
    """d loss / d theta for one sample from ``(K, P)`` logit gradients."""
    grad = np.empty((NUM_CLASSES, FEATURE_COUNT))
    grad[:, IMAGE_FEATURES] = np.einsum("kp,fp->kf", dlogits, img_feats)
    grad[:, COORD_FEATURES] = np.einsum("kp,fp->kf", dlogits, coord_feats)
    return grad


def _per_sample_step(model, images, masks, idx, coords, cfg: TrainConfig, scale):
    """Loss, unscaled Dice observation and theta-gradient for each sample in ``idx``.

    Samples are processed one at a time so the working arrays stay in cache.
    """
    n = len(idx)
    loss = np.empty(n)
    dice_obs = np.empty(n)
    grads = np.empty((n, NUM_CLASSES, FEATURE_COUNT))
    dice_cfg = cfg.dice_config
    for j, i in enumerate(idx):
        feats = image_features(images[i])
        probs = softmax(model.batch_logits(feats[None], coords), axis=1)
        labels = masks[i].labels.reshape(1, -1)
        s = None if scale is None else scale[j : j + 1]
        total, obs, dlogits = batch_objective(probs, labels, cfg.lambda_ce, cfg.lambda_dice, dice_cfg, s)
        loss[j], dice_obs[j] = total[0], obs[0]
        grads[j] = _gradient(dlogits[0], feats, coords)
    return loss, dice_obs, grads


def mean_objective(
    model: PixelClassifier,
    images: Sequence[np.ndarray],
    masks: Sequence[LabelMask],
    cfg: TrainConfig,
    batch_size: int = 32,
) -> float:
    """Mean unweighted combined loss over a set of samples."""
    if not images:
        return float("nan")
    total = []
    for start in range(0, len(images), batch_size):
        idx = np.arange(start, min(start + batch_size, len(images)))
        feats = _image_batch([images[i] for i in idx])
        coords = coordinate_features(np.shape(images[0]))
        probs = softmax(model.batch_logits(feats, coords), axis=1)
        labels = np.stack([masks[i].labels.reshape(-1) for i in idx])
        loss, _, _ = batch_objective(probs, labels, cfg.lambda_ce, cfg.lambda_dice, cfg.dice_config)
        total.extend(loss.tolist())
    return math.fsum(total) / len(total)


def train(
    images: Sequence[np.ndarray],
    masks: Sequence[LabelMask],
    records: Sequence[AttributeRecord],
    cfg: TrainConfig,
    single_group: bool = False,
    track_validation: bool = False,
    progress: Callable[[int, float], None] | None = None,
) -> tuple[PixelClassifier, TrainLog]:
    """Fit a :class:`PixelClassifier` on the train split.

    ``single_group`` puts every sample in one group regardless of the
    configured attribute. ``track_validation`` records the mean plain
    objective on the test split after every epoch.
    """
    if not (len(images) == len(masks) == len(records)):
        raise ValueError("images, masks and records must have equal length")
    train_idx = np.array([i for i, r in enumerate(records) if r.split == "train"], dtype=np.intp)
    if train_idx.size == 0:
        raise ValueError("the train split is empty")
    test_idx = [i for i, r in enumerate(records) if r.split == "test"]

    partition = _train_partition([records[i] for i in train_idx], None if single_group else cfg.attribute)
    groups = partition.groups
    group_of = partition.indices([records[i].id for i in train_idx])
    n_groups = len(groups)

    rng = np.random.default_rng(cfg.seed)
    coords = coordinate_features(np.shape(images[train_idx[0]]))
    model = PixelClassifier()
    febs = GroupWeights.initial(groups, cfg.momentum, cfg.gamma) if cfg.mode == "febs" else None
    dro = GroupDROState.initial(groups, cfg.eta, cfg.momentum) if cfg.mode == "groupdro" else None
    uniform = GroupDROState.initial(groups)
    train_log = TrainLog(groups, cfg.mode)
    lr = cfg.learning_rate

    for epoch in range(cfg.epochs):
        order = rng.permutation(train_idx.size)
        loss_sum = np.zeros(n_groups)
        loss_cnt = np.zeros(n_groups)
        epoch_losses = []
        for start in range(0, order.size, cfg.batch_size):
            pos = order[start : start + cfg.batch_size]
            idx = train_idx[pos]
            g = group_of[pos]
            scale = febs.weights[g] if febs is not None else None
            loss, dice_obs, grads = _per_sample_step(model, images, masks, idx, coords, cfg, scale)
            if not np.all(np.isfinite(loss)):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch + 1}; lower the learning rate (now {lr:g})"
                )

            counts = np.bincount(g, minlength=n_groups)
            if dro is not None:
                means = np.bincount(g, weights=loss, minlength=n_groups)
                dro = dro_update(dro, {k: means[k] / counts[k] for k in range(n_groups) if counts[k]})
                w = dro_sample_weights(g, dro)
            elif cfg.erm_reduction == "group":
                w = dro_sample_weights(g, uniform)
            else:
                w = np.full(idx.size, 1.0 / idx.size)

            grad = np.einsum("b,bkf->kf", w, grads)
            model.theta = model.theta - lr * grad
            if not np.all(np.isfinite(model.theta)):
                raise NumericalError(f"parameters diverged at epoch {epoch + 1}; lower the learning rate")

            dice_sum = np.bincount(g, weights=dice_obs, minlength=n_groups)
            if febs is not None:
                febs = febs_update(
                    febs, {k: (dice_sum[k] / counts[k], int(counts[k])) for k in range(n_groups) if counts[k]}
                )
            loss_sum += dice_sum
            loss_cnt += counts
            epoch_losses.extend(loss.tolist())

        with np.errstate(invalid="ignore", divide="ignore"):
            train_log.group_loss.append(loss_sum / loss_cnt)
        state = febs.weights if febs is not None else (dro.q if dro is not None else None)
        train_log.group_weight.append(None if state is None else state.copy())
        train_log.epoch_loss.append(math.fsum(epoch_losses) / len(epoch_losses))
        if track_validation:
            train_log.val_loss.append(
                mean_objective(model, [images[i] for i in test_idx], [masks[i] for i in test_idx], cfg)
            )
        log.debug("epoch %d loss %.6f", epoch + 1, train_log.epoch_loss[-1])
        if progress is not None:
            progress(epoch + 1, train_log.epoch_loss[-1])
        lr *= cfg.lr_decay

    train_log.final_state = febs if febs is not None else dro
    return model, train_log


def evaluate_masks(
    pred_masks: Sequence[LabelMask],
    gt_masks: Sequence[LabelMask],
    records: Sequence[AttributeRecord],
    attribute: str,
    regions: Sequence[str] = EVAL_REGIONS,
):
    """Per-region :class:`GroupedReport` plus the per-sample scores behind it."""
    ids = [r.id for r in records]
    partition = GroupPartition.from_records(records, attribute)
    reports, scores = {}, {}
    for region in regions:
        scores[region] = score_dataset(list(zip(ids, pred_masks)), list(zip(ids, gt_masks)), region)
        reports[region] = group_report(scores[region], partition)
    return reports, scores


def evaluate(
    model: PixelClassifier,
    images: Sequence[np.ndarray],
    masks: Sequence[LabelMask],
    records: Sequence[AttributeRecord],
    attribute: str,
    regions: Sequence[str] = EVAL_REGIONS,
) -> dict[str, GroupedReport]:
    """Group reports on the test split for each region."""
    test = [i for i, r in enumerate(records) if r.split == "test"]
    preds = model.predict_masks([images[i] for i in test])
    reports, _ = evaluate_masks(preds, [masks[i] for i in test], [records[i] for i in test], attribute, regions)
    return reports
