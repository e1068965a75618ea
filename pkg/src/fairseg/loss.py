"""Soft Dice loss, fair error-bound scaling (FEBS) and the CE + Dice objective.

Every loss here has a hand-written gradient. The FEBS weight of a group is

    W_a = tanh((min_b L_b / L_a) ** gamma)

where ``L_a`` is a running estimate of the group's class-summed Dice loss.
The fair loss multiplies the predicted probability map of a sample by its
group's ``W_a`` before the Dice loss is taken.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .core import NUM_CLASSES, LabelMask, SoftPrediction

CE_FLOOR = 1e-12
LOSS_FLOOR = 1e-8
TANH_ONE = float(np.tanh(1.0))


@dataclass(frozen=True)
class DiceLossConfig:
    epsilon: float = 1e-5
    class_weights: tuple[float, ...] = (1.0,) * NUM_CLASSES

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        omega = tuple(float(w) for w in self.class_weights)
        if any(w < 0 for w in omega) or not any(w > 0 for w in omega):
            raise ValueError("class weights must be nonnegative with at least one positive")
        object.__setattr__(self, "class_weights", omega)


def _aligned(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: prediction {pred.shape} vs target {gt.shape}")
    return pred, gt


def dice_loss_soft(pred_class, gt_class, epsilon: float = 1e-5) -> float:
    """``1 - (2 sum(p*y) + eps) / (sum(p^2) + sum(y^2) + eps)`` over all pixels."""
    p, y = _aligned(pred_class, gt_class)
    num = 2.0 * np.sum(p * y) + epsilon
    den = np.sum(p * p) + np.sum(y * y) + epsilon
    return float(1.0 - num / den)


def dice_loss_grad(pred_class, gt_class, epsilon: float = 1e-5) -> np.ndarray:
    """Derivative of :func:`dice_loss_soft` with respect to each predicted value."""
    p, y = _aligned(pred_class, gt_class)
    num = 2.0 * np.sum(p * y) + epsilon
    den = np.sum(p * p) + np.sum(y * y) + epsilon
    return -(2.0 * y * den - 2.0 * p * num) / den**2


# --- FEBS group weights ---------------------------------------------------


@dataclass(frozen=True)
class GroupWeights:
    """Running per-group Dice losses and the FEBS weights derived from them.

    A group's running loss is NaN until it is first observed; its first
    observation initialises the EMA. Unobserved groups carry weight tanh(1).
    """

    groups: tuple[str, ...]
    running_loss: np.ndarray
    weights: np.ndarray
    momentum: float = 0.9
    gamma: float = 1.0

    @classmethod
    def initial(cls, groups: Sequence[str], momentum: float = 0.9, gamma: float = 1.0) -> "GroupWeights":
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        n = len(groups)
        if n == 0:
            raise ValueError("need at least one group")
        return cls(
            tuple(groups),
            np.full(n, np.nan),
            np.full(n, TANH_ONE),
            momentum,
            gamma,
        )

    def weight_of(self, group_index: int) -> float:
        if not 0 <= group_index < len(self.groups):
            raise IndexError(f"group index {group_index} out of range for {len(self.groups)} groups")
        return float(self.weights[group_index])


def febs_weights(running_loss, gamma: float = 1.0) -> np.ndarray:
    """tanh((min loss / loss) ** gamma) per group; NaN entries get tanh(1)."""
    losses = np.asarray(running_loss, dtype=np.float64)
    seen = ~np.isnan(losses)
    weights = np.full(losses.shape, TANH_ONE)
    if seen.any():
        if np.any(losses[seen] <= 0):
            raise ValueError("running group losses must be positive")
        ratio = losses[seen].min() / losses[seen]
        # the minimum has ratio exactly 1.0, so it gets tanh(1) for any gamma
        weights[seen] = np.tanh(ratio**gamma)
    return weights


def febs_update(gw: GroupWeights, observed: Mapping[int, tuple[float, int]]) -> GroupWeights:
    """Fold one batch of group losses into the running state and recompute weights.

    ``observed`` maps group index to ``(mean per-sample Dice loss, count)``.
    Groups absent from ``observed`` (or with a zero count) keep their state.
    """
    present = {k: v for k, v in observed.items() if v[1] > 0}
    if not present:
        raise ValueError("febs_update needs at least one observed group")
    running = gw.running_loss.copy()
    for k in sorted(present):
        if not 0 <= k < len(gw.groups):
            raise IndexError(f"group index {k} out of range")
        loss = float(present[k][0])
        if not np.isfinite(loss) or loss < 0:
            raise ValueError(f"group {gw.groups[k]!r}: observed loss {loss} is not a nonnegative number")
        if np.isnan(running[k]):
            running[k] = loss
        else:
            running[k] = gw.momentum * running[k] + (1.0 - gw.momentum) * loss
        running[k] = max(running[k], LOSS_FLOOR)
    return replace(gw, running_loss=running, weights=febs_weights(running, gw.gamma))


# --- batched objective ------------------------------------------------------
# Batched arrays use a (batch, class, pixel) layout so pixel sums run over
# the contiguous axis.


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=axis, keepdims=True)
    return z


def _one_hot(labels: np.ndarray, k: int = NUM_CLASSES) -> np.ndarray:
    """``(B, P)`` labels to a ``(B, K, P)`` float indicator."""
    return (labels[:, None, :] == np.arange(k)[None, :, None]).astype(np.float64)


def dice_terms(probs: np.ndarray, onehot: np.ndarray, scale, epsilon: float):
    """Per-sample, per-class Dice losses of ``scale * probs`` and their gradients.

    ``probs``/``onehot`` are ``(B, K, P)``; ``scale`` is ``(B,)``. Returns
    ``(loss (B, K), d loss / d probs (B, K, P))``.
    """
    s = np.asarray(scale, dtype=np.float64)[:, None]
    inter = np.sum(probs * onehot, axis=-1)
    sq = np.sum(probs * probs, axis=-1)
    ysum = np.sum(onehot, axis=-1)
    num = 2.0 * s * inter + epsilon
    den = s * s * sq + ysum + epsilon
    a = (-2.0 * s / den)[..., None]
    c = (2.0 * s * s * num / den**2)[..., None]
    return 1.0 - num / den, a * onehot + c * probs


def batch_objective(
    probs: np.ndarray,
    labels: np.ndarray,
    lambda_ce: float,
    lambda_dice: float,
    cfg: DiceLossConfig,
    scale: np.ndarray | None = None,
):
    """Combined loss for a batch of flattened images.

    ``probs`` is the ``(B, K, P)`` softmax output and ``labels`` is ``(B, P)``.
    ``scale`` holds the FEBS weight of each sample (``None`` for plain Dice).
    Returns ``(per-sample loss (B,), per-sample unscaled class-summed Dice
    loss (B,), d per-sample loss / d logits (B, K, P))``.
    """
    b, k, p = probs.shape
    eps = cfg.epsilon
    omega = np.asarray(cfg.class_weights, dtype=np.float64)
    onehot = _one_hot(labels, k)
    s = np.ones((b, 1)) if scale is None else np.asarray(scale, dtype=np.float64)[:, None]

    py = probs * onehot
    inter = py.sum(axis=-1)
    sq = np.einsum("bkp,bkp->bk", probs, probs)
    ysum = onehot.sum(axis=-1)
    plain_loss = 1.0 - (2.0 * inter + eps) / (sq + ysum + eps)
    num = 2.0 * s * inter + eps
    den = s * s * sq + ysum + eps
    dice_term = ((1.0 - num / den) * omega).sum(axis=1) / k

    p_true = py.sum(axis=1)
    ce = -np.log(np.maximum(p_true, CE_FLOOR)).mean(axis=1)

    # d dice_term / d probs = a * y + c * p, per (sample, class)
    w = lambda_dice * omega / k
    a = (w * -2.0 * s / den)[..., None]
    c = (w * 2.0 * s * s * num / den**2)[..., None]
    g = a * onehot + c * probs
    # chain rule through softmax: dz_j = p_j (g_j - sum_i p_i g_i)
    grad = probs * (g - np.sum(probs * g, axis=1, keepdims=True))
    grad += (lambda_ce / p) * (probs - onehot)

    total = lambda_ce * ce + lambda_dice * dice_term
    return total, plain_loss.sum(axis=1), grad


# --- single-sample API -------------------------------------------------------


def _flatten_pair(pred: SoftPrediction, gt: LabelMask) -> tuple[np.ndarray, np.ndarray]:
    if (pred.height, pred.width) != gt.shape:
        raise ValueError(f"prediction {pred.height}x{pred.width} does not match mask {gt.shape}")
    if pred.class_count != NUM_CLASSES:
        raise ValueError(f"expected {NUM_CLASSES} classes, got {pred.class_count}")
    probs = pred.probs.reshape(1, -1, NUM_CLASSES).transpose(0, 2, 1)
    return np.ascontiguousarray(probs), gt.labels.reshape(1, -1)


def fair_dice_loss(
    pred: SoftPrediction,
    gt: LabelMask,
    group_index: int,
    gw: GroupWeights,
    cfg: DiceLossConfig = DiceLossConfig(),
) -> float:
    """Class-averaged, Omega-weighted Dice loss of the group-scaled prediction."""
    probs, labels = _flatten_pair(pred, gt)
    w = gw.weight_of(group_index)
    loss, _ = dice_terms(probs, _one_hot(labels), np.array([w]), cfg.epsilon)
    omega = np.asarray(cfg.class_weights)
    return float((loss[0] * omega).sum() / NUM_CLASSES)


def mean_dice_loss(pred: SoftPrediction, gt: LabelMask, cfg: DiceLossConfig = DiceLossConfig()) -> float:
    """Unweighted class-averaged Dice loss."""
    probs, labels = _flatten_pair(pred, gt)
    loss, _ = dice_terms(probs, _one_hot(labels), np.ones(1), cfg.epsilon)
    return float((loss[0] * np.asarray(cfg.class_weights)).sum() / NUM_CLASSES)


def combined_loss(
    pred: SoftPrediction,
    gt: LabelMask,
    lambda_ce: float = 0.5,
    lambda_dice: float = 0.5,
    fair: tuple[int, GroupWeights] | None = None,
    cfg: DiceLossConfig = DiceLossConfig(),
) -> tuple[float, np.ndarray]:
    """``lambda_ce * CE + lambda_dice * Dice`` and its gradient w.r.t. the logits.

    The gradient has the shape of ``pred.probs``. When ``fair`` is given as
    ``(group_index, weights)`` the Dice term is the FEBS-scaled loss.
    """
    if lambda_ce < 0 or lambda_dice < 0 or (lambda_ce == 0 and lambda_dice == 0):
        raise ValueError("loss weights must be nonnegative and not both zero")
    probs, labels = _flatten_pair(pred, gt)
    scale = None
    if fair is not None:
        group_index, gw = fair
        scale = np.array([gw.weight_of(group_index)])
    total, _, grad = batch_objective(probs, labels, lambda_ce, lambda_dice, cfg, scale)
    return float(total[0]), grad[0].T.reshape(pred.probs.shape)
