import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairseg.core import LabelMask, SoftPrediction
from fairseg.loss import (
    TANH_ONE,
    DiceLossConfig,
    GroupWeights,
    combined_loss,
    dice_loss_grad,
    dice_loss_soft,
    fair_dice_loss,
    febs_update,
    febs_weights,
    mean_dice_loss,
    softmax,
)

from conftest import central_difference, rel_err


def one_hot_pred(labels):
    return SoftPrediction(np.eye(3)[labels])


def weights_with(values):
    gw = GroupWeights.initial([f"g{i}" for i in range(len(values))])
    return GroupWeights(gw.groups, gw.running_loss, np.asarray(values, float))


def random_instance(rng, h=6, w=6):
    logits = rng.normal(scale=2.0, size=(h, w, 3))
    labels = rng.integers(0, 3, size=(h, w))
    return logits, LabelMask(labels)


# --- Dice loss --------------------------------------------------------------


def test_perfect_prediction_zero_loss():
    y = np.zeros((4, 4))
    y[1:3, 1:3] = 1
    assert dice_loss_soft(y, y) == 0.0


def test_zero_prediction():
    y = np.zeros(20)
    y[:10] = 1
    assert dice_loss_soft(np.zeros(20), y, 1e-5) == pytest.approx(1 - 1e-5 / (10 + 1e-5), abs=1e-15)


def test_uniform_half_prediction():
    y = np.zeros((2, 2))
    y[0, 0] = 1
    assert dice_loss_soft(np.full((2, 2), 0.5), y, 1e-5) == pytest.approx(0.4999975000124999, abs=1e-15)


def test_dice_shape_mismatch():
    with pytest.raises(ValueError):
        dice_loss_soft(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError):
        dice_loss_grad(np.zeros(3), np.zeros(4))


def test_single_pixel_gradient():
    assert dice_loss_soft([0.0], [1.0], epsilon=1.0) == 0.5
    assert dice_loss_grad([0.0], [1.0], epsilon=1.0)[0] == -1.0


def test_flat_point_gradient():
    np.testing.assert_array_equal(dice_loss_grad(np.zeros((3, 3)), np.zeros((3, 3))), 0.0)


def test_binary_prediction_gradient_zero_off_target():
    y = np.zeros((5, 5))
    y[2:4, 1:4] = 1
    g = dice_loss_grad(y, y)
    assert np.all(g[y == 0] == 0)
    # stationary point: compare absolutely, the relative error has no scale here
    fd = central_difference(lambda p: dice_loss_soft(p, y), y)
    np.testing.assert_allclose(g, fd, atol=1e-6)


def test_dice_gradient_matches_finite_differences(rng):
    for _ in range(50):
        p = rng.random((5, 5))
        y = (rng.random((5, 5)) < 0.4).astype(float)
        fd = central_difference(lambda q: dice_loss_soft(q, y), p)
        assert rel_err(dice_loss_grad(p, y), fd) < 1e-4


@settings(max_examples=200)
@given(st.integers(0, 2**31 - 1))
def test_dice_range(seed):
    rng = np.random.default_rng(seed)
    p = rng.random(16)
    y = (rng.random(16) < 0.5).astype(float)
    d = dice_loss_soft(p, y, 1e-5)
    assert -1e-12 <= d <= 1.0 + 1e-12


def test_zero_only_for_exact_match():
    y = np.array([1.0, 0.0, 1.0, 0.0])
    assert dice_loss_soft(y, y, 1e-12) == 0.0
    assert dice_loss_soft(y + np.array([0, 1e-3, 0, 0]), y, 1e-12) > 0


# --- FEBS weights -------------------------------------------------------------


def test_weight_example():
    w = febs_weights([0.2, 0.4])
    assert w[0] == TANH_ONE
    assert w[1] == pytest.approx(math.tanh(0.5), abs=1e-15)
    assert w[1] == pytest.approx(0.46212, abs=1e-5)


def test_equal_losses_and_gamma_zero():
    np.testing.assert_array_equal(febs_weights([0.3, 0.3, 0.3]), TANH_ONE)
    np.testing.assert_array_equal(febs_weights([0.1, 0.5, 2.0], gamma=0.0), TANH_ONE)


def test_weight_monotonicity_random():
    rng = np.random.default_rng(7)
    for _ in range(100):
        losses = rng.uniform(0.01, 3.0, size=rng.integers(2, 6))
        w = febs_weights(losses)
        assert w[np.argmin(losses)] == TANH_ONE
        assert np.all((w > 0) & (w <= TANH_ONE))
        order = np.argsort(losses, kind="stable")
        assert np.all(np.diff(w[order]) <= 0)


def test_febs_update_ema():
    gw = GroupWeights.initial(["a", "b", "c"], momentum=0.9)
    np.testing.assert_array_equal(gw.weights, TANH_ONE)
    gw = febs_update(gw, {0: (0.2, 4), 1: (0.4, 2)})
    np.testing.assert_allclose(gw.running_loss[:2], [0.2, 0.4])
    assert np.isnan(gw.running_loss[2])
    assert gw.weights[2] == TANH_ONE
    gw = febs_update(gw, {0: (0.6, 3)})
    assert gw.running_loss[0] == pytest.approx(0.9 * 0.2 + 0.1 * 0.6)
    assert gw.running_loss[1] == 0.4  # unobserved group keeps its value
    assert gw.weights[0] == TANH_ONE
    assert gw.weights[1] == pytest.approx(math.tanh(0.24 / 0.4))


def test_febs_update_errors_and_floor():
    gw = GroupWeights.initial(["a", "b"])
    with pytest.raises(ValueError):
        febs_update(gw, {})
    with pytest.raises(ValueError):
        febs_update(gw, {0: (0.3, 0)})
    with pytest.raises(ValueError):
        febs_update(gw, {0: (-0.1, 3)})
    gw = febs_update(gw, {0: (0.0, 3), 1: (0.5, 3)})
    assert gw.running_loss[0] == 1e-8
    assert gw.weights[0] == TANH_ONE


def test_febs_update_does_not_mutate():
    gw = GroupWeights.initial(["a", "b"])
    febs_update(gw, {0: (0.3, 1)})
    assert np.isnan(gw.running_loss).all()


# --- fair loss ------------------------------------------------------------------


def test_unit_weight_matches_plain_average(rng):
    logits, gt = random_instance(rng)
    pred = SoftPrediction(softmax(logits))
    per_class = [dice_loss_soft(pred.probs[..., k], gt.labels == k, 1e-5) for k in range(3)]
    fair = fair_dice_loss(pred, gt, 0, weights_with([1.0]))
    assert fair == pytest.approx(sum(per_class) / 3, abs=1e-15)
    assert fair == mean_dice_loss(pred, gt)


def test_perfect_prediction_closed_form():
    labels = np.zeros((6, 6), int)
    labels[1:5, 1:5] = 1
    labels[2:4, 2:4] = 2
    pred = one_hot_pred(labels)
    cfg = DiceLossConfig(epsilon=1e-12)
    loss = fair_dice_loss(pred, LabelMask(labels), 0, weights_with([TANH_ONE]), cfg)
    closed = (TANH_ONE - 1) ** 2 / (TANH_ONE**2 + 1)
    assert closed == pytest.approx(0.035972, abs=1e-6)
    assert loss == pytest.approx(closed, abs=1e-10)  # all three classes nonempty


def test_smaller_weight_amplifies_loss():
    labels = np.zeros((4, 4), int)
    labels[1:3, 1:3] = 2
    pred = one_hot_pred(labels)
    cfg = DiceLossConfig(epsilon=1e-12)
    grid = np.round(np.arange(0.1, 1.01, 0.1), 10)
    losses = [fair_dice_loss(pred, LabelMask(labels), 0, weights_with([w]), cfg) for w in grid]
    assert all(b < a for a, b in zip(losses, losses[1:]))
    for w, loss in zip(grid, losses):
        per_nonempty = (w - 1) ** 2 / (w**2 + 1)
        assert loss == pytest.approx(2 * per_nonempty / 3, abs=1e-10)  # rim is empty: loss 0


def test_vanishing_weight():
    labels = np.ones((3, 3), int)
    pred = one_hot_pred(labels)
    loss = fair_dice_loss(pred, LabelMask(labels), 0, weights_with([1e-9]))
    # rim term -> 1 - eps/(9 + eps); background and cup empty -> 0
    assert loss == pytest.approx((1 - 1e-5 / (9 + 1e-5)) / 3, abs=1e-8)


def test_invalid_group():
    pred = one_hot_pred(np.zeros((2, 2), int))
    with pytest.raises(IndexError):
        fair_dice_loss(pred, LabelMask(np.zeros((2, 2))), 3, weights_with([0.5, 0.7]))


def test_class_weights():
    labels = np.zeros((4, 4), int)
    labels[:2] = 2
    pred = SoftPrediction(np.full((4, 4, 3), 1 / 3))
    gt = LabelMask(labels)
    only_cup = DiceLossConfig(class_weights=(0.0, 0.0, 1.0))
    expected = dice_loss_soft(pred.probs[..., 2], labels == 2) / 3
    assert fair_dice_loss(pred, gt, 0, weights_with([1.0]), only_cup) == pytest.approx(expected, abs=1e-15)
    with pytest.raises(ValueError):
        DiceLossConfig(class_weights=(0.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        DiceLossConfig(epsilon=0.0)


# --- combined objective -----------------------------------------------------------


def test_ce_only_perfect():
    labels = np.array([[0, 1], [2, 1]])
    pred = one_hot_pred(labels)
    value, _ = combined_loss(pred, LabelMask(labels), 1.0, 0.0)
    assert value == pytest.approx(0.0, abs=1e-12)


def test_dice_only_reduction(rng):
    logits, gt = random_instance(rng)
    pred = SoftPrediction(softmax(logits))
    value, _ = combined_loss(pred, gt, 0.0, 1.0)
    assert value == pytest.approx(mean_dice_loss(pred, gt), abs=1e-15)


def test_degenerate_lambdas(rng):
    logits, gt = random_instance(rng)
    pred = SoftPrediction(softmax(logits))
    with pytest.raises(ValueError):
        combined_loss(pred, gt, 0.0, 0.0)
    with pytest.raises(ValueError):
        combined_loss(pred, gt, -1.0, 1.0)


def _loss_of_logits(gt, lam_ce, lam_dice, fair, cfg):
    def f(z):
        return combined_loss(SoftPrediction(softmax(z.copy())), gt, lam_ce, lam_dice, fair, cfg)[0]

    return f


@pytest.mark.parametrize("fair_weight", [None, TANH_ONE, 0.3])
def test_combined_gradient_matches_finite_differences(fair_weight):
    rng = np.random.default_rng(99)
    cfg = DiceLossConfig()
    for _ in range(20):
        logits, gt = random_instance(rng)
        lam_ce, lam_dice = rng.uniform(0.1, 1.0, 2)
        fair = None if fair_weight is None else (0, weights_with([fair_weight]))
        _, grad = combined_loss(SoftPrediction(softmax(logits)), gt, lam_ce, lam_dice, fair, cfg)
        fd = central_difference(_loss_of_logits(gt, lam_ce, lam_dice, fair, cfg), logits)
        assert rel_err(grad, fd) < 1e-4


def test_fair_weight_one_is_bitwise_plain(rng):
    logits, gt = random_instance(rng)
    pred = SoftPrediction(softmax(logits))
    plain = combined_loss(pred, gt, 0.5, 0.5)
    fair = combined_loss(pred, gt, 0.5, 0.5, (0, weights_with([1.0])))
    assert plain[0] == fair[0]
    np.testing.assert_array_equal(plain[1], fair[1])
