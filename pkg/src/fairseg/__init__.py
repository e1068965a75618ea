"""Fairness-aware optic disc/cup segmentation: FEBS loss and equity-scaled metrics."""

__version__ = "0.1.0"

from .core import AttributeRecord, GroupPartition, LabelMask, SoftPrediction, derive_region, vertical_cdr
from .loss import DiceLossConfig, GroupWeights, combined_loss, dice_loss_grad, dice_loss_soft, fair_dice_loss, febs_update
from .metrics import GroupedReport, SampleScore, dice_hard, group_report, iou_hard, score_dataset
from .baselines import GroupDROState, dro_batch_loss, dro_update
from .synth import SynthConfig, generate
from .trainer import PixelClassifier, TrainConfig, evaluate, forward, train

__all__ = [
    "AttributeRecord", "GroupPartition", "LabelMask", "SoftPrediction", "derive_region", "vertical_cdr",
    "DiceLossConfig", "GroupWeights", "combined_loss", "dice_loss_grad", "dice_loss_soft", "fair_dice_loss",
    "febs_update", "GroupedReport", "SampleScore", "dice_hard", "group_report", "iou_hard", "score_dataset",
    "GroupDROState", "dro_batch_loss", "dro_update", "SynthConfig", "generate",
    "PixelClassifier", "TrainConfig", "evaluate", "forward", "train",
]
