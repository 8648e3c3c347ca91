"""Sign-gradient L-inf attacks with scheduled step sizes and a rounding-aware
early stop, plus a small numpy classifier engine and evaluation harness."""

from .attack import AttackConfig, AttackOutcome, StepRecord, Variant, attack_batch, attack_single, early_stop_check, round_to_8bit
from .engine import LabeledBatch, Model, ce_loss, forward, input_gradient, load_model, predict, save_model, train_toy
from .errors import InputError, NumericError, ParseError, TrainingError
from .metrics import AggregateReport, ImagePairMetrics, aggregate, pair_metrics
from .schedule import ScheduleKind, StepPlan, build_plan

__version__ = "0.1.0"

__all__ = [
    "AggregateReport", "AttackConfig", "AttackOutcome", "ImagePairMetrics", "InputError", "LabeledBatch",
    "Model", "NumericError", "ParseError", "ScheduleKind", "StepPlan", "StepRecord", "TrainingError",
    "Variant", "aggregate", "attack_batch", "attack_single", "build_plan", "ce_loss", "early_stop_check",
    "forward", "input_gradient", "load_model", "pair_metrics", "predict", "round_to_8bit", "save_model",
    "train_toy",
]
