"""Sign-gradient L-inf attacks: PGD-Imp, the PGD baseline and the two
single-strategy ablations.

Four variants share one loop and differ in two switches:

    dss  scheduled step sizes that sum to epsilon (no projection needed)
         instead of a fixed step followed by projection onto the ball
    aes  after each step, round the iterate to 8 bits and stop as soon as at
         least one pixel has moved by a whole level and the rounded image
         fools the model

PGD-Imp is ``dss and aes``; plain PGD is neither. Images are in pixel units
and every iterate is clamped to [0, 255]. Gradients are taken at the float
iterate; success is only ever judged on the rounded image.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .engine import LabeledBatch, Model, input_gradient, predict
from .errors import InputError
from .schedule import ScheduleKind, build_plan


class Variant(str, enum.Enum):
    PGD = "pgd"
    PGD_DSS = "pgd-dss"
    PGD_AES = "pgd-aes"
    PGD_IMP = "pgd-imp"

    @property
    def dss(self) -> bool:
        return self in (Variant.PGD_DSS, Variant.PGD_IMP)

    @property
    def aes(self) -> bool:
        return self in (Variant.PGD_AES, Variant.PGD_IMP)

    @classmethod
    def from_flags(cls, dss: bool, aes: bool) -> "Variant":
        return {(False, False): cls.PGD, (True, False): cls.PGD_DSS,
                (False, True): cls.PGD_AES, (True, True): cls.PGD_IMP}[(bool(dss), bool(aes))]


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 8.0
    steps: int = 100
    schedule: ScheduleKind = ScheduleKind.LINEAR
    variant: Variant = Variant.PGD_IMP
    targeted: bool = False
    target_label: int | None = None
    baseline_alpha: float | None = None  # fixed-step variants; None means epsilon / 4
    random_init: bool = False  # plain PGD only
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "schedule", ScheduleKind.parse(self.schedule))
        try:
            object.__setattr__(self, "variant", Variant(self.variant))
        except ValueError:
            raise InputError(f"unknown attack variant {self.variant!r}") from None
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise InputError(f"epsilon must be positive, got {self.epsilon!r}")
        if isinstance(self.steps, bool) or int(self.steps) != self.steps or self.steps < 1:
            raise InputError(f"steps must be a positive integer, got {self.steps!r}")
        if self.baseline_alpha is not None and not self.baseline_alpha > 0:
            raise InputError("baseline_alpha must be positive")
        if self.targeted and self.target_label is None:
            raise InputError("targeted mode needs a target label")
        if self.random_init and self.variant is not Variant.PGD:
            raise InputError("random_init is only defined for plain PGD")

    @property
    def dss(self) -> bool:
        return self.variant.dss

    @property
    def aes(self) -> bool:
        return self.variant.aes

    @property
    def alpha(self) -> float:
        return self.epsilon / 4.0 if self.baseline_alpha is None else float(self.baseline_alpha)

    def step_sizes(self) -> np.ndarray:
        if self.dss:
            return build_plan(self.schedule, self.steps, self.epsilon).alpha
        return np.full(self.steps, self.alpha)

    def with_variant(self, variant) -> "AttackConfig":
        return replace(self, variant=Variant(variant))


@dataclass(frozen=True, eq=False)
class AttackOutcome:
    x_adv: np.ndarray  # uint8, shape (C, H, W)
    success: bool
    iterations_used: int
    stopped_early: bool
    label: int
    clean_pred: int
    adv_pred: int
    target: int | None = None


@dataclass(frozen=True)
class StepRecord:
    """One step of one sample, as seen by the stop check."""

    t: int
    alpha: float
    linf_rounded: float  # max |round(x_{t+1}) - x| in pixel units
    pred_rounded: int
    stopped: bool


def round_to_8bit(x) -> np.ndarray:
    """Round to the nearest integer, ties away from zero, then clamp to [0, 255]."""
    x = np.asarray(x, dtype=np.float64)
    a = np.abs(x)
    fl = np.floor(a)
    r = fl + (a - fl >= 0.5)
    return np.clip(np.copysign(r, x), 0.0, 255.0)


def _check_8bit(x: np.ndarray, shape) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-3:] != tuple(shape):
        raise InputError(f"image shape {x.shape} does not match model input {tuple(shape)}")
    if not np.all(np.isfinite(x)) or x.min(initial=0) < 0 or x.max(initial=0) > 255 or np.any(x != np.round(x)):
        raise InputError("image must be 8-bit: integer pixels in [0, 255]")
    return x


def _linf(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b).reshape(len(a), -1).max(axis=1)


def _succeeded(preds, labels, config: AttackConfig):
    if config.targeted:
        return preds == config.target_label
    return preds != labels


def early_stop_check(model: Model, x_now, x, y_gt: int, config: AttackConfig) -> bool:
    """Rounding gate plus success test on the rounded image ``x_now``."""
    x_now = np.asarray(x_now, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x_now.shape != x.shape:
        raise InputError("x_now and x must have the same shape")
    if np.max(np.abs(x_now - x)) < 1:
        return False
    return bool(_succeeded(predict(model, x_now), y_gt, config))


def _lattice(xf: np.ndarray, x0: np.ndarray, radius: float) -> np.ndarray:
    # rounded image kept on the 8-bit lattice inside the budget
    return np.clip(round_to_8bit(xf), x0 - radius, x0 + radius)


def _run(model: Model, images: np.ndarray, labels: np.ndarray, config: AttackConfig,
         indices, traces=None) -> list[AttackOutcome]:
    n = len(images)
    if config.targeted and not 0 <= config.target_label < model.num_classes:
        raise InputError(f"target label {config.target_label} out of range")
    if n and (labels.min() < 0 or labels.max() >= model.num_classes):
        raise InputError("label out of range")
    eps = float(config.epsilon)
    radius = float(math.floor(eps))
    alphas = config.step_sizes()
    x0 = images
    xt = x0.copy()
    if config.random_init:
        for i, idx in enumerate(indices):
            noise = np.random.default_rng([config.seed, int(idx)]).uniform(-eps, eps, size=x0.shape[1:])
            xt[i] = np.clip(x0[i] + noise, 0.0, 255.0)
    loss_labels = np.full(n, config.target_label) if config.targeted else labels
    direction = -1.0 if config.targeted else 1.0
    want_rounded = config.aes or traces is not None

    active = np.ones(n, dtype=bool)
    stopped = np.zeros(n, dtype=bool)
    iters = np.full(n, config.steps, dtype=np.int64)
    x_now = x0.copy()
    for t in range(1, config.steps + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        a = float(alphas[t - 1])
        grad = input_gradient(model, xt[idx], loss_labels[idx])
        nxt = xt[idx] + (direction * a) * np.sign(grad)
        if not config.dss:
            nxt = np.clip(nxt, x0[idx] - eps, x0[idx] + eps)
        nxt = np.clip(nxt, 0.0, 255.0)
        xt[idx] = nxt
        if not want_rounded:
            continue
        now = _lattice(nxt, x0[idx], radius)
        x_now[idx] = now
        linf = _linf(now, x0[idx])
        preds = predict(model, now)
        stop = (linf >= 1) & _succeeded(preds, labels[idx], config) if config.aes else np.zeros(idx.size, bool)
        if traces is not None:
            for k, i in enumerate(idx):
                traces[i].append(StepRecord(t, a, float(linf[k]), int(preds[k]), bool(stop[k])))
        hit = idx[stop]
        iters[hit] = t
        stopped[hit] = True
        active[hit] = False

    # samples that ran to the end take round(x_{T+1})
    rest = ~stopped
    x_now[rest] = _lattice(xt[rest], x0[rest], radius)
    clean = predict(model, x0) if n else np.zeros(0, np.int64)
    adv = predict(model, x_now) if n else np.zeros(0, np.int64)
    ok = _succeeded(adv, labels, config)
    return [
        AttackOutcome(
            x_adv=x_now[i].astype(np.uint8),
            success=bool(ok[i]),
            iterations_used=int(iters[i]),
            stopped_early=bool(stopped[i]),
            label=int(labels[i]),
            clean_pred=int(clean[i]),
            adv_pred=int(adv[i]),
            target=config.target_label if config.targeted else None,
        )
        for i in range(n)
    ]


def attack_single(model: Model, x, y_gt: int, config: AttackConfig, trace: list | None = None,
                  sample_index: int = 0) -> AttackOutcome:
    """Attack one 8-bit image.

    ``trace``, when given, receives one StepRecord per executed step.
    ``sample_index`` only seeds plain PGD's random start.
    """
    x = _check_8bit(x, model.input_shape)
    if x.ndim != 3:
        raise InputError("attack_single takes one (C, H, W) image")
    traces = [trace] if trace is not None else None
    return _run(model, x[None], np.array([int(y_gt)]), config, [sample_index], traces)[0]


def attack_batch(model: Model, batch: LabeledBatch, config: AttackConfig,
                 traces: list[list] | None = None) -> list[AttackOutcome]:
    """Same results as ``attack_single`` on each sample (bit-exact).

    Samples drop out of gradient computation once stopped. Sample ``i``
    uses ``sample_index=i``.
    """
    images = _check_8bit(batch.images, model.input_shape)
    if traces is not None and len(traces) != len(batch):
        raise InputError("need one trace list per sample")
    return _run(model, images, batch.labels, config, range(len(batch)), traces)
