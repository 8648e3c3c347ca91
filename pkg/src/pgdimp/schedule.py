"""Step-size plans that spend an L-inf budget exactly.

A plan holds a coefficient sequence ``eta`` in (0, 1], the scaling factor
``beta = epsilon / sum(eta)`` and the per-step sizes ``alpha = eta * beta``,
so ``sum(alpha) == epsilon`` up to float rounding.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError


class ScheduleKind(str, enum.Enum):
    CONSTANT = "constant"
    LINEAR = "linear"
    LINEAR_REVERSE = "linear_reverse"
    COSINE = "cosine"
    COSINE_REVERSE = "cosine_reverse"

    @classmethod
    def parse(cls, value) -> "ScheduleKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower().replace("-", "_"))
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise InputError(f"unknown schedule {value!r}; expected one of {names}") from None


@dataclass(frozen=True, eq=False)
class StepPlan:
    kind: ScheduleKind
    eta: np.ndarray
    beta: float
    alpha: np.ndarray
    epsilon: float

    @property
    def steps(self) -> int:
        return len(self.eta)


def coefficients(kind: ScheduleKind, steps: int) -> np.ndarray:
    """The raw eta sequence, t = 1..steps, before scaling."""
    t = np.arange(1, steps + 1, dtype=np.float64)
    floor = 1.0 / (100.0 * steps)
    if kind is ScheduleKind.CONSTANT:
        return np.ones(steps)
    if kind is ScheduleKind.LINEAR:
        return t / steps
    if kind is ScheduleKind.LINEAR_REVERSE:
        return (steps - t + 1) / steps
    if kind is ScheduleKind.COSINE:
        return np.maximum((1.0 - np.cos(np.pi * t / steps)) / 2.0, floor)
    if kind is ScheduleKind.COSINE_REVERSE:
        return np.maximum((1.0 + np.cos(np.pi * (t - 1) / steps)) / 2.0, floor)
    raise InputError(f"unknown schedule {kind!r}")


def build_plan(kind, steps: int, epsilon: float) -> StepPlan:
    kind = ScheduleKind.parse(kind)
    if isinstance(steps, bool) or int(steps) != steps or steps < 1:
        raise InputError(f"steps must be a positive integer, got {steps!r}")
    epsilon = float(epsilon)
    if not (epsilon > 0 and math.isfinite(epsilon)):
        raise InputError(f"epsilon must be positive and finite, got {epsilon!r}")
    eta = coefficients(kind, int(steps))
    beta = epsilon / math.fsum(eta)
    alpha = eta * beta
    for arr in (eta, alpha):
        arr.setflags(write=False)
    return StepPlan(kind, eta, beta, alpha, epsilon)


def describe_plan(plan: StepPlan) -> list[tuple[int, float, float, float]]:
    """Rows of ``(t, eta_t, alpha_t, cumulative alpha)``."""
    cum = np.cumsum(plan.alpha)
    return [(t + 1, float(e), float(a), float(c)) for t, (e, a, c) in enumerate(zip(plan.eta, plan.alpha, cum))]


def plan_csv(plan: StepPlan) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "eta", "alpha", "cumulative"])
    for t, e, a, c in describe_plan(plan):
        writer.writerow([t, repr(e), repr(a), repr(c)])
    return buf.getvalue()
