"""Experiment orchestration: attack runs, ablation and schedule tables,
T-epsilon sweeps, and their CSV/JSON reports.

The ``*_rows`` functions work on in-memory models and batches; the
``run_*`` functions wrap them with file IO for the CLI.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .attack import AttackConfig, AttackOutcome, Variant, attack_batch
from .data import image_suffix, load_dataset, save_image
from .engine import LabeledBatch, Model, load_model
from .errors import InputError, NumericError
from .metrics import REPORT_FIELDS, AggregateReport, ImagePairMetrics, aggregate, pair_metrics
from .schedule import ScheduleKind

log = logging.getLogger(__name__)

DEFAULT_ARCH = "conv:8:3,relu,flatten,dense:64,relu,dense:4"
DEFAULT_EPOCHS = 150
DEFAULT_LR = 0.02

ABLATION_ORDER = (Variant.PGD, Variant.PGD_DSS, Variant.PGD_AES, Variant.PGD_IMP)
SCHEDULE_ORDER = (
    ScheduleKind.CONSTANT,
    ScheduleKind.COSINE_REVERSE,
    ScheduleKind.COSINE,
    ScheduleKind.LINEAR_REVERSE,
    ScheduleKind.LINEAR,
)
PER_IMAGE_FIELDS = (
    "index", "filename", "label", "target", "pred_before", "pred_after", "success",
    "iterations", "stopped_early", "linf", "l2", "psnr", "ssim",
)


@dataclass
class Evaluation:
    outcomes: list[AttackOutcome]
    metrics: list[ImagePairMetrics]
    report: AggregateReport


def verify_budget(batch: LabeledBatch, outcomes, epsilon: float) -> None:
    for i, (x, o) in enumerate(zip(batch.images, outcomes)):
        worst = float(np.max(np.abs(o.x_adv.astype(np.float64) - x)))
        if worst > epsilon:
            raise NumericError(f"sample {i}: |x_adv - x|_inf = {worst} exceeds epsilon {epsilon}")


def evaluate(model: Model, batch: LabeledBatch, config: AttackConfig) -> Evaluation:
    outcomes = attack_batch(model, batch, config)
    verify_budget(batch, outcomes, config.epsilon)
    mets = [pair_metrics(x, o.x_adv) for x, o in zip(batch.images, outcomes)]
    for i, m in enumerate(mets):
        if any(math.isnan(v) for v in (m.linf, m.l2, m.psnr, m.ssim)):
            raise NumericError(f"sample {i}: NaN in metrics {m}")
    report = aggregate(zip(outcomes, mets), targeted=config.targeted)
    return Evaluation(outcomes, mets, report)


def ablation_rows(model: Model, batch: LabeledBatch, config: AttackConfig):
    """``(variant, report)`` for plain PGD, +DSS, +AES and PGD-Imp."""
    return [(v.value, evaluate(model, batch, config.with_variant(v)).report) for v in ABLATION_ORDER]


def schedule_rows(model: Model, batch: LabeledBatch, config: AttackConfig):
    """``(schedule, report)`` for the five coefficient schedules, PGD-Imp variant."""
    base = config.with_variant(Variant.PGD_IMP)
    return [(k.value, evaluate(model, batch, replace(base, schedule=k)).report) for k in SCHEDULE_ORDER]


def sweep_rows(model: Model, batch: LabeledBatch, config: AttackConfig, steps_grid, epsilon_grid):
    """``(steps, epsilon, report)`` for every cell of the grid, in grid order."""
    steps_grid, epsilon_grid = list(steps_grid), list(epsilon_grid)
    if not steps_grid or not epsilon_grid:
        raise InputError("sweep grids must be nonempty")
    rows = []
    for t in steps_grid:
        for eps in epsilon_grid:
            cfg = replace(config, steps=int(t), epsilon=float(eps), baseline_alpha=None)
            rows.append((int(t), float(eps), evaluate(model, batch, cfg).report))
            log.info("sweep T=%d eps=%g done", t, eps)
    return rows


# ----------------------------------------------------------------------------
# writers
# ----------------------------------------------------------------------------


def _num(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


def _json_num(v):
    return None if isinstance(v, float) and not math.isfinite(v) else v


def report_json(report: AggregateReport, config: AttackConfig | None = None) -> dict:
    d = {k: _json_num(getattr(report, k)) for k in REPORT_FIELDS}
    meta = {"asr_denominator": report.asr_denominator}
    if config is not None:
        c = asdict(config)
        c["schedule"] = config.schedule.value
        c["variant"] = config.variant.value
        c["mode"] = "targeted" if config.targeted else "untargeted"
        meta["config"] = c
    d["meta"] = meta
    return d


def write_table(path, key_fields, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(key_fields) + list(REPORT_FIELDS))
        for *keys, report in rows:
            w.writerow([_num(k) for k in keys] + [_num(v) for v in report.csv_row()])


def write_per_image(path, names, evaluation: Evaluation) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PER_IMAGE_FIELDS)
        for i, (name, o, m) in enumerate(zip(names, evaluation.outcomes, evaluation.metrics)):
            w.writerow([
                i, name, o.label, "" if o.target is None else o.target, o.clean_pred, o.adv_pred,
                int(o.success), o.iterations_used, int(o.stopped_early),
                repr(m.linf), repr(m.l2), repr(m.psnr), repr(m.ssim),
            ])


def resolve_split(path, split: str) -> Path:
    """``path/split`` when it holds a manifest, else ``path`` itself."""
    p = Path(path)
    if (p / split / "manifest.csv").is_file():
        return p / split
    return p


def load_inputs(model_path, data_path):
    model = load_model(model_path)
    batch, names = load_dataset(resolve_split(data_path, "test"))
    return model, batch, names


def run_attack(model_path, data_path, out_dir, config: AttackConfig) -> AggregateReport:
    """Write ``per_image.csv``, ``aggregate.json`` and ``*_adv`` images into ``out_dir``."""
    model, batch, names = load_inputs(model_path, data_path)
    ev = evaluate(model, batch, config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    img_dir = out / "images"
    img_dir.mkdir(exist_ok=True)
    suffix = image_suffix(batch.images.shape[1])
    for name, o in zip(names, ev.outcomes):
        save_image(img_dir / f"{Path(name).stem}_adv{suffix}", o.x_adv)
    write_per_image(out / "per_image.csv", names, ev)
    with open(out / "aggregate.json", "w") as fh:
        json.dump(report_json(ev.report, config), fh, indent=2, allow_nan=False)
        fh.write("\n")
    return ev.report


def run_ablation_table(model_path, data_path, out_path, config: AttackConfig):
    model, batch, _ = load_inputs(model_path, data_path)
    rows = ablation_rows(model, batch, config)
    write_table(out_path, ["variant"], rows)
    return rows


def run_schedule_table(model_path, data_path, out_path, config: AttackConfig):
    model, batch, _ = load_inputs(model_path, data_path)
    rows = schedule_rows(model, batch, config)
    write_table(out_path, ["schedule"], rows)
    return rows


def run_sweep(model_path, data_path, out_path, config: AttackConfig, steps_grid, epsilon_grid):
    model, batch, _ = load_inputs(model_path, data_path)
    rows = sweep_rows(model, batch, config, steps_grid, epsilon_grid)
    write_table(out_path, ["steps", "epsilon"], rows)
    return rows
