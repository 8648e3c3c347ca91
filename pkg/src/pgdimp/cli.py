"""Command-line interface.

Exit codes: 0 success, 1 input error, 2 internal numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .attack import AttackConfig
from .data import ToyDatasetSpec, generate_toy_dataset, load_dataset, load_image, save_dataset
from .engine import accuracy, save_model, train_toy
from .errors import InputError, NumericError, TrainingError
from .metrics import pair_metrics
from .schedule import ScheduleKind, build_plan, plan_csv

log = logging.getLogger("pgdimp")

SCHEDULE_CHOICES = ["constant", "linear", "linear-reverse", "cosine", "cosine-reverse"]


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _attack_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=8.0, help="L-inf budget in pixel units")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--schedule", choices=SCHEDULE_CHOICES, default="linear")
    p.add_argument("--attack", choices=["pgd", "pgd-imp", "pgd-dss", "pgd-aes"], default="pgd-imp")
    p.add_argument("--mode", choices=["untargeted", "targeted"], default="untargeted")
    p.add_argument("--target", type=int, default=None)
    p.add_argument("--baseline-alpha", type=float, default=None, help="fixed step, default epsilon/4")
    p.add_argument("--random-init", action="store_true")
    return p


def _config(args) -> AttackConfig:
    return AttackConfig(
        epsilon=args.epsilon,
        steps=args.steps,
        schedule=ScheduleKind.parse(args.schedule),
        variant=args.attack,
        targeted=args.mode == "targeted",
        target_label=args.target,
        baseline_alpha=args.baseline_alpha,
        random_init=args.random_init,
        seed=args.seed,
    )


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors: exit 1, not argparse's 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pgdimp", description="Imperceptible sign-gradient attacks on toy classifiers")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    flags = _attack_flags()

    g = sub.add_parser("gen-data", help="generate a toy blob-image dataset")
    g.add_argument("--out", required=True, type=Path)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--classes", type=int, default=ToyDatasetSpec.num_classes)
    g.add_argument("--per-class", type=int, default=ToyDatasetSpec.per_class)
    g.add_argument("--test-per-class", type=int, default=ToyDatasetSpec.test_per_class)
    g.add_argument("--shape", default=",".join(map(str, ToyDatasetSpec.shape)), help="C,H,W")
    g.add_argument("--amplitude", type=float, default=ToyDatasetSpec.amplitude)
    g.add_argument("--noise", type=float, default=ToyDatasetSpec.noise)

    t = sub.add_parser("train", help="train a toy classifier")
    t.add_argument("--data", required=True, type=Path)
    t.add_argument("--out", required=True, type=Path)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--arch", default=harness.DEFAULT_ARCH)
    t.add_argument("--epochs", type=int, default=harness.DEFAULT_EPOCHS)
    t.add_argument("--lr", type=float, default=harness.DEFAULT_LR)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--min-accuracy", type=float, default=0.95)

    sub.add_parser("attack", parents=[flags], help="attack a dataset and write reports")
    sub.add_parser("ablate", parents=[flags], help="PGD / +DSS / +AES / PGD-Imp table")
    sub.add_parser("schedules", parents=[flags], help="table over the five step schedules")
    s = sub.add_parser("sweep", parents=[flags], help="T x epsilon grid, long-format CSV")
    s.add_argument("--steps-grid", type=_ints, default=[10, 100, 1000])
    s.add_argument("--epsilon-grid", type=_floats, default=[2.0, 4.0, 8.0])

    m = sub.add_parser("metrics", help="metrics between two 8-bit images")
    m.add_argument("original", type=Path)
    m.add_argument("adversarial", type=Path)
    m.add_argument("--out", type=Path, default=None)

    p = sub.add_parser("plan", help="print a step-size plan as CSV")
    p.add_argument("--schedule", choices=SCHEDULE_CHOICES, default="linear")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--epsilon", type=float, default=8.0)
    p.add_argument("--out", type=Path, default=None)
    return parser


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)


def _run(args) -> None:
    cmd = args.command
    if cmd == "gen-data":
        shape = tuple(_ints(args.shape))
        spec = ToyDatasetSpec(args.classes, args.per_class, args.test_per_class, shape,
                              args.amplitude, args.noise, args.seed)
        train, test = generate_toy_dataset(spec)
        save_dataset(args.out / "train", train)
        save_dataset(args.out / "test", test)
        print(f"wrote {len(train)} train and {len(test)} test images to {args.out}")
    elif cmd == "train":
        batch, _ = load_dataset(harness.resolve_split(args.data, "train"))
        model = train_toy(args.arch, batch, epochs=args.epochs, lr=args.lr, seed=args.seed,
                          batch_size=args.batch_size, min_accuracy=args.min_accuracy)
        args.out.parent.mkdir(parents=True, exist_ok=True)
        save_model(model, args.out)
        print(f"train accuracy {accuracy(model, batch):.4f}; model written to {args.out}")
    elif cmd == "attack":
        report = harness.run_attack(args.model, args.data, args.out, _config(args))
        print(json.dumps(harness.report_json(report), allow_nan=False))
    elif cmd in ("ablate", "schedules", "sweep"):
        cfg = _config(args)
        args.out.parent.mkdir(parents=True, exist_ok=True)
        if cmd == "ablate":
            harness.run_ablation_table(args.model, args.data, args.out, cfg)
        elif cmd == "schedules":
            harness.run_schedule_table(args.model, args.data, args.out, cfg)
        else:
            harness.run_sweep(args.model, args.data, args.out, cfg, args.steps_grid, args.epsilon_grid)
        print(args.out.read_text(), end="")
    elif cmd == "metrics":
        m = pair_metrics(load_image(args.original), load_image(args.adversarial))
        d = {k: (None if v == float("inf") else v) for k, v in vars(m).items()}
        _emit(json.dumps(d) + "\n", args.out)
    elif cmd == "plan":
        _emit(plan_csv(build_plan(args.schedule, args.steps, args.epsilon)), args.out)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _run(args)
    except (NumericError, TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (InputError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
