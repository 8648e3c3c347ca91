import numpy as np
import pytest

from pgdimp.data import ToyDatasetSpec, generate_toy_dataset
from pgdimp.engine import Conv2D, Dense, Flatten, Model, ReLU, train_toy
from pgdimp.harness import DEFAULT_ARCH, DEFAULT_EPOCHS, DEFAULT_LR


def random_model(rng, kind="conv", shape=(2, 5, 5), classes=3):
    """Small random classifier with weights large enough to make ReLUs matter."""
    c, h, w = shape
    if kind == "dense":
        layers = [Dense(rng.normal(size=(6, c * h * w)) * 2, rng.normal(size=6)), ReLU(),
                  Dense(rng.normal(size=(classes, 6)), rng.normal(size=classes))]
    elif kind == "linear":
        layers = [Dense(rng.normal(size=(classes, c * h * w)) * 3, rng.normal(size=classes))]
    else:
        k = int(rng.integers(2, 4))
        o = int(rng.integers(2, 4))
        conv = Conv2D(rng.normal(size=(o, c, k, k)) * 2, rng.normal(size=o) * 0.5)
        flat = o * (h - k + 1) * (w - k + 1)
        layers = [conv, ReLU()]
        if kind == "conv2":
            conv2 = Conv2D(rng.normal(size=(2, o, 2, 2)), rng.normal(size=2) * 0.5)
            layers += [conv2, ReLU()]
            flat = 2 * (h - k) * (w - k)
        layers += [Flatten(), Dense(rng.normal(size=(classes, flat)), rng.normal(size=classes))]
    return Model(tuple(layers), shape, classes)


@pytest.fixture(scope="session")
def toy_benchmark():
    """Default toy dataset and a trained default model: (model, train, test)."""
    train, test = generate_toy_dataset(ToyDatasetSpec(seed=0))
    model = train_toy(DEFAULT_ARCH, train, epochs=DEFAULT_EPOCHS, lr=DEFAULT_LR, seed=0)
    return model, train, test


@pytest.fixture(scope="session")
def small_toy():
    """A fast 1-channel benchmark for CLI and unit tests."""
    spec = ToyDatasetSpec(num_classes=3, per_class=40, test_per_class=8, shape=(1, 6, 6),
                          amplitude=16.0, noise=8.0, seed=3)
    train, test = generate_toy_dataset(spec)
    model = train_toy("conv:4:3,relu,flatten,dense:3", train, epochs=100, lr=0.05, seed=1, min_accuracy=0.95)
    return model, train, test


_CRITERIA: dict[str, tuple[str, str]] = {}


def _criterion_title(nodeid):
    # test_criterion_05_ablation_ordering -> "criterion 5 (ablation ordering)"
    parts = nodeid.split("::")[-1].split("_")[2:]
    return f"criterion {int(parts[0])} ({' '.join(parts[1:])})"


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        detail = dict(report.user_properties).get("detail", "")
        _CRITERIA[report.nodeid] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, (status, detail) in _CRITERIA.items():
        line = f"{status} {_criterion_title(nodeid)}"
        terminalreporter.write_line(f"{line}: {detail}" if detail else line)
