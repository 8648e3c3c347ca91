import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_model
from pgdimp.attack import (
    AttackConfig, Variant, attack_batch, attack_single, early_stop_check, round_to_8bit,
)
from pgdimp.engine import Dense, LabeledBatch, Model, predict
from pgdimp.errors import InputError
from pgdimp.schedule import build_plan


def two_class_line(w, c):
    """Model on a 1x1x1 image: class 1 iff w * x / 255 + c > 0."""
    return Model((Dense(np.array([[0.0], [w]]), np.array([0.0, c])),), (1, 1, 1), 2)


def constant_model(winner, shape=(1, 3, 3), classes=3, slope=1e-3):
    """Always predicts ``winner`` on 8-bit inputs, with a small nonzero gradient."""
    n = int(np.prod(shape))
    w = np.full((classes, n), 0.0)
    w[0] = slope
    b = np.zeros(classes)
    b[winner] = 10.0
    return Model((Dense(w, b),), shape, classes)


def test_rounding_examples():
    assert round_to_8bit([127.4, 127.5, 0.49, 2.5, -0.3, 300.0]).tolist() == [127, 128, 0, 3, 0, 255]


def test_rounding_is_idempotent():
    ints = np.arange(256, dtype=float)
    assert np.array_equal(round_to_8bit(ints), ints)
    x = np.random.default_rng(0).uniform(-10, 265, (3, 16, 16))
    once = round_to_8bit(x)
    assert np.array_equal(round_to_8bit(once), once)


def test_early_stop_check_examples():
    model = constant_model(1, shape=(1, 2, 2))
    x = np.full((1, 2, 2), 100.0)
    cfg = AttackConfig()
    assert not early_stop_check(model, x, x, 0, cfg)
    moved = x.copy()
    moved[0, 0, 0] += 1
    assert early_stop_check(model, moved, x, 0, cfg)
    targeted = AttackConfig(targeted=True, target_label=2)
    assert not early_stop_check(model, moved, x, 0, targeted)
    assert early_stop_check(model, moved, x, 0, AttackConfig(targeted=True, target_label=1))


@pytest.mark.parametrize("variant", list(Variant))
def test_sub_quantization_budget(variant):
    rng = np.random.default_rng(1)
    model = random_model(rng)
    x = rng.integers(0, 256, (2, 5, 5)).astype(float)
    y = int(predict(model, x))
    out = attack_single(model, x, y, AttackConfig(epsilon=0.4, steps=100, variant=variant))
    assert np.array_equal(out.x_adv, x)
    assert not out.success and out.iterations_used == 100 and not out.stopped_early


@pytest.mark.parametrize("seed", range(20))
def test_one_dimensional_linear_oracle(seed):
    rng = np.random.default_rng(seed)
    w = float(rng.uniform(0.5, 3.0))
    x0 = float(rng.integers(20, 200))
    d = float(rng.uniform(0.3, 6.0))  # boundary sits at x0 + d
    model = two_class_line(w, -w * (x0 + d) / 255)
    eps, steps = 8.0, 100
    out = attack_single(model, np.array([[[x0]]]), 0, AttackConfig(epsilon=eps, steps=steps))
    # simulate: the iterate moves up by the cumulative step, success needs round(x) > x0 + d
    cum = np.cumsum(build_plan("linear", steps, eps).alpha)
    rounded = np.minimum(round_to_8bit(x0 + cum), x0 + math.floor(eps))
    ok = (rounded - x0 >= 1) & (rounded > x0 + d)
    t_star = int(np.argmax(ok)) + 1
    assert out.success and out.stopped_early
    assert out.iterations_used == t_star
    assert float(out.x_adv[0, 0, 0]) == rounded[t_star - 1]
    alpha = build_plan("linear", steps, eps).alpha[t_star - 1]
    assert out.x_adv[0, 0, 0] - x0 <= math.ceil(d) + math.ceil(alpha)


def test_already_misclassified_stops_once_a_pixel_survives_rounding():
    model = constant_model(2)
    x = np.full((1, 3, 3), 120.0)
    out = attack_single(model, x, 0, AttackConfig(epsilon=8, steps=100))
    cum = np.cumsum(build_plan("linear", 100, 8).alpha)
    first = int(np.argmax(cum >= 0.5)) + 1
    assert out.stopped_early and out.success
    assert out.iterations_used == first
    # 8 * t(t+1) / (2 * 50.5 * 100) first reaches 0.5 at t = 25
    assert first == 25


def test_plain_pgd_projection_bound():
    rng = np.random.default_rng(5)
    for _ in range(10):
        model = random_model(rng)
        x = rng.integers(0, 256, (2, 5, 5)).astype(float)
        y = int(rng.integers(0, 3))
        cfg = AttackConfig(epsilon=2, steps=10, variant="pgd", baseline_alpha=0.5)
        out = attack_single(model, x, y, cfg)
        assert np.abs(out.x_adv - x).max() <= 2
        assert out.iterations_used == 10 and not out.stopped_early


def test_random_init_is_seeded_per_sample():
    rng = np.random.default_rng(6)
    model = random_model(rng)
    x = rng.integers(0, 256, (2, 5, 5)).astype(float)
    cfg = AttackConfig(epsilon=3, steps=1, variant="pgd", random_init=True, seed=11, baseline_alpha=1e-9)
    a = attack_single(model, x, 0, cfg, sample_index=4)
    b = attack_single(model, x, 0, cfg, sample_index=4)
    c = attack_single(model, x, 0, cfg, sample_index=5)
    assert np.array_equal(a.x_adv, b.x_adv)
    assert not np.array_equal(a.x_adv, c.x_adv)
    assert np.abs(a.x_adv - x).max() <= 3


def make_batch(rng, model, n):
    images = rng.integers(0, 256, (n,) + model.input_shape).astype(float)
    return LabeledBatch(images, predict(model, images))


@pytest.mark.parametrize("variant", list(Variant))
@pytest.mark.parametrize("targeted", [False, True])
def test_batch_matches_single(variant, targeted):
    rng = np.random.default_rng(7)
    model = random_model(rng, "conv2")
    batch = make_batch(rng, model, 12)
    cfg = AttackConfig(epsilon=6, steps=30, variant=variant, targeted=targeted,
                       target_label=1 if targeted else None)
    together = attack_batch(model, batch, cfg)
    for i, o in enumerate(together):
        s = attack_single(model, batch.images[i], int(batch.labels[i]), cfg, sample_index=i)
        assert np.array_equal(s.x_adv, o.x_adv)
        assert (s.success, s.iterations_used, s.stopped_early, s.adv_pred) == \
               (o.success, o.iterations_used, o.stopped_early, o.adv_pred)


def test_batch_of_one_matches_single():
    rng = np.random.default_rng(8)
    model = random_model(rng)
    batch = make_batch(rng, model, 1)
    cfg = AttackConfig(epsilon=4, steps=20)
    [o] = attack_batch(model, batch, cfg)
    s = attack_single(model, batch.images[0], int(batch.labels[0]), cfg)
    assert np.array_equal(o.x_adv, s.x_adv) and o.iterations_used == s.iterations_used


def test_stopped_sample_is_frozen():
    rng = np.random.default_rng(9)
    model = random_model(rng, "linear")
    batch = make_batch(rng, model, 16)
    traces = [[] for _ in range(len(batch))]
    outs = attack_batch(model, batch, AttackConfig(epsilon=8, steps=50), traces)
    early = [i for i, o in enumerate(outs) if o.stopped_early]
    assert early
    for i in early:
        o, tr = outs[i], traces[i]
        assert len(tr) == o.iterations_used and tr[-1].stopped
        assert not any(r.stopped for r in tr[:-1])
        assert np.abs(o.x_adv - batch.images[i]).max() == tr[-1].linf_rounded
        assert o.adv_pred == tr[-1].pred_rounded


def test_targeted_success_means_hitting_the_target():
    rng = np.random.default_rng(10)
    model = random_model(rng)
    batch = make_batch(rng, model, 10)
    for o in attack_batch(model, batch, AttackConfig(epsilon=8, steps=40, targeted=True, target_label=2)):
        assert o.success == (o.adv_pred == 2) and o.target == 2


def test_targeted_at_own_label_stops_at_first_surviving_pixel():
    rng = np.random.default_rng(11)
    model = random_model(rng, "linear")
    x = rng.integers(40, 200, (2, 5, 5)).astype(float)
    y = int(predict(model, x))
    out = attack_single(model, x, y, AttackConfig(epsilon=8, steps=100, targeted=True, target_label=y))
    assert out.success and out.adv_pred == y


@pytest.mark.parametrize("kwargs", [
    dict(epsilon=0), dict(epsilon=-1), dict(epsilon=float("nan")), dict(steps=0), dict(steps=2.5),
    dict(variant="fgsm"), dict(schedule="square"), dict(targeted=True), dict(baseline_alpha=0),
    dict(random_init=True),
])
def test_config_errors(kwargs):
    with pytest.raises(InputError):
        AttackConfig(**kwargs)


def test_input_errors():
    rng = np.random.default_rng(12)
    model = random_model(rng)
    x = rng.integers(0, 256, (2, 5, 5)).astype(float)
    with pytest.raises(InputError):
        attack_single(model, x + 0.5, 0, AttackConfig())
    with pytest.raises(InputError):
        attack_single(model, x[:, :4], 0, AttackConfig())
    with pytest.raises(InputError):
        attack_single(model, x, 7, AttackConfig())
    with pytest.raises(InputError):
        attack_single(model, x, 0, AttackConfig(targeted=True, target_label=3))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(list(Variant)), st.floats(0.5, 16),
       st.integers(1, 40), st.booleans())
def test_budget_is_never_exceeded(seed, variant, eps, steps, targeted):
    rng = np.random.default_rng(seed)
    model = random_model(rng, "dense")
    batch = make_batch(rng, model, 4)
    cfg = AttackConfig(epsilon=eps, steps=steps, variant=variant, targeted=targeted,
                       target_label=0 if targeted else None)
    for x, o in zip(batch.images, attack_batch(model, batch, cfg)):
        assert np.abs(o.x_adv - x).max() <= eps
        assert o.x_adv.dtype == np.uint8
