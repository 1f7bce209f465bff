import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from sglab import losses
from sglab.gradcheck import check_inputs, loss_checks

D = torch.float64


def t(x):
    return torch.tensor(x, dtype=D)


# --- loop oracles --------------------------------------------------------


def energy_loop(a, b):
    return sum(abs(float(x) - float(y)) for x, y in zip(a, b))


def contrastive_loop(f1, f2, y, m):
    total = 0.0
    for a, b, yi in zip(f1, f2, y):
        e = energy_loop(a, b)
        total += 0.5 * e * e if yi else 0.5 * max(0.0, m - e) ** 2
    return total / len(y)


def d_loss_loop(dr, df):
    return -(sum(math.log(v) for v in dr) / len(dr) + sum(math.log(1 - v) for v in df) / len(df))


def l1_loop(sr, hr):
    b = sr.shape[0]
    flat_s, flat_h = sr.reshape(b, -1), hr.reshape(b, -1)
    return sum(sum(abs(float(x) - float(y)) for x, y in zip(flat_s[i], flat_h[i])) for i in range(b)) / b


def ce_loop(probs, target):
    return -sum(math.log(float(probs[i, k])) for i, k in enumerate(target)) / len(target)


# --- hand values ----------------------------------------------------------


def test_energy_examples():
    assert float(losses.contrastive_energy(t([0.2, 0.4]), t([0.2, 0.4]))) == 0.0
    e1, e2 = torch.zeros(128, dtype=D), torch.zeros(128, dtype=D)
    e1[0], e2[1] = 1.0, 1.0
    assert float(losses.contrastive_energy(e1, e2)) == 2.0


def test_energy_matches_loop():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, b = rng.normal(size=128), rng.normal(size=128)
        assert float(losses.contrastive_energy(t(a), t(b))) == pytest.approx(energy_loop(a, b), abs=1e-12)


@pytest.mark.parametrize(
    "e, y, expected",
    [(0.0, 1, 0.0), (0.0, 0, 0.125), (0.3, 1, 0.045), (0.2, 0, 0.045), (0.7, 0, 0.0), (0.5, 0, 0.0)],
)
def test_contrastive_hand_values(e, y, expected):
    f1 = t([[0.0, 0.0]])
    f2 = t([[e, 0.0]])
    assert float(losses.contrastive_loss(f1, f2, t([y]), 0.5)) == pytest.approx(expected, abs=1e-12)


def test_contrastive_saturated_hinge_has_zero_gradient():
    f1 = t([[0.0, 0.0]]).requires_grad_(True)
    f2 = t([[0.7, 0.0]])
    loss = losses.contrastive_loss(f1, f2, t([0.0]), 0.5)
    (g,) = torch.autograd.grad(loss, f1)
    assert float(loss.detach()) == 0.0
    assert torch.equal(g, torch.zeros_like(g))


def test_contrastive_matches_loop():
    rng = np.random.default_rng(1)
    for _ in range(10):
        f1, f2 = 0.05 * rng.normal(size=(8, 16)), 0.05 * rng.normal(size=(8, 16))
        y = rng.integers(0, 2, size=8)
        got = float(losses.contrastive_loss(t(f1), t(f2), t(y), 0.5))
        assert got == pytest.approx(contrastive_loop(f1, f2, y, 0.5), abs=1e-12)


def test_contrastive_rejects_bad_margin():
    with pytest.raises(losses.LossError):
        losses.contrastive_loss(t([[0.0]]), t([[0.0]]), t([0.0]), 0.0)


def test_gan_discriminator_hand_values():
    assert float(losses.gan_discriminator_loss(t([0.5, 0.5]), t([0.5, 0.5]))) == pytest.approx(2 * math.log(2), abs=1e-12)
    eps = losses.EPS
    near_zero = float(losses.gan_discriminator_loss(t([1 - eps]), t([eps])))
    assert 0 <= near_zero < 1e-6


def test_gan_discriminator_matches_loop():
    rng = np.random.default_rng(2)
    for _ in range(10):
        dr, df = rng.uniform(0.01, 0.99, 16), rng.uniform(0.01, 0.99, 16)
        assert float(losses.gan_discriminator_loss(t(dr), t(df))) == pytest.approx(d_loss_loop(dr, df), abs=1e-12)


def test_gan_generator_hand_values():
    assert float(losses.gan_generator_loss(t([0.5]), True)) == pytest.approx(math.log(0.5), abs=1e-12)
    assert float(losses.gan_generator_loss(t([0.5]), False)) == pytest.approx(math.log(2), abs=1e-12)
    clamped = float(losses.gan_generator_loss(t([1.0]), True))
    assert clamped == pytest.approx(math.log(losses.EPS), rel=1e-6)


def test_gan_generator_gradient_fd():
    r = check_inputs("g", lambda d: losses.gan_generator_loss(d, True), [t([0.2, 0.5, 0.9])], tol=1e-6)
    assert r.passed, r


@pytest.mark.parametrize("bad", [[-0.1], [1.1], [float("nan")]])
def test_scores_outside_unit_interval_rejected(bad):
    with pytest.raises(losses.LossError):
        losses.gan_generator_loss(t(bad))


def test_reconstruction_hand_values():
    hr = torch.ones(1, 3, 2, 2, dtype=D)
    assert float(losses.reconstruction_l1(torch.zeros_like(hr), hr)) == 12.0
    assert float(losses.reconstruction_l1(hr, hr)) == 0.0


def test_reconstruction_matches_loop():
    rng = np.random.default_rng(3)
    for _ in range(5):
        sr, hr = rng.random((3, 3, 4, 4)), rng.random((3, 3, 4, 4))
        assert float(losses.reconstruction_l1(t(sr), t(hr))) == pytest.approx(l1_loop(sr, hr), abs=1e-12)


def test_reconstruction_shape_mismatch():
    with pytest.raises(losses.LossError):
        losses.reconstruction_l1(torch.zeros(1, 3, 2, 2), torch.zeros(1, 3, 4, 4))


def test_gie_hand_values():
    d = t([0.5])
    hr4 = torch.zeros(1, 4, 1, 1, dtype=D)
    sr4 = torch.ones(1, 4, 1, 1, dtype=D)
    assert float(losses.gie_total_loss(d, sr4, hr4, 0.0, 0.0)) == pytest.approx(math.log(0.5), abs=1e-12)
    assert float(losses.gie_total_loss(d, sr4, hr4, 0.25, 0.5)) == pytest.approx(2.0, abs=1e-12)
    assert float(losses.gie_total_loss(d, sr4, hr4, 1.0, 0.0, strict=False)) == pytest.approx(math.log(2), abs=1e-12)
    assert float(losses.gie_total_loss(d, hr4, hr4, 0.0, 1.0, strict=False)) == 0.0


def test_gie_weight_invariant():
    z = torch.zeros(1, 4, 1, 1)
    with pytest.raises(losses.LossError, match="gamma\\+beta must be < 1"):
        losses.gie_total_loss(torch.tensor([0.5]), z, z, 0.6, 0.5)


def test_gie_affine_in_components():
    """Component values pinned to 0/1 pick out each weight."""
    g, b = 0.2, 0.3
    d_real = t([math.exp(-1.0)])  # realism term = 1
    sr = torch.zeros(1, 4, 1, 1, dtype=D)
    hr = sr.clone()
    hr[0, 0] = 1.0  # L1 = 1
    value = float(losses.gie_total_loss(d_real, sr, hr, g, b))
    gan = math.log(1 - math.exp(-1.0))
    assert value == pytest.approx(g * 1.0 + b * 1.0 + (1 - g - b) * gan, abs=1e-12)
    assert float(losses.gie_total_loss(d_real, hr, hr, g, b)) == pytest.approx(g + (1 - g - b) * gan, abs=1e-12)


def test_die_hand_values():
    C = 10
    uniform = torch.full((2, C + 1), 1.0 / (C + 1), dtype=D)
    onehot = losses.one_hot([3, 7], C + 1, D)
    hr = torch.ones(2, 3, 2, 2, dtype=D)
    sr = torch.zeros_like(hr)
    assert float(losses.die_reconstruction_loss(uniform, onehot, hr, hr, 0.0)) == pytest.approx(math.log(11), abs=1e-12)
    assert float(losses.die_reconstruction_loss(uniform, onehot, sr, hr, 1.0)) == pytest.approx(12.0, abs=1e-12)
    assert float(losses.die_reconstruction_loss(uniform, onehot, sr, hr, 0.25)) == pytest.approx(
        0.75 * math.log(11) + 3.0, abs=1e-12
    )
    assert float(losses.die_reconstruction_loss(onehot, onehot, hr, hr, 0.5)) == 0.0


def test_die_matches_loop_and_reduces_to_l1():
    rng = np.random.default_rng(4)
    for _ in range(5):
        logits = rng.normal(size=(4, 6))
        probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        target = rng.integers(0, 6, size=4)
        sr, hr = rng.random((4, 3, 2, 2)), rng.random((4, 3, 2, 2))
        onehot = losses.one_hot(target, 6, D)
        got = float(losses.die_reconstruction_loss(t(probs), onehot, t(sr), t(hr), 0.3))
        want = 0.7 * ce_loop(probs, target) + 0.3 * l1_loop(sr, hr)
        assert got == pytest.approx(want, abs=1e-12)
        assert float(losses.die_reconstruction_loss(t(probs), onehot, t(sr), t(hr), 1.0)) == pytest.approx(
            float(losses.reconstruction_l1(t(sr), t(hr))), abs=1e-12
        )


def test_die_rejects_bad_onehot():
    with pytest.raises(losses.LossError):
        losses.die_reconstruction_loss(torch.full((1, 3), 1 / 3), torch.tensor([[1.0, 1.0, 0.0]]), torch.zeros(1, 3), torch.zeros(1, 3), 0.5)


def test_class_cross_entropy_uniform():
    probs = torch.full((3, 11), 1 / 11, dtype=D)
    assert float(losses.class_cross_entropy(probs, torch.tensor([0, 5, 10]))) == pytest.approx(math.log(11), abs=1e-12)


# --- differentiate --------------------------------------------------------


def test_constant_loss_has_zero_gradients():
    params = {"w": torch.ones(3, dtype=D), "b": torch.zeros(2, dtype=D)}
    value, grads = losses.differentiate(lambda p: torch.tensor(4.0, dtype=D), params)
    assert float(value) == 4.0
    assert all(torch.equal(g, torch.zeros_like(g)) for g in grads.values())


def test_differentiate_linear():
    params = {"w": t([1.0, 2.0, 3.0])}
    value, grads = losses.differentiate(lambda p: (p["w"] * t([4.0, 5.0, 6.0])).sum(), params)
    assert float(value) == 32.0
    assert torch.equal(grads["w"], t([4.0, 5.0, 6.0]))


def test_differentiate_does_not_mutate_inputs():
    w = t([1.0, 2.0])
    params = {"w": w}
    losses.differentiate(lambda p: (p["w"] ** 2).sum(), params)
    assert params["w"] is w and not w.requires_grad


def test_every_loss_passes_fd_check():
    for r in loss_checks(0):
        assert r.passed, r


# --- properties -----------------------------------------------------------

feats = st.lists(st.floats(-2, 2, allow_nan=False), min_size=4, max_size=4)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(feats, feats, st.integers(0, 1)), min_size=1, max_size=5), st.floats(0.05, 3.0))
def test_contrastive_nonnegative_and_symmetric(rows, m):
    f1 = t([r[0] for r in rows])
    f2 = t([r[1] for r in rows])
    y = t([r[2] for r in rows])
    a = float(losses.contrastive_loss(f1, f2, y, m))
    b = float(losses.contrastive_loss(f2, f1, y, m))
    assert a >= 0 and math.isfinite(a)
    assert a == b


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 5), st.floats(0, 5), st.floats(0.05, 3.0))
def test_contrastive_monotone_in_energy(e1, e2, m):
    lo, hi = sorted((e1, e2))
    z = t([[0.0]])

    def at(e, y):
        return float(losses.contrastive_loss(z, t([[e]]), t([y]), m))

    assert at(lo, 0) >= at(hi, 0)
    if hi >= m:
        assert at(hi, 0) == 0.0
    if hi > lo + 1e-9:
        assert at(hi, 1) > at(lo, 1)


scores = st.lists(st.floats(0, 1), min_size=1, max_size=8)


@settings(max_examples=60, deadline=None)
@given(scores, scores)
def test_gan_losses_finite_under_clamp(dr, df):
    vals = [
        losses.gan_discriminator_loss(t(dr), t(df)),
        losses.gan_generator_loss(t(df), True),
        losses.gan_generator_loss(t(df), False),
        losses.realism_loss(t(df)),
    ]
    assert all(math.isfinite(float(v)) for v in vals)
    assert float(vals[0]) >= 0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_reconstruction_nonnegative_zero_iff_equal(b, seed):
    g = torch.Generator().manual_seed(seed)
    x = torch.rand(b, 3, 2, 2, generator=g, dtype=D)
    y = torch.rand(b, 3, 2, 2, generator=g, dtype=D)
    assert float(losses.reconstruction_l1(x, y)) > 0
    assert float(losses.reconstruction_l1(x, x)) == 0
