"""Central finite-difference checks of every loss and of the generator
composed with the L1 reconstruction loss, in float64."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F
from torch.overrides import TorchFunctionMode

from . import losses, nets

H = 1e-5
LOSS_TOL = 1e-4
NET_TOL = 1e-3


@dataclass(frozen=True)
class GradCheck:
    name: str
    max_rel_err: float
    tol: float
    checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def rel_err(a: float, b: float, floor: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_inputs(name: str, fn: Callable[..., torch.Tensor], inputs: list[torch.Tensor], *, h=H, tol=LOSS_TOL, floor=1e-8) -> GradCheck:
    """Compare autograd against central differences for every input entry."""
    leaves = [x.detach().clone().double().requires_grad_(True) for x in inputs]
    grads = torch.autograd.grad(fn(*leaves), leaves, allow_unused=True)
    worst, count = 0.0, 0
    for i, x in enumerate(leaves):
        g = torch.zeros_like(x) if grads[i] is None else grads[i]
        base = [v.detach() for v in leaves]
        for j in range(x.numel()):
            plus, minus = base[i].clone(), base[i].clone()
            plus.view(-1)[j] += h
            minus.view(-1)[j] -= h
            with torch.no_grad():
                fp = float(fn(*[plus if k == i else base[k] for k in range(len(base))]))
                fm = float(fn(*[minus if k == i else base[k] for k in range(len(base))]))
            worst = max(worst, rel_err(float(g.view(-1)[j]), (fp - fm) / (2 * h), floor))
            count += 1
    return GradCheck(name, worst, tol, count)


def _away_from(x: torch.Tensor, ref: torch.Tensor, gap: float = 1e-3) -> torch.Tensor:
    """Nudge x so no entry of |x - ref| falls within ``gap`` of the abs kink."""
    d = x - ref
    close = d.abs() < gap
    return torch.where(close, ref + torch.sign(d + (d == 0)) * 2 * gap, x)


def loss_checks(seed: int = 0) -> list[GradCheck]:
    g = torch.Generator().manual_seed(seed)
    rnd = lambda *s: torch.rand(*s, generator=g, dtype=torch.float64)  # noqa: E731
    out = []

    # impostor pairs kept inside the margin so the hinge is active
    f1 = 0.01 * rnd(6, 8)
    f2 = _away_from(0.01 * rnd(6, 8), f1, 1e-4)
    y = torch.tensor([1.0, 0.0, 1.0, 0.0, 1.0, 0.0], dtype=torch.float64)
    out.append(check_inputs("contrastive_loss", lambda a, b: losses.contrastive_loss(a, b, y, 0.5), [f1, f2]))
    far1, far2 = rnd(4, 8), rnd(4, 8) + 2.0
    out.append(check_inputs("contrastive_loss(saturated)", lambda a, b: losses.contrastive_loss(a, b, torch.zeros(4), 0.5), [far1, far2]))

    d_real, d_fake = 0.05 + 0.9 * rnd(8), 0.05 + 0.9 * rnd(8)
    out.append(check_inputs("gan_discriminator_loss", losses.gan_discriminator_loss, [d_real, d_fake]))
    out.append(check_inputs("gan_generator_loss", lambda d: losses.gan_generator_loss(d, True), [d_fake]))
    out.append(check_inputs("gan_generator_loss(non-saturating)", lambda d: losses.gan_generator_loss(d, False), [d_fake]))

    hr = rnd(2, 3, 4, 4)
    sr = _away_from(rnd(2, 3, 4, 4), hr)
    out.append(check_inputs("reconstruction_l1", losses.reconstruction_l1, [sr, hr]))

    hr4 = rnd(2, 4, 4, 4)
    sr4 = _away_from(rnd(2, 4, 4, 4), hr4)
    d2 = 0.05 + 0.9 * rnd(2)
    out.append(
        check_inputs("gie_total_loss", lambda d, s: losses.gie_total_loss(d, s, hr4, 0.25, 0.5), [d2, sr4])
    )

    C = 5
    probs = torch.softmax(rnd(3, C + 1), dim=1)
    onehot = losses.one_hot(torch.tensor([0, 2, 4]), C + 1, torch.float64)
    hr3 = rnd(3, 3, 4, 4)
    sr3 = _away_from(rnd(3, 3, 4, 4), hr3)
    out.append(
        check_inputs(
            "die_reconstruction_loss",
            lambda p, s: losses.die_reconstruction_loss(p, onehot, s, hr3, 0.25),
            [probs, sr3],
        )
    )
    return out


class _KinkPattern(TorchFunctionMode):
    """Records which side of every ReLU / abs kink each element sits on."""

    def __init__(self):
        super().__init__()
        self.sides: list[torch.Tensor] = []

    def __torch_function__(self, func, types, args=(), kwargs=None):
        if func in _KINKED and args:
            self.sides.append(args[0].detach() > 0)
        return func(*args, **(kwargs or {}))


_KINKED = {F.relu, F.leaky_relu, torch.relu, torch.abs, torch.Tensor.abs}


def _same_sides(a: list[torch.Tensor], b: list[torch.Tensor]) -> bool:
    return len(a) == len(b) and all(torch.equal(x, y) for x, y in zip(a, b))


def generator_check(seed: int = 0, samples: int = 50, *, N: int = 4, h: float = H, tol: float = NET_TOL) -> GradCheck:
    """Generator (training-mode BN) + reconstruction_l1 on N x N input;
    finite differences on ``samples`` randomly drawn parameter entries.

    A step that moves any ReLU or L1 residual across its kink is shrunk
    (down to h/1000) until both probes stay on the base point's linear piece.
    """
    spec = nets.build_generator("sigan", N)
    params = nets.to_dtype(nets.init_parameters(spec, seed), torch.float64)
    g = torch.Generator().manual_seed(seed + 1)
    lr = torch.rand(2, 3, N, N, generator=g, dtype=torch.float64)
    hr = torch.rand(2, 3, 4 * N, 4 * N, generator=g, dtype=torch.float64)
    names = [n for n in spec.learnable_names() if not n.startswith("head.")]

    def loss(p):
        return losses.reconstruction_l1(nets.generator_forward(spec, p, lr, train=True).output, hr)

    def probe(p):
        with torch.no_grad(), _KinkPattern() as rec:
            value = float(loss(p))
        return value, rec.sides

    value, grads = losses.differentiate(loss, params, names)
    _, base_sides = probe(params)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        name = names[int(rng.integers(len(names)))]
        j = int(rng.integers(params[name].numel()))
        for step in (h, h / 10, h / 100, h / 1000):
            vals, clean = [], True
            for sign in (1, -1):
                q = dict(params)
                t = params[name].clone()
                t.view(-1)[j] += sign * step
                q[name] = t
                v, sides = probe(q)
                vals.append(v)
                clean = clean and _same_sides(sides, base_sides)
            if clean:
                break
        numeric = (vals[0] - vals[1]) / (2 * step)
        # central differences carry ~eps*|L|/step of roundoff; gradients below
        # 1e4 such units (e.g. biases feeding batch norm, exactly 0) compare absolutely
        floor = max(1e-6, 1e4 * np.finfo(np.float64).eps * abs(float(value)) / step)
        worst = max(worst, rel_err(float(grads[name].view(-1)[j]), numeric, floor))
    return GradCheck("generator+reconstruction_l1", worst, tol, samples)


def run_gradient_suite(seed: int = 0) -> list[GradCheck]:
    return loss_checks(seed) + [generator_check(seed)]
