"""Loss functions for the three hallucination GANs.

Every loss returns a scalar tensor that carries the autograd graph; use
:func:`differentiate` (or ``torch.autograd``) for gradients. Logarithms are
natural; discriminator scores are clamped to ``[EPS, 1 - EPS]`` before any
log.
"""

from __future__ import annotations

from typing import Callable, Iterable

import torch

EPS = 1e-7
MARGIN = 0.5


class LossError(ValueError):
    pass


def _check_scores(scores: torch.Tensor, what: str) -> torch.Tensor:
    scores = torch.as_tensor(scores)
    if not torch.isfinite(scores).all() or (scores < 0).any() or (scores > 1).any():
        raise LossError(f"{what} must lie in (0, 1)")
    return scores.clamp(EPS, 1 - EPS)


def contrastive_energy(f1: torch.Tensor, f2: torch.Tensor) -> torch.Tensor:
    """L1 distance between feature vectors along the last axis."""
    if f1.shape != f2.shape:
        raise LossError(f"feature shapes differ: {tuple(f1.shape)} vs {tuple(f2.shape)}")
    return (f1 - f2).abs().sum(dim=-1)


def contrastive_loss(f1, f2, y, margin: float = MARGIN) -> torch.Tensor:
    """Mean over pairs of (1-y) * 0.5 * max(0, m - E)^2 + y * 0.5 * E^2.

    ``y`` = 1 marks a genuine pair. The impostor hinge has zero gradient at
    E == m.
    """
    if margin <= 0:
        raise LossError("margin must be > 0")
    e = contrastive_energy(f1, f2)
    y = torch.as_tensor(y, dtype=e.dtype)
    impostor = 0.5 * torch.clamp(margin - e, min=0.0) ** 2
    genuine = 0.5 * e**2
    return ((1 - y) * impostor + y * genuine).mean()


def gan_discriminator_loss(d_real, d_fake) -> torch.Tensor:
    """-(mean ln D(real) + mean ln(1 - D(fake))); descending it ascends the
    usual discriminator objective."""
    d_real = _check_scores(d_real, "real scores")
    d_fake = _check_scores(d_fake, "fake scores")
    return -(torch.log(d_real).mean() + torch.log1p(-d_fake).mean())


def gan_generator_loss(d_fake, saturating: bool = True) -> torch.Tensor:
    """mean ln(1 - D(fake)) when ``saturating``; otherwise the non-saturating
    surrogate -mean ln D(fake)."""
    d_fake = _check_scores(d_fake, "fake scores")
    if saturating:
        return torch.log1p(-d_fake).mean()
    return -torch.log(d_fake).mean()


def realism_loss(d_fake) -> torch.Tensor:
    """Cross-entropy of the judgments against an always-real target."""
    return -torch.log(_check_scores(d_fake, "fake scores")).mean()


def reconstruction_l1(sr: torch.Tensor, hr: torch.Tensor) -> torch.Tensor:
    """Per-image sum of absolute differences, averaged over the batch."""
    if sr.shape != hr.shape:
        raise LossError(f"shape mismatch: {tuple(sr.shape)} vs {tuple(hr.shape)}")
    if sr.dim() < 2:
        raise LossError("expected a batch of images")
    return (sr - hr).abs().flatten(1).sum(dim=1).mean()


def check_gie_weights(gamma: float, beta: float) -> None:
    if gamma < 0 or beta < 0:
        raise LossError("gamma and beta must be >= 0")
    if gamma + beta >= 1:
        raise LossError("gamma+beta must be < 1")


def gie_total_loss(d_fake, sr4, hr4, gamma: float, beta: float, *, strict: bool = True) -> torch.Tensor:
    """gamma * realism + beta * L1 over all four channels + (1 - gamma - beta) * GAN.

    The GAN term is the generator side of the adversarial loss, mean ln(1 - D).
    ``strict=False`` admits the boundary weights gamma + beta == 1.
    """
    if strict:
        check_gie_weights(gamma, beta)
    elif gamma < 0 or beta < 0 or gamma + beta > 1:
        raise LossError("weights out of range")
    if sr4.shape[1] != 4 or hr4.shape[1] != 4:
        raise LossError("expected 4-channel (RGB + identity) tensors")
    total = gamma * realism_loss(d_fake) + beta * reconstruction_l1(sr4, hr4)
    return total + (1 - gamma - beta) * gan_generator_loss(d_fake, saturating=True)


def class_cross_entropy(probs: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean -log p[target] over rows; ``target`` is an index vector."""
    p = probs.clamp(EPS, 1.0).gather(1, target.long()[:, None])[:, 0]
    return -torch.log(p).mean()


def one_hot(labels, num_classes: int, dtype=torch.float32) -> torch.Tensor:
    return torch.nn.functional.one_hot(torch.as_tensor(labels).long(), num_classes).to(dtype)


def die_reconstruction_loss(class_probs, y_onehot, sr, hr, gamma: float) -> torch.Tensor:
    """mean_i (1 - gamma) * (-y_i . log p_i) + gamma * ||sr_i - hr_i||_1."""
    if not 0 <= gamma <= 1:
        raise LossError("gamma must lie in [0, 1]")
    if class_probs.shape != y_onehot.shape:
        raise LossError("class_probs and y_onehot shapes differ")
    ok = ((y_onehot == 0) | (y_onehot == 1)).all() and (y_onehot.sum(dim=1) == 1).all()
    if not ok:
        raise LossError("y_onehot rows must be one-hot")
    if sr.shape != hr.shape:
        raise LossError(f"shape mismatch: {tuple(sr.shape)} vs {tuple(hr.shape)}")
    identity = -(y_onehot * torch.log(class_probs.clamp(EPS, 1.0))).sum(dim=1)
    fidelity = (sr - hr).abs().flatten(1).sum(dim=1)
    return ((1 - gamma) * identity + gamma * fidelity).mean()


# --------------------------------------------------------------------------
# gradients


def require_grad(params: dict, names: Iterable[str]) -> dict:
    """Copy of ``params`` where ``names`` are fresh leaves requiring grad."""
    names = set(names)
    return {k: (v.detach().requires_grad_(True) if k in names else v) for k, v in params.items()}


def gradients(loss: torch.Tensor, params: dict, names: Iterable[str], *, retain_graph: bool = False) -> dict:
    """d loss / d params[name] for each name; unused tensors get zeros."""
    names = list(names)
    leaves = [params[n] for n in names]
    if loss.requires_grad:
        grads = torch.autograd.grad(loss, leaves, allow_unused=True, retain_graph=retain_graph)
    else:
        grads = [None] * len(leaves)
    out = {}
    for n, leaf, g in zip(names, leaves, grads):
        g = torch.zeros_like(leaf) if g is None else g.detach()
        if not torch.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for tensor {n!r}")
        out[n] = g
    return out


def differentiate(loss_fn: Callable[[dict], torch.Tensor], params: dict, names: Iterable[str] | None = None):
    """Evaluate ``loss_fn(params)`` and return ``(value, gradients)``.

    Gradients are taken w.r.t. ``names`` (default: all entries of ``params``).
    """
    names = list(params) if names is None else list(names)
    live = require_grad(params, names)
    loss = torch.as_tensor(loss_fn(live))
    if loss.dim() != 0:
        raise LossError("loss_fn must return a scalar")
    if not torch.isfinite(loss):
        raise FloatingPointError("non-finite loss value")
    return loss.detach(), gradients(loss, live, names)
