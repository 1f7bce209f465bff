"""Test-time hallucination, including exhaustive identity-label search for
the label-conditioned generator."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from . import nets
from .checkpoint import Checkpoint
from .data import (
    IdentityCatalog,
    ensure_writable_dir,
    image_side,
    iter_image_files,
    load_image,
    save_image,
    synthesize_lr,
    to_chw,
    to_hwc,
)

log = logging.getLogger(__name__)


class VariantMismatch(ValueError):
    pass


@dataclass(frozen=True)
class SearchResult:
    best_label: int
    confidence: float
    per_label_scores: np.ndarray
    sr_image: np.ndarray  # 4N x 4N x 3
    evaluations: int


def _as_lr_batch(ckpt: Checkpoint, image) -> torch.Tensor:
    """HWC / CHW / batched input -> b x 3 x N x N at the checkpoint's LR size."""
    N = ckpt.config.lr_size
    if isinstance(image, torch.Tensor):
        x = image.to(torch.float32)
        if x.dim() == 3:
            x = x[None]
    else:
        arr = np.asarray(image, dtype=np.float32)
        if arr.ndim == 3:
            arr = arr[None]
        x = to_chw(arr)
    if x.dim() != 4 or x.shape[1] != 3:
        raise nets.ShapeError(f"expected RGB image(s), got shape {tuple(x.shape)}")
    if tuple(x.shape[2:]) != (N, N):
        raise nets.ShapeError(f"input is {x.shape[2]}x{x.shape[3]}, checkpoint expects {N}x{N}")
    return x


def _require(ckpt: Checkpoint, variants, what: str):
    if ckpt.variant not in variants:
        raise VariantMismatch(f"variant mismatch: {what} needs a {'/'.join(variants)} checkpoint, got {ckpt.variant}")


@torch.no_grad()
def hallucinate(ckpt: Checkpoint, lr_image) -> np.ndarray:
    """One inference-mode forward pass: N x N x 3 -> 4N x 4N x 3 (or batched)."""
    _require(ckpt, ("sigan", "diegan"), "hallucinate")
    x = _as_lr_batch(ckpt, lr_image)
    sr = nets.generator_forward(ckpt.generator, ckpt.gen_params, x).output
    out = to_hwc(sr)
    return out[0] if np.ndim(lr_image) == 3 else out


def label_search(
    generate: Callable[[torch.Tensor, torch.Tensor], torch.Tensor],
    score: Callable[[torch.Tensor, torch.Tensor], torch.Tensor],
    lr: torch.Tensor,
    num_identities: int,
    *,
    chunk: int = 64,
) -> SearchResult:
    """Try every identity label in ``[0, C)`` and keep the best-scored one.

    ``generate(lr4, planes_lr)`` maps a batch of label-conditioned LR inputs
    (RGB + plane) to 4-channel hallucinations; ``score(sr_rgb, planes_hr)``
    returns one confidence per row. Candidates are evaluated in chunks; each
    label counts as one generator + discriminator evaluation. Ties go to the
    lowest label.
    """
    if num_identities < 1:
        raise ValueError("label search needs C >= 1")
    if lr.dim() == 3:
        lr = lr[None]
    n = lr.shape[-1]
    scores = np.empty(num_identities, dtype=np.float64)
    evaluations = 0
    best_img = None
    best = -np.inf
    for start in range(0, num_identities, chunk):
        labels = torch.arange(start, min(start + chunk, num_identities))
        k = labels.numel()
        plane_lr = nets.label_plane(labels, num_identities, n)
        lr4 = torch.cat([lr.expand(k, -1, -1, -1), plane_lr], dim=1)
        sr4 = generate(lr4, plane_lr)
        plane_hr = nets.label_plane(labels, num_identities, sr4.shape[-1])
        s = score(sr4[:, :3], plane_hr).reshape(-1).double().numpy()
        evaluations += k
        scores[start : start + k] = s
        j = int(np.argmax(s))
        if s[j] > best:
            best, best_img = s[j], sr4[j, :3]
    winner = int(np.argmax(scores))
    return SearchResult(winner, float(scores[winner]), scores, to_hwc(best_img), evaluations)


@torch.no_grad()
def gie_label_search(ckpt: Checkpoint, lr_image, num_identities: int | None = None, *, chunk: int = 64) -> SearchResult:
    """Score D(G(x | y_i) | y_i) for every label and return the argmax."""
    _require(ckpt, ("giegan",), "label search")
    C = ckpt.num_identities if num_identities is None else int(num_identities)
    if C < 1:
        raise ValueError("label search needs C >= 1")
    x = _as_lr_batch(ckpt, lr_image)
    if x.shape[0] != 1:
        raise nets.ShapeError("label search takes a single LR face")

    def generate(lr4, _planes):
        return nets.generator_forward(ckpt.generator, ckpt.gen_params, lr4).output

    def score(sr_rgb, planes):
        return nets.discriminator_forward(ckpt.discriminator, ckpt.disc_params, sr_rgb, planes).output

    return label_search(generate, score, x, C, chunk=chunk)


def hallucinate_any(ckpt: Checkpoint, lr_image) -> np.ndarray:
    """Hallucinate with whatever the variant needs (label search for giegan)."""
    if ckpt.variant == "giegan":
        return gie_label_search(ckpt, lr_image).sr_image
    return hallucinate(ckpt, lr_image)


def _prepare_lr(ckpt: Checkpoint, image: np.ndarray) -> np.ndarray:
    N = ckpt.config.lr_size
    if image.shape[0] == N:
        return image
    if image.shape[0] == 4 * N:
        return synthesize_lr(image)
    raise nets.ShapeError(f"image is {image.shape[0]}px; expected LR {N} or HR {4 * N}")


def batch_hallucinate(ckpt: Checkpoint, source, out_dir) -> list[tuple[str, str]]:
    """Hallucinate every face in a catalog or image directory.

    HR inputs are block-averaged to LR first. Outputs go to
    ``out_dir/<source_id>.sr.png``; ``out_dir/manifest.csv`` lists
    ``input_path,output_path`` lines. Returns the manifest rows.
    """
    out = ensure_writable_dir(out_dir)
    items: list[tuple[str, str, np.ndarray]] = []
    if isinstance(source, IdentityCatalog):
        for r in source.records:
            items.append((r.source_id, r.source_id, r.image))
    else:
        root = Path(source)
        base = root.parent if root.is_file() else root
        for f in iter_image_files(root):
            img = load_image(f, image_side(f))
            sid = f.relative_to(base).with_suffix("").as_posix()
            items.append((str(f), sid, img))
    manifest = []
    for in_path, sid, img in items:
        sr = hallucinate_any(ckpt, _prepare_lr(ckpt, img))
        target = out / f"{sid}.sr.png"
        target.parent.mkdir(parents=True, exist_ok=True)
        save_image(target, sr)
        manifest.append((in_path, str(target)))
    if not manifest:
        return manifest
    with open(out / "manifest.csv", "w") as fh:
        for a, b in manifest:
            fh.write(f"{a},{b}\n")
    return manifest

