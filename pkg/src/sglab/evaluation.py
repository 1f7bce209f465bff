"""Desk-scale recognition / verification / fidelity evaluation.

Embeddings come from the generator's own 128-d perceptual head; distances
are L1, matching the contrastive energy used in training.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch
from scipy.stats import rankdata

from . import nets
from .checkpoint import Checkpoint
from .data import IdentityCatalog, image_side, load_image, synthesize_lr, to_chw
from .inference import hallucinate_any

PSNR_CAP = 99.0
KS = (1, 5, 10)


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class EvalReport:
    top1: float
    top5: float
    top10: float
    auc: float
    l1: float
    psnr: float
    gallery_size: int
    probe_count: int
    pair_count: int
    config_digest: str = ""
    method: str = ""


# --------------------------------------------------------------------------
# embeddings


def _lr_tensor(ckpt: Checkpoint, images) -> torch.Tensor:
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    N = ckpt.config.lr_size
    side = arr.shape[1]
    if side == 4 * N:
        arr = synthesize_lr(arr)
    elif side != N:
        raise nets.ShapeError(f"image is {side}px; checkpoint expects LR {N} (or HR {4 * N})")
    return to_chw(arr)


@torch.no_grad()
def features_of(ckpt: Checkpoint, lr: torch.Tensor) -> torch.Tensor:
    """Perceptual features for a b x 3 x N x N batch (zero label plane for giegan)."""
    if ckpt.generator.input_channels == 4:
        lr = torch.cat([lr, torch.zeros_like(lr[:, :1])], dim=1)
    return nets.perceptual_features(ckpt.generator, ckpt.gen_params, lr).output


def embed(ckpt: Checkpoint, image) -> np.ndarray:
    """128-vector for one HWC image; HR images are block-averaged to LR first."""
    return embed_batch(ckpt, np.asarray(image)[None])[0]


def embed_batch(ckpt: Checkpoint, images) -> np.ndarray:
    return features_of(ckpt, _lr_tensor(ckpt, images)).double().numpy()


def pair_energies(ckpt: Checkpoint, lr1: torch.Tensor, lr2: torch.Tensor) -> np.ndarray:
    """L1 feature energy per pair for channels-first LR batches."""
    f1, f2 = features_of(ckpt, lr1), features_of(ckpt, lr2)
    return (f1 - f2).abs().sum(dim=1).double().numpy()


# --------------------------------------------------------------------------
# metrics


def identify_topk(gallery, probes, ks=KS) -> dict[int, float]:
    """Closed-set identification by L1 nearest identity.

    ``gallery`` and ``probes`` are sequences of ``(vector, identity)``.
    Gallery identities are ranked by their closest vector (ties: lower id);
    a probe hits at k when its identity is among the first k.
    """
    if not len(gallery):
        raise EvalError("empty gallery")
    if not len(probes):
        raise EvalError("no probes")
    ks = sorted(set(int(k) for k in ks))
    g_vec = np.stack([np.asarray(v, dtype=np.float64) for v, _ in gallery])
    g_id = np.array([int(i) for _, i in gallery])
    uniq = np.unique(g_id)
    if ks[-1] > uniq.size:
        raise EvalError(f"gallery spans {uniq.size} identities, fewer than k={ks[-1]}")
    hits = {k: 0 for k in ks}
    for vec, ident in probes:
        d = np.abs(g_vec - np.asarray(vec, dtype=np.float64)).sum(axis=1)
        best = np.array([d[g_id == u].min() for u in uniq])
        order = uniq[np.lexsort((uniq, best))]
        where = np.flatnonzero(order == int(ident))
        rank = int(where[0]) if where.size else uniq.size
        for k in ks:
            hits[k] += rank < k
    return {k: hits[k] / len(probes) for k in ks}


def verification_auc(scores, labels) -> float:
    """P(genuine score > impostor score) + 0.5 * P(tie), via average ranks."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise EvalError("scores and labels must be equal-length vectors")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EvalError("AUC needs both genuine and impostor pairs")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    n = n_pos * n_neg
    # divide on the >= 0.5 side only; 1 - x is exact there, so swapping
    # labels yields exactly 1 - AUC
    if 2 * u >= n:
        return float(u / n)
    return float(1.0 - (n - u) / n)


def fidelity_metrics(sr, hr) -> tuple[float, float]:
    """(mean absolute error, PSNR in dB with peak 1, capped at 99 dB)."""
    sr = np.asarray(sr, dtype=np.float64)
    hr = np.asarray(hr, dtype=np.float64)
    if sr.shape != hr.shape:
        raise EvalError(f"shape mismatch: {sr.shape} vs {hr.shape}")
    diff = sr - hr
    mse = float(np.mean(diff**2))
    psnr = PSNR_CAP if mse < 1e-10 else min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))
    return float(np.mean(np.abs(diff))), psnr


# --------------------------------------------------------------------------
# pipeline


def read_pair_list(path) -> list[tuple[str, str, int]]:
    """``path1,path2,label`` lines; relative paths resolve against the list's folder."""
    path = Path(path)
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3 or parts[2] not in ("0", "1"):
            raise EvalError(f"{path}:{lineno}: expected path1,path2,label with label 0 or 1")
        a, b = (str(p if Path(p).is_absolute() else path.parent / p) for p in parts[:2])
        rows.append((a, b, int(parts[2])))
    return rows


def _load_any(path) -> np.ndarray:
    return load_image(path, image_side(path))


def score_pair_list(ckpt: Checkpoint, rows) -> tuple[np.ndarray, np.ndarray]:
    """Negated L1 embedding distance for each listed pair."""
    scores, labels = [], []
    for a, b, y in rows:
        ea, eb = embed(ckpt, _load_any(a)), embed(ckpt, _load_any(b))
        scores.append(-np.abs(ea - eb).sum())
        labels.append(y)
    return np.array(scores), np.array(labels)


def evaluate_checkpoint(ckpt: Checkpoint, catalog: IdentityCatalog, pairs=None, seed: int = 0) -> EvalReport:
    """Gallery: first record of each identity (ground truth). Probes: the
    remaining records, hallucinated from their LR version and embedded.

    Verification pairs each probe's hallucination with its own ground truth
    (genuine) and with a random other identity's ground truth (impostor),
    unless ``pairs`` (rows from :func:`read_pair_list`) is given. Top-k
    ranks beyond the gallery's identity count are reported at the count.
    """
    if catalog.hr_size != ckpt.config.hr_size:
        raise EvalError(f"catalog HR size {catalog.hr_size} != checkpoint HR size {ckpt.config.hr_size}")
    rng = np.random.default_rng(seed)
    first: dict[int, int] = {}
    for i, ident in enumerate(catalog.identities):
        first.setdefault(int(ident), i)
    gallery_idx = sorted(first.values())
    probe_idx = [i for i in range(len(catalog)) if i not in set(gallery_idx)]
    if not probe_idx:
        raise EvalError("catalog has no probe records (one image per identity)")

    gt_emb = embed_batch(ckpt, catalog.images)
    lr = synthesize_lr(catalog.images[probe_idx])
    sr = np.stack([hallucinate_any(ckpt, x) for x in lr])
    sr_emb = embed_batch(ckpt, sr)
    ids = catalog.identities

    gallery = [(gt_emb[i], ids[i]) for i in gallery_idx]
    probes = [(sr_emb[k], ids[i]) for k, i in enumerate(probe_idx)]
    n_ids = len(gallery_idx)
    capped = {k: min(k, n_ids) for k in KS}
    rates = identify_topk(gallery, probes, set(capped.values()))

    if pairs is None:
        scores, labels = [], []
        for k, i in enumerate(probe_idx):
            others = np.flatnonzero(ids != ids[i])
            j = int(others[rng.integers(others.size)])
            scores += [-np.abs(sr_emb[k] - gt_emb[i]).sum(), -np.abs(sr_emb[k] - gt_emb[j]).sum()]
            labels += [1, 0]
        scores, labels = np.array(scores), np.array(labels)
    else:
        scores, labels = score_pair_list(ckpt, pairs)

    l1, psnr = fidelity_metrics(sr, catalog.images[probe_idx])
    return EvalReport(
        top1=rates[capped[1]],
        top5=rates[capped[5]],
        top10=rates[capped[10]],
        auc=verification_auc(scores, labels),
        l1=l1,
        psnr=psnr,
        gallery_size=len(gallery),
        probe_count=len(probes),
        pair_count=int(labels.size),
        config_digest=ckpt.config.digest(),
        method=ckpt.variant,
    )


# --------------------------------------------------------------------------
# report files


def _fmt(x) -> str:
    if isinstance(x, float):
        fixed = f"{x:.6f}"
        return fixed if float(fixed) == x else repr(x)
    return str(x)


def format_report(report: EvalReport) -> str:
    d = asdict(report)
    lines = [f"{k}={_fmt(v)}" for k, v in d.items()]
    lines.append("")
    lines.append("method,top1,top5,top10,auc")
    lines.append(",".join([report.method or "model"] + [_fmt(d[k]) for k in ("top1", "top5", "top10", "auc")]))
    return "\n".join(lines) + "\n"


def emit_report(report: EvalReport, path) -> None:
    Path(path).write_text(format_report(report))


def parse_report(text: str) -> EvalReport:
    kinds = {f.name: f.type for f in fields(EvalReport)}
    cast = {"float": float, "int": int, "str": str}
    values = {}
    for line in text.splitlines():
        if "=" not in line:
            continue
        key, value = line.split("=", 1)
        if key in kinds:
            values[key] = cast[kinds[key]](value)
    return EvalReport(**values)


def read_report(path) -> EvalReport:
    return parse_report(Path(path).read_text())
