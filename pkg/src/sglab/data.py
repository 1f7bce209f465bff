"""Face corpus ingestion, LR synthesis and genuine/impostor pair sampling."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

log = logging.getLogger(__name__)

UPSCALE = 4
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class FaceRecord:
    image: np.ndarray  # H x W x 3, float32 in [0, 1]
    identity: int
    source_id: str

    def __post_init__(self):
        img = self.image
        if img.ndim != 3 or img.shape[2] != 3:
            raise DataError(f"{self.source_id}: expected HxWx3 image, got {img.shape}")
        if img.shape[0] != img.shape[1]:
            raise DataError(f"{self.source_id}: image is not square")
        if img.shape[0] % UPSCALE:
            raise DataError(f"{self.source_id}: size {img.shape[0]} not divisible by {UPSCALE}")
        if img.size and (img.min() < 0.0 or img.max() > 1.0):
            raise DataError(f"{self.source_id}: intensities outside [0, 1]")
        if self.identity < 0:
            raise DataError(f"{self.source_id}: negative identity")


@dataclass(frozen=True)
class IdentityCatalog:
    """Immutable collection of HR faces with identities in ``[0, C)``.

    ``names`` maps identity index to the folder name it came from, when known.
    Catalogs produced by :func:`split_catalog` may hold singleton identities;
    :func:`ingest_dataset` guarantees at least two records per identity.
    """

    records: tuple[FaceRecord, ...]
    num_identities: int
    hr_size: int
    names: tuple[str, ...] = ()
    images: np.ndarray = field(init=False, repr=False, compare=False)
    identities: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        records = tuple(self.records)
        object.__setattr__(self, "records", records)
        if self.num_identities < 1:
            raise DataError("catalog needs at least one identity")
        for r in records:
            if r.image.shape[0] != self.hr_size:
                raise DataError(f"{r.source_id}: size {r.image.shape[0]} != hr_size {self.hr_size}")
            if r.identity >= self.num_identities:
                raise DataError(f"{r.source_id}: identity {r.identity} >= {self.num_identities}")
        if records:
            images = np.stack([r.image for r in records]).astype(np.float32)
        else:
            images = np.zeros((0, self.hr_size, self.hr_size, 3), np.float32)
        images.setflags(write=False)
        ids = np.array([r.identity for r in records], dtype=np.int64)
        ids.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "identities", ids)

    def __len__(self):
        return len(self.records)

    @property
    def lr_size(self) -> int:
        return self.hr_size // UPSCALE

    def indices_of(self, identity: int) -> np.ndarray:
        return np.flatnonzero(self.identities == identity)

    def validate(self) -> None:
        """Check the training invariants: contiguous ids, >=2 records each, C >= 2."""
        if self.num_identities < 2:
            raise DataError("catalog needs at least two identities")
        counts = np.bincount(self.identities, minlength=self.num_identities)
        bad = np.flatnonzero(counts < 2)
        if bad.size:
            raise DataError(f"identities with fewer than 2 records: {bad.tolist()}")


@dataclass(frozen=True)
class PairBatch:
    """Paired faces, channels-first: lr* is b x 3 x N x N, hr* is b x 3 x 4N x 4N."""

    lr1: torch.Tensor
    lr2: torch.Tensor
    hr1: torch.Tensor
    hr2: torch.Tensor
    y: torch.Tensor  # 1 = genuine, 0 = impostor
    id1: np.ndarray
    id2: np.ndarray

    def __len__(self):
        return self.y.shape[0]


@dataclass(frozen=True)
class FaceBatch:
    """Single-face batch with exact identity labels (GieGAN / DieGAN)."""

    lr: torch.Tensor
    hr: torch.Tensor
    identity: torch.Tensor

    def __len__(self):
        return self.identity.shape[0]


def as_rng(rng_state) -> np.random.Generator:
    if isinstance(rng_state, np.random.Generator):
        return rng_state
    return np.random.default_rng(rng_state)


def synthesize_lr(hr: np.ndarray, factor: int = UPSCALE) -> np.ndarray:
    """Block-average downsampling over the two spatial axes preceding channels.

    Accepts ``(..., H, W, C)`` arrays. The mean is taken in float64 so a
    constant block maps back to exactly the same float32 value.
    """
    hr = np.asarray(hr)
    if factor < 1:
        raise DataError("factor must be >= 1")
    if hr.ndim < 3:
        raise DataError(f"expected (..., H, W, C) array, got shape {hr.shape}")
    h, w, c = hr.shape[-3:]
    if h % factor or w % factor:
        raise DataError(f"spatial dims {h}x{w} not divisible by {factor}")
    lead = hr.shape[:-3]
    blocks = hr.astype(np.float64).reshape(*lead, h // factor, factor, w // factor, factor, c)
    out = blocks.mean(axis=(-4, -2))
    return out.astype(hr.dtype if np.issubdtype(hr.dtype, np.floating) else np.float32)


def to_chw(images: np.ndarray) -> torch.Tensor:
    """(b, H, W, C) numpy -> (b, C, H, W) float32 tensor."""
    return torch.from_numpy(np.ascontiguousarray(np.moveaxis(images, -1, -3), dtype=np.float32))


def to_hwc(tensor: torch.Tensor) -> np.ndarray:
    return np.moveaxis(tensor.detach().cpu().numpy(), -3, -1)


def load_image(path, hr_size: int) -> np.ndarray:
    """Decode, center-crop to square, resize to hr_size and scale to [0, 1]."""
    with Image.open(path) as im:
        im = im.convert("RGB")
        w, h = im.size
        s = min(w, h)
        left, top = (w - s) // 2, (h - s) // 2
        im = im.crop((left, top, left + s, top + s))
        if s != hr_size:
            im = im.resize((hr_size, hr_size), Image.Resampling.BICUBIC)
        arr = np.asarray(im, dtype=np.float32) / 255.0
    return arr


def image_side(path) -> int:
    """Side length of the centre square crop."""
    with Image.open(path) as im:
        return min(im.size)


def save_image(path, image: np.ndarray) -> None:
    arr = np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def ingest_dataset(root_path, hr_size: int) -> IdentityCatalog:
    """Read ``root/<identity>/<image>`` into a catalog.

    Identities are numbered in lexicographic folder order after dropping
    folders with fewer than two decodable images.
    """
    root = Path(root_path)
    if hr_size < UPSCALE or hr_size % UPSCALE:
        raise DataError(f"hr_size must be a positive multiple of {UPSCALE}")
    if not root.is_dir():
        raise DataError(f"no identities: {root} is not a directory")
    kept: list[tuple[str, list[tuple[str, np.ndarray]]]] = []
    for folder in sorted(p for p in root.iterdir() if p.is_dir()):
        images = []
        for f in sorted(folder.iterdir()):
            if f.suffix.lower() not in IMAGE_SUFFIXES:
                continue
            try:
                images.append((f"{folder.name}/{f.stem}", load_image(f, hr_size)))
            except (OSError, ValueError) as exc:
                log.warning("skipping unreadable image %s: %s", f, exc)
        if len(images) < 2:
            log.warning("excluding identity %r: %d usable image(s)", folder.name, len(images))
            continue
        kept.append((folder.name, images))
    if len(kept) < 2:
        raise DataError(f"no identities: need >= 2 usable identity folders under {root}, found {len(kept)}")
    records = [
        FaceRecord(image=img, identity=idx, source_id=sid)
        for idx, (_, images) in enumerate(kept)
        for sid, img in images
    ]
    return IdentityCatalog(tuple(records), len(kept), hr_size, tuple(n for n, _ in kept))


def write_manifest(catalog: IdentityCatalog, path) -> None:
    with open(path, "w") as fh:
        for r in catalog.records:
            h, w, c = r.image.shape
            fh.write(f"{r.source_id},{r.identity},{h}x{w}x{c}\n")


def sample_pair_batch(catalog: IdentityCatalog, b: int, genuine_fraction: float = 0.5, rng_state=None) -> PairBatch:
    """Draw ``b`` pairs, exactly ``round(b * genuine_fraction)`` of them genuine.

    Genuine pairs use two distinct records of one identity when it has two;
    otherwise the single record is paired with itself.
    """
    if b < 1:
        raise DataError("b must be >= 1")
    if not 0.0 <= genuine_fraction <= 1.0:
        raise DataError("genuine_fraction must lie in [0, 1]")
    rng = as_rng(rng_state)
    n_gen = int(round(b * genuine_fraction))
    n_imp = b - n_gen
    C = catalog.num_identities
    pools = [catalog.indices_of(i) for i in range(C)]
    populated = [i for i in range(C) if pools[i].size]
    if n_imp and len(populated) < 2:
        raise DataError("impostor pairs need at least two populated identities")

    idx1 = np.empty(b, dtype=np.int64)
    idx2 = np.empty(b, dtype=np.int64)
    for k in range(n_gen):
        pool = pools[populated[rng.integers(len(populated))]]
        if pool.size >= 2:
            a, c = rng.choice(pool.size, size=2, replace=False)
        else:
            a = c = 0
        idx1[k], idx2[k] = pool[a], pool[c]
    for k in range(n_gen, b):
        i, j = rng.choice(len(populated), size=2, replace=False)
        p1, p2 = pools[populated[i]], pools[populated[j]]
        idx1[k] = p1[rng.integers(p1.size)]
        idx2[k] = p2[rng.integers(p2.size)]
    y = np.r_[np.ones(n_gen), np.zeros(n_imp)]
    order = rng.permutation(b)
    idx1, idx2, y = idx1[order], idx2[order], y[order]

    hr1 = catalog.images[idx1]
    hr2 = catalog.images[idx2]
    return PairBatch(
        lr1=to_chw(synthesize_lr(hr1)),
        lr2=to_chw(synthesize_lr(hr2)),
        hr1=to_chw(hr1),
        hr2=to_chw(hr2),
        y=torch.from_numpy(y.astype(np.float32)),
        id1=catalog.identities[idx1],
        id2=catalog.identities[idx2],
    )


def sample_face_batch(catalog: IdentityCatalog, b: int, rng_state=None) -> FaceBatch:
    rng = as_rng(rng_state)
    if not len(catalog):
        raise DataError("empty catalog")
    idx = rng.integers(len(catalog), size=b)
    hr = catalog.images[idx]
    return FaceBatch(
        lr=to_chw(synthesize_lr(hr)),
        hr=to_chw(hr),
        identity=torch.from_numpy(catalog.identities[idx].copy()),
    )


def split_catalog(catalog: IdentityCatalog, holdout_fraction: float, rng_state=None):
    """Record-level split stratified by identity.

    Each identity sends ``round(n * holdout_fraction)`` records to the test
    side, clamped to ``[1, n - 1]`` so both sides keep a record whenever the
    identity has two or more (train wins for singletons).
    """
    if not 0.0 < holdout_fraction < 1.0:
        raise DataError("holdout_fraction must lie in (0, 1)")
    rng = as_rng(rng_state)
    train_idx, test_idx = [], []
    for ident in range(catalog.num_identities):
        pool = catalog.indices_of(ident)
        n = pool.size
        if n == 0:
            continue
        n_test = min(max(int(round(n * holdout_fraction)), 1), n - 1)
        perm = rng.permutation(pool)
        test_idx.extend(sorted(perm[:n_test].tolist()))
        train_idx.extend(sorted(perm[n_test:].tolist()))

    def subset(idx):
        return IdentityCatalog(
            tuple(catalog.records[i] for i in sorted(idx)),
            catalog.num_identities,
            catalog.hr_size,
            catalog.names,
        )

    return subset(train_idx), subset(test_idx)


def catalog_from_arrays(images: np.ndarray, identities, names=None) -> IdentityCatalog:
    """Catalog from in-memory faces; source ids read ``<name>/img<k>``
    with ``k`` counted per identity (the folder layout ingestion expects)."""
    identities = [int(i) for i in identities]
    names = tuple(names or ())
    seen: dict[int, int] = {}
    records = []
    for img, ident in zip(images, identities):
        k = seen.get(ident, 0)
        seen[ident] = k + 1
        folder = names[ident] if ident < len(names) else str(ident)
        records.append(FaceRecord(np.asarray(img, dtype=np.float32), ident, f"{folder}/img{k:02d}"))
    C = max(identities) + 1 if identities else 1
    return IdentityCatalog(tuple(records), C, int(images.shape[1]), names)


def iter_image_files(root) -> list[Path]:
    root = Path(root)
    if root.is_file():
        return [root]
    return sorted(p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def ensure_writable_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if not os.access(path, os.W_OK | os.X_OK):
        raise PermissionError(f"output directory not writable: {path}")
    return path
