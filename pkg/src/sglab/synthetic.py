"""Procedural toy face corpus for smoke tests and demos.

Each identity fixes skin/hair/background colours and facial geometry; each
image of that identity jitters position, brightness and pixel noise.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import catalog_from_arrays, save_image


def _identity_params(rng: np.random.Generator) -> dict:
    return {
        "background": rng.uniform(0.0, 1.0, 3),
        "skin": rng.uniform(0.25, 0.95, 3),
        "hair": rng.uniform(0.0, 0.8, 3),
        "eyes": rng.uniform(0.0, 0.6, 3),
        "mouth": rng.uniform(0.2, 0.9, 3),
        "face_w": rng.uniform(0.28, 0.42),
        "face_h": rng.uniform(0.34, 0.46),
        "hair_line": rng.uniform(-0.35, -0.1),
        "eye_dx": rng.uniform(0.1, 0.2),
        "eye_y": rng.uniform(-0.12, 0.02),
        "eye_r": rng.uniform(0.04, 0.08),
        "mouth_w": rng.uniform(0.08, 0.22),
        "mouth_y": rng.uniform(0.15, 0.28),
    }


def render_face(p: dict, size: int, rng: np.random.Generator, jitter: float = 1.0) -> np.ndarray:
    shift = rng.normal(0.0, 0.03 * jitter, 2)
    gain = 1.0 + rng.normal(0.0, 0.05 * jitter)
    coords = (np.arange(size) + 0.5) / size - 0.5
    yy, xx = np.meshgrid(coords - shift[1], coords - shift[0], indexing="ij")

    img = np.broadcast_to(p["background"], (size, size, 3)).copy()
    face = (xx / p["face_w"]) ** 2 + (yy / p["face_h"]) ** 2 <= 1.0
    img[face] = p["skin"]
    hair = face & (yy < p["hair_line"])
    img[hair] = p["hair"]
    for sx in (-1.0, 1.0):
        eye = (xx - sx * p["eye_dx"]) ** 2 + (yy - p["eye_y"]) ** 2 <= p["eye_r"] ** 2
        img[eye] = p["eyes"]
    mouth = (np.abs(xx) <= p["mouth_w"]) & (np.abs(yy - p["mouth_y"]) <= 0.03)
    img[mouth] = p["mouth"]

    img = img * gain + rng.normal(0.0, 0.02 * jitter, img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def toy_faces(num_identities: int, images_per_identity: int, size: int = 32, seed: int = 0):
    """Return ``(images, identities)`` with images shaped (n, size, size, 3)."""
    rng = np.random.default_rng(seed)
    params = [_identity_params(rng) for _ in range(num_identities)]
    images, ids = [], []
    for ident, p in enumerate(params):
        for _ in range(images_per_identity):
            images.append(render_face(p, size, rng))
            ids.append(ident)
    return np.stack(images), np.array(ids)


def toy_catalog(num_identities: int, images_per_identity: int, size: int = 32, seed: int = 0):
    images, ids = toy_faces(num_identities, images_per_identity, size, seed)
    return catalog_from_arrays(images, ids, [f"id{i:03d}" for i in range(num_identities)])


def write_toy_corpus(root, num_identities: int, images_per_identity: int, size: int = 32, seed: int = 0) -> Path:
    """Write ``root/id###/img##.png``; ingesting it reproduces :func:`toy_catalog`
    up to 8-bit quantisation."""
    root = Path(root)
    images, ids = toy_faces(num_identities, images_per_identity, size, seed)
    counters: dict[int, int] = {}
    for img, ident in zip(images, ids):
        k = counters.get(int(ident), 0)
        counters[int(ident)] = k + 1
        folder = root / f"id{int(ident):03d}"
        folder.mkdir(parents=True, exist_ok=True)
        save_image(folder / f"img{k:02d}.png", img)
    return root
