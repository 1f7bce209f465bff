"""Overfit smoke run plus the contrastive-separation comparison.

Trains SiGAN on 8 toy identities x 4 images (HR 32) with the default config,
then measures mean held-out feature energy for genuine vs impostor pairs,
with and without the contrastive sub-step.

    python scripts/smoke_run.py --iterations 500 --out runs/smoke
"""

import argparse
import dataclasses
import json
import logging
import time
from pathlib import Path

import numpy as np

from sglab.config import TrainConfig
from sglab.evaluation import pair_energies
from sglab.synthetic import toy_catalog
from sglab.data import sample_pair_batch, split_catalog
from sglab.training import train


def smoke_catalogs(seed: int = 0):
    catalog = toy_catalog(8, 8, 32, seed)
    return split_catalog(catalog, 0.5, seed)


def run(iterations: int, lambda_c: float, seed: int = 0):
    train_cat, test_cat = smoke_catalogs(seed)
    config = TrainConfig(iterations=iterations, lambda_c=lambda_c, seed=seed)
    t0 = time.perf_counter()
    ckpt, metrics = train(config, train_cat, log_every=50)
    elapsed = time.perf_counter() - t0
    pairs = sample_pair_batch(test_cat, 200, 0.5, np.random.default_rng(seed + 1000))
    energy = pair_energies(ckpt, pairs.lr1, pairs.lr2)
    y = pairs.y.numpy().astype(bool)
    genuine, impostor = float(energy[y].mean()), float(energy[~y].mean())
    return ckpt, metrics, {
        "lambda_c": lambda_c,
        "iterations": iterations,
        "seconds": elapsed,
        "rec_first": metrics[0].rec_l1 if metrics else None,
        "rec_last": metrics[-1].rec_l1 if metrics else None,
        "nonfinite": int(sum(not np.isfinite([m.loss_d, m.loss_g, m.loss_c]).all() for m in metrics)),
        "genuine_energy": genuine,
        "impostor_energy": impostor,
        "ratio": genuine / impostor,
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--iterations", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    results = []
    for lambda_c in (1.0, 0.0):
        _, _, summary = run(args.iterations, lambda_c, args.seed)
        print(json.dumps(summary))
        results.append(summary)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        Path(args.out, "smoke.json").write_text(json.dumps(results, indent=2))


if __name__ == "__main__":
    main()
