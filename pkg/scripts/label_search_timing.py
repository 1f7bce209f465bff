"""Wall time of the GieGAN label search against the number of candidate labels.

Search cost should grow linearly in C while a plain feed-forward pass stays
flat. Prints one row per C and the least-squares fit.

    python scripts/label_search_timing.py --labels 10 50 100 500 --repeats 3
"""

import argparse
import json
import time

import numpy as np

from sglab.config import TrainConfig
from sglab.inference import gie_label_search, hallucinate
from sglab.training import init_state


def best_of(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--labels", type=int, nargs="+", default=[10, 50, 100, 500])
    ap.add_argument("--lr-size", type=int, default=8)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cap = max(args.labels)
    gie = init_state(TrainConfig(variant="giegan", lr_size=args.lr_size, seed=args.seed), cap).to_checkpoint()
    sig = init_state(TrainConfig(variant="sigan", lr_size=args.lr_size, seed=args.seed), cap).to_checkpoint()
    lr = np.random.default_rng(args.seed).random((args.lr_size, args.lr_size, 3)).astype(np.float32)

    feed_forward = best_of(lambda: hallucinate(sig, lr), args.repeats)
    times = [best_of(lambda c=c: gie_label_search(gie, lr, c), args.repeats) for c in args.labels]
    slope, intercept = np.polyfit(args.labels, times, 1)
    fit = slope * np.asarray(args.labels) + intercept
    r2 = 1 - float(((np.asarray(times) - fit) ** 2).sum()) / float(((np.asarray(times) - np.mean(times)) ** 2).sum())

    for c, t in zip(args.labels, times):
        print(f"C={c:5d}  search {t:8.3f}s  ({t / feed_forward:7.1f}x feed-forward)")
    print(json.dumps({"feed_forward_s": feed_forward, "slope_s_per_label": slope, "intercept_s": intercept, "r2": r2}))


if __name__ == "__main__":
    main()
