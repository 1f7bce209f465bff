"""Write a synthetic identity-folder corpus (``root/id###/img##.png``).

    python scripts/make_toy_corpus.py runs/toy --identities 8 --images 8 --size 32
"""

import argparse

from sglab.synthetic import write_toy_corpus


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("root")
    ap.add_argument("--identities", type=int, default=8)
    ap.add_argument("--images", type=int, default=8)
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    root = write_toy_corpus(args.root, args.identities, args.images, args.size, args.seed)
    print(f"wrote {args.identities * args.images} images under {root}")


if __name__ == "__main__":
    main()
