"""Command-line entry point: ``sglab <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__

log = logging.getLogger("sglab")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sglab", description="Identity-preserving face hallucination toolkit.")
    p.add_argument("--version", action="version", version=f"sglab {__version__}")
    p.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    t = sub.add_parser("train", help="train a model from a key=value config file")
    t.add_argument("--config", required=True)

    h = sub.add_parser("hallucinate", help="super-resolve one image or a directory of images")
    h.add_argument("--checkpoint", required=True)
    h.add_argument("--input", required=True)
    h.add_argument("--output", required=True)

    s = sub.add_parser("search-label", help="label search with a giegan checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--num-identities", type=int, required=True)
    s.add_argument("--output", default=None, help="optional path for the winning hallucination")

    e = sub.add_parser("eval", help="recognition, verification and fidelity report")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--pairs", default=None, help="optional path1,path2,label list")
    e.add_argument("--seed", type=int, default=0)

    g = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    g.add_argument("--seed", type=int, default=0)
    return p


def _load(path):
    from .checkpoint import file_digest, load_checkpoint

    ckpt = load_checkpoint(path)
    log.info("checkpoint %s sha256=%s variant=%s iteration=%d", path, file_digest(path), ckpt.variant, ckpt.iteration)
    log.info("checkpoint config digest %s seed=%d", ckpt.config.digest(), ckpt.config.seed)
    return ckpt


def cmd_train(args) -> int:
    from .checkpoint import file_digest
    from .config import format_config, parse_run_config
    from .data import ingest_dataset, write_manifest
    from .training import train

    config, paths = parse_run_config(args.config)
    if paths.data_root is None:
        raise UsageError("config must set data_root")
    for line in format_config(config, paths).splitlines():
        log.info("config %s", line)
    log.info("seed=%d digest=%s", config.seed, config.digest())
    catalog = ingest_dataset(paths.data_root, config.hr_size)
    out = Path(paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_config(config, paths))
    write_manifest(catalog, out / "manifest.csv")
    train(config, catalog, out)
    ck = out / "checkpoint.sgck"
    log.info("wrote %s sha256=%s", ck, file_digest(ck))
    return EXIT_OK


def cmd_hallucinate(args) -> int:
    from .data import image_side, load_image, save_image
    from .inference import _prepare_lr, batch_hallucinate, hallucinate_any

    ckpt = _load(args.checkpoint)
    src = Path(args.input)
    if src.is_dir():
        rows = batch_hallucinate(ckpt, src, args.output)
        log.info("hallucinated %d images into %s", len(rows), args.output)
    else:
        img = load_image(src, image_side(src))
        sr = hallucinate_any(ckpt, _prepare_lr(ckpt, img))
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        save_image(args.output, sr)
        log.info("wrote %s", args.output)
    return EXIT_OK


def cmd_search_label(args) -> int:
    from .data import image_side, load_image, save_image
    from .inference import _prepare_lr, gie_label_search

    if args.num_identities < 1:
        raise UsageError("--num-identities must be >= 1")
    ckpt = _load(args.checkpoint)
    src = Path(args.input)
    img = load_image(src, image_side(src))
    result = gie_label_search(ckpt, _prepare_lr(ckpt, img), args.num_identities)
    print(f"best_label={result.best_label}")
    print(f"confidence={result.confidence!r}")
    print(f"evaluations={result.evaluations}")
    if args.output:
        save_image(args.output, result.sr_image)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .data import ingest_dataset
    from .evaluation import emit_report, evaluate_checkpoint, format_report, read_pair_list

    ckpt = _load(args.checkpoint)
    catalog = ingest_dataset(args.data, ckpt.config.hr_size)
    pairs = read_pair_list(args.pairs) if args.pairs else None
    report = evaluate_checkpoint(ckpt, catalog, pairs, seed=args.seed)
    emit_report(report, args.report)
    sys.stdout.write(format_report(report))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradient_suite

    log.info("gradient suite seed=%d", args.seed)
    results = run_gradient_suite(args.seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name} max_rel_err={r.max_rel_err:.3e} tol={r.tol:g} n={r.checked}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


COMMANDS = {
    "train": cmd_train,
    "hallucinate": cmd_hallucinate,
    "search-label": cmd_search_label,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def run_command(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
        if args.command is None:
            raise UsageError(parser.format_help())
    except UsageError as exc:
        sys.stderr.write(str(exc).rstrip() + "\n")
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(f"sglab {args.command}: {exc}\n")
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError, ArithmeticError) as exc:
        log.error("%s", exc)
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
