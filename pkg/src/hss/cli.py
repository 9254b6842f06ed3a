"""``hss`` command line: preprocess, train, evaluate and generate."""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .config import FIELDS, load_config
from .corpus import read_lexicon
from .errors import ConfigError, HSSError
from .metrics import read_pair_files, text_report
from .train import run_evaluate, run_generate, run_preprocess, run_train

CONFIG_HELP = {
    "d": "embedding and hidden size",
    "l2": "L2 regularisation weight",
    "split": "train,validation,test fractions",
    "n_sentences": "sentences per review to train on and score against ('all' keeps every sentence)",
    "checkpoint": "checkpoint file to load (default <checkpoint-dir>/best.ckpt)",
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value file; flags override its values")
    group = p.add_argument_group("run configuration")
    for name in FIELDS:
        group.add_argument(f"--{name.replace('_', '-')}", dest=name, default=None, metavar="VALUE",
                           help=CONFIG_HELP.get(name))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hss", description="Train and evaluate the explainable recommender.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="filter, tokenize and split a review corpus")
    _add_config_flags(p)

    p = sub.add_parser("train", help="train a model and write checkpoints plus a CSV log")
    _add_config_flags(p)
    p.add_argument("--resume", action="store_true", help="continue from <checkpoint-dir>/last.ckpt")

    p = sub.add_parser("evaluate", help="score a checkpoint, or a pair of generated/reference files")
    _add_config_flags(p)
    p.add_argument("--eval-split", default="test", choices=["train", "validation", "test"])
    p.add_argument("--candidates", help="TSV of user_id, item_id, text to score without a model")
    p.add_argument("--references", help="TSV aligned with --candidates")
    p.add_argument("--features", help="feature lexicon for coverage when scoring files")

    p = sub.add_parser("generate", help="explain one user/item pair")
    _add_config_flags(p)
    p.add_argument("user_id")
    p.add_argument("item_id")
    return parser


def _config(args):
    overrides = {name: getattr(args, name) for name in FIELDS}
    return load_config(args.config, overrides)


def cmd_preprocess(args) -> int:
    cfg = _config(args)
    ds = run_preprocess(cfg)
    stats = ds.stats()
    print(f"wrote {cfg.dataset}")
    for key in ("users", "items", "reviews", "features", "vocab"):
        print(f"{key:>10}  {stats[key]}")
    print(f"{'sparsity':>10}  {stats['sparsity']:.4f}")
    print(f"{'split':>10}  " + " / ".join(str(len(p)) for p in ds.split))
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    result = run_train(cfg, resume=args.resume)
    if result.history:
        last = result.history[-1]
        print(f"epoch {last.epoch}: joint {last.joint:.4f} rating {last.rating:.4f} "
              f"generation {last.generation:.4f} val_rmse {last.val_rmse:.4f}")
    print(f"best epoch {result.best_epoch}; log {cfg.log_path}")
    return 0


def cmd_evaluate(args) -> int:
    if args.candidates or args.references:
        if not (args.candidates and args.references):
            raise ConfigError("--candidates and --references go together")
        pairs = [p for _, _, p in read_pair_files(args.candidates, args.references)]
        feats = read_lexicon(args.features) if args.features else ()
        print(text_report(pairs, feats).to_json())
        return 0
    cfg = _config(args)
    ev = run_evaluate(cfg, args.eval_split)
    print(ev.report.to_json())
    return 0


def cmd_generate(args) -> int:
    cfg = _config(args)
    print(run_generate(cfg, args.user_id, args.item_id))
    return 0


COMMANDS = {"preprocess": cmd_preprocess, "train": cmd_train, "evaluate": cmd_evaluate, "generate": cmd_generate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except HSSError as exc:
        print(f"hss: {exc.category} error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
