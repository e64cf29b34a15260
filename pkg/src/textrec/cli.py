"""Command-line surface.

Subcommands: gen (render a dataset), train, eval, predict, gradcheck,
ablate.  Exit codes: 0 success, 1 usage error, 2 data/config error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .charrnn import DecoderConfig, VARIANTS
from .checkpoint import load_checkpoint, save_checkpoint
from .encoder import EncoderConfig
from .errors import (DataError, NumericalError, ShapeError, TextrecError)
from .evaluate import evaluate, format_report
from .lexicon import Lexicon
from .model import ModelConfig, predict_words
from .synthdata import (IMAGE_SHAPE, RenderSpec, default_lexicon, gen_dataset,
                        load_lexicon_file, load_samples, read_pgm,
                        standardize_images, _rescale_nearest)
from .training import TrainConfig, fit, init_params
from .autograd import Tensor

__all__ = ["main", "cli"]

READOUTS = ("heads",) + VARIANTS


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we use 1
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="textrec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="render a synthetic word-image dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, default=20000, help="number of images")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--lexicon", help="word list file (default: bundled 200 words)")
    p.add_argument("--noise", type=float, default=0.04, help="additive noise sigma")

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--train", required=True, help="training manifest")
    p.add_argument("--val", required=True, help="validation manifest")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--readout", choices=READOUTS, default="heads",
                   help="character heads or decoder variant")
    p.add_argument("--encoder", choices=("base", "recursive", "recurrent"), default="base")
    p.add_argument("--iterations", type=int, default=None,
                   help="tied-conv applications per block (default 1, or 3 for "
                        "recursive/recurrent encoders)")
    p.add_argument("--channels", default="16,16,32,32,64,64,128,128",
                   help="conv ladder widths, comma-separated")
    p.add_argument("--fc", type=int, default=256, help="width of both FC layers")
    p.add_argument("--hidden", type=int, default=256, help="decoder hidden size")
    p.add_argument("--config", help="key=value training config file")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--init-mode", choices=("constant", "scaled"), default=None)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--lexicon", help="lexicon file enabling constrained mode")
    p.add_argument("--log", help="write path<TAB>gt<TAB>pred rows here")

    p = sub.add_parser("predict", help="predict the word in one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="PGM image path")
    p.add_argument("--lexicon", help="constrain the output to a lexicon")

    p = sub.add_parser("gradcheck", help="run the finite-difference oracle suite")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("ablate", help="train encoder x decoder combinations at toy scale")
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True, help="output directory for checkpoints/table")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--combos", default=None,
                   help="comma list of encoder:readout pairs (default: a representative set)")
    return parser


def _model_config(args) -> ModelConfig:
    channels = tuple(int(c) for c in args.channels.split(","))
    iterations = args.iterations
    if iterations is None:
        iterations = 1 if args.encoder == "base" else 3
    enc = EncoderConfig(kind=args.encoder, iterations=iterations, channels=channels,
                        fc_sizes=(args.fc, args.fc))
    dec = None
    if args.readout != "heads":
        dec = DecoderConfig(variant=args.readout, hidden=args.hidden,
                            feature=enc.feature_size)
    return ModelConfig(encoder=enc, decoder=dec)


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig.from_file(args.config) if args.config else TrainConfig(
        batch_size=32, init_mode="scaled")
    overrides = {"epochs": "max_epochs", "batch": "batch_size", "seed": "seed",
                 "lr": "lr0", "init_mode": "init_mode"}
    updates = {field: getattr(args, flag) for flag, field in overrides.items()
               if getattr(args, flag, None) is not None}
    if updates:
        values = {f: getattr(cfg, f) for f in cfg.__dataclass_fields__}
        values.update(updates)
        cfg = TrainConfig(**values)
    return cfg


def _cmd_gen(args) -> int:
    lexicon = load_lexicon_file(args.lexicon) if args.lexicon else default_lexicon()
    spec = RenderSpec(noise_sigma=args.noise)
    result = gen_dataset(lexicon, args.n, spec, args.seed, args.out)
    for split in ("train", "val", "test"):
        print(f"{split}: {result['counts'][split]} samples -> {result[split]}")
    return 0


def _cmd_train(args) -> int:
    train_cfg = _train_config(args)
    if args.resume:
        config, params = load_checkpoint(args.resume)
    else:
        config = _model_config(args)
        params = init_params(config, train_cfg)
    train_data = load_samples(args.train)
    val_data = load_samples(args.val)
    log = (lambda msg: None) if args.quiet else print

    def on_epoch(state, live_params, row):
        save_checkpoint(args.out + ".last", config, live_params)
        if state.best_epoch == state.epoch and state.best_params is not None:
            snapshot = {k: Tensor(v, name=k) for k, v in state.best_params.items()}
            save_checkpoint(args.out, config, snapshot)

    best, state, history = fit(config, train_cfg, train_data, val_data,
                               params=params, on_epoch=on_epoch, log=log)
    save_checkpoint(args.out, config, best)
    with open(args.out + ".log", "w", encoding="utf-8") as fh:
        fh.write("epoch\tlr\ttrain_loss\tval_char_err\tval_word_err\tseconds\n")
        for row in history:
            fh.write(f"{row['epoch']}\t{row['lr']:.8f}\t{row['train_loss']:.6f}\t"
                     f"{row['val_error']:.6f}\t{row['word_error']:.6f}\t"
                     f"{row['seconds']:.1f}\n")
    print(f"best val char error {state.best_error:.4f} at epoch {state.best_epoch}; "
          f"checkpoint -> {args.out}")
    return 0


def _load_eval_set(manifest: str):
    images, labels = load_samples(manifest)
    paths = []
    with open(manifest, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                paths.append(line.split("\t", 1)[0])
    return images, labels, paths


def _cmd_eval(args) -> int:
    config, params = load_checkpoint(args.checkpoint)
    images, labels, paths = _load_eval_set(args.manifest)
    lex = Lexicon.from_file(args.lexicon) if args.lexicon else None
    report = evaluate(params, config, images, labels, lexicon=lex,
                      dataset=os.path.basename(args.manifest), paths=paths)
    print(format_report(report))
    if args.log:
        with open(args.log, "w", encoding="utf-8") as fh:
            for path, truth, pred in report.rows:
                fh.write(f"{path}\t{truth}\t{pred}\n")
    return 0


def _cmd_predict(args) -> int:
    config, params = load_checkpoint(args.checkpoint)
    image = read_pgm(args.image)
    target = IMAGE_SHAPE[1:]
    if image.shape != target:
        image = _rescale_nearest(image, *target)
    batch = standardize_images(image[None][None])
    word = predict_words(params, config, Tensor(batch))[0]
    if args.lexicon:
        from .lexicon import constrained_select
        word = constrained_select(word, Lexicon.from_file(args.lexicon))
    print(word)
    return 0


def _cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite
    results = run_suite(report=None if args.quiet else print)
    failures = [name for name, _, ok in results if not ok]
    if failures:
        print(f"{len(failures)}/{len(results)} checks FAILED: {', '.join(failures)}")
        return 3
    print(f"all {len(results)} gradient checks passed")
    return 0


_ABLATE_DEFAULT = ("base:heads", "recursive:heads", "base:rnn2f",
                   "recursive:rnn2f", "recursive:rnn_atten")


def _cmd_ablate(args) -> int:
    combos = (args.combos.split(",") if args.combos else list(_ABLATE_DEFAULT))
    os.makedirs(args.out, exist_ok=True)
    train_data = load_samples(args.train)
    val_data = load_samples(args.val)
    test_images, test_labels = load_samples(args.test)
    rows = []
    for combo in combos:
        enc_kind, _, readout = combo.partition(":")
        if enc_kind not in ("base", "recursive", "recurrent") or readout not in READOUTS:
            raise DataError(f"bad combo {combo!r}; use encoder:readout")
        enc = EncoderConfig(kind=enc_kind, iterations=1 if enc_kind == "base" else 3,
                            channels=(16, 16, 32, 32, 64, 64, 128, 128), fc_sizes=(256, 256))
        dec = None if readout == "heads" else DecoderConfig(
            variant=readout, hidden=256, feature=256)
        config = ModelConfig(encoder=enc, decoder=dec)
        t_cfg = TrainConfig(batch_size=32, max_epochs=args.epochs,
                            init_mode="scaled", seed=args.seed)
        print(f"[{combo}] training {args.epochs} epochs ...")
        best, state, _ = fit(config, t_cfg, train_data, val_data,
                             log=lambda m: print(f"[{combo}] {m}"))
        save_checkpoint(os.path.join(args.out, combo.replace(":", "_") + ".ckpt"),
                        config, best)
        report = evaluate(best, config, test_images, test_labels, dataset="test")
        rows.append((combo, report.accuracy))
        print(f"[{combo}] test accuracy {report.accuracy:.2f}%")
    table = os.path.join(args.out, "ablation.tsv")
    with open(table, "w", encoding="utf-8") as fh:
        fh.write("encoder:readout\ttest_accuracy\n")
        for combo, acc in rows:
            fh.write(f"{combo}\t{acc:.2f}\n")
    width = max(len(c) for c, _ in rows)
    print("\nablation results (unconstrained word accuracy):")
    for combo, acc in rows:
        print(f"  {combo:<{width}}  {acc:6.2f}%")
    print(f"table -> {table}")
    return 0


_COMMANDS = {"gen": _cmd_gen, "train": _cmd_train, "eval": _cmd_eval,
             "predict": _cmd_predict, "gradcheck": _cmd_gradcheck,
             "ablate": _cmd_ablate}


def cli(argv=None) -> int:
    """Run one command; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (DataError, ShapeError, TextrecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli())
