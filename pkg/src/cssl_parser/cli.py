"""``cssl-parser`` command line.

Exit codes: 0 success, 1 usage error, 2 data or validation error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .augment import AugmentConfig, build_augmented_corpus, permute_sentence, sentence_rng
from .config import ConfigError, from_mapping, read_kv
from .conllu import ConlluError, InvalidTreeError, Treebank, load_conllu, save_conllu, validate_tree
from .evaluate import AlignmentError, format_summary, paired_t_test, robustness_report, score
from .model import CheckpointError, SentenceTooLongError, load_checkpoint
from .synth import GrammarSpec, generate_corpus, split_corpus
from .train import TrainConfig, TrainingDivergedError, fit

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _load(path) -> Treebank:
    try:
        return load_conllu(path)
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    except ConlluError as e:
        raise DataError(f"{path}: {e}") from None


def _require_valid(tb: Treebank, path) -> None:
    for i, s in enumerate(tb):
        report = validate_tree(s)
        if report:
            name = s.sent_id or str(i + 1)
            raise DataError(f"{path}: sentence {name}: {'; '.join(report.messages())}")


def _write(text: str, path) -> None:
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


# -- subcommands --------------------------------------------------------------

def cmd_permute(args) -> int:
    tb = _load(args.input)
    _require_valid(tb, args.input)
    out = []
    for i, sent in enumerate(tb):
        permuted, _ = permute_sentence(sent, sentence_rng(args.seed, i))
        out.append(permuted)
    save_conllu(Treebank(out, tb.source_path), args.output)
    return EXIT_OK


def cmd_augment(args) -> int:
    tb = _load(args.input)
    _require_valid(tb, args.input)
    cfg = AugmentConfig(copies_per_sentence=args.copies, rotation_probability=args.rotation_probability,
                        seed=args.seed)
    save_conllu(build_augmented_corpus(tb, cfg), args.output)
    return EXIT_OK


SYNTH_SIZES = {"train_size": 500, "dev_size": 100, "test_size": 200}


def cmd_synth(args) -> int:
    values = read_kv(args.config) if args.config else {}
    sizes = {k: int(values.pop(k, v)) for k, v in SYNTH_SIZES.items()}
    split_seed = int(values.pop("split_seed", 0))
    if args.seed is not None:
        values["seed"] = str(args.seed)
    grammar = GrammarSpec.from_mapping(values)
    total = sum(sizes.values())
    tb = generate_corpus(grammar, total)
    ratios = tuple(sizes[k] / total for k in ("train_size", "dev_size", "test_size"))
    parts = split_corpus(tb, ratios, split_seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in zip(("train", "dev", "test"), parts):
        save_conllu(part, out / f"{name}.conllu")
    print(f"train={len(parts[0])} dev={len(parts[1])} test={len(parts[2])} out_dir={out}")
    return EXIT_OK


_TRAIN_FLAGS = {
    # flag dest -> TrainConfig field
    "loss": "loss_mode", "augment": "augmentation", "tau": "tau", "lam": "lam",
    "batch_size": "batch_size", "lr": "learning_rate", "epochs": "epochs", "seed": "seed",
    "negatives": "negatives", "copies": "copies", "clip": "clip", "decoder": "decoder",
}


def cmd_train(args) -> int:
    overrides = {}
    for dest, field_name in _TRAIN_FLAGS.items():
        value = getattr(args, dest)
        if value is not None:
            overrides[field_name] = value
    if args.fixed_positives:
        overrides["fresh_positives_per_epoch"] = False
    if args.no_position_encoding:
        overrides["no_position_encoding"] = True
    try:
        values = read_kv(args.config) if args.config else {}
        values.update(overrides)
        cfg = from_mapping(TrainConfig, values)
    except (ConfigError, ValueError) as e:
        raise UsageError(f"train: {e}") from None
    train_tb = _load(args.train)
    dev_tb = _load(args.dev) if args.dev else None
    model_out = Path(args.model_out)
    stem = model_out.with_suffix("")
    _, report = fit(train_tb, dev_tb, cfg, checkpoint=model_out,
                    log_path=f"{stem}.log", summary_path=f"{stem}.summary.txt")
    print(f"best_epoch={report.best_epoch} best_dev_LAS="
          f"{'nan' if report.best_dev_las is None else f'{report.best_dev_las:.2f}'} checkpoint={model_out}")
    return EXIT_OK


def _load_model(path):
    try:
        return load_checkpoint(path)
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    except CheckpointError as e:
        raise DataError(str(e)) from None


def cmd_parse(args) -> int:
    model = _load_model(args.model)
    tb = _load(args.input)
    pred = model.parse(tb.sentences, decoder=args.decoder)
    save_conllu(Treebank(pred, tb.source_path), args.output)
    return EXIT_OK


def cmd_eval(args) -> int:
    gold = _load(args.gold)
    pred = _load(args.pred)
    res = score(gold, pred, ignore_punct=args.ignore_punct)
    print(f"UAS={res.uas:.2f} LAS={res.las:.2f}")
    if args.summary_out:
        _write(format_summary(res.summary()), args.summary_out)
    return EXIT_OK


def cmd_robustness(args) -> int:
    model = _load_model(args.model)
    gold = _load(args.gold)
    _require_valid(gold, args.gold)
    rep = robustness_report(model, gold, k=args.k, seed=args.seed, decoder=args.decoder,
                            ignore_punct=args.ignore_punct)
    text = format_summary(rep.summary())
    sys.stdout.write(text)
    if args.out:
        _write(text, args.out)
    return EXIT_OK


def cmd_significance(args) -> int:
    gold = _load(args.gold)
    a = score(gold, _load(args.pred_a), ignore_punct=args.ignore_punct)
    b = score(gold, _load(args.pred_b), ignore_punct=args.ignore_punct)
    res = paired_t_test(a.per_sentence_las, b.per_sentence_las)
    pairs = {
        "LAS_a": f"{a.las:.2f}", "LAS_b": f"{b.las:.2f}", "sentences": str(len(a.per_sentence_las)),
        "mean_difference": f"{res.mean_difference:.6f}", "t": f"{res.t:.6f}", "df": str(res.df),
        "p": f"{res.p:.6g}",
    }
    if res.degenerate:
        pairs["flag"] = res.degenerate
    sys.stdout.write(format_summary(pairs))
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cssl-parser", description="Biaffine dependency parsing with permutation-contrastive training.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("permute", help="randomly reorder the words of every sentence")
    s.add_argument("--in", dest="input", required=True, help="input CoNLL-U file")
    s.add_argument("--out", dest="output", required=True, help="output CoNLL-U file")
    s.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    s.set_defaults(func=cmd_permute)

    s = sub.add_parser("augment", help="append rotation-augmented copies of each sentence")
    s.add_argument("--in", dest="input", required=True, help="input CoNLL-U file")
    s.add_argument("--out", dest="output", required=True, help="output CoNLL-U file")
    s.add_argument("--copies", type=int, default=1, help="rotated copies per sentence, 0..5 (default 1)")
    s.add_argument("--rotation-probability", type=float, default=1.0,
                   help="chance that each eligible head has its dependents rotated (default 1.0)")
    s.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("synth", help="generate a synthetic case-marked corpus split into train/dev/test")
    s.add_argument("--config", help="key=value grammar file (grammar fields, train_size, dev_size, test_size, split_seed)")
    s.add_argument("--out-dir", required=True, help="directory for train.conllu, dev.conllu, test.conllu")
    s.add_argument("--seed", type=int, help="grammar seed, overrides the config file")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train a parser")
    s.add_argument("--train", required=True, help="training CoNLL-U file")
    s.add_argument("--dev", help="development CoNLL-U file used for checkpoint selection")
    s.add_argument("--config", help="key=value training config; flags override it")
    s.add_argument("--loss", choices=("ce", "ce+cssl"), help="training objective (default ce)")
    s.add_argument("--augment", choices=("none", "rotation"), help="corpus augmentation (default none)")
    s.add_argument("--copies", type=int, help="rotated copies per sentence with --augment rotation (default 1)")
    s.add_argument("--negatives", choices=("in-batch", "sampled"),
                   help="contrastive negatives: other positives in the batch, or also one sampled sentence per anchor")
    s.add_argument("--tau", type=float, help="contrastive temperature (default 0.1)")
    s.add_argument("--lambda", dest="lam", type=float, help="weight of the contrastive loss (default 1.0)")
    s.add_argument("--batch-size", type=int, help="sentences per batch (default 16)")
    s.add_argument("--lr", type=float, help="SGD learning rate (default 0.05)")
    s.add_argument("--epochs", type=int, help="training epochs (default 40)")
    s.add_argument("--clip", type=float, help="global gradient-norm clipping threshold (default 1.0)")
    s.add_argument("--decoder", choices=("mst", "greedy"), help="decoder for dev evaluation (default mst)")
    s.add_argument("--seed", type=int, help="random seed (default 0)")
    s.add_argument("--no-position-encoding", action="store_true", help="drop sinusoidal position encodings")
    s.add_argument("--fixed-positives", action="store_true",
                   help="reuse one permutation per sentence instead of drawing fresh ones each epoch")
    s.add_argument("--model-out", required=True,
                   help="checkpoint path; <stem>.log and <stem>.summary.txt are written beside it")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("parse", help="parse a CoNLL-U file with a trained model")
    s.add_argument("--model", required=True, help="checkpoint file")
    s.add_argument("--in", dest="input", required=True, help="input CoNLL-U file (heads are ignored)")
    s.add_argument("--out", dest="output", required=True, help="output CoNLL-U file")
    s.add_argument("--decoder", choices=("mst", "greedy"), default="mst", help="decoder (default mst)")
    s.set_defaults(func=cmd_parse)

    s = sub.add_parser("eval", help="UAS/LAS of a prediction file against gold")
    s.add_argument("--gold", required=True, help="gold CoNLL-U file")
    s.add_argument("--pred", required=True, help="predicted CoNLL-U file")
    s.add_argument("--ignore-punct", action="store_true", help="leave punctuation tokens out of the scores")
    s.add_argument("--summary-out", help="also write a key=value summary to this file")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("robustness", help="scores on original and randomly reordered test sentences")
    s.add_argument("--model", required=True, help="checkpoint file")
    s.add_argument("--gold", required=True, help="gold CoNLL-U file")
    s.add_argument("--k", type=int, default=3, help="permutations per sentence (default 3)")
    s.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    s.add_argument("--decoder", choices=("mst", "greedy"), default="mst", help="decoder (default mst)")
    s.add_argument("--ignore-punct", action="store_true", help="leave punctuation tokens out of the scores")
    s.add_argument("--out", help="also write the key=value report to this file")
    s.set_defaults(func=cmd_robustness)

    s = sub.add_parser("significance", help="paired t-test on per-sentence LAS of two prediction files")
    s.add_argument("--gold", required=True, help="gold CoNLL-U file")
    s.add_argument("--pred-a", required=True, help="predictions of system A")
    s.add_argument("--pred-b", required=True, help="predictions of system B")
    s.add_argument("--ignore-punct", action="store_true", help="leave punctuation tokens out of the scores")
    s.set_defaults(func=cmd_significance)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ConlluError, InvalidTreeError, AlignmentError, CheckpointError,
            SentenceTooLongError, TrainingDivergedError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
