"""Command-line front end for the report-to-leaderboard pipeline.

Subcommands cover the whole flow: ingest raw reports, build and split the
instruction dataset, train (full weights or adapters only), generate
impressions, score them with ROUGE or expert ratings, and render leaderboard
tables. Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .dataset import (DEFAULT_TEMPLATE, DatasetSplit, build_pairs, read_pairs,
                      render_prompt, split_dataset, write_pairs)
from .errors import RadsumError
from .expert import aggregate_ratings, inter_rater, load_ratings
from .figures import render_loss_curve, render_per_sample_rouge
from .harness import (eval_rouge_run, fixture_path, leaderboard, load_table,
                      write_text_records)
from .model import (LoraConfig, Model, ModelConfig, attach_lora, generate,
                    init_model, load_adapters, load_model, save_model)
from .reports import ingest_corpus
from .tensor import Rng
from .tokenizer import EOS_ID, Vocab, build_vocab, decode, load_vocab, save_vocab
from .train import TrainConfig, encode_example, train
from .verify import GRAD_TOLERANCE, run_grad_checks

FIXTURES = {
    "table2": "table2_radiologist_10.tsv",
    "table3": "table3_mimic_openi.tsv",
}

# Flat key=value settings; optimizer and adapter values follow the reference
# training configuration, model dimensions are desk-scale defaults.
CONFIG_DEFAULTS: dict[str, str] = {
    "d_model": "32",
    "n_heads": "4",
    "n_layers": "2",
    "d_ff": "64",
    "max_seq_len": "256",
    "vocab_target": "512",
    "lora_r": "8",
    "lora_alpha": "16",
    "lora_dropout": "0.05",
    "lora_targets": "q_proj,v_proj",
    "learning_rate": "3e-4",
    "weight_decay": "0.01",
    "effective_batch": "128",
    "micro_batch": "8",
    "max_steps": "2000",
    "grad_clip": "none",
    "checkpoint_every": "none",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def resolve_config(path: str | None) -> dict[str, str]:
    """Defaults overlaid with a key=value file; unknown keys are data errors."""
    config = dict(CONFIG_DEFAULTS)
    if path is None:
        return config
    for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise RadsumError(f"{path}:{line_no}: expected key=value, got {raw!r}")
        if key not in config:
            raise RadsumError(f"{path}:{line_no}: unknown config key {key!r}")
        config[key] = value
    return config


def _cfg_int(config: dict[str, str], key: str) -> int:
    try:
        return int(config[key])
    except ValueError:
        raise RadsumError(f"config key {key} must be an integer, got {config[key]!r}") from None


def _cfg_float(config: dict[str, str], key: str) -> float:
    try:
        return float(config[key])
    except ValueError:
        raise RadsumError(f"config key {key} must be a number, got {config[key]!r}") from None


def _cfg_optional(config: dict[str, str], key: str, kind) -> int | float | None:
    if config[key].lower() == "none":
        return None
    try:
        return kind(config[key])
    except ValueError:
        raise RadsumError(f"config key {key} must be {kind.__name__} or none, "
                          f"got {config[key]!r}") from None


def _write_resolved_config(config: dict[str, str], extra: dict[str, str], path: Path) -> None:
    merged = {**config, **extra}
    lines = [f"{key}={merged[key]}" for key in sorted(merged)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Subcommands


def cmd_ingest(args) -> int:
    reports, stats = ingest_corpus(args.input, args.source)
    pairs = build_pairs(reports, template=DEFAULT_TEMPLATE)
    write_pairs(pairs, args.out)
    block = stats.as_tsv()
    print(block)
    if args.stats_out:
        Path(args.stats_out).write_text(block + "\n", encoding="utf-8")
    return 0


def _parse_ratios(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"need three comma-separated ratios, got {text!r}")
    try:
        return tuple(float(p) for p in parts)  # type: ignore[return-value]
    except ValueError:
        raise argparse.ArgumentTypeError(f"ratios must be numbers, got {text!r}") from None


def cmd_build_dataset(args) -> int:
    pairs = read_pairs(args.pairs)
    split = split_dataset(pairs, args.ratios, args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, subset in (("train", split.train), ("val", split.val), ("test", split.test)):
        write_pairs(subset, out_dir / f"{name}.jsonl")
        print(f"{name}\t{len(subset)}")
    return 0


def _load_train_pairs(data: str):
    path = Path(data)
    if path.is_dir():
        path = path / "train.jsonl"
    return read_pairs(path)


def cmd_train(args) -> int:
    config = resolve_config(args.config)
    pairs = _load_train_pairs(args.data)
    if not pairs:
        raise RadsumError(f"{args.data}: no training pairs")

    vocab = build_vocab([render_prompt(p, include_output=True) for p in pairs],
                        _cfg_int(config, "vocab_target"))
    model_config = ModelConfig(
        d_model=_cfg_int(config, "d_model"),
        n_heads=_cfg_int(config, "n_heads"),
        n_layers=_cfg_int(config, "n_layers"),
        d_ff=_cfg_int(config, "d_ff"),
        vocab_size=vocab.size,
        max_seq_len=_cfg_int(config, "max_seq_len"),
    )
    root = Rng(args.seed)
    model = init_model(model_config, root.split("init"))

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_vocab(vocab, out_dir / "vocab.txt")

    if args.mode == "lora":
        save_model(model, out_dir / "model.ckpt")  # frozen base for later reload
        lora_config = LoraConfig(
            r=_cfg_int(config, "lora_r"),
            alpha=_cfg_float(config, "lora_alpha"),
            dropout=_cfg_float(config, "lora_dropout"),
            targets=tuple(t.strip() for t in config["lora_targets"].split(",") if t.strip()),
        )
        attach_lora(model, lora_config, root.split("lora"))

    train_config = TrainConfig(
        learning_rate=_cfg_float(config, "learning_rate"),
        weight_decay=_cfg_float(config, "weight_decay"),
        effective_batch=_cfg_int(config, "effective_batch"),
        micro_batch=_cfg_int(config, "micro_batch"),
        max_steps=args.steps if args.steps is not None else _cfg_int(config, "max_steps"),
        grad_clip=_cfg_optional(config, "grad_clip", float),
        seed=args.seed,
        checkpoint_every=_cfg_optional(config, "checkpoint_every", int),
    )
    split = DatasetSplit(train=pairs, val=[], test=[], seed=args.seed, ratios=(1.0, 0.0, 0.0))
    report = train(model, split, vocab, train_config, out_dir=out_dir)
    render_loss_curve(report.losses, out_dir / "loss_curve.png")
    _write_resolved_config(config, {"mode": args.mode, "seed": str(args.seed),
                                    "vocab_size": str(vocab.size),
                                    "max_steps": str(train_config.max_steps)},
                           out_dir / "config.txt")

    print(f"steps\t{len(report.losses)}")
    print(f"final_loss\t{report.losses[-1]:.6f}")
    print(f"tokens_seen\t{report.tokens_seen}")
    print(f"checkpoint\t{report.checkpoint_path}")
    return 0


def _load_run(run_dir: str, seed: int) -> tuple[Model, Vocab]:
    run = Path(run_dir)
    vocab = load_vocab(run / "vocab.txt")
    model = load_model(run / "model.ckpt")
    adapter_path = run / "adapter.ckpt"
    if adapter_path.exists():
        load_adapters(model, adapter_path, Rng(seed).split("lora"))
    return model, vocab


def cmd_generate(args) -> int:
    model, vocab = _load_run(args.run, args.seed)
    pairs = read_pairs(args.pairs)
    if not pairs:
        raise RadsumError(f"{args.pairs}: no pairs to generate from")
    records = []
    for pair in pairs:
        example = encode_example(pair, vocab, model.config.max_seq_len)
        ids = generate(model, example.prompt_ids, max_new=args.max_new, stop_id=EOS_ID)
        records.append((pair.source_id, decode(ids, vocab).strip()))
    write_text_records(args.out, records)
    if args.refs_out:
        write_text_records(args.refs_out, [(p.source_id, p.output) for p in pairs])
    print(f"generated\t{len(records)}")
    return 0


def _print_corpus_scores(corpus, fmt: str) -> None:
    if fmt == "markdown":
        print("| metric | precision | recall | f1 |")
        print("|---|---|---|---|")
        for name, score in corpus.as_rows():
            print(f"| {name} | {score.precision:.4f} | {score.recall:.4f} | {score.f1:.4f} |")
    else:
        print("metric\tprecision\trecall\tf1")
        for name, score in corpus.as_rows():
            print(f"{name}\t{score.precision:.4f}\t{score.recall:.4f}\t{score.f1:.4f}")


def cmd_eval_rouge(args) -> int:
    corpus, per_sample_path = eval_rouge_run(args.pred, args.ref,
                                             per_sample_out=args.per_sample)
    rows = []
    for line in per_sample_path.read_text(encoding="utf-8").splitlines()[1:]:
        sid, r1, r2, rl = line.split("\t")
        rows.append((sid, float(r1), float(r2), float(rl)))
    render_per_sample_rouge(rows, per_sample_path.with_suffix(".png"))
    _print_corpus_scores(corpus, args.format)
    return 0


def cmd_eval_expert(args) -> int:
    ratings = load_ratings(args.ratings)
    if args.inter_rater:
        diffs = inter_rater(ratings)
        if args.format == "markdown":
            print("| criterion | mean_abs_diff |")
            print("|---|---|")
            for criterion, value in diffs.items():
                print(f"| {criterion} | {value:g} |")
        else:
            print("criterion\tmean_abs_diff")
            for criterion, value in diffs.items():
                print(f"{criterion}\t{value:g}")
        return 0
    aggregates = aggregate_ratings(ratings)
    if args.format == "markdown":
        print("| model_id | criterion | score | max_possible |")
        print("|---|---|---|---|")
        for agg in aggregates:
            print(f"| {agg.model_id} | {agg.criterion} | {agg.score:g} | {agg.max_possible} |")
    else:
        print("model_id\tcriterion\tscore\tmax_possible")
        for agg in aggregates:
            print(f"{agg.model_id}\t{agg.criterion}\t{agg.score:g}\t{agg.max_possible}")
    return 0


def cmd_leaderboard(args) -> int:
    if args.table:
        path = Path(args.table)
    else:
        path = fixture_path(FIXTURES[args.fixture])
    rows = load_table(path)
    print(leaderboard(rows, sort_key=args.sort_key, fmt=args.format), end="")
    return 0


def cmd_grad_check(args) -> int:
    results = run_grad_checks(args.seed, include_model=not args.kernels_only)
    print("case\tmax_rel_error\tstatus")
    worst = 0.0
    for name, error in results:
        status = "ok" if error < GRAD_TOLERANCE else "FAIL"
        worst = max(worst, error)
        print(f"{name}\t{error:.3e}\t{status}")
    return 0 if worst < GRAD_TOLERANCE else 2


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="root random seed")
    common.add_argument("--config", default=None, help="key=value settings file")

    fmt = _Parser(add_help=False)
    fmt.add_argument("--format", choices=("tsv", "markdown"), default="tsv",
                     help="output table format")

    parser = _Parser(prog="radsum",
                     description="Findings-to-impression pipeline: parse, tune, "
                                 "generate, evaluate.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[common],
                       help="parse raw reports into an instruction-pair file")
    p.add_argument("--input", required=True, help="report file or directory")
    p.add_argument("--source", choices=("mimic-cxr-style", "openi-style", "synthetic"),
                   default="synthetic")
    p.add_argument("--out", required=True, help="output pairs JSONL")
    p.add_argument("--stats-out", default=None, help="also write corpus stats TSV here")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build-dataset", parents=[common],
                       help="split a pairs file into train/val/test")
    p.add_argument("--pairs", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--ratios", type=_parse_ratios, default=(0.8, 0.1, 0.1),
                   help="train,val,test fractions summing to 1")
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("train", parents=[common],
                       help="train on a pairs file; writes vocab/checkpoints/loss curve")
    p.add_argument("--data", required=True, help="train.jsonl or a directory holding it")
    p.add_argument("--out-dir", required=True, help="run directory")
    p.add_argument("--mode", choices=("lora", "full"), default="lora",
                   help="adapter-only tuning or full-weight training")
    p.add_argument("--steps", type=int, default=None, help="override max_steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", parents=[common],
                       help="greedy-decode impressions for a pairs file")
    p.add_argument("--run", required=True, help="training run directory")
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True, help="predictions JSONL")
    p.add_argument("--refs-out", default=None, help="also write the reference impressions")
    p.add_argument("--max-new", type=int, default=64)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval-rouge", parents=[common, fmt],
                       help="score predictions against references")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--per-sample", default=None,
                   help="per-sample TSV path (default: next to predictions)")
    p.set_defaults(func=cmd_eval_rouge)

    p = sub.add_parser("eval-expert", parents=[common, fmt],
                       help="aggregate a five-criterion rating sheet")
    p.add_argument("--ratings", required=True)
    p.add_argument("--inter-rater", action="store_true",
                   help="report mean absolute rater disagreement instead")
    p.set_defaults(func=cmd_eval_expert)

    p = sub.add_parser("leaderboard", parents=[common, fmt],
                       help="render a score table")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--fixture", choices=sorted(FIXTURES))
    group.add_argument("--table", help="leaderboard TSV path")
    p.add_argument("--sort-key", default=None, help="column to sort by (default: first)")
    p.set_defaults(func=cmd_leaderboard)

    p = sub.add_parser("grad-check", parents=[common],
                       help="verify kernel and model gradients against finite differences")
    p.add_argument("--kernels-only", action="store_true")
    p.set_defaults(func=cmd_grad_check)

    return parser


def cli_dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help prints and exits
        return 0 if exc.code in (0, None) else 1
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except RadsumError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
