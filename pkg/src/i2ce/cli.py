"""Command-line interface.

Subcommands: build-vocab, train, score, score-baselines, correlate.  Every
option resolves as flag > --config file > I2CE_<NAME> environment variable >
built-in default, and every primary output gets a <output>.manifest.json
recording the resolved configuration and input hashes, so a run can be
reproduced bit-identically.

Exit codes: 0 success, 1 partial (some items skipped), 2 usage or ingestion
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, baselines, scoring, stats
from .model import ModelConfig
from .objectives import LossConfig
from .text import (IngestionError, SamplingError, Vocab, build_vocab,
                   load_groups, load_token_groups, read_corpus_sentences, tokenize)
from .trainer import (OptimizerError, TrainConfig, TrainingDiverged,
                      load_checkpoint, model_from_checkpoint, save_checkpoint,
                      train, write_loss_log)

ENV_PREFIX = "I2CE_"

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

# dest -> (type, default, help); help texts state the default explicitly
# because unset flags are sentinels until resolution.
OPTION_SPECS: dict[str, dict[str, tuple]] = {
    "build-vocab": {
        "min_freq": (int, 5, "keep tokens seen at least this often (default: 5)"),
        "out": (str, "vocab.json", "output vocabulary file (default: vocab.json)"),
    },
    "train": {
        "branch": (str, "dual", "single | dual | triple (default: dual)"),
        "lr": (float, 5e-4, "Adam learning rate (default: 5e-4)"),
        "batch_size": (int, 128, "sentences or groups per step (default: 128)"),
        "epochs": (int, 30, "training epochs (default: 30)"),
        "seed": (int, 42, "master random seed (default: 42)"),
        "grad_clip": (float, 5.0, "global gradient L2 clip (default: 5.0)"),
        "margin": (float, 0.2, "in-batch negative hinge margin (default: 0.2)"),
        "alpha": (float, 0.2, "triplet margin (default: 0.2)"),
        "beta": (float, 0.0, "negative-pair cosine threshold (default: 0)"),
        "lambda_semantic": (float, 1.0, "contrastive loss weight (default: 1.0)"),
        "lambda_rec": (float, 1.0, "reconstruction loss weight (default: 1.0)"),
        "aggregation": (str, "mean", "in-batch negative pooling: mean | max (default: mean)"),
        "embed_dim": (int, 256, "word embedding size (default: 256)"),
        "hidden_dim": (int, 512, "GRU hidden size (default: 512)"),
        "t_max": (int, 20, "max content tokens per sentence (default: 20)"),
        "min_freq": (int, 5, "vocab threshold when no --vocab given (default: 5)"),
        "vocab": (str, "", "prebuilt vocabulary file (default: build from corpus)"),
        "out": (str, "model.i2ce", "checkpoint output path (default: model.i2ce)"),
        "loss_log": (str, "", "loss CSV path (default: <out>.losses.csv)"),
    },
    "score": {
        "checkpoint": (str, "model.i2ce", "trained checkpoint (default: model.i2ce)"),
        "pool": (str, "max3", "score pooling max1..max5 (default: max3)"),
        "format": (str, "jsonl", "output format: jsonl | tsv (default: jsonl)"),
        "out": (str, "scores.jsonl", "report output path (default: scores.jsonl)"),
        "threads": (int, 1, "parallel scoring threads (default: 1)"),
    },
    "score-baselines": {
        "out": (str, "baseline_scores.csv", "CSV output path (default: baseline_scores.csv)"),
        "df_cache": (str, "", "document-frequency cache file (default: none)"),
        "i2ce_report": (str, "", "merge pooled scores from this score report (default: none)"),
        "human": (str, "", "merge a human-score CSV item_id,human (default: none)"),
    },
    "correlate": {
        "against": (str, "all", "'human' for metric-vs-human rows, 'all' for matrices (default: all)"),
        "out": (str, "correlation", "output prefix (default: correlation)"),
    },
}


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _load_config_file(path: str) -> dict:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise IngestionError(f"{path}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") from e
    if not isinstance(payload, dict):
        raise IngestionError(f"{path}: config must be a JSON object")
    # a run manifest doubles as a config file
    return payload.get("config", payload)


def resolve_options(command: str, args: argparse.Namespace) -> dict:
    """flag > config file > environment > default, per option."""
    config = _load_config_file(args.config) if getattr(args, "config", None) else {}
    resolved = {}
    for dest, (typ, default, _help) in OPTION_SPECS[command].items():
        flag_val = getattr(args, dest)
        if flag_val is not None:
            resolved[dest] = flag_val
        elif dest in config:
            resolved[dest] = typ(config[dest])
        elif ENV_PREFIX + dest.upper() in os.environ:
            resolved[dest] = typ(os.environ[ENV_PREFIX + dest.upper()])
        else:
            resolved[dest] = default
    return resolved


def write_manifest(primary_output: str | Path, command: str, resolved: dict,
                   inputs: dict[str, str | Path]) -> None:
    manifest = {
        "tool_version": __version__,
        "command": command,
        "config": resolved,
        "seed": resolved.get("seed"),
        "inputs": {name: {"path": str(p), "sha256": file_sha256(p)}
                   for name, p in inputs.items()},
    }
    path = Path(str(primary_output) + ".manifest.json")
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")


# subcommands --------------------------------------------------------

def cmd_build_vocab(args: argparse.Namespace) -> int:
    resolved = resolve_options("build-vocab", args)
    vocab = build_vocab(read_corpus_sentences(args.corpus), min_freq=resolved["min_freq"])
    if len(vocab) == 4:
        print("warning: vocabulary contains only the special tokens "
              f"(min_freq={resolved['min_freq']} exceeds every token count)", file=sys.stderr)
    vocab.save(resolved["out"])
    write_manifest(resolved["out"], "build-vocab", resolved, {"corpus": args.corpus})
    print(f"wrote {resolved['out']}: {len(vocab)} tokens")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    resolved = resolve_options("train", args)
    if resolved["vocab"]:
        vocab = Vocab.load(resolved["vocab"])
    else:
        vocab = build_vocab(read_corpus_sentences(args.corpus), min_freq=resolved["min_freq"])
    groups = load_groups(args.corpus, vocab, max_tokens=resolved["t_max"])
    model_cfg = ModelConfig(vocab_size=len(vocab), embed_dim=resolved["embed_dim"],
                            hidden_dim=resolved["hidden_dim"], t_max=resolved["t_max"])
    train_cfg = TrainConfig(branch=resolved["branch"], lr=resolved["lr"],
                            batch_size=resolved["batch_size"], epochs=resolved["epochs"],
                            seed=resolved["seed"], grad_clip=resolved["grad_clip"])
    loss_cfg = LossConfig(margin=resolved["margin"], alpha=resolved["alpha"],
                          beta=resolved["beta"], lambda_semantic=resolved["lambda_semantic"],
                          lambda_rec=resolved["lambda_rec"], aggregation=resolved["aggregation"])
    loss_log = resolved["loss_log"] or resolved["out"] + ".losses.csv"
    inputs = {"corpus": args.corpus}
    if resolved["vocab"]:
        inputs["vocab"] = resolved["vocab"]
    try:
        ckpt, rows = train(groups, vocab, model_cfg, train_cfg, loss_cfg)
    except TrainingDiverged as e:
        save_checkpoint(e.checkpoint, resolved["out"])
        write_manifest(resolved["out"], "train", resolved, inputs)
        print(f"error: {e}; checkpoint of epoch {e.checkpoint.epoch} saved to "
              f"{resolved['out']}", file=sys.stderr)
        return EXIT_NUMERIC
    save_checkpoint(ckpt, resolved["out"])
    write_loss_log(rows, loss_log)
    write_manifest(resolved["out"], "train", resolved, inputs)
    final = rows[-1] if rows else None
    if final:
        print(f"trained {train_cfg.branch} branch for {train_cfg.epochs} epochs; "
              f"final loss {final.total:.4f} (rec {final.rec_loss:.4f}, "
              f"semantic {final.semantic_loss:.4f})")
    print(f"wrote {resolved['out']} and {loss_log}")
    return EXIT_OK


def cmd_score(args: argparse.Namespace) -> int:
    resolved = resolve_options("score", args)
    ckpt = load_checkpoint(resolved["checkpoint"])
    model = model_from_checkpoint(ckpt)
    groups = load_groups(args.references, ckpt.vocab, max_tokens=ckpt.model_config.t_max)
    candidates = scoring.load_candidates(args.candidates)
    run = scoring.score_candidates(candidates, groups, model, ckpt.vocab,
                                   pooling=resolved["pool"], threads=resolved["threads"])
    if resolved["format"] == "tsv":
        scoring.write_reports_tsv(run, resolved["out"])
    elif resolved["format"] == "jsonl":
        scoring.write_reports_jsonl(run, resolved["out"])
    else:
        raise ValueError(f"unknown format {resolved['format']!r} (expected jsonl or tsv)")
    write_manifest(resolved["out"], "score", resolved,
                   {"candidates": args.candidates, "references": args.references,
                    "checkpoint": resolved["checkpoint"]})
    if run.reports:
        print(f"scored {len(run.reports)} candidates; corpus mean "
              f"{run.corpus_mean_x100:.2f} ({run.pooling})")
    if run.skipped:
        for image_id, reason in run.skipped:
            print(f"skipped {image_id}: {reason}", file=sys.stderr)
        print(f"warning: {len(run.skipped)} candidates skipped", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _read_human_csv(path: str) -> dict[str, float]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or "human" not in reader.fieldnames:
            raise IngestionError(f"{path}: expected columns item_id,human")
        key = reader.fieldnames[0]
        return {row[key]: float(row["human"]) for row in reader}


def _read_i2ce_report(path: str) -> dict[str, float]:
    scores = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        record = json.loads(line)
        if "pooled_x100" in record:
            scores[str(record["image_id"])] = record["pooled_x100"]
    return scores


def cmd_score_baselines(args: argparse.Namespace) -> int:
    resolved = resolve_options("score-baselines", args)
    token_groups = load_token_groups(args.references)
    refs_by_id = {gid: refs for gid, refs in token_groups}
    corpus_hash = file_sha256(args.references)
    cache = resolved["df_cache"]
    if cache and Path(cache).exists():
        table = baselines.load_df_table(cache, expect_hash=corpus_hash)
    else:
        table = baselines.build_df_table([refs for _, refs in token_groups],
                                         corpus_hash=corpus_hash)
        if cache:
            baselines.save_df_table(table, cache)

    merge_i2ce = _read_i2ce_report(resolved["i2ce_report"]) if resolved["i2ce_report"] else None
    merge_human = _read_human_csv(resolved["human"]) if resolved["human"] else None

    header = ["item_id", "bleu1", "bleu2", "bleu3", "bleu4", "rougel", "cider"]
    if merge_i2ce is not None:
        header.append("i2ce")
    if merge_human is not None:
        header.append("human")

    rows, skipped = [], []
    for image_id, caption in scoring.load_candidates(args.candidates):
        refs = refs_by_id.get(image_id)
        tokens = tokenize(caption)
        if refs is None or not tokens:
            skipped.append((image_id, "no reference group" if refs is None else "empty caption"))
            continue
        b = baselines.bleu(tokens, refs, smooth=True)
        row = [image_id] + [f"{100.0 * v:.17g}" for v in b]
        row.append(f"{100.0 * baselines.rouge_l(tokens, refs):.17g}")
        row.append(f"{10.0 * baselines.cider(tokens, refs, table):.17g}")
        if merge_i2ce is not None:
            if image_id not in merge_i2ce:
                skipped.append((image_id, "not present in the score report"))
                continue
            row.append(f"{merge_i2ce[image_id]:.17g}")
        if merge_human is not None:
            if image_id not in merge_human:
                skipped.append((image_id, "no human score"))
                continue
            row.append(f"{merge_human[image_id]:.17g}")
        rows.append(row)

    Path(resolved["out"]).write_text(
        "\n".join([",".join(header)] + [",".join(r) for r in rows]) + "\n", encoding="utf-8")
    inputs = {"candidates": args.candidates, "references": args.references}
    write_manifest(resolved["out"], "score-baselines", resolved, inputs)
    print(f"wrote {resolved['out']}: {len(rows)} items "
          "(bleu/rouge x100, cider x10)")
    if skipped:
        for image_id, reason in skipped:
            print(f"skipped {image_id}: {reason}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def read_score_csv(path: str | Path) -> tuple[list[str], list[str], np.ndarray]:
    """Score table CSV: item_id column then one column per metric."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty score file") from None
        names = header[1:]
        if not names:
            raise IngestionError(f"{path}: expected item_id plus metric columns")
        ids, rows = [], []
        for line in reader:
            if not line:
                continue
            ids.append(line[0])
            try:
                rows.append([float(v) for v in line[1:]])
            except ValueError as e:
                raise IngestionError(f"{path}: non-numeric score for item {line[0]}") from e
    if len(rows) < 2:
        raise IngestionError(f"{path}: need at least two scored items")
    return names, ids, np.asarray(rows, dtype=np.float64)


def _write_matrix_csv(path: Path, names: list[str], matrix: np.ndarray) -> None:
    lines = ["," + ",".join(names)]
    for name, row in zip(names, matrix):
        lines.append(name + "," + ",".join("nan" if np.isnan(v) else f"{100.0 * v:.17g}"
                                           for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_correlate(args: argparse.Namespace) -> int:
    resolved = resolve_options("correlate", args)
    names, _ids, table = read_score_csv(args.scores)
    prefix = Path(resolved["out"])
    if resolved["against"] == "human":
        if "human" not in names:
            raise IngestionError(f"{args.scores}: no 'human' column to correlate against")
        h = table[:, names.index("human")]
        lines = ["metric,kendall,spearman,pearson"]
        for i, name in enumerate(names):
            if name == "human":
                continue
            cells = []
            for fn in (stats.kendall_tau, stats.spearman_rho, stats.pearson_r):
                try:
                    cells.append(f"{100.0 * fn(table[:, i], h):.17g}")
                except stats.DegenerateInputError:
                    cells.append("nan")
            lines.append(",".join([name] + cells))
        out = Path(str(prefix) + ".vs_human.csv")
        out.write_text("\n".join(lines) + "\n", encoding="utf-8")
        write_manifest(out, "correlate", resolved, {"scores": args.scores})
        print(f"wrote {out}")
    elif resolved["against"] == "all":
        result = stats.correlation_matrix(table, names)
        outputs = []
        for stat in ("kendall", "spearman", "pearson"):
            out = Path(f"{prefix}.{stat}.csv")
            _write_matrix_csv(out, names, result.matrix(stat))
            outputs.append(out)
        write_manifest(outputs[0], "correlate", resolved, {"scores": args.scores})
        for stat, a, b in result.flagged:
            print(f"warning: {stat}({a}, {b}) undefined (flagged as nan)", file=sys.stderr)
        print("wrote " + ", ".join(map(str, outputs)))
    else:
        raise ValueError(f"--against must be 'human' or 'all', got {resolved['against']!r}")
    return EXIT_OK


# parser --------------------------------------------------------------

def _add_options(parser: argparse.ArgumentParser, command: str) -> None:
    parser.add_argument("--config", help="JSON config file or a previous run manifest")
    for dest, (typ, _default, help_text) in OPTION_SPECS[command].items():
        flag = "--" + dest.replace("_", "-")
        parser.add_argument(flag, dest=dest, type=typ, default=None, help=help_text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="i2ce",
        description="Intrinsic sentence-embedding caption evaluation: train the "
                    "auto-encoder, score candidates, run rule-based baselines, "
                    "and correlate metric score tables.")
    parser.add_argument("--version", action="version", version=f"i2ce {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="build a vocabulary file from a corpus")
    p.add_argument("corpus", help="JSON caption corpus or plain-text file, one sentence per line")
    _add_options(p, "build-vocab")
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("train", help="train the sentence auto-encoder")
    p.add_argument("corpus", help="JSON caption corpus")
    _add_options(p, "train")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score candidate captions with a trained model")
    p.add_argument("candidates", help="JSON array of {image_id, caption}")
    p.add_argument("references", help="JSON caption corpus with the reference groups")
    _add_options(p, "score")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("score-baselines",
                       help="score candidates with BLEU-1..4, ROUGE-L and CIDEr-D")
    p.add_argument("candidates", help="JSON array of {image_id, caption}")
    p.add_argument("references", help="JSON caption corpus with the reference groups")
    _add_options(p, "score-baselines")
    p.set_defaults(func=cmd_score_baselines)

    p = sub.add_parser("correlate", help="correlation tables over a metric score CSV")
    p.add_argument("scores", help="CSV with item_id plus one column per metric")
    _add_options(p, "correlate")
    p.set_defaults(func=cmd_correlate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (IngestionError, SamplingError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OptimizerError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
