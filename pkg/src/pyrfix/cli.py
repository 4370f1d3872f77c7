"""Command-line entry point: preprocess | build-vocab | train | evaluate |
correct | classify | benchmark.

Every run writes a manifest.json next to its outputs.  Exit codes:
0 success, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import csv
import difflib
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__, codetok, corpus, decode, harness, synth, transfer
from .codetok import Vocabulary
from .config import ModelConfig
from .models import build_model, load_model, save_model
from .nn import checkpoint as ckpt
from .nn import kernels


class CliUsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Config files: flat TOML mirroring ModelConfig / TrainConfig field names.
# ---------------------------------------------------------------------------

_MODEL_KEYS = {f.name for f in fields(ModelConfig)}
_TRAIN_KEYS = {f.name for f in fields(harness.TrainConfig)}


def parse_config(path) -> tuple[dict, dict]:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise CliUsageError(f"{path}: {exc}") from exc
    model_kv, train_kv = {}, {}
    for key, value in data.items():
        if key in _MODEL_KEYS:
            model_kv[key] = value
        elif key in _TRAIN_KEYS:
            train_kv[key] = value
        else:
            raise CliUsageError(f"{path}: unknown config key '{key}'")
    return model_kv, train_kv


def _write_manifest(out_dir: Path, command: str, args, inputs, outputs,
                    wall_s: float) -> None:
    manifest = {
        "command": command,
        "config": getattr(args, "config", None),
        "seed": getattr(args, "seed", None),
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "version": __version__,
        "wall_s": wall_s,
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliUsageError(f"{what} not found: {p}")
    return p


def _load_vocab(path) -> Vocabulary:
    return Vocabulary.load(_require_file(path, "vocabulary file"))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_preprocess(args) -> int:
    t0 = time.perf_counter()
    out = _out_dir(args)
    raw_path = _require_file(args.raw, "raw corpus")
    records = corpus.load_raw_jsonl(raw_path)
    syntax = (codetok.load_syntax_table(args.syntax_table)
              if args.syntax_table else codetok.DEFAULT_C_SYNTAX)
    raw_pairs = []
    for rec in records:
        src = codetok.tokenize(rec["source"], syntax,
                               keep_comments=not args.drop_comments)
        tgts = [codetok.tokenize(t, syntax, keep_comments=not args.drop_comments)
                for t in rec["targets"]]
        if not args.no_rename:
            src, mapping = codetok.rename_functions(src)
            tgts = [[mapping.get(tok, tok) for tok in t] for t in tgts]
        raw_pairs.append(corpus.RawPair(rec["id"], src, tgts, rec["label"]))
    predicates = None if not args.no_filters else {}
    kept, drops = corpus.filter_pairs(raw_pairs, predicates=predicates,
                                      max_length=args.max_length)
    if args.vocab:
        vocab = _load_vocab(args.vocab)
    else:
        token_lists = [p.source for p in kept] + \
                      [t for p in kept for t in p.targets]
        vocab = Vocabulary.from_corpus(token_lists, args.min_count)
        vocab.save(out / "vocab.txt")
    pairs = synth.encode_pairs(kept, vocab)
    corpus.save_jsonl(pairs, out / "pairs.jsonl")
    stats = {"input_pairs": len(records), "output_pairs": len(pairs),
             "drops": dict(drops), "vocab_size": len(vocab)}
    with open(out / "stats.json", "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=2)
    print(json.dumps(stats))
    _write_manifest(out, "preprocess", args, [raw_path],
                    [out / "pairs.jsonl", out / "stats.json"],
                    time.perf_counter() - t0)
    return 0


def cmd_build_vocab(args) -> int:
    t0 = time.perf_counter()
    out = _out_dir(args)
    raw_path = _require_file(args.raw, "raw corpus")
    records = corpus.load_raw_jsonl(raw_path)
    syntax = (codetok.load_syntax_table(args.syntax_table)
              if args.syntax_table else codetok.DEFAULT_C_SYNTAX)
    token_lists = []
    for rec in records:
        src = codetok.tokenize(rec["source"], syntax)
        if not args.no_rename:
            src, mapping = codetok.rename_functions(src)
        token_lists.append(src)
        for t in rec["targets"]:
            toks = codetok.tokenize(t, syntax)
            if not args.no_rename:
                toks = [mapping.get(tok, tok) for tok in toks]
            token_lists.append(toks)
    vocab = Vocabulary.from_corpus(token_lists, args.min_count)
    vocab.save(out / "vocab.txt")
    print(f"vocabulary of {len(vocab)} tokens -> {out / 'vocab.txt'}")
    _write_manifest(out, "build-vocab", args, [raw_path], [out / "vocab.txt"],
                    time.perf_counter() - t0)
    return 0


def _train_config_from(args, train_kv: dict) -> harness.TrainConfig:
    cfg = harness.TrainConfig(**train_kv)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.epochs is not None:
        cfg.epochs = args.epochs
    return cfg


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    out = _out_dir(args)
    model_kv, train_kv = parse_config(_require_file(args.config, "config file"))
    vocab = _load_vocab(args.vocab)
    model_kv.setdefault("vocab_size", len(vocab))
    try:
        config = ModelConfig.from_dict(model_kv)
        cfg = _train_config_from(args, train_kv)
    except (TypeError, ValueError) as exc:
        raise CliUsageError(str(exc)) from exc
    pairs = corpus.load_jsonl(_require_file(args.data, "pair file"))
    if not pairs:
        raise CliUsageError(f"{args.data}: no pairs")
    if args.val:
        val_pairs = corpus.load_jsonl(_require_file(args.val, "validation file"))
        train_pairs = pairs
    elif args.holdout > 0:
        spec = corpus.SplitSpec(1.0 - args.holdout, 0.0, args.holdout,
                                seed=cfg.seed)
        train_pairs, _, val_pairs = corpus.split(pairs, spec)
    else:
        train_pairs, val_pairs = pairs, []
    start_epoch = 0
    if args.resume:
        model, _, extra = load_model(_require_file(args.resume, "checkpoint"))
        if model.config != config:
            raise CliUsageError("--resume checkpoint config differs from --config")
        start_epoch = int(extra.get("epoch", -1)) + 1
    else:
        model = build_model(config, seed=cfg.seed)
    result = harness.train(model, train_pairs, val_pairs, cfg,
                           log_path=out / "run_log.jsonl",
                           start_epoch=start_epoch)
    ckpt_path = out / "model.ckpt"
    last_epoch = result.history[-1].epoch if result.history else start_epoch - 1
    save_model(model, vocab.content_hash(), ckpt_path,
               extra={"epoch": last_epoch,
                      "converge_epoch": result.converge_epoch})
    print(f"trained {len(result.history)} epochs; "
          f"converge epoch {result.converge_epoch}; "
          f"{result.words_per_sec:.0f} words/s -> {ckpt_path}")
    _write_manifest(out, "train", args, [args.data, args.vocab],
                    [ckpt_path, out / "run_log.jsonl"], time.perf_counter() - t0)
    return 0


def _metrics_csv(report: harness.MetricsReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for key, value in report.to_dict().items():
            if key != "length_buckets":
                writer.writerow([key, value])


def _buckets_csv(buckets, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["length_lo", "length_hi", "repair_rate", "count"])
        for b in buckets:
            writer.writerow([b.lo, b.hi, b.rate, b.count])


_worker_model = None


def _eval_worker_init(ckpt_path):
    global _worker_model
    _worker_model, _, _ = load_model(ckpt_path)


def _eval_worker(job):
    pair_dicts, width, n_best, max_len = job
    pairs = [corpus.CodePair(**d) for d in pair_dicts]
    results = harness.evaluate_model(_worker_model, pairs, width, n_best, max_len)
    return [(r.pair_id, r.source_length, r.candidates, r.matched_rank)
            for r in results]


def cmd_evaluate(args) -> int:
    t0 = time.perf_counter()
    out = _out_dir(args)
    ckpt_path = _require_file(args.checkpoint, "checkpoint")
    model, vocab_hash, _ = load_model(ckpt_path)
    if args.vocab:
        vocab = _load_vocab(args.vocab)
        if vocab.content_hash() != vocab_hash:
            print("WARNING: vocabulary hash differs from the checkpoint",
                  file=sys.stderr)
    pairs = corpus.load_jsonl(_require_file(args.data, "pair file"))
    if not pairs:
        raise CliUsageError(f"{args.data}: empty test set")
    if args.jobs > 1:
        chunks = [pairs[i::args.jobs] for i in range(args.jobs)]
        jobs = [([vars(p) | {"targets": p.targets} for p in chunk],
                 args.beam_width, args.n_best, args.max_len)
                for chunk in chunks if chunk]
        with ProcessPoolExecutor(max_workers=args.jobs,
                                 initializer=_eval_worker_init,
                                 initargs=(str(ckpt_path),)) as pool:
            raw = [r for part in pool.map(_eval_worker, jobs) for r in part]
        results = [harness.EvalResult(*r) for r in raw]
        results.sort(key=lambda r: r.pair_id)
    else:
        results = harness.evaluate_model(model, pairs, args.beam_width,
                                         args.n_best, args.max_len)
    report = harness.MetricsReport(
        repair_rate_1=harness.rate_at(results, 1),
        repair_rate_5=harness.rate_at(results, min(5, args.n_best)),
        length_buckets=harness.length_analysis(results, args.length_buckets),
    )
    with open(out / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    _metrics_csv(report, out / "metrics.csv")
    _buckets_csv(report.length_buckets, out / "length_buckets.csv")
    print(f"repair rate: 1-candidate {report.repair_rate_1:.4f}, "
          f"5-candidate {report.repair_rate_5:.4f} over {len(results)} instances")
    _write_manifest(out, "evaluate", args, [ckpt_path, args.data],
                    [out / "metrics.json", out / "metrics.csv",
                     out / "length_buckets.csv"], time.perf_counter() - t0)
    return 0


def _token_diff(src: list[str], fixed: list[str]) -> str:
    marks = []
    for op, i1, i2, j1, j2 in difflib.SequenceMatcher(
            a=src, b=fixed, autojunk=False).get_opcodes():
        if op == "equal":
            marks.extend(src[i1:i2])
        else:
            if i2 > i1:
                marks.append("[-" + "".join(src[i1:i2]) + "-]")
            if j2 > j1:
                marks.append("{+" + "".join(fixed[j1:j2]) + "+}")
    return "".join(marks)


def cmd_correct(args) -> int:
    t0 = time.perf_counter()
    out = _out_dir(args)
    ckpt_path = _require_file(args.checkpoint, "checkpoint")
    model, vocab_hash, _ = load_model(ckpt_path)
    vocab = _load_vocab(args.vocab)
    if vocab.content_hash() != vocab_hash:
        print("WARNING: vocabulary hash differs from the checkpoint",
              file=sys.stderr)
    source = Path(_require_file(args.source, "source file")).read_text(
        encoding="utf-8")
    tokens = codetok.tokenize(source)
    if not args.no_rename:
        tokens, _ = codetok.rename_functions(tokens)
    ids = vocab.encode(tokens)
    cands = decode.beam_search(model, ids, args.beam_width, args.n_best,
                               args.max_len)
    lines = []
    for rank, (cand_ids, score) in enumerate(cands, start=1):
        text = codetok.detokenize(vocab.decode(cand_ids))
        lines.append(f"# candidate {rank}  score {score:.4f}")
        if args.diff:
            lines.append(_token_diff(tokens, vocab.decode(cand_ids)))
        else:
            lines.append(text)
    output = "\n".join(lines) + "\n"
    (out / "corrections.txt").write_text(output, encoding="utf-8")
    print(output, end="")
    _write_manifest(out, "correct", args, [ckpt_path, args.source],
                    [out / "corrections.txt"], time.perf_counter() - t0)
    return 0


def cmd_classify(args) -> int:
    t0 = time.perf_counter()
    out = _out_dir(args)
    model_kv, train_kv = parse_config(_require_file(args.config, "config file"))
    vocab = _load_vocab(args.vocab)
    model_kv.setdefault("vocab_size", len(vocab))
    try:
        config = ModelConfig.from_dict(model_kv)
    except (TypeError, ValueError) as exc:
        raise CliUsageError(str(exc)) from exc
    pairs = corpus.load_jsonl(_require_file(args.data, "labeled pair file"))
    labeled = [p for p in pairs if p.label]
    if not labeled:
        raise CliUsageError(f"{args.data}: no labeled pairs")
    if args.classes:
        class_ids = transfer.load_class_list(args.classes)
    else:
        names = sorted({p.label for p in labeled})
        class_ids = {n: i for i, n in enumerate(names)}
        transfer.save_class_list(class_ids, out / "classes.txt")
    seed = args.seed if args.seed is not None else 0
    spec = corpus.SplitSpec(1.0 - args.holdout, 0.0, args.holdout, seed=seed)
    train_pairs, _, eval_pairs = corpus.split(labeled, spec)
    pretrained = old_vocab = None
    if args.pretrained:
        pretrained, _, _ = load_model(_require_file(args.pretrained, "checkpoint"))
        old_vocab = _load_vocab(args.old_vocab) if args.old_vocab else vocab
    clf_cfg = transfer.ClassifierConfig(
        n_class=len(class_ids), freeze_encoder=args.freeze_encoder)
    clf = transfer.make_classifier(config, clf_cfg, pretrained, seed=seed,
                                   old_vocab=old_vocab, new_vocab=vocab)
    result = transfer.train_classifier(
        clf, train_pairs, eval_pairs, class_ids,
        epochs=args.epochs or 10, lr=train_kv.get("lr", 1e-3), seed=seed)
    report = {"n_class": len(class_ids),
              "train_accuracy": result.train_accuracy,
              "eval_accuracy": result.eval_accuracy,
              "pretrained": bool(args.pretrained),
              "history": result.history}
    with open(out / "classify.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
    ckpt.save_checkpoint(clf.named_parameters(), config, vocab.content_hash(),
                         out / "classifier.ckpt",
                         extra={"n_class": len(class_ids), "classifier": True})
    print(f"classifier accuracy: train {result.train_accuracy:.4f}, "
          f"held-out {result.eval_accuracy:.4f}")
    _write_manifest(out, "classify", args, [args.data],
                    [out / "classify.json", out / "classifier.ckpt"],
                    time.perf_counter() - t0)
    return 0


def cmd_benchmark(args) -> int:
    t0 = time.perf_counter()
    out = _out_dir(args)
    model_kv, _ = parse_config(_require_file(args.config, "config file"))
    model_kv.setdefault("vocab_size", 256)
    try:
        base = ModelConfig.from_dict(model_kv)
    except (TypeError, ValueError) as exc:
        raise CliUsageError(str(exc)) from exc
    batch_sizes = [int(b) for b in args.batch_sizes.split(",")]
    kernel_names = ([kernels.active_kernel_name()] if args.kernel == "auto"
                    else ["compiled", "fallback"] if args.kernel == "both"
                    else [args.kernel])
    rows = []
    report: dict = {"kernels": {}}
    for kname in kernel_names:
        entry: dict = {}
        for pyramid in (True, False):
            cfg_kv = base.to_dict() | {"pyramid": pyramid}
            config = ModelConfig.from_dict(cfg_kv)
            wps = harness.benchmark_encoder(
                config, T=args.seq_len, batch_size=args.batch,
                iters=args.iters, seed=args.seed or 0, kernel=kname)
            samples = harness.benchmark_memory(
                config, batch_sizes, T=args.mem_seq_len, kernel=kname)
            fit = harness.memory_cost_fit(samples)
            name = "pyramid" if pyramid else "regular"
            entry[name] = {"words_per_sec": wps, "k_mb_per_instance": fit.k,
                           "efficiency": fit.efficiency,
                           "memory_samples": samples}
            for b, mb in samples:
                rows.append([kname, name, b, mb])
        entry["speedup"] = entry["pyramid"]["words_per_sec"] / \
            entry["regular"]["words_per_sec"]
        report["kernels"][kname] = entry
        print(f"[{kname}] pyramid {entry['pyramid']['words_per_sec']:.0f} words/s, "
              f"regular {entry['regular']['words_per_sec']:.0f} words/s "
              f"(x{entry['speedup']:.2f}); "
              f"k: {entry['pyramid']['k_mb_per_instance']:.2f} vs "
              f"{entry['regular']['k_mb_per_instance']:.2f} Mb/instance")
    with open(out / "benchmark.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
    with open(out / "memory_table.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kernel", "encoder", "batch_size", "peak_mb"])
        writer.writerows(rows)
    _write_manifest(out, "benchmark", args, [args.config],
                    [out / "benchmark.json", out / "memory_table.csv"],
                    time.perf_counter() - t0)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="run output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pyrfix",
        description="Seq2seq program repair with pyramid encoders")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="tokenize, rename, filter, encode")
    p.add_argument("--raw", required=True, help="raw JSONL pair file")
    p.add_argument("--syntax-table", default=None)
    p.add_argument("--vocab", default=None, help="reuse an existing vocabulary")
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--max-length", type=int, default=None)
    p.add_argument("--no-filters", action="store_true")
    p.add_argument("--no-rename", action="store_true")
    p.add_argument("--drop-comments", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("build-vocab", help="build a vocabulary file")
    p.add_argument("--raw", required=True)
    p.add_argument("--syntax-table", default=None)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--no-rename", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("train", help="train a repair model")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="encoded pairs.jsonl")
    p.add_argument("--vocab", required=True)
    p.add_argument("--val", default=None, help="validation pairs.jsonl")
    p.add_argument("--holdout", type=float, default=0.0,
                   help="fraction held out for validation when --val is absent")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="repair rates on a test set")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", default=None)
    p.add_argument("--beam-width", type=int, default=5)
    p.add_argument("--n-best", type=int, default=5)
    p.add_argument("--max-len", type=int, default=None)
    p.add_argument("--length-buckets", type=int, default=50)
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("correct", help="rank corrections for a source file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--beam-width", type=int, default=5)
    p.add_argument("--n-best", type=int, default=5)
    p.add_argument("--max-len", type=int, default=None)
    p.add_argument("--diff", action="store_true",
                   help="print token-level edit marks")
    p.add_argument("--no-rename", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("classify", help="train/evaluate a fault classifier")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="labeled pairs.jsonl")
    p.add_argument("--vocab", required=True)
    p.add_argument("--classes", default=None, help="class list file")
    p.add_argument("--pretrained", default=None, help="repair checkpoint")
    p.add_argument("--old-vocab", default=None,
                   help="vocabulary of the pretrained checkpoint")
    p.add_argument("--holdout", type=float, default=0.2)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--freeze-encoder", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("benchmark", help="throughput and memory slopes")
    p.add_argument("--config", required=True)
    p.add_argument("--seq-len", type=int, default=512)
    p.add_argument("--mem-seq-len", type=int, default=256)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--iters", type=int, default=3)
    p.add_argument("--batch-sizes", default="2,4,8")
    p.add_argument("--kernel", default="auto",
                   choices=("auto", "compiled", "fallback", "both"))
    _add_common(p)
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliUsageError, FileNotFoundError, corpus.CorpusFormatError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
