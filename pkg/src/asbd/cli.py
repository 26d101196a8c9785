"""Command-line front end: synth, train, translate, evaluate, gradcheck.

Runs are driven by a JSON config (one canonical artifact per experiment);
command-line flags override config values, and the ASBD_SEED environment
variable is the fallback seed when neither flag nor config provides one.

Exit codes: 0 success, 1 check failure, 2 usage/config error, 3 numerical
abort.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .data import (
    build_vocab,
    gen_synthetic,
    load_parallel_tsv,
    split_corpus,
    write_parallel_tsv,
)
from .decoding import STRATEGIES, translate_batch
from .metrics import bucket_report, sentence_bleu
from .model import BOTH, FORWARD, REVERSE, ModelConfig, init_model
from .tensor import NumericsError
from .training import (
    CheckpointError,
    TrainSettings,
    load_checkpoint,
    save_checkpoint,
    train,
)
from . import reports

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_NUMERICS = 3


class ConfigError(Exception):
    pass


RUN_CONFIG_KEYS = {
    "train_tsv": str, "valid_tsv": str, "test_tsv": str,
    "checkpoint_dir": str, "report_dir": str,
    "seed": int,
    "d_model": int, "n_heads": int, "d_ff": int,
    "n_enc_layers": int, "n_dec_layers": int,
    "extra_res_fwd": int, "extra_res_rev": int,
    "max_len": int, "dropout": float, "lambda": float,
    "share_tgt_embedding": bool, "directions": str,
    "epochs": int, "batch_size": int, "warmup": int, "lr_factor": float,
    "clip_norm": float, "patience": int, "min_delta": float,
    "strategy": str, "beam": int,
    "bucket_boundaries": list,
    "vocab_min_freq": int, "vocab_max_size": int,
}

RUN_CONFIG_DEFAULTS = {
    "test_tsv": None,
    "seed": None,
    "d_model": 64, "n_heads": 4, "d_ff": 128,
    "n_enc_layers": 2, "n_dec_layers": 2,
    "extra_res_fwd": 2, "extra_res_rev": 1,
    "max_len": 64, "dropout": 0.0, "lambda": 0.5,
    "share_tgt_embedding": True, "directions": None,
    "epochs": 100, "batch_size": 32, "warmup": 200, "lr_factor": 0.3,
    "clip_norm": 1.0, "patience": 10, "min_delta": 0.0,
    "strategy": "score_split", "beam": 1,
    "bucket_boundaries": [10, 20, 30],
    "vocab_min_freq": 1, "vocab_max_size": None,
}


def load_run_config(path, overrides: dict) -> dict:
    try:
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(RUN_CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

    cfg = dict(RUN_CONFIG_DEFAULTS)
    cfg.update(raw)
    for key, value in overrides.items():
        if value is not None:
            cfg[key] = value
    if cfg["seed"] is None:
        cfg["seed"] = _env_seed(default=0)

    for key in ("train_tsv", "valid_tsv", "checkpoint_dir", "report_dir"):
        if key not in cfg or cfg[key] is None:
            raise ConfigError(f"config is missing required key {key!r}")
    for key in ("train_tsv", "valid_tsv", "test_tsv"):
        if cfg.get(key) is not None and not Path(cfg[key]).is_file():
            raise ConfigError(f"{key} does not exist: {cfg[key]}")
    for key in ("checkpoint_dir", "report_dir"):
        try:
            Path(cfg[key]).mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ConfigError(f"cannot create {key} {cfg[key]}: {e}") from e
    if cfg["strategy"] not in STRATEGIES:
        raise ConfigError(f"unknown strategy {cfg['strategy']!r}")
    bounds = cfg["bucket_boundaries"]
    if (not isinstance(bounds, list) or not bounds
            or any(not isinstance(b, int) for b in bounds)):
        raise ConfigError("bucket_boundaries must be a nonempty list of ints")
    return cfg


def _env_seed(default: int) -> int:
    raw = os.environ.get("ASBD_SEED")
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError as e:
        raise ConfigError(f"ASBD_SEED must be an integer, got {raw!r}") from e


def _model_config_from_run(cfg: dict, src_vocab_size: int, tgt_vocab_size: int) -> ModelConfig:
    directions = cfg["directions"]
    if directions is None:
        lam = cfg["lambda"]
        directions = FORWARD if lam == 1.0 else REVERSE if lam == 0.0 else BOTH
    mc = ModelConfig(
        src_vocab=src_vocab_size,
        tgt_vocab=tgt_vocab_size,
        d_model=cfg["d_model"],
        n_heads=cfg["n_heads"],
        d_ff=cfg["d_ff"],
        n_enc_layers=cfg["n_enc_layers"],
        n_dec_layers=cfg["n_dec_layers"],
        extra_res_fwd=cfg["extra_res_fwd"],
        extra_res_rev=cfg["extra_res_rev"],
        max_len=cfg["max_len"],
        dropout=cfg["dropout"],
        loss_weight_lambda=cfg["lambda"],
        seed=cfg["seed"],
        directions=directions,
        share_tgt_embedding=cfg["share_tgt_embedding"],
    )
    try:
        mc.validate()
    except ValueError as e:
        raise ConfigError(str(e)) from e
    if mc.directions == FORWARD and cfg["strategy"] != "l2r_only":
        raise ConfigError("a forward-only model can only decode with strategy l2r_only")
    if mc.directions == REVERSE and cfg["strategy"] != "r2l_only":
        raise ConfigError("a reverse-only model can only decode with strategy r2l_only")
    return mc


# --- subcommands ----------------------------------------------------------------

def cmd_synth(args) -> int:
    seed = args.seed if args.seed is not None else _env_seed(default=0)
    corpus = gen_synthetic(args.task, args.n, (args.len_min, args.len_max),
                           args.alphabet, seed)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        train_c, valid_c, test_c = split_corpus(corpus, seed)
        for name, part in (("train", train_c), ("valid", valid_c), ("test", test_c)):
            write_parallel_tsv(part, out / f"{name}.tsv")
    except OSError as e:
        print(f"error: cannot write corpus files: {e}", file=sys.stderr)
        return EXIT_USAGE
    print(f"wrote {len(train_c)}/{len(valid_c)}/{len(test_c)} pairs "
          f"(train/valid/test) under {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    overrides = {
        "seed": args.seed, "strategy": args.strategy, "lambda": args.lam,
        "extra_res_fwd": args.extra_res_fwd, "extra_res_rev": args.extra_res_rev,
        "epochs": args.epochs, "batch_size": args.batch_size,
    }
    cfg = load_run_config(args.config, overrides)
    train_corpus = load_parallel_tsv(cfg["train_tsv"])
    valid_corpus = load_parallel_tsv(cfg["valid_tsv"])
    src_vocab = build_vocab(train_corpus.sources(), cfg["vocab_min_freq"], cfg["vocab_max_size"])
    tgt_vocab = build_vocab(train_corpus.targets(), cfg["vocab_min_freq"], cfg["vocab_max_size"])
    mc = _model_config_from_run(cfg, len(src_vocab), len(tgt_vocab))
    model = init_model(mc)

    settings = TrainSettings(
        epochs=cfg["epochs"], batch_size=cfg["batch_size"], warmup=cfg["warmup"],
        lr_factor=cfg["lr_factor"], clip_norm=cfg["clip_norm"],
        patience=cfg["patience"], min_delta=cfg["min_delta"], strategy=cfg["strategy"],
    )
    ckpt_path = Path(cfg["checkpoint_dir"]) / "best.asbd"
    result = train(model, train_corpus, valid_corpus, src_vocab, tgt_vocab,
                   settings, checkpoint_path=ckpt_path,
                   log=lambda msg: print(msg, flush=True))
    if not result.history:
        # epoch cap 0: persist the untrained model so downstream commands work
        save_checkpoint(ckpt_path, model, src_vocab, tgt_vocab, 0, [])

    report_dir = Path(cfg["report_dir"])
    reports.write_history_csv(report_dir / "history.csv", result.history)
    if result.history:
        reports.render_history_png(report_dir / "history.png", result.history)
    print(f"best valid_bleu {result.best_bleu:.3f} at epoch {result.best_epoch} "
          f"({len(result.history)} epochs, {result.wall_seconds:.1f}s)")
    return EXIT_OK


def _read_sources(stream) -> list[list[str]]:
    # plain text or TSV; only the first (source) column is translated
    sources = []
    for line in stream.read().replace("\r\n", "\n").split("\n"):
        if line == "":
            continue
        sources.append(line.split("\t", 1)[0].split())
    return sources


def cmd_translate(args) -> int:
    model, src_vocab, tgt_vocab, _ = load_checkpoint(args.checkpoint)
    if args.input == "-":
        sources = _read_sources(sys.stdin)
    else:
        with open(args.input, encoding="utf-8") as f:
            sources = _read_sources(f)
    out = open(args.output, "w", encoding="utf-8", newline="\n") if args.output else sys.stdout
    try:
        if sources:
            results = translate_batch(model, [src_vocab.encode(s) for s in sources],
                                      strategy=args.strategy, beam=args.beam)
            for merged in results:
                text = " ".join(tgt_vocab.decode(merged.tokens))
                if args.emit_splits:
                    i, j = merged.split
                    out.write(f"{text}\t{i}\t{j}\t{merged.norm_score:.6f}\t{merged.strategy}\n")
                else:
                    out.write(text + "\n")
    finally:
        if args.output:
            out.close()
    return EXIT_OK


def _parse_system(spec: str) -> tuple[str, str, str]:
    # name=checkpoint:strategy
    if "=" not in spec:
        raise ConfigError(f"system spec {spec!r} must look like name=checkpoint:strategy")
    name, rest = spec.split("=", 1)
    ckpt, sep, strategy = rest.rpartition(":")
    if not sep or not ckpt:
        raise ConfigError(f"system spec {spec!r} must look like name=checkpoint:strategy")
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r} in system {name!r}")
    return name, ckpt, strategy


def cmd_evaluate(args) -> int:
    systems = [_parse_system(s) for s in args.system]
    test_corpus = load_parallel_tsv(args.test)
    boundaries = [int(b) for b in args.boundaries.split(",")] if args.boundaries else [10, 20, 30]
    report_dir = Path(args.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)

    per_system_scores: dict[str, list[float]] = {}
    for name, ckpt, strategy in systems:
        model, src_vocab, tgt_vocab, _ = load_checkpoint(ckpt)
        srcs = [src_vocab.encode(s) for s, _ in test_corpus.pairs]
        outs = translate_batch(model, srcs, strategy=strategy, beam=args.beam)
        scores = [
            sentence_bleu(tgt_vocab.decode(o.tokens), ref).value
            for o, (_, ref) in zip(outs, test_corpus.pairs)
        ]
        per_system_scores[name] = scores

    names = [name for name, _, _ in systems]
    summary_rows = [(n, sum(per_system_scores[n]) / len(test_corpus)) for n in names]
    items = [
        (len(src), {n: per_system_scores[n][i] for n in names})
        for i, (src, _) in enumerate(test_corpus.pairs)
    ]
    report = bucket_report(items, boundaries, systems=names)

    reports.write_summary_csv(report_dir / "summary.csv", summary_rows)
    reports.write_buckets_csv(report_dir / "buckets.csv", report)
    reports.render_summary_png(report_dir / "summary.png", summary_rows)
    reports.render_buckets_png(report_dir / "buckets.png", report)
    for n, mean in summary_rows:
        print(f"{n}: mean sentence BLEU {mean:.3f}")
    print(f"reports written under {report_dir}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import THRESHOLD, run_suite

    results = run_suite(n_seeds=args.seeds, base_seed=args.seed,
                        inject_sign_flip=args.inject_sign_flip)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  {r.max_rel_err:.3e}  {'PASS' if r.ok else 'FAIL'}")
    failures = [r for r in results if not r.ok]
    if failures:
        worst = max(failures, key=lambda r: r.max_rel_err)
        print(f"FAILED: worst offender {worst.name} "
              f"(max relative error {worst.max_rel_err:.3e}, threshold {THRESHOLD:g})",
              file=sys.stderr)
        return EXIT_CHECK_FAILED
    print(f"all gradients within {THRESHOLD:g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="asbd",
                                description="Bidirectional-decoding NMT toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("synth", help="generate a synthetic parallel corpus (train/valid/test TSV)")
    ps.add_argument("--task", required=True, choices=("copy", "reverse", "suffix_checksum"))
    ps.add_argument("--n", type=int, required=True, help="total pair count (split 80/10/10)")
    ps.add_argument("--len-min", type=int, default=3)
    ps.add_argument("--len-max", type=int, default=12)
    ps.add_argument("--alphabet", type=int, default=20)
    ps.add_argument("--seed", type=int, default=None)
    ps.add_argument("--out", required=True, help="output directory")
    ps.set_defaults(fn=cmd_synth)

    pt = sub.add_parser("train", help="train from a JSON run config")
    pt.add_argument("--config", required=True)
    pt.add_argument("--seed", type=int, default=None)
    pt.add_argument("--strategy", choices=STRATEGIES, default=None)
    pt.add_argument("--lambda", dest="lam", type=float, default=None,
                    help="forward-loss weight; 1 = pure left-to-right")
    pt.add_argument("--extra-res-fwd", type=int, default=None)
    pt.add_argument("--extra-res-rev", type=int, default=None)
    pt.add_argument("--epochs", type=int, default=None)
    pt.add_argument("--batch-size", type=int, default=None)
    pt.set_defaults(fn=cmd_train)

    px = sub.add_parser("translate", help="translate a file (or - for stdin) with a checkpoint")
    px.add_argument("--checkpoint", required=True)
    px.add_argument("--input", required=True, help="text/TSV file, or - for stdin")
    px.add_argument("--output", default=None, help="output file (default stdout)")
    px.add_argument("--strategy", choices=STRATEGIES, default="score_split")
    px.add_argument("--beam", type=int, default=1)
    px.add_argument("--emit-splits", action="store_true",
                    help="append TSV columns: i, j, norm_score, strategy")
    px.set_defaults(fn=cmd_translate)

    pe = sub.add_parser("evaluate", help="score systems on a test TSV; writes summary/buckets reports")
    pe.add_argument("--system", action="append", required=True,
                    metavar="NAME=CKPT:STRATEGY",
                    help="repeatable; e.g. ours=ckpt.asbd:score_split")
    pe.add_argument("--test", required=True)
    pe.add_argument("--boundaries", default="10,20,30",
                    help="comma-separated bucket upper bounds")
    pe.add_argument("--beam", type=int, default=1)
    pe.add_argument("--report-dir", required=True)
    pe.set_defaults(fn=cmd_evaluate)

    pg = sub.add_parser("gradcheck", help="compare tape gradients against central differences")
    pg.add_argument("--seed", type=int, default=0)
    pg.add_argument("--seeds", type=int, default=20, help="number of random seeds per check")
    pg.add_argument("--precision", type=int, choices=(64,), default=64,
                    help="gradient checks run in 64-bit")
    pg.add_argument("--inject-sign-flip", action="store_true",
                    help="testing hook: add a deliberately wrong gradient")
    pg.set_defaults(fn=cmd_gradcheck)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except CheckpointError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericsError as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERICS


if __name__ == "__main__":
    sys.exit(main())
