"""Command-line entry point.

Subcommands: train, eval, inspect-filters, gen-synthetic, compare, sweep.
Configuration lives in flat key=value files with dotted sections
(model.*, filter.*, train.*, data.*); ``--set key=value`` overrides win.
Every run directory receives the fully resolved configuration and seed so
the run can be reproduced bit-exactly.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 numeric
failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import evaluator, filterbank, model as model_mod, trainer
from .errors import ConfigError, ExportError, NumericFailure


def _opt_int(text: str):
    return None if text.lower() in ("none", "") else int(text)


SCHEMA = {
    "model.d_model": int,
    "model.n_layers": int,
    "model.n_heads": int,
    "model.d_mlp": int,
    "model.window": int,
    "model.n_slots": int,
    "model.vocab_size": int,
    "model.variant": str,
    "filter.k": int,
    "filter.spacing": float,
    "filter.tau_min": float,
    "filter.horizon": _opt_int,
    "train.total_steps": int,
    "train.peak_lr": float,
    "train.final_lr": float,
    "train.warmup_steps": int,
    "train.beta1": float,
    "train.beta2": float,
    "train.weight_decay": float,
    "train.clip_norm": float,
    "train.tokens_per_step": int,
    "train.seed": int,
    "train.eval_interval": int,
    "train.log_every": int,
    "data.train_path": str,
    "data.valid_path": str,
    "data.test_path": str,
    "data.tokenizer": str,
}

_MODEL_KEYS = {
    "model.d_model": "d_model", "model.n_layers": "n_layers",
    "model.n_heads": "n_heads", "model.d_mlp": "d_mlp",
    "model.window": "window", "model.n_slots": "n_slots",
    "model.vocab_size": "vocab_size", "model.variant": "variant",
    "filter.k": "k", "filter.spacing": "spacing",
    "filter.tau_min": "tau_min", "filter.horizon": "horizon",
}

_TRAIN_KEYS = {
    "train.total_steps": "total_steps", "train.peak_lr": "peak_lr",
    "train.final_lr": "final_lr", "train.warmup_steps": "warmup_steps",
    "train.beta1": "beta1", "train.beta2": "beta2",
    "train.weight_decay": "weight_decay", "train.clip_norm": "clip_norm",
    "train.tokens_per_step": "tokens_per_step", "train.seed": "seed",
    "train.eval_interval": "eval_interval",
}


@dataclass
class RunConfig:
    """Resolved key=value settings for one invocation."""

    values: dict = field(default_factory=dict)

    def set(self, key: str, raw: str):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            self.values[key] = SCHEMA[key](raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc

    def model_config(self) -> model_mod.ModelConfig:
        kwargs = {field_name: self.values[k]
                  for k, field_name in _MODEL_KEYS.items() if k in self.values}
        return model_mod.ModelConfig(**kwargs)

    def train_config(self) -> trainer.TrainConfig:
        if "train.total_steps" not in self.values:
            raise ConfigError("train.total_steps is required")
        kwargs = {field_name: self.values[k]
                  for k, field_name in _TRAIN_KEYS.items() if k in self.values}
        return trainer.TrainConfig(**kwargs)

    def echo_lines(self) -> str:
        return "".join(f"{k}={self.values[k]}\n" for k in sorted(self.values))


def parse_config_file(path) -> RunConfig:
    cfg = RunConfig()
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        cfg.set(key.strip(), value.strip())
    return cfg


def resolve_config(args) -> RunConfig:
    cfg = parse_config_file(args.config) if getattr(args, "config", None) else RunConfig()
    for override in getattr(args, "set", None) or []:
        if "=" not in override:
            raise ConfigError(f"--set expects key=value, got {override!r}")
        key, _, value = override.partition("=")
        cfg.set(key.strip(), value.strip())
    if getattr(args, "seed", None) is not None:
        cfg.values["train.seed"] = args.seed
    return cfg


def _write_run_metadata(out_dir: Path, cfg: RunConfig):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(cfg.echo_lines(), encoding="utf-8")


def _load_split(cfg: RunConfig, key: str, split: str) -> data_mod.Corpus:
    if key not in cfg.values:
        raise ConfigError(f"{key} is required")
    tokenizer = cfg.values.get("data.tokenizer", "byte")
    return data_mod.load_corpus(cfg.values[key], tokenizer, split=split)


# --- subcommands ---------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    mcfg = cfg.model_config()
    tcfg = cfg.train_config()
    out_dir = Path(args.out)
    _write_run_metadata(out_dir, cfg)
    train_corpus = _load_split(cfg, "data.train_path", "train")
    val_corpus = None
    if "data.valid_path" in cfg.values:
        val_corpus = _load_split(cfg, "data.valid_path", "valid")
    result = trainer.train(mcfg, train_corpus, val_corpus, tcfg, out_dir,
                           log_every=cfg.values.get("train.log_every", 1))
    print(f"trained {result.steps} steps; best val ppl "
          f"{result.best_val_ppl:.4f} at step {result.best_step}")
    print(f"checkpoints: {result.best_ckpt} {result.last_ckpt}")
    return 0


def cmd_eval(args) -> int:
    from . import checkpoint
    from .tensor import Tensor

    header, blobs = checkpoint.load(args.checkpoint)
    mcfg = model_mod.ModelConfig(**header["model"])
    params = {name: Tensor(blobs[name], requires_grad=False)
              for name in header["param_names"]}
    weights = model_mod.slot_weights(model_mod.build_bank(mcfg))
    if args.data:
        corpus = data_mod.load_corpus(args.data, args.tokenizer, split=args.split)
    else:
        cfg = resolve_config(args)
        corpus = _load_split(cfg, f"data.{args.split}_path", args.split)
    report = evaluator.evaluate(params, mcfg, weights, corpus,
                                dump_logprobs=args.dump_logprobs)
    bank = model_mod.build_bank(mcfg)
    if bank is not None:
        print(f"compression: L={mcfg.n_slots} actual tau_max={bank.tau_grid[-1]:.4f} "
              f"horizon M={mcfg.resolved_horizon()}")
    print(report.lines(), end="")
    print(report.record())
    return 0


def cmd_inspect_filters(args) -> int:
    fcfg = filterbank.FilterBankConfig(
        k=args.k, spacing=args.c, tau_min=args.tau_min,
        n_filters=args.L, horizon=args.M)
    bank = filterbank.build_filter_bank(fcfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "filters.csv"
    filterbank.export_impulse_responses(bank, csv_path)
    meta = {
        "k": args.k, "spacing": args.c, "tau_min": args.tau_min,
        "n_filters": args.L, "horizon": bank.horizon,
        "tau_max_actual": float(bank.tau_grid[-1]),
        "tau_grid": [float(t) for t in bank.tau_grid],
    }
    (out_dir / "filters_meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {csv_path} ({bank.n_filters} filters x {bank.horizon} lags); "
          f"actual tau_max={bank.tau_grid[-1]:.4f}")
    return 0


def cmd_gen_synthetic(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.kind == "lag":
        if args.vocab > 256:
            raise ConfigError("lag streams are stored one byte per token; vocab must be <= 256")
        corpus = evaluator.synthetic_lag_task(args.lag, args.vocab, args.length, args.seed)
        out.write_bytes(corpus.ids.astype(np.uint8).tobytes())
        print(f"wrote {out}: {args.length} tokens, lag {args.lag}, vocab {args.vocab}")
    else:
        text = data_mod.generate_article_text(args.length, seed=args.seed)
        out.write_text(text, encoding="utf-8")
        print(f"wrote {out}: {len(text)} chars of document-structured text")
    return 0


def cmd_compare(args) -> int:
    cfg = resolve_config(args)
    mcfg = cfg.model_config()
    tcfg = cfg.train_config()
    out_dir = Path(args.out)
    _write_run_metadata(out_dir, cfg)
    si = replace(mcfg, variant="scale_invariant")
    ctrl = replace(mcfg, variant="delta_control")
    train_corpus = _load_split(cfg, "data.train_path", "train")
    val_corpus = _load_split(cfg, "data.valid_path", "valid")
    seeds = [int(s) for s in args.seeds.split(",")]
    outcome = evaluator.compare_variants([(si, ctrl)], train_corpus, val_corpus,
                                         tcfg, seeds, out_dir)
    for row in outcome["rows"]:
        print(f"{row.variant} seed={row.seed} final_val_ce={row.final_val_ce:.6f}")
    print(f"compression wins on all seeds: {outcome['compression_wins_all_seeds']}")
    print(f"table: {outcome['csv_path']}")
    return 0


def cmd_sweep(args) -> int:
    cfg = resolve_config(args)
    tcfg = cfg.train_config()
    out_dir = Path(args.out)
    _write_run_metadata(out_dir, cfg)
    l_values = [int(s) for s in args.L_list.split(",")]
    train_corpus = _load_split(cfg, "data.train_path", "train")
    val_corpus = _load_split(cfg, "data.valid_path", "valid")
    rows = []
    for n_slots in l_values:
        mcfg = replace(cfg.model_config(), n_slots=n_slots)
        run_dir = out_dir / f"L{n_slots}"
        result = trainer.train(mcfg, train_corpus, val_corpus, tcfg, run_dir,
                               log_every=cfg.values.get("train.log_every", 1))
        ce = evaluator.final_checkpoint_ce(result.last_ckpt, mcfg, val_corpus)
        rows.append((n_slots, ce, float(np.exp(ce))))
        print(f"L={n_slots}: final val ce={ce:.6f} raw ppl={np.exp(ce):.4f}")
    with open(out_dir / "sweep_summary.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("n_slots,final_val_ce,final_val_raw_ppl\n")
        for n_slots, ce, ppl in rows:
            fh.write(f"{n_slots},{ce:.10f},{ppl:.10f}\n")
    return 0


DEFAULT_SWEEP_L = ",".join(str(x) for x in range(5, 54, 4))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sithlm",
        description="Train and probe transformers with log-compressed input memory.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry (repeatable)")
        p.add_argument("--seed", type=int, help="override train.seed")
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")

    p_train = sub.add_parser("train", help="train one model")
    common(p_train)
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="report raw and per-word perplexity")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", help="corpus file to score (overrides --config paths)")
    p_eval.add_argument("--split", default="test", choices=["train", "valid", "test"])
    p_eval.add_argument("--tokenizer", default="byte")
    p_eval.add_argument("--dump-logprobs", metavar="PATH",
                        help="write per-token log-probs as JSONL")
    p_eval.add_argument("--config", help="key=value config file with data paths")
    p_eval.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_eval.set_defaults(fn=cmd_eval)

    p_filt = sub.add_parser("inspect-filters",
                            help="export the discretized filter bank as CSV")
    p_filt.add_argument("--k", type=int, required=True)
    p_filt.add_argument("--c", type=float, default=0.19)
    p_filt.add_argument("--L", type=int, required=True)
    p_filt.add_argument("--tau-min", type=float, default=1.0)
    p_filt.add_argument("--M", type=int, default=None,
                        help="truncation horizon (default: ceil of actual tau_max)")
    p_filt.add_argument("--out", required=True)
    p_filt.set_defaults(fn=cmd_inspect_filters)

    p_gen = sub.add_parser("gen-synthetic", help="write a synthetic corpus")
    p_gen.add_argument("--kind", choices=["lag", "text"], default="lag")
    p_gen.add_argument("--lag", type=int, default=80)
    p_gen.add_argument("--vocab", type=int, default=64)
    p_gen.add_argument("--length", type=int, default=100_000,
                       help="tokens (lag) or characters (text)")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(fn=cmd_gen_synthetic)

    p_cmp = sub.add_parser("compare",
                           help="train compression vs delta control on matched configs")
    common(p_cmp)
    p_cmp.add_argument("--seeds", default="0,1,2")
    p_cmp.set_defaults(fn=cmd_compare)

    p_swp = sub.add_parser("sweep", help="train across a list of slot counts L")
    common(p_swp)
    p_swp.add_argument("--L-list", dest="L_list", default=DEFAULT_SWEEP_L)
    p_swp.set_defaults(fn=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (ExportError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
