"""Perplexity evaluation and the synthetic long-range-dependency benchmark.

Raw perplexity is exp(total cross-entropy / scored tokens); per-word
perplexity is exp(total cross-entropy / whitespace word count), which
makes models with different tokenizers comparable on the same text.
Evaluation walks the stride-m windows in order and sums per-token
cross-entropies sequentially, so a report is bit-reproducible.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from . import data, model as model_mod
from .errors import ConfigError
from .tensor import per_token_cross_entropy


@dataclass(frozen=True)
class EvalReport:
    total_ce: float      # summed cross-entropy, nats
    n_tokens: int        # scored (target) tokens
    n_words: int         # whitespace words in the raw text
    raw_ppl: float
    per_word_ppl: float
    fingerprint: str

    def lines(self) -> str:
        return (
            f"tokens scored      {self.n_tokens}\n"
            f"words              {self.n_words}\n"
            f"total cross-entropy {self.total_ce:.6f} nats\n"
            f"raw perplexity      {self.raw_ppl:.4f}\n"
            f"per-word perplexity {self.per_word_ppl:.4f}\n"
        )

    def record(self) -> str:
        """The same report as one line of JSON."""
        return json.dumps({
            "total_ce": self.total_ce, "n_tokens": self.n_tokens,
            "n_words": self.n_words, "raw_ppl": self.raw_ppl,
            "per_word_ppl": self.per_word_ppl, "fingerprint": self.fingerprint,
        }, sort_keys=True)


def _fingerprint(mcfg: model_mod.ModelConfig) -> str:
    blob = json.dumps(mcfg.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def evaluate(params, mcfg: model_mod.ModelConfig, weights, corpus: data.Corpus,
             batch_windows: int = 16, dump_logprobs=None) -> EvalReport:
    """Score every predictable token of the corpus exactly once.

    ``dump_logprobs``, when given a path, writes one JSON record per
    scored token: {"pos": ..., "target": ..., "logprob": ...}.
    """
    if len(corpus) < 2:
        raise ConfigError("cannot evaluate an empty corpus")
    horizon = mcfg.resolved_horizon()
    wins = data.windows(corpus, mcfg.window, horizon)
    total_ce = 0.0
    n_tokens = 0
    dump_fh = open(dump_logprobs, "w", encoding="utf-8") if dump_logprobs else None
    try:
        for i in range(0, len(wins), batch_windows):
            chunk = wins[i:i + batch_windows]
            hist, inp, tgt, msk = data.stack_batches(chunk)
            logits = model_mod.forward(params, mcfg, weights, hist, inp)
            ce = per_token_cross_entropy(logits.data, tgt)
            total_ce += float((ce * msk).sum())
            n_tokens += int(msk.sum())
            if dump_fh:
                for b, batch in enumerate(chunk):
                    for j in range(mcfg.window):
                        if msk[b, j] > 0:
                            dump_fh.write(json.dumps(
                                {"pos": batch.t0 + 1 + j, "target": int(tgt[b, j]),
                                 "logprob": -float(ce[b, j])}) + "\n")
    finally:
        if dump_fh:
            dump_fh.close()
    return EvalReport(
        total_ce=total_ce,
        n_tokens=n_tokens,
        n_words=corpus.n_words,
        raw_ppl=math.exp(total_ce / n_tokens),
        per_word_ppl=math.exp(total_ce / corpus.n_words),
        fingerprint=_fingerprint(mcfg),
    )


def synthetic_lag_task(lag: int, vocab: int, length: int, seed: int,
                       copy_prob: float = 0.9, split: str = "train") -> data.Corpus:
    """Token stream where position t repeats position t - lag with
    probability ``copy_prob`` and is uniform noise otherwise; the first
    ``lag`` positions are uniform.  Deterministic given the seed."""
    if lag < 1:
        raise ConfigError("lag must be >= 1")
    if lag >= length:
        raise ConfigError("lag must be smaller than the stream length")
    rng = np.random.default_rng(seed)
    ids = rng.integers(0, vocab, size=length).astype(np.int32)
    copy = rng.random(length) < copy_prob
    copy[:lag] = False
    # each residue class mod lag is an independent copy chain; a position
    # keeps the fresh draw of the nearest non-copy position at or before it
    for c in range(lag):
        chain = np.arange(c, length, lag)
        fresh_idx = np.where(~copy[chain], np.arange(len(chain)), 0)
        src = np.maximum.accumulate(fresh_idx)
        ids[chain] = ids[chain[src]]
    return data.Corpus(ids=ids, n_words=length,
                       vocab_size=model_mod.round_up_vocab(vocab), split=split)


def lag_task_entropy(vocab: int, copy_prob: float = 0.9) -> float:
    """Cross-entropy of an oracle that sees the lagged token (nats)."""
    hit = copy_prob + (1.0 - copy_prob) / vocab
    miss = (1.0 - copy_prob) / vocab
    return -(hit * math.log(hit) + (vocab - 1) * miss * math.log(miss))


def no_information_entropy(vocab: int) -> float:
    """Cross-entropy floor for a model blind to the lag: the marginal is
    uniform, so the best blind predictor scores ln(vocab)."""
    return math.log(vocab)


@dataclass(frozen=True)
class VariantOutcome:
    variant: str
    seed: int
    final_val_ce: float


def compare_variants(config_pairs, train_corpus: data.Corpus, val_corpus: data.Corpus,
                     tcfg, seeds, out_dir) -> dict:
    """Train matched (scale_invariant, delta_control) pairs per seed and
    tabulate final validation cross-entropy.

    Each pair must differ in the ``variant`` field only.  Returns a dict
    with rows and a flag for whether compression won on every seed, and
    writes the table to ``out_dir``/comparison.csv.
    """
    from dataclasses import replace
    from pathlib import Path

    from .trainer import train

    for si_cfg, ctrl_cfg in config_pairs:
        if si_cfg.variant != "scale_invariant" or ctrl_cfg.variant != "delta_control":
            raise ConfigError("each pair must be (scale_invariant, delta_control)")
        if replace(si_cfg, variant="delta_control") != ctrl_cfg:
            raise ConfigError("pair configs must differ only in variant")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows: list[VariantOutcome] = []
    for pair_idx, pair in enumerate(config_pairs):
        for mcfg in pair:
            for seed in seeds:
                run_tcfg = replace(tcfg, seed=seed)
                run_dir = out_dir / f"pair{pair_idx}_{mcfg.variant}_seed{seed}"
                result = train(mcfg, train_corpus, val_corpus, run_tcfg, run_dir)
                # score the retained best-validation model (same rule for
                # both variants)
                ce = final_checkpoint_ce(result.best_ckpt, mcfg, val_corpus)
                rows.append(VariantOutcome(mcfg.variant, seed, ce))

    wins = []
    for seed in seeds:
        si = [r.final_val_ce for r in rows if r.variant == "scale_invariant" and r.seed == seed]
        ct = [r.final_val_ce for r in rows if r.variant == "delta_control" and r.seed == seed]
        wins.append(all(a < b for a, b in zip(si, ct)))

    csv_path = out_dir / "comparison.csv"
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("variant,seed,final_val_ce\n")
        for r in rows:
            fh.write(f"{r.variant},{r.seed},{r.final_val_ce:.10f}\n")
    return {"rows": rows, "compression_wins_all_seeds": all(wins),
            "csv_path": csv_path}


def final_checkpoint_ce(ckpt_path, mcfg, corpus) -> float:
    """Mean per-token validation CE of the model stored in a checkpoint."""
    from . import checkpoint
    from .tensor import Tensor

    header, blobs = checkpoint.load(ckpt_path)
    params = {name: Tensor(blobs[name], requires_grad=False)
              for name in header["param_names"]}
    weights = model_mod.slot_weights(model_mod.build_bank(mcfg))
    report = evaluate(params, mcfg, weights, corpus)
    return report.total_ce / report.n_tokens
