"""Training loop: AdamW, linear warmup, cosine decay, gradient clipping.

Fully deterministic given the seed: initialization, per-epoch window
order, and updates are all driven by seeded generators, and the epoch
order is a pure function of (seed, epoch) so a run can be resumed from a
checkpoint and replay the identical trajectory.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import checkpoint, data, kernels, model as model_mod
from .errors import ConfigError, NumericFailure
from .evaluator import evaluate
from .tensor import Tensor

ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int
    peak_lr: float = 6e-4
    final_lr: float = 6e-5
    warmup_steps: int = 700
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.1
    clip_norm: float = 1.0
    tokens_per_step: int = 16384
    seed: int = 0
    eval_interval: int = 100

    def __post_init__(self):
        if not (0 < self.final_lr <= self.peak_lr):
            raise ConfigError("need 0 < final_lr <= peak_lr")
        if not (0 <= self.warmup_steps < self.total_steps):
            raise ConfigError("need warmup_steps < total_steps")
        if not self.clip_norm > 0:
            raise ConfigError("clip_norm must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)


def lr_schedule(step: int, config: TrainConfig) -> float:
    """Linear warmup to peak_lr, cosine decay to final_lr, flat afterwards."""
    if step < 0:
        raise ConfigError("step must be >= 0")
    if step <= config.warmup_steps:
        if config.warmup_steps == 0:
            return config.peak_lr
        return config.peak_lr * step / config.warmup_steps
    if step <= config.total_steps:
        frac = (step - config.warmup_steps) / (config.total_steps - config.warmup_steps)
        return config.final_lr + 0.5 * (config.peak_lr - config.final_lr) \
            * (1.0 + math.cos(math.pi * frac))
    return config.final_lr


def clip_gradients(grads: dict[str, np.ndarray], clip_norm: float) -> float:
    """Scale all gradients in place so the global L2 norm is <= clip_norm.

    Returns the pre-clip norm.  Non-finite gradients abort the step."""
    total = 0.0
    for g in grads.values():
        total += float(np.dot(g.reshape(-1), g.reshape(-1)))
    norm = math.sqrt(total)
    if not math.isfinite(norm):
        raise NumericFailure("non-finite gradient norm")
    if norm > clip_norm:
        scale = clip_norm / norm
        for g in grads.values():
            g *= scale
    return norm


class AdamW:
    """Decoupled weight decay with bias correction.

    Decay applies to matrix-shaped parameters only (embeddings, attention
    and MLP weights); vectors (biases, layer-norm gains/biases) are
    excluded, following the usual GPT-2 grouping.
    """

    def __init__(self, params: dict[str, Tensor], config: TrainConfig):
        self.config = config
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.step_count = 0

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray], lr: float):
        self.step_count += 1
        cfg = self.config
        for name, p in params.items():
            g = grads[name]
            if not np.isfinite(g).all():
                raise NumericFailure(f"non-finite gradient for {name}")
            wd = cfg.weight_decay if p.data.ndim >= 2 else 0.0
            kernels.adamw_update(p.data, g, self.m[name], self.v[name],
                                 lr=lr, beta1=cfg.beta1, beta2=cfg.beta2,
                                 eps=ADAM_EPS, weight_decay=wd, step=self.step_count)

    def state_blobs(self) -> dict[str, np.ndarray]:
        out = {f"opt.m.{k}": v for k, v in self.m.items()}
        out.update({f"opt.v.{k}": v for k, v in self.v.items()})
        return out

    def load_state_blobs(self, blobs: dict[str, np.ndarray], step_count: int):
        for k in self.m:
            self.m[k] = blobs[f"opt.m.{k}"].copy()
            self.v[k] = blobs[f"opt.v.{k}"].copy()
        self.step_count = step_count


@dataclass
class TrainResult:
    steps: int
    best_val_ppl: float
    best_step: int
    metrics_path: Path
    best_ckpt: Path
    last_ckpt: Path
    train_losses: list


def _save_ckpt(path, mcfg, tcfg, params, opt, step, extra=None):
    checkpoint.save(
        path,
        model_config=mcfg.to_dict(),
        seed=tcfg.seed,
        step=step,
        params={k: p.data for k, p in params.items()},
        opt_state=opt.state_blobs(),
        extra={"train_config": tcfg.to_dict(), **(extra or {})},
    )


def train(mcfg: model_mod.ModelConfig, train_corpus: data.Corpus,
          val_corpus: data.Corpus | None, tcfg: TrainConfig,
          out_dir, resume_from=None, log_every: int = 1,
          stop_at_step: int | None = None) -> TrainResult:
    """Run the optimization loop; writes metrics JSONL and checkpoints.

    ``stop_at_step`` interrupts the run early (after checkpointing), for
    staged runs that resume later under the same schedule.  On numeric
    failure the last periodic checkpoint is left on disk and the
    exception propagates.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.jsonl"
    best_path = out_dir / "best.ckpt"
    last_path = out_dir / "last.ckpt"

    bank = model_mod.build_bank(mcfg)
    weights = model_mod.slot_weights(bank)
    horizon = mcfg.resolved_horizon()
    wins = data.windows(train_corpus, mcfg.window, horizon)
    n_win = len(wins)
    batch_size = max(1, math.ceil(tcfg.tokens_per_step / mcfg.window))

    params = model_mod.init_params(mcfg, tcfg.seed)
    opt = AdamW(params, tcfg)
    start_step = 0
    if resume_from is not None:
        header, blobs = checkpoint.load(resume_from)
        for name, p in params.items():
            p.data[...] = blobs[name]
        start_step = header["step"]
        opt.load_state_blobs(blobs, start_step)

    steps_per_epoch = math.ceil(n_win / batch_size)
    best_val_ppl = math.inf
    best_step = -1
    train_losses = []
    t_start = time.perf_counter()

    log_fh = open(metrics_path, "a", encoding="utf-8")

    def log(record):
        log_fh.write(json.dumps(record, sort_keys=True) + "\n")
        log_fh.flush()

    def run_eval(step):
        nonlocal best_val_ppl, best_step
        if val_corpus is None:
            return None, None
        report = evaluate(params, mcfg, weights, val_corpus)
        if report.raw_ppl < best_val_ppl:
            best_val_ppl = report.raw_ppl
            best_step = step
            _save_ckpt(best_path, mcfg, tcfg, params, opt, step)
        return report.total_ce / report.n_tokens, report.raw_ppl

    last_step = tcfg.total_steps if stop_at_step is None \
        else min(stop_at_step, tcfg.total_steps)
    try:
        for step in range(start_step + 1, last_step + 1):
            epoch = (step - 1) // steps_per_epoch
            pos = ((step - 1) % steps_per_epoch) * batch_size
            order = data.epoch_order(n_win, tcfg.seed, epoch)
            chosen = [wins[i] for i in order[pos:pos + batch_size]]
            hist, inp, tgt, msk = data.stack_batches(chosen)

            logits = model_mod.forward(params, mcfg, weights, hist, inp)
            step_loss = model_mod.loss(logits, tgt, msk)
            step_loss.backward()
            grads = {k: p.grad for k, p in params.items()}
            clip_gradients(grads, tcfg.clip_norm)
            lr = lr_schedule(step, tcfg)
            opt.step(params, grads, lr)
            for p in params.values():
                p.zero_grad()

            loss_val = float(step_loss.data)
            train_losses.append(loss_val)
            record = {"step": step, "lr": lr, "train_loss": loss_val,
                      "wall_time": time.perf_counter() - t_start}
            if step % tcfg.eval_interval == 0 or step == last_step:
                val_loss, val_ppl = run_eval(step)
                if val_loss is not None:
                    record["val_loss"] = val_loss
                    record["val_ppl"] = val_ppl
                _save_ckpt(last_path, mcfg, tcfg, params, opt, step)
            if step % log_every == 0 or step == last_step:
                log(record)
    finally:
        log_fh.close()

    if not last_path.exists():
        _save_ckpt(last_path, mcfg, tcfg, params, opt, last_step)
    if not best_path.exists():
        best_path = last_path
    return TrainResult(steps=last_step, best_val_ppl=best_val_ppl,
                       best_step=best_step, metrics_path=metrics_path,
                       best_ckpt=best_path, last_ckpt=last_path,
                       train_losses=train_losses)
