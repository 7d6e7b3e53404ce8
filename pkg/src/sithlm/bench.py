"""Timing harness: backend comparison and cost-scaling measurements.

``python -m sithlm.bench`` prints a table comparing the numba and numpy
backends on each hot kernel, then demonstrates the cost decomposition of
the architecture: attention cost is set by the sequence length m + L and
does not move when the compression lookback M grows, while compression
cost grows linearly in M (and L).
"""

from __future__ import annotations

import time

import numpy as np

from . import kernels, model as model_mod


def median_time(fn, repeats: int = 9, inner: int = 1) -> float:
    """Median wall-clock seconds of ``fn()`` over ``repeats`` trials."""
    fn()  # warm-up (JIT compilation, allocator)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        times.append((time.perf_counter() - t0) / inner)
    return float(np.median(times))


def bench_backends(repeats: int = 9):
    """Time each kernel under both backends; returns rows of
    (kernel, numpy_seconds, numba_seconds)."""
    rng = np.random.default_rng(0)
    B, M, L, d, V, N = 16, 512, 29, 128, 320, 512
    weights = rng.random((L, M))
    hist = rng.standard_normal((B, M, d))
    grad_slots = rng.standard_normal((B, L, d))
    table = rng.standard_normal((V, d))
    ids = rng.integers(-1, V, size=(B, N))
    grad_rows = rng.standard_normal((B, N, d))

    cases = {
        "conv_forward": lambda fn: fn(weights, hist),
        "conv_backward": lambda fn: fn(weights, grad_slots),
        "gather_rows": lambda fn: fn(table, ids),
        "scatter_add_rows": lambda fn: fn(np.zeros_like(table), ids, grad_rows),
    }
    rows = []
    for name, call in cases.items():
        impls = kernels.IMPLEMENTATIONS[name]
        t_np = median_time(lambda: call(impls["numpy"]), repeats)
        t_nb = (median_time(lambda: call(impls["numba"]), repeats)
                if impls["numba"] is not None else float("nan"))
        rows.append((name, t_np, t_nb))
    return rows


def _forward_step(mcfg, params, weights, hist, inp, tgt, msk, backward: bool):
    logits = model_mod.forward(params, mcfg, weights, hist, inp)
    loss = model_mod.loss(logits, tgt, msk)
    if backward:
        loss.backward()
        for p in params.values():
            p.zero_grad()
    return float(loss.data)


def time_attention_step(mcfg: model_mod.ModelConfig, batch: int = 8,
                        repeats: int = 9, backward: bool = False,
                        seed: int = 0) -> float:
    """Median seconds for a transformer step on assembled input.

    The compression convolution is excluded by precomputing the history
    embeddings' slots path input arrays once; what is timed is gather +
    conv + blocks, i.e. a full step.  Use time_compression for the conv
    alone.
    """
    rng = np.random.default_rng(seed)
    params = model_mod.init_params(mcfg, seed)
    weights = model_mod.slot_weights(model_mod.build_bank(mcfg))
    M = mcfg.resolved_horizon()
    hist = rng.integers(0, mcfg.vocab_size, size=(batch, M))
    inp = rng.integers(0, mcfg.vocab_size, size=(batch, mcfg.window))
    tgt = rng.integers(0, mcfg.vocab_size, size=(batch, mcfg.window))
    msk = np.ones((batch, mcfg.window))
    return median_time(
        lambda: _forward_step(mcfg, params, weights, hist, inp, tgt, msk, backward),
        repeats)


def time_transformer_only(mcfg: model_mod.ModelConfig, batch: int = 8,
                          repeats: int = 9, seed: int = 0) -> float:
    """Median seconds for the attention stack alone, slots precomputed.

    This is the per-step cost that must track (m + L)^2 d and stay flat
    as the compression lookback M grows.
    """
    from . import tensor as T

    rng = np.random.default_rng(seed)
    params = model_mod.init_params(mcfg, seed)
    weights = model_mod.slot_weights(model_mod.build_bank(mcfg))
    M = mcfg.resolved_horizon()
    hist = rng.integers(0, mcfg.vocab_size, size=(batch, M))
    inp = rng.integers(0, mcfg.vocab_size, size=(batch, mcfg.window))
    x0 = model_mod.assemble_input(params, mcfg, weights, hist, inp).data

    mask = model_mod.attention_mask(mcfg)
    B, S, H, hd = batch, mcfg.seq_len, mcfg.n_heads, mcfg.head_dim
    scale = 1.0 / np.sqrt(hd)

    def blocks():
        x = T.Tensor(x0)
        for i in range(mcfg.n_layers):
            h = T.layernorm_lastdim(x, params[f"ln1_g_{i}"], params[f"ln1_b_{i}"])
            q = (h @ params[f"wq_{i}"] + params[f"bq_{i}"]).reshape(B, S, H, hd).transpose((0, 2, 1, 3))
            kk = (h @ params[f"wk_{i}"] + params[f"bk_{i}"]).reshape(B, S, H, hd).transpose((0, 2, 1, 3))
            v = (h @ params[f"wv_{i}"] + params[f"bv_{i}"]).reshape(B, S, H, hd).transpose((0, 2, 1, 3))
            probs = T.softmax_lastdim((q * scale) @ kk.transpose((0, 1, 3, 2)),
                                      additive_mask=mask[None, None])
            ctx = (probs @ v).transpose((0, 2, 1, 3)).reshape(B, S, H * hd)
            x = x + (ctx @ params[f"wo_{i}"] + params[f"bo_{i}"])
            h2 = T.layernorm_lastdim(x, params[f"ln2_g_{i}"], params[f"ln2_b_{i}"])
            x = x + (T.gelu(h2 @ params[f"w1_{i}"] + params[f"b1_{i}"]) @ params[f"w2_{i}"]
                     + params[f"b2_{i}"])
        return x

    return median_time(blocks, repeats)


def time_compression(n_slots: int, horizon: int, d: int, batch: int = 8,
                     repeats: int = 9, seed: int = 0) -> float:
    """Median seconds for the compression convolution alone."""
    rng = np.random.default_rng(seed)
    weights = rng.random((n_slots, horizon))
    hist = rng.standard_normal((batch, horizon, d))
    return median_time(lambda: kernels.conv_forward(weights, hist), repeats)


def linear_fit_max_residual(xs, ys) -> float:
    """Fit y = a*x + b; return max |y - fit| / fit over the points."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    a, b = np.polyfit(xs, ys, 1)
    fit = a * xs + b
    return float(np.max(np.abs(ys - fit) / fit))


def main() -> int:
    print(f"active backend: {kernels.BACKEND}")
    print()
    print(f"{'kernel':<20}{'numpy (ms)':>12}{'numba (ms)':>12}{'speedup':>9}")
    for name, t_np, t_nb in bench_backends():
        ratio = t_np / t_nb if t_nb == t_nb and t_nb > 0 else float("nan")
        print(f"{name:<20}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{ratio:>9.2f}")

    print()
    print("attention cost vs compression lookback M (fixed m + L):")
    base = dict(d_model=128, n_layers=2, n_heads=4, d_mlp=512,
                window=64, n_slots=21, vocab_size=320, k=100)
    for M in (128, 512):
        mcfg = model_mod.ModelConfig(**base, horizon=M)
        t = time_transformer_only(mcfg)
        print(f"  M={M:5d}: transformer step {t * 1e3:8.3f} ms")

    print()
    print("compression cost vs M (L=29, d=128):")
    for M in (128, 256, 512, 1024):
        t = time_compression(29, M, 128)
        print(f"  M={M:5d}: {t * 1e3:8.3f} ms")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
