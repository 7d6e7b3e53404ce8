"""Hot numeric kernels with two interchangeable backends.

The default backend JIT-compiles the inner loops with numba; setting the
environment variable ``SITHLM_BACKEND=numpy`` (or running without numba
installed) selects pure-NumPy equivalents.  Both backends implement the
same contracts and agree to float64 rounding; ``python -m sithlm.bench``
times them side by side.

Conventions shared by all kernels:
  * history embeddings are lag-major: axis 1 index j holds the token at
    lag j+1 behind the chunk boundary;
  * row index -1 in an id array is a sentinel for "no token": it gathers
    a zero row and receives no scattered gradient.
"""

from __future__ import annotations

import os

import numpy as np

_REQUESTED = os.environ.get("SITHLM_BACKEND", "numba").strip().lower()
if _REQUESTED not in ("numba", "numpy"):
    raise ValueError(f"SITHLM_BACKEND must be 'numba' or 'numpy', got {_REQUESTED!r}")

try:
    if _REQUESTED == "numba":
        from numba import njit
        HAS_NUMBA = True
    else:
        HAS_NUMBA = False
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

BACKEND = "numba" if HAS_NUMBA else "numpy"


# --- pure-NumPy reference implementations -----------------------------------

def _conv_forward_np(weights, hist):
    # (L,M) @ (B,M,d) -> (B,L,d); one GEMM per batch via stacked matmul
    return np.matmul(weights, hist)


def _conv_backward_np(weights, grad_slots):
    # adjoint of the forward GEMM: (M,L) @ (B,L,d) -> (B,M,d)
    return np.matmul(weights.T, grad_slots)


def _gather_rows_np(table, ids):
    out = table[np.maximum(ids, 0)]
    out[ids < 0] = 0.0
    return out


def _scatter_add_rows_np(table_grad, ids, grad_rows):
    flat_ids = ids.reshape(-1)
    flat_grad = grad_rows.reshape(-1, grad_rows.shape[-1])
    keep = flat_ids >= 0
    np.add.at(table_grad, flat_ids[keep], flat_grad[keep])


def _adamw_update_np(p, g, m, v, lr, beta1, beta2, eps, weight_decay, bias_c1, bias_c2):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    denom = np.sqrt(v / bias_c2) + eps
    p -= lr * ((m / bias_c1) / denom + weight_decay * p)


# --- numba-compiled twins ----------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def _conv_forward_nb(weights, hist):
        B, M, d = hist.shape
        L = weights.shape[0]
        out = np.zeros((B, L, d))
        for b in range(B):
            for i in range(L):
                for j in range(M):
                    w = weights[i, j]
                    if w != 0.0:
                        for q in range(d):
                            out[b, i, q] += w * hist[b, j, q]
        return out

    @njit(cache=True)
    def _conv_backward_nb(weights, grad_slots):
        B, L, d = grad_slots.shape
        M = weights.shape[1]
        out = np.zeros((B, M, d))
        for b in range(B):
            for i in range(L):
                for j in range(M):
                    w = weights[i, j]
                    if w != 0.0:
                        for q in range(d):
                            out[b, j, q] += w * grad_slots[b, i, q]
        return out

    @njit(cache=True)
    def _gather_rows_nb(table, ids):
        B, N = ids.shape
        d = table.shape[1]
        out = np.zeros((B, N, d))
        for b in range(B):
            for n in range(N):
                row = ids[b, n]
                if row >= 0:
                    for q in range(d):
                        out[b, n, q] = table[row, q]
        return out

    @njit(cache=True)
    def _scatter_add_rows_nb(table_grad, ids, grad_rows):
        B, N = ids.shape
        d = table_grad.shape[1]
        for b in range(B):
            for n in range(N):
                row = ids[b, n]
                if row >= 0:
                    for q in range(d):
                        table_grad[row, q] += grad_rows[b, n, q]

    @njit(cache=True)
    def _adamw_update_nb(p, g, m, v, lr, beta1, beta2, eps, weight_decay, bias_c1, bias_c2):
        n = p.size
        pf = p.reshape(n)
        gf = g.reshape(n)
        mf = m.reshape(n)
        vf = v.reshape(n)
        for i in range(n):
            mf[i] = beta1 * mf[i] + (1.0 - beta1) * gf[i]
            vf[i] = beta2 * vf[i] + (1.0 - beta2) * gf[i] * gf[i]
            denom = np.sqrt(vf[i] / bias_c2) + eps
            pf[i] -= lr * ((mf[i] / bias_c1) / denom + weight_decay * pf[i])


# --- public entry points ------------------------------------------------------

def conv_forward(weights: np.ndarray, hist: np.ndarray) -> np.ndarray:
    """Depthwise causal convolution: slots[b,i] = sum_j weights[i,j] * hist[b,j].

    weights: (L, M) fixed filter rows; hist: (B, M, d) lag-major embeddings.
    """
    weights = np.ascontiguousarray(weights)
    hist = np.ascontiguousarray(hist)
    if HAS_NUMBA:
        return _conv_forward_nb(weights, hist)
    return _conv_forward_np(weights, hist)


def conv_backward(weights: np.ndarray, grad_slots: np.ndarray) -> np.ndarray:
    """Gradient of conv_forward w.r.t. the history embeddings."""
    weights = np.ascontiguousarray(weights)
    grad_slots = np.ascontiguousarray(grad_slots)
    if HAS_NUMBA:
        return _conv_backward_nb(weights, grad_slots)
    return _conv_backward_np(weights, grad_slots)


def gather_rows(table: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """out[b,n] = table[ids[b,n]], or a zero row where ids[b,n] == -1."""
    ids = np.ascontiguousarray(ids, dtype=np.int64)
    if HAS_NUMBA:
        return _gather_rows_nb(np.ascontiguousarray(table), ids)
    return _gather_rows_np(table, ids)


def scatter_add_rows(table_grad: np.ndarray, ids: np.ndarray, grad_rows: np.ndarray) -> None:
    """table_grad[ids[b,n]] += grad_rows[b,n] in place, skipping ids == -1.

    Duplicate ids accumulate; iteration order is fixed (b-major) so the
    result is deterministic.
    """
    ids = np.ascontiguousarray(ids, dtype=np.int64)
    grad_rows = np.ascontiguousarray(grad_rows)
    if HAS_NUMBA:
        _scatter_add_rows_nb(table_grad, ids, grad_rows)
    else:
        _scatter_add_rows_np(table_grad, ids, grad_rows)


def adamw_update(p, g, m, v, *, lr, beta1, beta2, eps, weight_decay, step) -> None:
    """Fused in-place AdamW update with bias correction (decoupled decay)."""
    bias_c1 = 1.0 - beta1 ** step
    bias_c2 = 1.0 - beta2 ** step
    if HAS_NUMBA:
        _adamw_update_nb(p, g, m, v, lr, beta1, beta2, eps, weight_decay,
                         bias_c1, bias_c2)
    else:
        _adamw_update_np(p, g, m, v, lr, beta1, beta2, eps, weight_decay,
                         bias_c1, bias_c2)


# Both implementations of every kernel, keyed for the benchmark harness;
# the numba column is None when numba is unavailable.
IMPLEMENTATIONS = {
    "conv_forward": {"numpy": _conv_forward_np,
                     "numba": _conv_forward_nb if HAS_NUMBA else None},
    "conv_backward": {"numpy": _conv_backward_np,
                      "numba": _conv_backward_nb if HAS_NUMBA else None},
    "gather_rows": {"numpy": _gather_rows_np,
                    "numba": _gather_rows_nb if HAS_NUMBA else None},
    "scatter_add_rows": {"numpy": _scatter_add_rows_np,
                         "numba": _scatter_add_rows_nb if HAS_NUMBA else None},
}
