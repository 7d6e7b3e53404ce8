"""Minimal reverse-mode autodiff over dense float64 NumPy arrays.

Define-by-run: every operation records a closure that routes the output
gradient to its inputs, and ``backward`` replays the recorded graph in
reverse topological order.  The op set is exactly what the model needs:
matmul, broadcast add, scalar scale, GELU, masked softmax, layer norm,
embedding gather, the fixed-weight compression convolution, reshaping,
and masked cross-entropy.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .errors import ConfigError

GELU_C0 = math.sqrt(2.0 / math.pi)
GELU_C1 = 0.044715


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward_fn = _backward_fn

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, grad):
        if self.grad is None:
            # copy: the incoming buffer may be a view into another grad
            self.grad = np.array(grad)
        else:
            self.grad += grad

    def zero_grad(self):
        self.grad = None

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out_data = self.data + other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.data.shape))

        return _wrap(out_data, (self, other), backward)

    def __mul__(self, scalar):
        if isinstance(scalar, Tensor):
            raise TypeError("only scalar multiplication is supported")
        s = float(scalar)

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * s)

        return _wrap(self.data * s, (self,), backward)

    __rmul__ = __mul__

    def __matmul__(self, other):
        if not isinstance(other, Tensor):
            other = Tensor(other)
        # promote 1-D operands so one gradient rule covers the dot cases
        a_vec = self.data.ndim == 1
        b_vec = other.data.ndim == 1
        a = self.data[None, :] if a_vec else self.data
        b = other.data[:, None] if b_vec else other.data
        out_full = np.matmul(a, b)
        out_data = out_full
        if b_vec:
            out_data = out_data[..., 0]
        if a_vec:
            out_data = out_data[..., 0, :] if not b_vec else out_data[..., 0]

        def backward(g):
            if b_vec:
                g = g[..., None]
            if a_vec:
                g = g[..., None, :]
            if self.requires_grad:
                ga = np.matmul(g, np.swapaxes(b, -1, -2))
                ga = _unbroadcast(ga, a.shape)
                self._accumulate(ga[0] if a_vec else ga)
            if other.requires_grad:
                if b.ndim == 2 and g.ndim > 2:
                    # shared weight: collapse batch dims into one GEMM
                    a2 = a.reshape(-1, a.shape[-1])
                    g2 = g.reshape(-1, g.shape[-1])
                    gb = a2.T @ g2
                else:
                    gb = _unbroadcast(np.matmul(np.swapaxes(a, -1, -2), g), b.shape)
                other._accumulate(gb[:, 0] if b_vec else gb)

        return _wrap(out_data, (self, other), backward)

    # -- shape ops -----------------------------------------------------------

    def reshape(self, *shape):
        old_shape = self.data.shape

        def backward(g):
            if self.requires_grad:
                self._accumulate(g.reshape(old_shape))

        return _wrap(self.data.reshape(*shape), (self,), backward)

    def transpose(self, axes):
        inv = np.argsort(axes)

        def backward(g):
            if self.requires_grad:
                self._accumulate(np.ascontiguousarray(g.transpose(inv)))

        return _wrap(np.ascontiguousarray(self.data.transpose(axes)), (self,), backward)

    # -- graph traversal -------------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ConfigError("backward() requires a scalar loss")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)


def _wrap(data, parents, backward_fn):
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs,
                  _parents=tuple(p for p in parents if p.requires_grad) if needs else (),
                  _backward_fn=backward_fn if needs else None)


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- neural-net primitives ------------------------------------------------------


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation (the GPT-2 convention)."""
    xd = x.data
    x2 = xd * xd
    t = np.tanh(GELU_C0 * (xd + GELU_C1 * x2 * xd))
    out_data = 0.5 * xd * (1.0 + t)

    def backward(g):
        if x.requires_grad:
            du = GELU_C0 * (1.0 + 3.0 * GELU_C1 * x2)
            x._accumulate(g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du))

    return _wrap(out_data, (x,), backward)


def softmax_lastdim(x: Tensor, additive_mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis, after adding an optional mask of 0/-inf.

    Every row must keep at least one unmasked entry; -inf entries come out
    as exact zeros and receive zero gradient.
    """
    z = x.data if additive_mask is None else x.data + additive_mask
    zmax = np.max(z, axis=-1, keepdims=True)
    e = np.exp(z - zmax)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        if x.requires_grad:
            inner = (g * s).sum(axis=-1, keepdims=True)
            x._accumulate(s * (g - inner))

    return _wrap(s, (x,), backward)


def layernorm_lastdim(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize the last axis, then apply the shared affine (gain, bias)."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = xhat * gain.data + bias.data

    def backward(g):
        if gain.requires_grad:
            gain._accumulate(_unbroadcast(g * xhat, gain.data.shape))
        if bias.requires_grad:
            bias._accumulate(_unbroadcast(g, bias.data.shape))
        if x.requires_grad:
            gx = g * gain.data
            n = x.data.shape[-1]
            term = gx - gx.mean(axis=-1, keepdims=True) \
                - xhat * (gx * xhat).sum(axis=-1, keepdims=True) / n
            x._accumulate(term * inv)

    return _wrap(out_data, (x, gain, bias), backward)


def gather_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Embedding lookup; id -1 yields a zero row and routes no gradient."""
    ids = np.asarray(ids, dtype=np.int64)
    out_data = kernels.gather_rows(table.data, ids)

    def backward(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            kernels.scatter_add_rows(table.grad, ids, g)

    return _wrap(out_data, (table,), backward)


def depthwise_causal_conv(history: Tensor, weights: np.ndarray) -> Tensor:
    """Fixed-weight compression convolution (differentiable through history).

    history: (B, M, d) lag-major embeddings; weights: (L, M) filter rows in
    the desired slot order.  Returns (B, L, d).
    """
    weights = np.asarray(weights, dtype=np.float64)
    if history.data.ndim != 3 or history.data.shape[1] != weights.shape[1]:
        raise ConfigError(
            f"history {history.data.shape} does not match filter horizon {weights.shape}")
    out_data = kernels.conv_forward(weights, history.data)

    def backward(g):
        if history.requires_grad:
            history._accumulate(kernels.conv_backward(weights, g))

    return _wrap(out_data, (history,), backward)


def concat_axis1(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along axis 1 (the sequence axis)."""
    na = a.data.shape[1]

    def backward(g):
        if a.requires_grad:
            a._accumulate(g[:, :na])
        if b.requires_grad:
            b._accumulate(g[:, na:])

    return _wrap(np.concatenate([a.data, b.data], axis=1), (a, b), backward)


def slice_axis1(x: Tensor, start: int, stop: int) -> Tensor:
    """Take rows [start:stop) along axis 1."""

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[:, start:stop] = g
            x._accumulate(full)

    return _wrap(np.ascontiguousarray(x.data[:, start:stop]), (x,), backward)


def masked_cross_entropy(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean cross-entropy over positions with mask == 1.

    logits: (..., V); targets: integer array matching the leading shape;
    mask: 0/1 array of the same leading shape with at least one 1.
    """
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask, dtype=np.float64)
    vocab = logits.data.shape[-1]
    if targets.shape != logits.data.shape[:-1] or mask.shape != targets.shape:
        raise ConfigError("targets and mask must match the logits' leading shape")
    active = targets[mask > 0]
    if active.size == 0:
        raise ConfigError("cross-entropy mask selects no positions")
    if active.min() < 0 or active.max() >= vocab:
        raise ConfigError(f"target id outside vocabulary of size {vocab}")
    total = mask.sum()

    zmax = logits.data.max(axis=-1, keepdims=True)
    shifted = logits.data - zmax
    lse = np.log(np.exp(shifted).sum(axis=-1)) + zmax[..., 0]
    picked = np.take_along_axis(logits.data, targets[..., None], axis=-1)[..., 0]
    ce = lse - picked
    out_data = np.asarray((ce * mask).sum() / total)

    def backward(g):
        if logits.requires_grad:
            p = np.exp(shifted - (lse - zmax[..., 0])[..., None])
            np.subtract.at(p, (*np.indices(targets.shape), targets), 1.0)
            logits._accumulate(g * p * (mask / total)[..., None])

    return _wrap(out_data, (logits,), backward)


def per_token_cross_entropy(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Plain-array helper: -log p(target) per position, natural log."""
    targets = np.asarray(targets, dtype=np.int64)
    zmax = logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(logits - zmax).sum(axis=-1)) + zmax[..., 0]
    picked = np.take_along_axis(logits, targets[..., None], axis=-1)[..., 0]
    return lse - picked
