import numpy as np
import pytest

from sithlm import tensor as T
from sithlm.errors import ConfigError
from sithlm.filterbank import FilterBankConfig, build_filter_bank
from sithlm.compressor import compress


def fd_grad(fn, x, h=1e-6):
    """Central finite differences of scalar fn w.r.t. every entry of x."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        up = fn()
        x[idx] = old - h
        dn = fn()
        x[idx] = old
        g[idx] = (up - dn) / (2 * h)
        it.iternext()
    return g


class TestForwardPrimitives:
    def test_softmax_uniform(self):
        out = T.softmax_lastdim(T.Tensor([0.0, 0.0, 0.0]))
        np.testing.assert_allclose(out.data, [1 / 3, 1 / 3, 1 / 3])

    def test_softmax_rows_sum_to_one(self, rng):
        x = T.Tensor(rng.standard_normal((4, 7)))
        out = T.softmax_lastdim(x)
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, rtol=1e-12)

    def test_softmax_mask_zeroes_entries(self, rng):
        x = T.Tensor(rng.standard_normal((2, 5)))
        mask = np.zeros((2, 5))
        mask[:, 3:] = -np.inf
        out = T.softmax_lastdim(x, additive_mask=mask)
        np.testing.assert_array_equal(out.data[:, 3:], 0.0)
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, rtol=1e-12)

    def test_matmul_identity(self, rng):
        a = rng.standard_normal((2, 2))
        out = T.Tensor(np.eye(2)) @ T.Tensor(a)
        np.testing.assert_array_equal(out.data, a)

    def test_cross_entropy_uniform_logits(self):
        V = 11
        logits = T.Tensor(np.zeros((1, 3, V)))
        targets = np.array([[1, 5, 9]])
        mask = np.ones((1, 3))
        loss = T.masked_cross_entropy(logits, targets, mask)
        assert float(loss.data) == pytest.approx(np.log(V), rel=1e-12)

    def test_cross_entropy_averages_masked_only(self, rng):
        logits = rng.standard_normal((1, 4, 6))
        targets = np.array([[0, 1, 2, 3]])
        full = T.masked_cross_entropy(T.Tensor(logits), targets, np.ones((1, 4)))
        partial_mask = np.array([[1.0, 1.0, 0.0, 0.0]])
        part = T.masked_cross_entropy(T.Tensor(logits), targets, partial_mask)
        ce = T.per_token_cross_entropy(logits, targets)
        assert float(full.data) == pytest.approx(ce.mean())
        assert float(part.data) == pytest.approx(ce[0, :2].mean())

    def test_cross_entropy_errors(self):
        logits = T.Tensor(np.zeros((1, 2, 4)))
        with pytest.raises(ConfigError):
            T.masked_cross_entropy(logits, np.array([[0, 1]]), np.zeros((1, 2)))
        with pytest.raises(ConfigError):
            T.masked_cross_entropy(logits, np.array([[0, 7]]), np.ones((1, 2)))

    def test_layernorm_standardizes(self, rng):
        x = T.Tensor(rng.standard_normal((3, 5, 16)) * 4 + 2)
        out = T.layernorm_lastdim(x, T.Tensor(np.ones(16)), T.Tensor(np.zeros(16)))
        np.testing.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.data.var(axis=-1), 1.0, atol=1e-3)

    def test_conv_matches_compressor(self, rng):
        # the differentiable op and the standalone compressor share one kernel;
        # cross-check anyway
        bank = build_filter_bank(
            FilterBankConfig(k=50, spacing=0.19, tau_min=1.0, n_filters=4, horizon=8))
        history = rng.standard_normal((8, 5))
        lagged = history[::-1].copy()
        out = T.depthwise_causal_conv(T.Tensor(lagged[None]), bank.weights[::-1])
        ref = compress(history, bank).slots
        np.testing.assert_allclose(out.data[0], ref, rtol=1e-12, atol=1e-15)

    def test_conv_shape_mismatch(self):
        with pytest.raises(ConfigError):
            T.depthwise_causal_conv(T.Tensor(np.zeros((1, 5, 2))), np.zeros((3, 4)))


class TestBackward:
    def test_square_derivative(self):
        x = T.Tensor(3.0, requires_grad=True)
        y = x.reshape(1) @ x.reshape(1)  # x * x as a 1-d dot
        y.backward()
        assert x.grad == pytest.approx(6.0)

    def test_cross_entropy_grad_closed_form(self, rng):
        logits = T.Tensor(rng.standard_normal((2, 3, 5)), requires_grad=True)
        targets = rng.integers(0, 5, size=(2, 3))
        mask = np.array([[1.0, 1.0, 0.0], [1.0, 0.0, 1.0]])
        loss = T.masked_cross_entropy(logits, targets, mask)
        loss.backward()
        z = logits.data - logits.data.max(axis=-1, keepdims=True)
        p = np.exp(z) / np.exp(z).sum(axis=-1, keepdims=True)
        onehot = np.eye(5)[targets]
        expected = (p - onehot) * mask[..., None] / mask.sum()
        np.testing.assert_allclose(logits.grad, expected, rtol=1e-10, atol=1e-12)
        np.testing.assert_array_equal(logits.grad[0, 2], 0.0)

    def test_scalar_loss_required(self):
        x = T.Tensor(np.zeros(3), requires_grad=True)
        with pytest.raises(ConfigError):
            (x + x).backward()

    @pytest.mark.parametrize("block", ["gelu", "softmax", "layernorm", "matmul",
                                       "conv", "gather", "attention_head"])
    def test_block_gradcheck(self, rng, block):
        if block == "gelu":
            x = T.Tensor(rng.standard_normal((3, 4)), requires_grad=True)
            leaves = [x]

            def forward():
                out = T.gelu(x) @ T.Tensor(np.ones((4, 1)))
                return out.reshape(3) @ T.Tensor(np.ones(3) / 3)
        elif block == "softmax":
            x = T.Tensor(rng.standard_normal((2, 5)), requires_grad=True)
            w = rng.standard_normal((5, 1))
            leaves = [x]

            def forward():
                out = T.softmax_lastdim(x * 1.7) @ T.Tensor(w)
                return out.reshape(2) @ T.Tensor(np.ones(2) / 2)
        elif block == "layernorm":
            x = T.Tensor(rng.standard_normal((2, 6)), requires_grad=True)
            g = T.Tensor(rng.standard_normal(6), requires_grad=True)
            b = T.Tensor(rng.standard_normal(6), requires_grad=True)
            w = rng.standard_normal((6, 1))
            leaves = [x, g, b]

            def forward():
                out = T.layernorm_lastdim(x, g, b) @ T.Tensor(w)
                return out.reshape(2) @ T.Tensor(np.ones(2) / 2)
        elif block == "matmul":
            a = T.Tensor(rng.standard_normal((2, 3, 4)), requires_grad=True)
            b = T.Tensor(rng.standard_normal((4, 2)), requires_grad=True)
            w = rng.standard_normal((2, 1))
            leaves = [a, b]

            def forward():
                return ((a @ b) @ T.Tensor(w)).reshape(6) @ T.Tensor(np.ones(6) / 6)
        elif block == "conv":
            hist = T.Tensor(rng.standard_normal((2, 7, 3)), requires_grad=True)
            weights = rng.random((4, 7))
            w = rng.standard_normal((3, 1))
            leaves = [hist]

            def forward():
                out = T.depthwise_causal_conv(hist, weights)
                return (out @ T.Tensor(w)).reshape(8) @ T.Tensor(np.ones(8) / 8)
        elif block == "gather":
            table = T.Tensor(rng.standard_normal((9, 4)), requires_grad=True)
            ids = np.array([[0, 3, 3, -1], [8, 0, 1, 2]])
            w = rng.standard_normal((4, 1))
            leaves = [table]

            def forward():
                out = T.gather_rows(table, ids)
                return (out @ T.Tensor(w)).reshape(8) @ T.Tensor(np.ones(8) / 8)
        else:  # attention_head
            x = T.Tensor(rng.standard_normal((1, 5, 6)), requires_grad=True)
            wq = T.Tensor(rng.standard_normal((6, 6)) * 0.5, requires_grad=True)
            wk = T.Tensor(rng.standard_normal((6, 6)) * 0.5, requires_grad=True)
            wv = T.Tensor(rng.standard_normal((6, 6)) * 0.5, requires_grad=True)
            mask = np.triu(np.full((5, 5), -np.inf), k=1)
            readout = rng.standard_normal((6, 1))
            leaves = [x, wq, wk, wv]

            def forward():
                q, k, v = x @ wq, x @ wk, x @ wv
                probs = T.softmax_lastdim((q * (1 / np.sqrt(6))) @ k.transpose((0, 2, 1)),
                                          additive_mask=mask[None])
                out = probs @ v
                return (out @ T.Tensor(readout)).reshape(5) @ T.Tensor(np.ones(5) / 5)

        loss = forward()
        loss.backward()
        for leaf in leaves:
            fd = fd_grad(lambda: float(forward().data), leaf.data)
            denom = np.maximum.reduce([np.abs(fd), np.abs(leaf.grad),
                                       np.full_like(fd, 1e-4)])
            rel = np.abs(fd - leaf.grad) / denom
            assert rel.max() <= 1e-5, f"{block}: max rel err {rel.max():.3e}"


def test_determinism_same_graph_same_bits(rng):
    # identical inputs, two tape replays: bit-identical loss and grads
    x_data = rng.standard_normal((2, 8))
    w_data = rng.standard_normal((8, 8))
    results = []
    for _ in range(2):
        x = T.Tensor(x_data.copy(), requires_grad=True)
        w = T.Tensor(w_data.copy(), requires_grad=True)
        h = T.gelu(x @ w)
        loss = T.masked_cross_entropy(h, np.array([1, 3]), np.ones(2))
        loss.backward()
        results.append((loss.data.copy(), x.grad.copy(), w.grad.copy()))
    assert np.array_equal(results[0][0], results[1][0])
    assert np.array_equal(results[0][1], results[1][1])
    assert np.array_equal(results[0][2], results[1][2])
