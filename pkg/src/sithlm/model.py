"""Decoder-only transformer over [compressed slots || recent tokens].

The compression runs once per chunk, before the first block: history token
embeddings pass through the fixed filter bank, the resulting L slots are
layer-normalized with a shared learned affine and prepended to the m
uncompressed token embeddings.  Learned positions cover all m + L rows.
Attention lets every token position see all slots plus the causal token
prefix; slot positions see slots only.  Loss is computed over the m token
positions and nothing else.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from .errors import ConfigError, NumericFailure
from .filterbank import FilterBank, FilterBankConfig, build_filter_bank, delta_bank

VARIANTS = ("scale_invariant", "delta_control")


def round_up_vocab(n: int) -> int:
    return ((n + 63) // 64) * 64


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_mlp: int = 512
    window: int = 64            # m: uncompressed tokens per chunk
    n_slots: int = 21           # L: compressed positions prepended to the window
    vocab_size: int = 320       # rounded up to a multiple of 64 at construction
    variant: str = "scale_invariant"
    k: int = 100
    spacing: float = 0.19
    tau_min: float = 1.0
    horizon: int | None = None  # M: compression lookback; None = ceil(tau_max)

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ConfigError("d_model must be divisible by n_heads")
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if self.n_slots < 0:
            raise ConfigError("n_slots must be >= 0")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        object.__setattr__(self, "vocab_size", round_up_vocab(self.vocab_size))

    @property
    def seq_len(self) -> int:
        return self.window + self.n_slots

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def filter_config(self) -> FilterBankConfig:
        if self.n_slots == 0:
            raise ConfigError("no filter bank for a model with n_slots == 0")
        return FilterBankConfig(k=self.k, spacing=self.spacing, tau_min=self.tau_min,
                                n_filters=self.n_slots, horizon=self.horizon)

    def resolved_horizon(self) -> int:
        """Compression lookback M actually used by the data pipeline."""
        if self.n_slots == 0:
            return 0
        if self.variant == "delta_control":
            return self.horizon if self.horizon is not None else self.n_slots
        return self.filter_config().resolved_horizon()

    def to_dict(self) -> dict:
        return asdict(self)


def build_bank(config: ModelConfig) -> FilterBank | None:
    """The bank for this run: smooth filters or the one-hot control."""
    if config.n_slots == 0:
        return None
    if config.variant == "delta_control":
        return delta_bank(config.n_slots, config.resolved_horizon())
    return build_filter_bank(config.filter_config())


def slot_weights(bank: FilterBank | None) -> np.ndarray | None:
    """Bank rows flipped into slot order (descending peak time)."""
    if bank is None:
        return None
    return np.ascontiguousarray(bank.weights[::-1])


# Parameter declaration order; checkpoints serialize blobs in exactly this
# order.  %d expands to the layer index.
PARAM_LAYOUT = (
    "tok_emb", "pos_emb", "slot_ln_g", "slot_ln_b",
    ("ln1_g_%d", "ln1_b_%d", "wq_%d", "bq_%d", "wk_%d", "bk_%d", "wv_%d", "bv_%d",
     "wo_%d", "bo_%d", "ln2_g_%d", "ln2_b_%d", "w1_%d", "b1_%d", "w2_%d", "b2_%d"),
    "lnf_g", "lnf_b",
)


def param_names(config: ModelConfig) -> list[str]:
    names = ["tok_emb", "pos_emb", "slot_ln_g", "slot_ln_b"]
    for i in range(config.n_layers):
        names += [n % i for n in PARAM_LAYOUT[4]]
    names += ["lnf_g", "lnf_b"]
    return names


def init_params(config: ModelConfig, seed: int) -> dict[str, T.Tensor]:
    """GPT-2-style init: N(0, 0.02) weights, zero biases, unit norms,
    residual output projections scaled down by 1/sqrt(2 * n_layers)."""
    rng = np.random.default_rng(seed)
    d, dm = config.d_model, config.d_mlp
    resid_scale = 1.0 / np.sqrt(2.0 * config.n_layers)

    def normal(*shape, scale=1.0):
        return rng.normal(0.0, 0.02 * scale, size=shape)

    params: dict[str, T.Tensor] = {}

    def add(name, data):
        params[name] = T.Tensor(np.ascontiguousarray(data, dtype=np.float64),
                                requires_grad=True)

    add("tok_emb", normal(config.vocab_size, d))
    add("pos_emb", normal(config.seq_len, d))
    add("slot_ln_g", np.ones(d))
    add("slot_ln_b", np.zeros(d))
    for i in range(config.n_layers):
        add(f"ln1_g_{i}", np.ones(d))
        add(f"ln1_b_{i}", np.zeros(d))
        add(f"wq_{i}", normal(d, d))
        add(f"bq_{i}", np.zeros(d))
        add(f"wk_{i}", normal(d, d))
        add(f"bk_{i}", np.zeros(d))
        add(f"wv_{i}", normal(d, d))
        add(f"bv_{i}", np.zeros(d))
        add(f"wo_{i}", normal(d, d, scale=resid_scale))
        add(f"bo_{i}", np.zeros(d))
        add(f"ln2_g_{i}", np.ones(d))
        add(f"ln2_b_{i}", np.zeros(d))
        add(f"w1_{i}", normal(d, dm))
        add(f"b1_{i}", np.zeros(dm))
        add(f"w2_{i}", normal(dm, d, scale=resid_scale))
        add(f"b2_{i}", np.zeros(d))
    add("lnf_g", np.ones(d))
    add("lnf_b", np.zeros(d))
    assert list(params) == param_names(config)
    return params


def attention_mask(config: ModelConfig, blank_slots: bool = False) -> np.ndarray:
    """Additive (S, S) mask.  Token rows attend to every slot and to the
    causal token prefix; slot rows attend to slots only.  ``blank_slots``
    additionally hides slots from token rows (plain-transformer check)."""
    L, S = config.n_slots, config.seq_len
    mask = np.full((S, S), -np.inf)
    mask[:L, :L] = 0.0                      # slots <- slots
    tok = np.arange(L, S)
    if not blank_slots:
        mask[L:, :L] = 0.0                  # tokens <- all slots
    causal = tok[None, :] <= tok[:, None]
    mask[L:, L:][causal] = 0.0              # tokens <- causal token prefix
    if blank_slots and L == S:
        raise ConfigError("blank_slots with no token positions")
    return mask


def assemble_input(params: dict, config: ModelConfig, weights: np.ndarray | None,
                   history_ids: np.ndarray, window_ids: np.ndarray,
                   history_emb: T.Tensor | None = None,
                   blank_slots: bool = False) -> T.Tensor:
    """Build the (B, m+L, d) input: normalized slots, token embeddings,
    learned positions over all rows.

    ``history_emb`` overrides the embedding lookup for the history (used
    by tests probing gradients w.r.t. individual past tokens).
    """
    window_ids = np.asarray(window_ids, dtype=np.int64)
    if window_ids.ndim != 2 or window_ids.shape[1] != config.window:
        raise ConfigError(f"window_ids must be (B, {config.window}), got {window_ids.shape}")
    tok = T.gather_rows(params["tok_emb"], window_ids)
    if config.n_slots:
        if weights is None:
            raise ConfigError("slot weights required when n_slots > 0")
        if history_emb is None:
            history_ids = np.asarray(history_ids, dtype=np.int64)
            if history_ids.shape != (window_ids.shape[0], weights.shape[1]):
                raise ConfigError(
                    f"history_ids must be (B, {weights.shape[1]}), got {history_ids.shape}")
            history_emb = T.gather_rows(params["tok_emb"], history_ids)
        raw = T.depthwise_causal_conv(history_emb, weights)
        slots = T.layernorm_lastdim(raw, params["slot_ln_g"], params["slot_ln_b"])
        if blank_slots:
            slots = slots * 0.0
        x = T.concat_axis1(slots, tok)
    else:
        x = tok
    return x + params["pos_emb"]


def forward(params: dict, config: ModelConfig, weights: np.ndarray | None,
            history_ids: np.ndarray, window_ids: np.ndarray,
            history_emb: T.Tensor | None = None,
            blank_slots: bool = False) -> T.Tensor:
    """Full forward pass; returns logits (B, m, V) for the token positions."""
    x = assemble_input(params, config, weights, history_ids, window_ids,
                       history_emb=history_emb, blank_slots=blank_slots)
    mask = attention_mask(config, blank_slots=blank_slots)
    B = x.data.shape[0]
    H, hd, S = config.n_heads, config.head_dim, config.seq_len
    scale = 1.0 / np.sqrt(hd)

    for i in range(config.n_layers):
        h = T.layernorm_lastdim(x, params[f"ln1_g_{i}"], params[f"ln1_b_{i}"])
        q = (h @ params[f"wq_{i}"] + params[f"bq_{i}"]).reshape(B, S, H, hd).transpose((0, 2, 1, 3))
        k = (h @ params[f"wk_{i}"] + params[f"bk_{i}"]).reshape(B, S, H, hd).transpose((0, 2, 1, 3))
        v = (h @ params[f"wv_{i}"] + params[f"bv_{i}"]).reshape(B, S, H, hd).transpose((0, 2, 1, 3))
        scores = (q * scale) @ k.transpose((0, 1, 3, 2))
        probs = T.softmax_lastdim(scores, additive_mask=mask[None, None])
        ctx = (probs @ v).transpose((0, 2, 1, 3)).reshape(B, S, H * hd)
        x = x + (ctx @ params[f"wo_{i}"] + params[f"bo_{i}"])
        h2 = T.layernorm_lastdim(x, params[f"ln2_g_{i}"], params[f"ln2_b_{i}"])
        x = x + (T.gelu(h2 @ params[f"w1_{i}"] + params[f"b1_{i}"]) @ params[f"w2_{i}"]
                 + params[f"b2_{i}"])
        if not np.isfinite(x.data).all():
            raise NumericFailure(f"non-finite activations after layer {i}")

    x = T.layernorm_lastdim(x, params["lnf_g"], params["lnf_b"])
    tokens = T.slice_axis1(x, config.n_slots, S)
    # weight-tied output projection
    return tokens @ params["tok_emb"].transpose((1, 0))


def loss(logits: T.Tensor, targets: np.ndarray, mask: np.ndarray | None = None) -> T.Tensor:
    """Mean cross-entropy over the m token positions (slots carry no loss)."""
    targets = np.asarray(targets, dtype=np.int64)
    if mask is None:
        mask = np.ones(targets.shape)
    return T.masked_cross_entropy(logits, targets, mask)
