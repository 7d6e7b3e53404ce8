"""Causal depthwise compression of an embedding history into L slots.

Each filter row is convolved with the history of token embeddings, one
embedding dimension at a time, producing one d-vector per filter: a
smoothed, lagged snapshot of the sequence around that filter's peak time.
Slots are ordered most-distant past first, so the concatenation
[slots, recent tokens] reads left to right as a timeline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError
from .filterbank import FilterBank, delta_bank

LAYERNORM_EPS = 1e-5


@dataclass(frozen=True)
class CompressedSlots:
    """L compressed d-vectors at a chunk boundary.

    ``slots[i]`` summarizes history around lag ``tau_grid[i]``; rows are
    ordered by descending peak time (most-distant first).  ``t0`` is the
    boundary position the history ran up to, when known.
    """

    slots: np.ndarray
    tau_grid: np.ndarray
    t0: int | None = None


def _as_history(history: np.ndarray) -> np.ndarray:
    history = np.asarray(history, dtype=np.float64)
    if history.ndim != 2:
        raise ConfigError(f"history must be a T x d matrix, got shape {history.shape}")
    return history


def _lag_major(history: np.ndarray, horizon: int) -> np.ndarray:
    """Reverse chronological history into lag-major layout, zero-padded.

    Output row j holds the embedding at lag j+1 behind the boundary; lags
    reaching past the start of the history contribute zero vectors.
    """
    T, d = history.shape
    out = np.zeros((horizon, d))
    n = min(T, horizon)
    if n:
        out[:n] = history[::-1][:n]
    return out


def compress(history: np.ndarray, bank: FilterBank, t0: int | None = None) -> CompressedSlots:
    """Apply the bank to the tokens strictly before a chunk boundary.

    ``history`` is chronological (row T-1 is the most recent token, at
    lag 1).  Histories shorter than the bank horizon are allowed; the
    missing past contributes nothing.
    """
    history = _as_history(history)
    lagged = _lag_major(history, bank.horizon)
    weights = bank.weights[::-1]  # slot order: descending peak time
    slots = kernels.conv_forward(weights, lagged[None])[0]
    return CompressedSlots(slots=slots, tau_grid=bank.tau_grid[::-1].copy(), t0=t0)


def delta_slots(history: np.ndarray, n_slots: int, t0: int | None = None) -> CompressedSlots:
    """Shift-register control: keep the last ``n_slots`` embeddings verbatim.

    Row ordering matches compress (most distant first), so row i holds the
    token at lag n_slots - i; lags beyond the available history are zero.
    """
    if n_slots < 1:
        raise ConfigError(f"n_slots must be >= 1, got {n_slots!r}")
    history = _as_history(history)
    lagged = _lag_major(history, n_slots)
    return CompressedSlots(
        slots=lagged[::-1].copy(),
        tau_grid=np.arange(n_slots, 0, -1, dtype=np.float64),
        t0=t0,
    )


def normalize_slots(slots: CompressedSlots, gain: np.ndarray, bias: np.ndarray) -> CompressedSlots:
    """Standardize each slot row across its d components, then apply the
    shared affine (gain, bias).  Zero-variance rows collapse to ``bias``."""
    x = np.asarray(slots.slots, dtype=np.float64)
    gain = np.asarray(gain, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise ConfigError("gain and bias must be d-vectors matching the slot width")
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    normed = (x - mu) / np.sqrt(var + LAYERNORM_EPS)
    return CompressedSlots(slots=normed * gain + bias, tau_grid=slots.tau_grid, t0=slots.t0)


def control_bank(n_slots: int, horizon: int | None = None) -> FilterBank:
    """Alias for the one-hot delta bank, exported here for symmetry."""
    return delta_bank(n_slots, horizon)
