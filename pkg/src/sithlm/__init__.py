"""Log-compressed temporal memory for decoder-only transformers.

A bank of scale-invariant filters with geometrically spaced peak times
turns unbounded token history into a fixed number of compressed input
slots, letting a standard transformer attend over m + L positions while
seeing thousands of tokens into the past.
"""

from .compressor import CompressedSlots, compress, delta_slots, normalize_slots
from .filterbank import (FilterBank, FilterBankConfig, build_filter_bank,
                         delta_bank, impulse_response, tau_grid)
from .model import ModelConfig, build_bank, init_params
from .trainer import TrainConfig, lr_schedule, train
from .evaluator import EvalReport, evaluate, synthetic_lag_task

__version__ = "0.1.0"

__all__ = [
    "CompressedSlots", "compress", "delta_slots", "normalize_slots",
    "FilterBank", "FilterBankConfig", "build_filter_bank", "delta_bank",
    "impulse_response", "tau_grid",
    "ModelConfig", "build_bank", "init_params",
    "TrainConfig", "lr_schedule", "train",
    "EvalReport", "evaluate", "synthetic_lag_task",
    "__version__",
]
