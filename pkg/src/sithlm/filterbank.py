"""Scale-invariant temporal filter bank.

A bank of unimodal causal filters whose peak times tile log-time on a
geometric grid.  Each filter's impulse response depends on elapsed time
only through the ratio ``t / tau``, so every filter is a rescaled copy of
one shape: filters peaking later are proportionally wider, and the
coefficient of variation of every filter is ``1 / sqrt(k + 1)``.

The response is evaluated in log space.  The closed form carries the
coefficient ``k**(k+1) / k!`` and the factor ``(t/tau)**k``, both of which
overflow double precision long before ``k = 200``, so the exponent

    (k+1)*ln(k) - ln(Gamma(k+1)) + k*ln(t/tau) - k*t/tau

is assembled first and exponentiated once.  For large banks the exponent
itself can fall below -745, where exp underflows to zero in float64; the
bank therefore keeps the log-space matrix as the authoritative record
(always finite, certifying that every weight is mathematically positive)
and derives the linear matrix used by the convolution from it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ExportError, NumericFailure

CSV_HEADER = "filter_index,tau_star,t_prime,weight"


@dataclass(frozen=True)
class FilterBankConfig:
    """Shape of the bank: sharpness, geometric grid, and truncation horizon.

    ``horizon=None`` means "truncate at the actual last peak time", i.e.
    ceil(tau_min * (1+spacing)**(n_filters-1)).
    """

    k: int
    spacing: float = 0.19
    tau_min: float = 1.0
    n_filters: int = 1
    horizon: int | None = None

    def __post_init__(self):
        if not isinstance(self.k, (int, np.integer)) or isinstance(self.k, bool) or self.k < 1:
            raise ConfigError(f"k must be an integer >= 1, got {self.k!r}")
        if not self.spacing > 0:
            raise ConfigError(f"spacing must be > 0, got {self.spacing!r}")
        if not self.tau_min > 0:
            raise ConfigError(f"tau_min must be > 0, got {self.tau_min!r}")
        if self.n_filters < 1:
            raise ConfigError(f"n_filters must be >= 1, got {self.n_filters!r}")
        if self.horizon is not None and self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon!r}")

    @property
    def tau_max(self) -> float:
        """Actual largest peak time (exact product, not the nominal power of two)."""
        return float(tau_grid(self)[-1])

    def resolved_horizon(self) -> int:
        if self.horizon is not None:
            return int(self.horizon)
        return int(math.ceil(self.tau_max))


def impulse_response(t, tau, k: int):
    """Filter response at elapsed time ``t`` for a filter peaking at ``tau``.

    Accepts scalars or arrays for ``t`` and ``tau`` (broadcast together);
    ``k`` is the integer sharpness.  A function of ``t/tau`` only, hence
    exactly invariant under joint rescaling of ``t`` and ``tau``.
    """
    out = np.exp(log_impulse_response(t, tau, k))
    return out if out.ndim else float(out)


def log_impulse_response(t, tau, k: int):
    """Natural log of the impulse response; finite wherever t, tau > 0."""
    if not isinstance(k, (int, np.integer)) or isinstance(k, bool) or k < 1:
        raise ConfigError(f"k must be an integer >= 1, got {k!r}")
    t = np.asarray(t, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    if np.any(t <= 0) or np.any(tau <= 0):
        raise ConfigError("impulse response requires t > 0 and tau > 0")
    # Single division before the log keeps joint rescaling of (t, tau) exact.
    ratio = t / tau
    return (k + 1) * math.log(k) - math.lgamma(k + 1) + k * np.log(ratio) - k * ratio


def tau_grid(config: FilterBankConfig) -> np.ndarray:
    """Peak times tau_min * (1+spacing)**i for i = 0..n_filters-1.

    Built by cumulative multiplication so the ratio between consecutive
    entries is exactly (1+spacing) in floating point.
    """
    steps = np.full(config.n_filters, 1.0 + config.spacing)
    steps[0] = config.tau_min
    return np.cumprod(steps)


@dataclass(frozen=True)
class FilterBank:
    """Discretized bank: row i holds the response of filter i at lags 1..horizon.

    weights[i, j] = impulse_response(j + 1, tau_grid[i], k), rows in
    ascending peak-time order.  For banks built from the closed form,
    ``log_weights`` is finite everywhere; ``weights`` may contain exact
    zeros where exp underflowed.  The one-hot control bank stores -inf
    off-pulse by construction.
    """

    config: FilterBankConfig | None
    tau_grid: np.ndarray
    log_weights: np.ndarray
    weights: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "weights", np.exp(self.log_weights))
        self.weights.setflags(write=False)
        self.log_weights.setflags(write=False)
        self.tau_grid.setflags(write=False)

    @property
    def n_filters(self) -> int:
        return self.weights.shape[0]

    @property
    def horizon(self) -> int:
        return self.weights.shape[1]


def build_filter_bank(config: FilterBankConfig) -> FilterBank:
    """Evaluate the bank on the integer lag grid 1..horizon."""
    taus = tau_grid(config)
    horizon = config.resolved_horizon()
    if taus[0] > horizon:
        raise ConfigError(
            f"horizon {horizon} puts every filter peak beyond the grid "
            f"(smallest peak time is {taus[0]:g}); all rows would be monotone"
        )
    lags = np.arange(1, horizon + 1, dtype=np.float64)
    logw = log_impulse_response(lags[None, :], taus[:, None], config.k)
    if not np.isfinite(logw).all():
        raise NumericFailure(f"non-finite log-weight while building bank {config}")
    return FilterBank(config=config, tau_grid=taus, log_weights=logw)


def delta_bank(n_filters: int, horizon: int | None = None) -> FilterBank:
    """One-hot control bank: row i responds only at lag i+1.

    The degenerate limit of the compression bank: a shift register holding
    the ``n_filters`` most recent inputs.  tau_grid[i] = i + 1 since each
    row peaks exactly at its lag.  Extra horizon columns beyond n_filters
    are zero.
    """
    if n_filters < 1:
        raise ConfigError(f"n_filters must be >= 1, got {n_filters!r}")
    horizon = n_filters if horizon is None else int(horizon)
    if horizon < n_filters:
        raise ConfigError("delta bank horizon must cover all n_filters lags")
    taus = np.arange(1, n_filters + 1, dtype=np.float64)
    weights = np.zeros((n_filters, horizon))
    weights[np.arange(n_filters), np.arange(n_filters)] = 1.0
    with np.errstate(divide="ignore"):
        logw = np.log(weights)
    return FilterBank(config=None, tau_grid=taus, log_weights=logw)


def export_impulse_responses(bank: FilterBank, path) -> None:
    """Write all L x horizon weights as CSV rows (filter-major, ascending lag).

    Floats are printed with 17 significant digits so a re-export of the
    same bank is byte-identical and values round-trip exactly.
    """
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(CSV_HEADER + "\n")
            for i in range(bank.n_filters):
                tau = bank.tau_grid[i]
                for j in range(bank.horizon):
                    fh.write(f"{i},{tau:.17g},{j + 1},{bank.weights[i, j]:.17g}\n")
    except OSError as exc:
        raise ExportError(f"failed to export filter bank to {path}: {exc}") from exc
