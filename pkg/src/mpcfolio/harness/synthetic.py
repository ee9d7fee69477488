"""Seeded synthetic OHLC markets with an optional learnable momentum signal.

Closes follow a geometric random walk whose log-return carries a persistent
AR(1) drift component when signal_strength > 0; because the drift persists,
trailing price features predict near-future movements and a forecaster can
earn genuine out-of-sample skill on the planted signal. Intraday jitter and
the adjusted-close factor scale with volatility, so a zero-volatility spec
yields exactly flat or exactly exponential price paths.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..marketdata import MarketSeries, trading_dates


@dataclass(frozen=True)
class SyntheticMarketSpec:
    n_assets: int = 5
    length: int = 500
    drift: float = 0.0002
    volatility: float = 0.01
    signal_strength: float = 0.0
    signal_persistence: float = 0.9
    intraday_scale: float = 0.3
    start_price: float = 100.0
    start_date: str = "2015-01-01"
    split_fracs: tuple = (0.6, 0.2)
    seed: int = 0

    def __post_init__(self):
        if self.length < 100:
            raise ConfigError(f"length must be >= 100, got {self.length}")
        if self.volatility < 0:
            raise ConfigError(f"volatility must be >= 0, got {self.volatility}")
        if not 0.0 <= self.signal_persistence < 1.0:
            raise ConfigError("signal_persistence must be in [0, 1)")
        if self.n_assets < 1:
            raise ConfigError(f"n_assets must be >= 1, got {self.n_assets}")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["split_fracs"] = list(self.split_fracs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticMarketSpec":
        d = dict(d)
        d["split_fracs"] = tuple(d.get("split_fracs", (0.6, 0.2)))
        return cls(**d)


def generate_synthetic(spec: SyntheticMarketSpec) -> MarketSeries:
    rng = np.random.default_rng(spec.seed)
    t, n = spec.length, spec.n_assets
    vol = spec.volatility

    mu = np.zeros(n)
    log_ret = np.empty((t, n))
    for i in range(t):
        log_ret[i] = spec.drift + mu + vol * rng.standard_normal(n)
        mu = spec.signal_persistence * mu + spec.signal_strength * rng.standard_normal(n)

    close = np.empty((t, n))
    close[0] = spec.start_price
    for i in range(1, t):
        close[i] = close[i - 1] * np.exp(log_ret[i])

    jitter = vol * spec.intraday_scale
    open_ = close * np.exp(jitter * rng.standard_normal((t, n)))
    body_hi = np.maximum(open_, close)
    body_lo = np.minimum(open_, close)
    high = body_hi * np.exp(jitter * np.abs(rng.standard_normal((t, n))))
    low = body_lo * np.exp(-jitter * np.abs(rng.standard_normal((t, n))))
    # slowly varying adjustment factor; collapses to 1 when volatility is 0
    adj_walk = np.cumsum(0.1 * jitter * rng.standard_normal((t, n)), axis=0)
    adj = close * np.exp(adj_walk - 0.01 * vol)

    f_train, f_valid = spec.split_fracs
    a = int(round(t * f_train))
    b = a + int(round(t * f_valid))
    bounds = {"train": (0, a), "valid": (a, b), "test": (b, t)}
    dates = trading_dates(dt.date.fromisoformat(spec.start_date), t)
    return MarketSeries(
        assets=[f"SYN{i:02d}" for i in range(n)],
        dates=dates,
        open_=open_, high=high, low=low, close=close, adj_close=adj,
        split_bounds=bounds,
    )
