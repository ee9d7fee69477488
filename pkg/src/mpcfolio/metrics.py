"""Evaluation metrics over a portfolio value curve.

Conventions: 252 trading days per year, zero risk-free rate, daily returns
r_t = V_t / V_{t-1} - 1. Sharpe uses the sample standard deviation (T-1);
Sortino uses the population downside deviation (1/T). Undefined cases (zero
volatility, no negative returns, zero drawdown) are reported as None flags,
never as infinities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

TRADING_DAYS_PER_YEAR = 252

METRIC_NAMES = ("total_return", "sharpe", "sortino", "calmar", "max_drawdown")


def _curve(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size < 2:
        raise ConfigError(f"value curve needs >= 2 points, got shape {v.shape}")
    if np.any(v <= 0) or not np.all(np.isfinite(v)):
        raise ConfigError("value curve must be finite and strictly positive")
    return v


def returns(values) -> np.ndarray:
    v = _curve(values)
    return v[1:] / v[:-1] - 1.0


def total_return(values) -> float:
    v = _curve(values)
    return float((v[-1] - v[0]) / v[0])


def sharpe(values, periods_per_year: int = TRADING_DAYS_PER_YEAR) -> float | None:
    r = returns(values)
    if r.size < 2:
        return None
    vol = float(r.std(ddof=1))
    # constant-return curves land at rounding-level vol, not exactly zero
    if vol <= 1e-9 * max(abs(float(r.mean())), 1e-12):
        return None
    return float(np.sqrt(periods_per_year) * r.mean() / vol)


def sortino(values, periods_per_year: int = TRADING_DAYS_PER_YEAR) -> float | None:
    r = returns(values)
    downside = float(np.sqrt(np.mean(np.minimum(r, 0.0) ** 2)))
    if downside == 0.0:
        return None
    return float(np.sqrt(periods_per_year) * r.mean() / downside)


def max_drawdown(values) -> float:
    v = _curve(values)
    peaks = np.maximum.accumulate(v)
    return float(((peaks - v) / peaks).max())


def calmar(values, periods_per_year: int = TRADING_DAYS_PER_YEAR) -> float | None:
    v = _curve(values)
    mdd = max_drawdown(v)
    if mdd == 0.0:
        return None
    t = v.size - 1
    tr = total_return(v)
    annualized = (1.0 + tr) ** (periods_per_year / t) - 1.0
    return float(annualized / mdd)


@dataclass
class MetricsReport:
    total_return: float
    sharpe: float | None
    sortino: float | None
    calmar: float | None
    max_drawdown: float

    @property
    def undefined(self) -> tuple:
        return tuple(n for n in METRIC_NAMES if getattr(self, n) is None)

    def to_dict(self) -> dict:
        return {n: getattr(self, n) for n in METRIC_NAMES}

    def format_row(self) -> dict:
        """Percent rendering (2 decimals) for TR and MDD, ratios to 2 decimals."""
        def pct(x):
            return "undef" if x is None else f"{100.0 * x:.2f}"

        def ratio(x):
            return "undef" if x is None else f"{x:.2f}"

        return {
            "total_return_pct": pct(self.total_return),
            "sharpe": ratio(self.sharpe),
            "calmar": ratio(self.calmar),
            "sortino": ratio(self.sortino),
            "max_drawdown_pct": pct(self.max_drawdown),
        }


def compute_report(values) -> MetricsReport:
    return MetricsReport(
        total_return=total_return(values),
        sharpe=sharpe(values),
        sortino=sortino(values),
        calmar=calmar(values),
        max_drawdown=max_drawdown(values),
    )
