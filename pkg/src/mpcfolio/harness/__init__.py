"""Experiment orchestration: configs, sweeps, reports, plots, CLI."""

from .synthetic import SyntheticMarketSpec, generate_synthetic

__all__ = ["SyntheticMarketSpec", "generate_synthetic"]
