"""Simulator of CEX-DEX arbitrage under 12-second and 1-second DEX execution."""

from .amm import PoolState, execute_swap, optimal_arb_size
from .sim import ExperimentConfig, RegimeConfig, run_experiment

__all__ = ["PoolState", "execute_swap", "optimal_arb_size", "ExperimentConfig", "RegimeConfig", "run_experiment"]
__version__ = "0.1.0"
