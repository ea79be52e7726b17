"""Analytical performance model and configuration search for 4D-parallel transformer training."""
from .arch import TransformerSpec, builtin_spec, load_spec, param_count, resolve_spec
from .config import ParallelConfig, Strategy
from .counting import MemoryFootprint, OpCost, memory_footprint
from .hwspec import SystemSpec, builtin_system, load_system, resolve_system
from .search import NoFeasibleConfigError, SearchResult, enumerate_configs, evaluate_config, optimize
from .timemodel import Estimate, TimeBreakdown, iteration_estimate, training_time

__all__ = [
    "TransformerSpec", "builtin_spec", "load_spec", "param_count", "resolve_spec",
    "ParallelConfig", "Strategy", "MemoryFootprint", "OpCost", "memory_footprint",
    "SystemSpec", "builtin_system", "load_system", "resolve_system",
    "NoFeasibleConfigError", "SearchResult", "enumerate_configs", "evaluate_config", "optimize",
    "Estimate", "TimeBreakdown", "iteration_estimate", "training_time",
]
