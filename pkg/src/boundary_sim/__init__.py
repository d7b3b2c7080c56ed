"""Deterministic simulator of the application/kernel boundary spectrum."""

from .core import (
    BASE, TRAP, Baseline, BoundaryConfig, CloneFlag, CostEvent, CostLedger, ExecMode, PathKind,
    TaskControlBlock, Weights, all_valid_configs, ledger_cycles, load_weights, make_config,
    parse_cmdline, parse_weights,
)
from .errors import SimError
from .kernel import Node, Simulator, TaskApi

__all__ = [
    "BASE", "TRAP", "Baseline", "BoundaryConfig", "CloneFlag", "CostEvent", "CostLedger",
    "ExecMode", "Node", "PathKind", "SimError", "Simulator", "TaskApi", "TaskControlBlock",
    "Weights", "all_valid_configs", "ledger_cycles", "load_weights", "make_config",
    "parse_cmdline", "parse_weights",
]

__version__ = "0.1.0"
