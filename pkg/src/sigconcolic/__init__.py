"""Concolic execution over a small bytecode VM, with directed search and
signature extraction from scanner programs."""

from __future__ import annotations

from .concolic import ExternalPolicy, SymbolicMarks, execute_concolic, negate_at
from .interp import InputImage, Region, execute, record_replay
from .isa import Program, assemble, build_cfg, disassemble, link, parse_program
from .search import (
    BudgetExceeded, Exhausted, ExecutionMap, SearchConfig, TargetSpec, Witness, build_map,
    directed_search, distance_map,
)
from .sigextract import extract_signature, gen_min_db, parse_db
from .solver import SolverBudget, check_assignment, solve

__all__ = [
    "BudgetExceeded", "Exhausted", "ExecutionMap", "ExternalPolicy", "InputImage", "Program", "Region",
    "SearchConfig", "SolverBudget", "SymbolicMarks", "TargetSpec", "Witness", "assemble", "build_cfg",
    "build_map", "check_assignment", "directed_search", "disassemble", "distance_map", "execute",
    "execute_concolic", "extract_signature", "gen_min_db", "link", "negate_at", "parse_db",
    "parse_program", "record_replay", "solve",
]
__version__ = "0.1.0"
