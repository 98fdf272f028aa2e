"""Shipped scanner programs standing in for a real antivirus scanner."""

from __future__ import annotations

from importlib import resources

from ..isa import Program, parse_program

NAMES = ("scanner_inline", "scanner_dylib", "scanner_loop")


def source(name: str) -> str:
    if name not in NAMES:
        raise KeyError(f"no corpus program {name!r}")
    return resources.files(__name__).joinpath(f"{name}.asm").read_text(encoding="utf-8")


def load(name: str) -> Program:
    return parse_program(source(name))


def corpus() -> dict[str, Program]:
    """The three scanners, assembled and linked, keyed by name."""
    return {name: load(name) for name in NAMES}
