"""Command-line frontend.

Exit codes: 0 success, 1 usage error, 2 input or parse error, 3 target
not reached, 4 internal fault.  Programs are assembly files (with optional
``.library`` sections) or ``corpus:<name>``.  Input regions are given as
``name=SRC@hexaddr`` where SRC is a file path or ``fill:N[:XX]`` for N
copies of byte XX (default 58).
"""

from __future__ import annotations

import argparse
import datetime
import json
import sys
from pathlib import Path

from . import corpus as corpus_mod
from .concolic import ExternalPolicy, SymbolicMarks, execute_concolic
from .interp import (
    DEFAULT_FUEL, ImageError, InputImage, Region, TraceFormatError, execute, format_trace, program_cfg,
)
from .isa import AsmError, LinkError, format_program, parse_program
from .search import (
    SearchConfig, TargetError, TargetSpec, TraceMismatch, Witness, build_map, directed_search,
    dumps_report, search_report,
)
from .sigextract import DbError, extract_signature, make_inputs
from .solver import PartialAssignment, SolverBudget, format_result, solve
from .symexpr import ConstraintSyntaxError, WidthError, format_constraints, parse_constraints

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NOT_REACHED, EXIT_INTERNAL = 0, 1, 2, 3, 4

INPUT_ERRORS = (
    AsmError, LinkError, ImageError, TraceFormatError, TraceMismatch, TargetError, DbError,
    ConstraintSyntaxError, WidthError, PartialAssignment, OSError, UnicodeDecodeError,
)


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _read_text(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    return Path(path).read_text(encoding="utf-8")


def _write(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def load_program(ref: str):
    if ref.startswith("corpus:"):
        name = ref.split(":", 1)[1]
        if name not in corpus_mod.NAMES:
            raise InputError(f"no corpus program {name!r}")
        return corpus_mod.load(name)
    return parse_program(_read_text(ref))


def _source_bytes(src: str) -> bytes:
    if src.startswith("fill:"):
        parts = src.split(":")
        try:
            n = int(parts[1])
            byte = int(parts[2], 16) if len(parts) > 2 else 0x58
        except (IndexError, ValueError):
            raise InputError(f"bad fill spec {src!r}") from None
        if n < 0 or not 0 <= byte <= 0xFF or len(parts) > 3:
            raise InputError(f"bad fill spec {src!r}")
        return bytes([byte]) * n
    return Path(src).read_bytes()


def parse_input_spec(spec: str) -> Region:
    """``name=SRC@hexaddr`` to a :class:`Region`."""
    name, eq, rest = spec.partition("=")
    src, at, addr = rest.rpartition("@")
    if not eq or not at or not name or not src:
        raise InputError(f"bad input spec {spec!r}; expected name=file@hexaddr")
    try:
        base = int(addr, 16)
    except ValueError:
        raise InputError(f"bad address in input spec {spec!r}") from None
    return Region(name, base, _source_bytes(src))


def _inputs(specs) -> InputImage:
    return InputImage(tuple(parse_input_spec(s) for s in specs or ()))


def _map(paths, program):
    return build_map([_read_text(p) for p in paths], program) if paths else None


def _policy(args, emap) -> ExternalPolicy:
    if args.policy == "mapped":
        if emap is None:
            raise UsageError("--policy mapped needs --map")
        return ExternalPolicy.mapped(emap)
    return ExternalPolicy(args.policy)


def _stamp(args):
    if not args.stamp:
        return None
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


# ---------------------------------------------------------------- commands


def cmd_asm(args) -> int:
    program = parse_program(_read_text(args.source))
    _write(args.output, format_program(program))
    return EXIT_OK


def cmd_run(args) -> int:
    state, _ = execute(load_program(args.program), _inputs(args.input), args.fuel)
    print(state.status)
    return EXIT_OK


def cmd_trace(args) -> int:
    state, trace = execute(load_program(args.program), _inputs(args.input), args.fuel)
    _write(args.output, format_trace(trace))
    print(state.status, file=sys.stderr)
    return EXIT_OK


def cmd_cfg(args) -> int:
    cfg = program_cfg(load_program(args.program))
    sys.stdout.write(cfg.to_dot() if args.dot else cfg.to_text())
    return EXIT_OK


def cmd_solve(args) -> int:
    pc = parse_constraints(_read_text(args.constraints))
    sys.stdout.write(format_result(solve(pc, SolverBudget(args.max_decisions, args.timeout))))
    return EXIT_OK


def cmd_concolic(args) -> int:
    program = load_program(args.program)
    inputs = _inputs(args.input)
    policy = _policy(args, _map(args.map, program))
    run = execute_concolic(program, inputs, SymbolicMarks(args.symbolic), policy, args.fuel,
                           debug=args.debug, max_block_visits=args.loop_bound)
    print(f"outcome: {run.outcome}")
    print(f"constraints: {len(run.path)}")
    if args.dump_constraints is not None:
        _write(args.dump_constraints, format_constraints(run.path, with_sites=True))
    return EXIT_OK


def _config(args, restrict) -> SearchConfig:
    return SearchConfig(
        loop_bound=args.loop_bound, max_states=args.max_states, max_solver_calls=args.max_solver_calls,
        solver_budget=SolverBudget(args.max_decisions, args.timeout), restrict_to_map=restrict,
        fuel=args.fuel, order=args.order, jobs=args.jobs,
    )


def cmd_search(args) -> int:
    program = load_program(args.program)
    inputs = _inputs(args.input)
    emap = _map(args.map, program)
    target = TargetSpec(args.target)
    target.resolve(program)
    marks = SymbolicMarks(args.symbolic)
    config = _config(args, emap if args.restrict_to_map else None)
    if args.restrict_to_map and emap is None:
        raise UsageError("--restrict-to-map needs --map")
    result = directed_search(program, inputs, marks, target, _policy(args, emap), config)
    text = dumps_report(search_report(result, target, marks, _stamp(args)))
    _write(args.report, text)
    return EXIT_OK if isinstance(result, Witness) else EXIT_NOT_REACHED


def cmd_extract(args) -> int:
    program = load_program(args.scanner)
    db_text = _read_text(args.db)
    target = TargetSpec(args.target)
    target.resolve(program)
    if args.policy == "mapped" and not args.prerun:
        raise UsageError("--policy mapped needs --prerun")
    preruns = [make_inputs(db_text, _source_bytes(p)) for p in args.prerun or ()]
    truth = None
    if args.truth is not None:
        try:
            truth = bytes.fromhex(args.truth)
        except ValueError:
            raise InputError(f"--truth {args.truth!r} is not hex") from None
    report = extract_signature(program, db_text, args.file_len, target, args.policy,
                               _config(args, None), preruns, truth)
    data = report.as_dict()
    stamp = _stamp(args)
    if stamp is not None:
        data["stamp"] = stamp
    _write(args.report, json.dumps(data, indent=2, sort_keys=True) + "\n")
    if report.outcome != "witness":
        return EXIT_NOT_REACHED
    if report.verification != "pass":
        print("error: witness failed concrete replay", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _positive(text: str) -> int:
    try:
        n = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if n <= 0:
        raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
    return n


def _count(text: str) -> int:
    try:
        n = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if n < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative: {text!r}")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sigconcolic", description="Concolic execution over a small bytecode VM.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def program_cmd(name, help, arg="program"):
        s = sub.add_parser(name, help=help)
        s.add_argument(arg, help="assembly file or corpus:<name>")
        return s

    def with_inputs(s):
        s.add_argument("--input", action="append", metavar="NAME=SRC@HEXADDR",
                       help="input region; SRC is a file or fill:N[:XX]")
        s.add_argument("--fuel", type=_positive, default=DEFAULT_FUEL)

    def with_policy(s):
        s.add_argument("--policy", choices=("halt", "concretize", "mapped"), default="halt")
        s.add_argument("--map", nargs="+", metavar="TRACE", help="trace files for the execution map")

    def with_search(s):
        s.add_argument("--target", required=True, help="label, module:label or module:index")
        s.add_argument("--loop-bound", type=_positive, default=128)
        s.add_argument("--max-states", type=_positive, default=4096)
        s.add_argument("--max-solver-calls", type=_positive, default=512)
        s.add_argument("--max-decisions", type=_positive, default=1_000_000)
        s.add_argument("--timeout", type=float, default=10.0, help="solver seconds per call")
        s.add_argument("--order", choices=("directed", "fifo"), default="directed")
        s.add_argument("--jobs", type=_positive, default=1)
        s.add_argument("--report", help="report file (default: stdout)")
        s.add_argument("--stamp", action="store_true", help="add a timestamp to the report")

    s = sub.add_parser("asm", help="assemble and link a program file")
    s.add_argument("source")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_asm)

    s = program_cmd("run", "run a program concretely")
    with_inputs(s)
    s.set_defaults(func=cmd_run)

    s = program_cmd("trace", "run a program and write its trace")
    with_inputs(s)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_trace)

    s = program_cmd("cfg", "print the control-flow graph")
    s.add_argument("--dot", action="store_true")
    s.set_defaults(func=cmd_cfg)

    s = sub.add_parser("solve", help="solve a constraint file")
    s.add_argument("constraints")
    s.add_argument("--max-decisions", type=_positive, default=1_000_000)
    s.add_argument("--timeout", type=float, default=10.0)
    s.set_defaults(func=cmd_solve)

    s = program_cmd("concolic", "run a program concolically")
    with_inputs(s)
    with_policy(s)
    s.add_argument("--symbolic", action="append", required=True, metavar="REGION")
    s.add_argument("--dump-constraints", nargs="?", const="-", metavar="FILE")
    s.add_argument("--debug", action="store_true", help="check shadow state every step")
    s.add_argument("--loop-bound", type=_positive)
    s.set_defaults(func=cmd_concolic)

    s = program_cmd("search", "search for inputs reaching a target")
    with_inputs(s)
    with_policy(s)
    with_search(s)
    s.add_argument("--symbolic", action="append", required=True, metavar="REGION")
    s.add_argument("--restrict-to-map", action="store_true")
    s.set_defaults(func=cmd_search)

    s = program_cmd("extract", "recover a signature from a scanner", arg="scanner")
    s.add_argument("--db", required=True)
    s.add_argument("--file-len", type=_count, required=True)
    s.add_argument("--policy", choices=("halt", "concretize", "mapped"), default="halt")
    s.add_argument("--prerun", action="append", metavar="SRC",
                   help="file contents for a concrete pre-run (file or fill:N[:XX])")
    s.add_argument("--truth", metavar="HEX", help="expected pattern bytes")
    s.add_argument("--fuel", type=_positive, default=DEFAULT_FUEL)
    with_search(s)
    s.set_defaults(func=cmd_extract)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (InputError, *INPUT_ERRORS) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except SystemExit as e:  # --help
        return EXIT_OK if not e.code else EXIT_USAGE
    except Exception as e:  # includes shadow-consistency failures
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
