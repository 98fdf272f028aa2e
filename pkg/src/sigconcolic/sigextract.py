"""Signature extraction: drive a scanner to its detection endpoint.

A minimal one-rule database is mapped concretely, the scanned file is a
symbolic zero-filled region, and :func:`directed_search` looks for file
contents that reach the detection label.  The bytes the scanner compared
against the rule are then read back out of the witness.

Database format, one rule per line::

    # comment
    Name:Offset:Hex

``Offset`` is ``*`` (match anywhere) or a decimal file offset.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from typing import Sequence

from .concolic import ExternalPolicy, SymbolicMarks
from .corpus import corpus
from .interp import BlockEvent, InputImage, Trace, execute, record_replay
from .isa import Program
from .search import SearchConfig, TargetSpec, Witness, build_map, directed_search, replay_reaches

__all__ = [
    "DB_BASE", "FILE_BASE", "DbError", "SignatureRule", "SignatureDb", "ExtractionReport",
    "gen_min_db", "parse_db", "extract_signature", "make_inputs", "corpus",
]

DB_BASE = 0x1000
FILE_BASE = 0x10000
DB_REGION, FILE_REGION = "db", "file"
MIN_HEX, MAX_HEX = 2, 64

_NAME = re.compile(r"[^:\s#]+")
_HEX = re.compile(r"[0-9A-Fa-f]*")


class DbError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.message = message
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


def _check_pattern(pattern: str, line: int | None = None) -> bytes:
    if not _HEX.fullmatch(pattern):
        raise DbError(f"pattern {pattern!r} is not hex", line)
    if len(pattern) % 2:
        raise DbError(f"pattern {pattern!r} has odd length", line)
    if not MIN_HEX <= len(pattern) <= MAX_HEX:
        raise DbError(f"pattern must have {MIN_HEX} to {MAX_HEX} hex digits", line)
    return bytes.fromhex(pattern)


@dataclass(frozen=True)
class SignatureRule:
    name: str
    offset: int | None  # None means anywhere
    pattern: bytes

    def __post_init__(self):
        if not _NAME.fullmatch(self.name):
            raise DbError(f"bad rule name {self.name!r}")
        if self.offset is not None and self.offset < 0:
            raise DbError("offset must be non-negative")
        _check_pattern(self.pattern.hex())

    def __str__(self):
        off = "*" if self.offset is None else str(self.offset)
        return f"{self.name}:{off}:{self.pattern.hex()}"


@dataclass(frozen=True)
class SignatureDb:
    rules: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))
        seen = set()
        for r in self.rules:
            if r.name in seen:
                raise DbError(f"duplicate rule name {r.name!r}")
            seen.add(r.name)

    def __len__(self):
        return len(self.rules)

    def rule(self, name: str) -> SignatureRule:
        for r in self.rules:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_text(self) -> str:
        return "".join(f"{r}\n" for r in self.rules)


def gen_min_db(name: str, pattern: str, offset="*") -> str:
    """One-rule database text, e.g. ``Test:*:414243``."""
    data = _check_pattern(pattern)
    off = None if offset == "*" else int(offset)
    return str(SignatureRule(name, off, data))


def parse_db(text: str) -> SignatureDb:
    rules: list[SignatureRule] = []
    names: set = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(":")
        if len(parts) != 3:
            raise DbError("expected Name:Offset:Hex", lineno)
        name, off, pattern = parts
        if not _NAME.fullmatch(name):
            raise DbError(f"bad rule name {name!r}", lineno)
        if name in names:
            raise DbError(f"duplicate rule name {name!r}", lineno)
        if off == "*":
            offset = None
        elif off.isdigit():
            offset = int(off)
        else:
            raise DbError(f"bad offset {off!r}", lineno)
        rules.append(SignatureRule(name, offset, _check_pattern(pattern, lineno)))
        names.add(name)
    return SignatureDb(tuple(rules))


def make_inputs(db_text: str, file_data: bytes) -> InputImage:
    """Scanner input image: database at ``DB_BASE``, file at ``FILE_BASE``."""
    db = db_text.encode("utf-8")
    if DB_BASE + len(db) > FILE_BASE:
        raise DbError("database too large")
    return InputImage(((DB_REGION, DB_BASE, db), (FILE_REGION, FILE_BASE, bytes(file_data))))


@dataclass
class ExtractionReport:
    target_endpoint: str
    policy_used: str
    witness_bytes: dict | None
    recovered_pattern_bytes: str | None
    verification: str  # pass | fail | none
    equality: str  # pass | fail | unchecked
    statistics: dict = field(default_factory=dict)
    outcome: str = "witness"
    matched_rule: str | None = None
    matched_offset: int | None = None

    @property
    def success(self) -> bool:
        return self.outcome == "witness" and self.verification == "pass"

    def as_dict(self) -> dict:
        return dict(self.__dict__)

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"


def _block_key(program: Program, label: str):
    idx = program.main.labels.get(label)
    if idx is None or idx >= len(program.main.instructions):
        return None
    return program.main.name, idx


def locate_match(program: Program, trace: Trace, db: SignatureDb, target_block: tuple):
    """(rule, file offset) of the match that led into ``target_block``.

    Read from the loop structure of the run rather than by searching the
    witness bytes: the number of ``rule`` entries gives the rule index and
    the ``window`` entries since then give the window start.  Returns None
    when the scanner lacks these labels.
    """
    rule_b, window_b = _block_key(program, "rule"), _block_key(program, "window")
    if rule_b is None or window_b is None:
        return None
    rules = windows = 0
    for e in trace.events:
        if type(e) is not BlockEvent:
            continue
        if e.block == target_block:
            break
        if e.block == rule_b:
            rules += 1
            windows = 0
        elif e.block == window_b:
            windows += 1
    else:
        return None
    if not 1 <= rules <= len(db.rules) or windows < 1:
        return None
    rule = db.rules[rules - 1]
    start = 0 if rule.offset is None else rule.offset
    return rule, start + windows - 1


def _search_bytes(data: bytes, db: SignatureDb):
    for rule in db.rules:
        if rule.offset is not None:
            if data[rule.offset:rule.offset + len(rule.pattern)] == rule.pattern:
                return rule, rule.offset
        else:
            at = data.find(rule.pattern)
            if at >= 0:
                return rule, at
    return None


def extract_signature(scanner: Program, db_text: str, file_len: int, target: TargetSpec | str = "DETECTED",
                      policy: ExternalPolicy | str = "halt", config: SearchConfig | None = None,
                      preruns: Sequence[InputImage] = (), truth: bytes | None = None) -> ExtractionReport:
    """Recover the bytes a scanner needs to see to reach ``target``.

    ``policy`` is an :class:`ExternalPolicy` or a mode name.  Pre-run seeds
    are replayed concretely into an execution map that restricts the search
    and, for the ``mapped`` mode, decides which library calls are stepped
    into.  ``truth``, when given, is compared against the recovered bytes.
    """
    db = parse_db(db_text)
    longest = max((len(r.pattern) for r in db.rules), default=0)
    if file_len < longest:
        raise DbError(f"file length {file_len} is shorter than the longest pattern ({longest})")
    target = target if isinstance(target, TargetSpec) else TargetSpec(target)
    config = config or SearchConfig()
    mode = policy.mode if isinstance(policy, ExternalPolicy) else policy
    emap = None
    if preruns:
        emap = build_map([record_replay(scanner, seed, config.fuel) for seed in preruns], scanner)
        config = replace(config, restrict_to_map=emap if config.restrict_to_map is None
                         else config.restrict_to_map.merge(emap))
    if isinstance(policy, ExternalPolicy):
        if policy.mode == "mapped" and emap is not None:
            policy = ExternalPolicy.mapped(policy.map.merge(emap))
    elif mode == "mapped":
        if emap is None:
            raise ValueError("mapped policy needs at least one pre-run seed")
        policy = ExternalPolicy.mapped(emap)
    else:
        policy = ExternalPolicy(mode)

    seed = make_inputs(db_text, bytes(file_len))
    result = directed_search(scanner, seed, SymbolicMarks({FILE_REGION}), target, policy, config)
    report = ExtractionReport(str(target), mode, None, None, "none", "unchecked",
                              result.stats.as_dict(), result.verdict)
    if not isinstance(result, Witness):
        return report

    target_block = target.block(scanner)
    data = result.inputs.region(FILE_REGION).data
    report.witness_bytes = {r.name: r.data.hex() for r in result.inputs.regions}
    ok = replay_reaches(scanner, result.inputs, target_block, result.branch_path, config.fuel)
    report.verification = "pass" if ok else "fail"
    _, trace = execute(scanner, result.inputs, config.fuel)
    found = locate_match(scanner, trace, db, target_block) or _search_bytes(data, db)
    if found is not None:
        rule, at = found
        report.matched_rule, report.matched_offset = rule.name, at
        report.recovered_pattern_bytes = data[at:at + len(rule.pattern)].hex()
    if truth is not None:
        rec = report.recovered_pattern_bytes
        report.equality = "pass" if rec is not None and bytes.fromhex(rec) == bytes(truth) else "fail"
    return report
