from __future__ import annotations

import pytest

from sigconcolic.corpus import corpus
from sigconcolic.interp import InputImage, execute
from sigconcolic.search import Witness, branches_until

DB_BASE, FILE_BASE = 0x1000, 0x10000


def scanner_inputs(db: str | bytes, file: bytes) -> InputImage:
    if isinstance(db, str):
        db = db.encode()
    return InputImage((("db", DB_BASE, db), ("file", FILE_BASE, bytes(file))))


def assert_witness_replays(program, witness: Witness, target_block) -> None:
    """Concrete replay enters the target along exactly the predicted branches."""
    assert isinstance(witness, Witness)
    _, trace = execute(program, witness.inputs)
    assert trace.entered(target_block)
    assert branches_until(trace, target_block) == witness.branch_path


@pytest.fixture(scope="session")
def programs():
    return corpus()


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(test_acceptance.RESULTS[key])
