import contextlib
import json
from pathlib import Path

import pytest

from cosplan.task_forge import TaskInstance

FIXTURES = Path(__file__).parent / "fixtures"

_ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record a pass/fail verdict for one acceptance criterion."""

    @contextlib.contextmanager
    def record(number, title):
        notes = []
        try:
            yield notes
        except BaseException:
            _ACCEPTANCE[number] = ("FAIL", title, "; ".join(notes))
            raise
        _ACCEPTANCE[number] = ("PASS", title, "; ".join(notes))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        verdict, title, notes = _ACCEPTANCE[number]
        line = f"criterion {number}: {verdict}  {title}"
        terminalreporter.write_line(line + (f"  [{notes}]" if notes else ""))


def load_walkthrough(name):
    doc = json.loads((FIXTURES / f"walkthrough_{name}.json").read_text())
    return doc, TaskInstance.from_dict(doc["instance"])


@pytest.fixture
def walkthrough():
    return load_walkthrough
