import json
from pathlib import Path

import numpy as np
import pytest

from fabir import tensor as T

REPORT_DIR = Path(__file__).parent / ".reports"
REPORT_FILE = REPORT_DIR / "oracle_reports.jsonl"
ACCEPTANCE_FILE = REPORT_DIR / "acceptance.txt"


def pytest_sessionstart(session):
    REPORT_DIR.mkdir(exist_ok=True)
    REPORT_FILE.write_text("")
    ACCEPTANCE_FILE.write_text("")


def pytest_terminal_summary(terminalreporter):
    """Repeat the one-line acceptance verdicts at the end of the run."""
    lines = ACCEPTANCE_FILE.read_text().splitlines() if ACCEPTANCE_FILE.exists() else []
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def float64_and_clean_tape():
    """Tests run at 64-bit unless they opt out; every test starts with an empty tape."""
    T.current_tape().clear()
    with T.precision(64):
        yield
    T.current_tape().clear()


@pytest.fixture
def record():
    """Persist an OracleReport and return it, so callers can assert on ``.passed``."""
    def _record(report):
        with open(REPORT_FILE, "a", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
        return report
    return _record


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
