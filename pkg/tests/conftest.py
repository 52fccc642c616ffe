import re
from pathlib import Path

import pytest

BENCHMARK_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "benchmark.cfg"

# criterion number -> (passed, detail); filled by tests/test_acceptance.py
_VERDICTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def verdict():
    """Record one acceptance line; returns ``passed`` so tests can assert on it."""
    def record(number: int, passed: bool, detail: str) -> bool:
        _VERDICTS[number] = (bool(passed), detail)
        return bool(passed)
    return record


def _criterion(nodeid: str):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_", nodeid)
    return int(m.group(1)) if m else None


def pytest_terminal_summary(terminalreporter):
    ran = {_criterion(r.nodeid) for key, reports in terminalreporter.stats.items()
           if key != "deselected" for r in reports if hasattr(r, "nodeid")} - {None}
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 11):
        if n in _VERDICTS:
            ok, detail = _VERDICTS[n]
            terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        elif n in ran:
            terminalreporter.write_line(f"criterion {n:2d}: FAIL  (errored before a verdict)")
        else:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN")
