"""Shared fixtures and the acceptance-summary terminal hook."""
from __future__ import annotations

import pytest

from scale_infer import kernels

# Populated by tests/test_acceptance.py via the `acceptance` fixture:
# {criterion_number: (description, passed, detail)}
ACCEPTANCE_RESULTS: dict = {}


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    kernels.warmup()


@pytest.fixture
def restore_backend():
    prev = kernels.active_backend()
    yield
    kernels.set_backend(prev)


@pytest.fixture
def acceptance():
    def record(number: int, description: str, passed: bool, detail: str = ""):
        ACCEPTANCE_RESULTS[number] = (description, bool(passed), detail)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.ensure_newline()
    terminalreporter.section("acceptance criteria", sep="=")
    for number in sorted(ACCEPTANCE_RESULTS):
        description, passed, detail = ACCEPTANCE_RESULTS[number]
        verdict = "PASS" if passed else "FAIL"
        suffix = f" [{detail}]" if detail else ""
        terminalreporter.write_line(
            f"criterion {number:2d} {verdict}  {description}{suffix}"
        )
