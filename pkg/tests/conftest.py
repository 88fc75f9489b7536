import numpy as np
import pytest

_ACCEPTANCE: list[tuple[str, str, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance line; printed in the terminal summary."""

    def record(label: str, passed, detail: str = "") -> bool:
        """``passed=None`` marks a criterion that could not run."""
        status = "SKIP" if passed is None else "PASS" if passed else "FAIL"
        _ACCEPTANCE.append((label, status, detail))
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, status, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"[{status}] {label}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
