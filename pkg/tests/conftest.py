import contextlib
import time

import numpy as np
import pytest

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


class _Criterion:
    """Records one acceptance criterion as a single PASS/FAIL line."""

    def __init__(self, number: int, title: str, budget: float | None):
        self.number = number
        self.title = title
        self.budget = budget
        self.notes: list[str] = []

    def note(self, text: str) -> None:
        self.notes.append(text)


@pytest.fixture
def criterion():
    @contextlib.contextmanager
    def run(number: int, title: str, budget: float | None = None):
        c = _Criterion(number, title, budget)
        t0 = time.perf_counter()
        status, reason = "FAIL", ""
        try:
            yield c
            elapsed = time.perf_counter() - t0
            if budget is not None and elapsed > budget:
                reason = f"runtime {elapsed:.2f}s over {budget:g}s"
                raise AssertionError(reason)
            status = "PASS"
        except BaseException as exc:
            reason = reason or f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
            raise
        finally:
            elapsed = time.perf_counter() - t0
            extra = "; ".join(c.notes + ([reason] if reason else []))
            line = f"[{status}] criterion {number:2d}: {title} ({elapsed:.2f}s)" + (f" -- {extra}" if extra else "")
            _ACCEPTANCE[number] = line
            print(line)

    return run


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
