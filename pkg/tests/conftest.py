import numpy as np
import pytest
import torch

torch.set_num_threads(1)

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def report():
    """Record one pass/fail line per acceptance criterion."""

    def add(criterion: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
