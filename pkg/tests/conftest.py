import numpy as np
import pytest

_criterion_lines: list[str] = []


@pytest.fixture
def criterion_report():
    """Record one pass/fail line per acceptance criterion for the terminal summary."""

    def record(number: int, name: str, passed: bool, detail: str):
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {name}: {detail}"
        _criterion_lines.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _criterion_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_criterion_lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """Output directory of one ``full`` run at the default desk-scale config."""
    from outside_option.cli import main

    out = tmp_path_factory.mktemp("default_run")
    assert main(["full", "--out", str(out)]) == 0
    return out
