import pytest

from movebc.corpus import load_corpus
from movebc.ir import parse_program

ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance(request, capsys):
    """Report one PASS/FAIL line for an acceptance criterion (shown live and in the summary)."""

    def report(number: int, ok: bool, detail: str):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
        request.config.stash[ACCEPTANCE_LINES].append(line)
        with capsys.disabled():
            print(f"\n{line}")

    return report


@pytest.fixture(scope="session")
def corpus():
    return load_corpus()


def asm(text: str, validate: bool = True):
    """Parse a program written with leading indentation stripped."""
    import textwrap
    return parse_program(textwrap.dedent(text), validate=validate)
