import pytest
from hypothesis import settings

from rover.tree import build_didactic_mdp

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")

_CRITERIA: dict[str, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def didactic():
    return build_didactic_mdp()


@pytest.fixture
def report_criterion():
    """Record a pass/fail line for the acceptance summary."""

    def record(name: str, ok: bool, detail: str = "") -> None:
        _CRITERIA[name] = (bool(ok), detail)
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA, key=lambda n: int(n.split()[1])):
        ok, detail = _CRITERIA[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
