import sys
from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"
sys.path.insert(0, str(Path(__file__).parent))


def case_path(name: str) -> Path:
    return DATA / f"{name}.m"


@pytest.fixture(scope="session")
def case14():
    from cutplane import load_network
    return load_network(case_path("case14"))


@pytest.fixture(scope="session")
def case14_run(case14):
    from cutplane import solve_case
    return solve_case(case14)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
