import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from acoi_mdp import (DiscountSchedule, build_pc_inventory, build_uc_production,  # noqa: E402
                      run_schedule)


@pytest.fixture(scope="session")
def pc_mdp():
    return build_pc_inventory()


@pytest.fixture(scope="session")
def uc_mdp():
    return build_uc_production()


@pytest.fixture(scope="session")
def pc_run(pc_mdp):
    return run_schedule(pc_mdp)


@pytest.fixture(scope="session")
def uc_run(uc_mdp):
    return run_schedule(uc_mdp, DiscountSchedule.geometric(20, ref_state=0))


@pytest.fixture(scope="session")
def pc_run_long(pc_mdp):
    return run_schedule(pc_mdp, DiscountSchedule.geometric(30))


@pytest.fixture(scope="session")
def uc_run_long(uc_mdp):
    return run_schedule(uc_mdp, DiscountSchedule.geometric(30, ref_state=0))


_ACCEPTANCE: list = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per criterion; the line is kept even if the test fails."""
    def record(number: int, passed, detail: str) -> bool:
        # passed=None marks an informational line
        tag = "INFO" if passed is None else ("PASS" if passed else "FAIL")
        line = f"{tag} criterion {number:>2}: {detail}"
        _ACCEPTANCE.append((number, passed is None, line))
        print(line)
        return bool(passed)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for *_, line in sorted(_ACCEPTANCE, key=lambda t: t[:2]):
        terminalreporter.write_line(line)
