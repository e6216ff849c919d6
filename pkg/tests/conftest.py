"""Collects acceptance-criterion outcomes and prints one line per criterion
at the end of the run."""

import pytest

ACCEPTANCE: dict[int, tuple[str, str, str]] = {}

# 51 is the reduced variant of criterion 5
CRITERIA = {
    1: "matvec/expansion equivalence",
    2: "rank bound of the expansion",
    3: "gradient oracles",
    4: "Eckart-Young oracle for low-rank fits",
    5: "fit ratio at n=1024, k=128, p=12 (full scale)",
    51: "fit ratio smoke variant n=512, 5,000 steps",
    6: "clock formulas vs simulator",
    7: "speedup band on bundled shapes",
    8: "diagonal ablation",
    9: "stability under clipping",
    10: "CLI determinism",
}


def record(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = ("PASS" if passed else "FAIL", CRITERIA[number], detail)


@pytest.fixture
def acceptance():
    return record


_SELECTED = {"acceptance": False}


def pytest_collection_modifyitems(items):
    _SELECTED["acceptance"] = any("test_acceptance.py" in item.nodeid for item in items)


def pytest_terminal_summary(terminalreporter):
    if not _SELECTED["acceptance"]:
        return
    terminalreporter.section("acceptance criteria")
    for number in CRITERIA:
        status, name, detail = ACCEPTANCE.get(number, ("NOT RUN", CRITERIA[number], ""))
        label = "5b" if number == 51 else str(number)
        terminalreporter.write_line(f"[{status}] criterion {label}: {name}  {detail}".rstrip())
