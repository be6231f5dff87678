import numpy as np
import pytest

from sectionflow.geometry import derive_scales, region_family

# criterion number -> (title, list of (part, passed, detail))
_ACCEPTANCE: dict[int, tuple[str, list]] = {}


class AcceptanceRecorder:
    def __init__(self, number: int, title: str):
        self.number = number
        _ACCEPTANCE.setdefault(number, (title, []))

    def record(self, part: str, passed: bool, detail: str = "") -> bool:
        _ACCEPTANCE[self.number][1].append((part, bool(passed), detail))
        return bool(passed)


@pytest.fixture
def criterion():
    return AcceptanceRecorder


@pytest.fixture(params=[2, 4], ids=["k2", "k4"])
def p(request):
    return derive_scales(request.param)


@pytest.fixture
def p2():
    return derive_scales(2)


@pytest.fixture
def p4():
    return derive_scales(4)


@pytest.fixture
def fam2(p2):
    return region_family(p2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, parts = _ACCEPTANCE[number]
        ok = bool(parts) and all(flag for _, flag, _ in parts)
        tr.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {number:2d}: {title}")
        for part, flag, detail in parts:
            tr.write_line(f"        {'ok  ' if flag else 'FAIL'} {part}: {detail}")
