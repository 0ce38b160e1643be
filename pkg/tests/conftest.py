import time
from contextlib import contextmanager

import numpy as np
import pytest

from portmap.config import load_case


@pytest.fixture(scope="session")
def case1_cfg():
    return load_case("case1_sg_infinite_bus")


@pytest.fixture(scope="session")
def case2_cfg():
    return load_case("case2_ibr_weak_grid")


@pytest.fixture(scope="session")
def case3_cfg():
    return load_case("case3_ieee14_composite")


@pytest.fixture(scope="session")
def composite3_cfg():
    return load_case("composite3_bus")


@pytest.fixture(scope="session")
def case1_built(case1_cfg):
    return case1_cfg.case.build()


@pytest.fixture(scope="session")
def composite3_built(composite3_cfg):
    return composite3_cfg.case.build()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)



# ---- acceptance reporting --------------------------------------------------

_ACCEPTANCE = pytest.StashKey[list]()


class CriterionRecord:
    """Collects named sub-checks of one acceptance criterion."""

    def __init__(self):
        self.details = []
        self.ok = True

    def check(self, label, passed, value=""):
        self.details.append(f"{label}{'=' + value if value else ''}{'' if passed else ' (x)'}")
        self.ok = self.ok and bool(passed)


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """Context manager that times a criterion, records PASS/FAIL and fails on FAIL."""
    lines = request.config.stash[_ACCEPTANCE]

    @contextmanager
    def run(number, title, limit_s):
        rec = CriterionRecord()
        t0 = time.perf_counter()
        try:
            yield rec
        except Exception as exc:
            rec.check(f"error {type(exc).__name__}: {exc}"[:160], False)
            raise
        finally:
            elapsed = time.perf_counter() - t0
            rec.check("runtime", elapsed < limit_s, f"{elapsed:.2f}s<{limit_s:g}s")
            line = f"{'PASS' if rec.ok else 'FAIL'} criterion {number}: {title}; " + \
                "; ".join(rec.details)
            lines.append(line)
            print(line)
        assert rec.ok, line

    return run
