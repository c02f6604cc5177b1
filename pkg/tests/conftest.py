import pytest

from valphase.kvstore import FaultInjector
from valphase.pipeline import Stores
from valphase.statedb import BackendKind, LatencyModel

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def record(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def faults():
    return FaultInjector()


@pytest.fixture
def open_stores(tmp_path):
    """Factory for stores under tmp_path; everything opened is closed at teardown."""
    opened = []

    def make(backend=BackendKind.FAST_EMBEDDED, name="s", latency=None, faults=None, sync=False):
        if latency is None and backend is BackendKind.SLOW_REMOTE:
            latency = LatencyModel.zero()
        s = Stores.open(tmp_path / name, backend, latency=latency, sync=sync, faults=faults)
        opened.append(s)
        return s

    yield make
    for s in opened:
        try:
            s.close()
        except Exception:
            pass
