import os

import pytest

ROOT_HEX = "5a" * 32
os.environ.setdefault("T3_ATTEST_ROOT", ROOT_HEX)


@pytest.fixture
def root_key() -> bytes:
    return bytes.fromhex(os.environ["T3_ATTEST_ROOT"])


# -- acceptance report ----------------------------------------------------------------

_CRITERIA: dict = {}


def pytest_runtest_makereport(item, call):
    m = item.get_closest_marker("criterion")
    if m is None or call.when == "teardown" or (call.when == "setup" and call.excinfo is None):
        return
    key = m.args[0]
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    ok = call.excinfo is None
    prev = _CRITERIA.get(key)
    if prev is not None:
        ok = ok and prev[0]
        detail = "; ".join(x for x in (prev[1], detail) if x)
    _CRITERIA[key] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA, key=lambda k: (int(str(k).rstrip("ab")), str(k))):
        ok, detail = _CRITERIA[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
