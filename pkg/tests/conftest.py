import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_RESULTS] = {}


@pytest.fixture
def criterion(request):
    """record(k, ok, detail) stores one acceptance line for the terminal summary."""
    store = request.config.stash[_RESULTS]

    def record(k: int, ok: bool | None, detail: str):
        store[k] = (ok, detail)
        print(format_line(k, ok, detail))
        return ok

    return record


def format_line(k, ok, detail):
    tag = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
    return f"criterion {k:2d}: {tag}  {detail}"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_RESULTS, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(store):
        terminalreporter.write_line(format_line(k, *store[k]))
