import pytest

_RESULTS: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record a named acceptance check: ``criterion(name, ok, detail)``."""

    def record(name: str, ok, detail: str = "") -> bool:
        ok = bool(ok)
        prev = _RESULTS.get(name)
        if prev is not None:
            ok = ok and prev[0]
            detail = f"{prev[1]}; {detail}" if prev[1] else detail
        _RESULTS[name] = (ok, detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_RESULTS):
        ok, detail = _RESULTS[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
