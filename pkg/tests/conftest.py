import pytest

_OUTCOMES = {}
_NOTES = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion gate")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not rep.failed:
        return
    num, title = mark.args
    prev = _OUTCOMES.get(num, (title, True))
    _OUTCOMES[num] = (title, prev[1] and rep.passed)


@pytest.fixture
def acceptance_log(request):
    """Collects measured values for the criterion's summary line."""
    mark = request.node.get_closest_marker("criterion")
    notes = _NOTES.setdefault(mark.args[0], [])
    return lambda text: notes.append(str(text))


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_OUTCOMES):
        title, ok = _OUTCOMES[num]
        notes = "; ".join(_NOTES.get(num, []))
        line = f"criterion {num} {'PASS' if ok else 'FAIL'}: {title}"
        terminalreporter.write_line(line + (f" [{notes}]" if notes else ""))
