import pytest

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when != "call":
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, {"title": title, "passed": True, "seconds": 0.0, "detail": ""})
    entry["seconds"] += call.duration
    if call.excinfo is not None:
        entry["passed"] = False
        entry["detail"] = str(call.excinfo.value).splitlines()[0][:160]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        verdict = "PASS" if e["passed"] else "FAIL"
        line = f"criterion {number:2d} {verdict}  {e['title']}  ({e['seconds']:.1f} s)"
        if e["detail"]:
            line += f"  -- {e['detail']}"
        terminalreporter.write_line(line)


@pytest.fixture
def report(request, capsys):
    """Print measured values next to the test so they land in the log."""

    def emit(**values):
        with capsys.disabled():
            text = ", ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in values.items())
            print(f"\n    [{request.node.name}] {text}")

    return emit
