"""Collects acceptance-criterion outcomes and prints one PASS/FAIL line each."""

_RESULTS: dict[str, dict] = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is not None:
        number, title = marker.args
        _RESULTS.setdefault(item.nodeid, {"number": number, "title": title, "ok": True, "ran": False})


def pytest_runtest_logreport(report):
    entry = _RESULTS.get(report.nodeid)
    if entry is None:
        return
    if report.failed:
        entry["ok"] = False
    if report.when == "call":
        entry["ran"] = True
        entry["measured"] = dict(report.user_properties).get("measured", "")


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for entry in sorted(_RESULTS.values(), key=lambda e: e["number"]):
        status = "PASS" if entry["ok"] and entry["ran"] else "FAIL"
        measured = f"  [{entry['measured']}]" if entry.get("measured") else ""
        terminalreporter.write_line(f"{status} {entry['number']:>2}. {entry['title']}{measured}")
