import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA = {}


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when != "call" and call.excinfo is None:
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "details": []})
    if call.excinfo is not None:
        entry["ok"] = False
    for key, value in item.user_properties:
        if key == "detail":
            entry["details"].append(value)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        detail = "; ".join(e["details"])
        terminalreporter.write_line(f"criterion {number} {'PASS' if e['ok'] else 'FAIL'}: {e['title']}"
                                    + (f" ({detail})" if detail else ""))
