from datetime import date

import pytest

from raiaudit.cohort import CSV_COLUMNS, Cohort, Demographics, OffenseEvent, Person, load_taxonomy


@pytest.fixture(scope="session")
def taxonomy():
    return load_taxonomy()


def csv_text(rows, observed=False):
    header = ",".join(CSV_COLUMNS) + (",observed" if observed else "")
    return "\n".join([header] + [",".join(r) for r in rows]) + "\n"


def row(pid="p1", birth="1980-01-01", sex="male", race="black", eth="non-hispanic", when="2010-05-05",
        cat="property", grade="misdemeanor", disp="none", ddate=""):
    return [pid, birth, sex, race, eth, when, cat, grade, disp, ddate]


def person(pid, events, sex="male", race="black", eth="non-hispanic", birth=date(1980, 1, 1)):
    """events: iterable of (date, category, grade, disposition, disposition_date)."""
    evs = []
    for e in events:
        d, cat, grade = e[0], e[1], e[2]
        disp = e[3] if len(e) > 3 else "none"
        ddate = e[4] if len(e) > 4 else None
        evs.append(OffenseEvent(pid, d, cat, grade, True, disp, ddate))
    evs.sort(key=OffenseEvent.sort_key)
    return Person(pid, Demographics(sex, race, eth, birth), tuple(evs))


def cohort_of(people, taxonomy=None):
    return Cohort(people, taxonomy or load_taxonomy())


_CRITERIA: dict = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    if report.when == "call" or report.outcome != "passed":
        prev = _CRITERIA.get(marker)
        if prev is None or prev[0] == "PASS":
            _CRITERIA[marker] = ("PASS" if report.outcome == "passed" else "FAIL", report.duration)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    m = item.get_closest_marker("criterion")
    if m is not None:
        outcome.get_result().criterion = (str(m.args[0]), m.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    key = lambda k: (int("".join(ch for ch in k[0] if ch.isdigit())), k[0])
    for num, name in sorted(_CRITERIA, key=key):
        status, secs = _CRITERIA[(num, name)]
        terminalreporter.write_line(f"criterion {num:<3} {status}  {name} ({secs:.2f}s)")
