import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from conjunct.cdm import Cdm, Event  # noqa: E402

_CRITERIA = pytest.StashKey[list]()


def make_event(event_id, times, risks=None, **attrs):
    """Event from parallel lists; ``attrs`` values are scalars or per-CDM lists."""
    risks = risks if risks is not None else [-10.0] * len(times)
    cdms = []
    for j, (t, r) in enumerate(zip(times, risks)):
        fields = {k: (v[j] if isinstance(v, (list, tuple)) else v) for k, v in attrs.items()}
        fields.setdefault("mission_id", "m1")
        cdms.append(Cdm(time_to_tca=t, risk=r, **fields))
    return Event(str(event_id), cdms)


@pytest.fixture
def event_factory():
    return make_event


def pytest_configure(config):
    config.stash[_CRITERIA] = []
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.skipped):
        detail = dict(item.user_properties).get("detail", "")
        if report.skipped:
            status = "SKIP"
            detail = detail or (report.longrepr[2] if isinstance(report.longrepr, tuple) else "")
        else:
            status = "PASS" if report.passed else "FAIL"
        item.config.stash[_CRITERIA].append((status, marker.args[0], detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = config.stash.get(_CRITERIA, [])
    if not rows:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for status, name, detail in rows:
        terminalreporter.write_line(f"{status:4}  {name}" + (f"  [{detail}]" if detail else ""))
