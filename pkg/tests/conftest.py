import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(ROOT, "configs")


def pytest_addoption(parser):
    parser.addoption("--paper-scale", action="store_true", default=False, help="run paper-scale acceptance checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--paper-scale"):
        return
    skip = pytest.mark.skip(reason="paper-scale check; pass --paper-scale")
    for item in items:
        if "paper_scale" in item.keywords:
            item.add_marker(skip)


_CRITERIA = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.skipped):
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        detail = getattr(item, "criterion_detail", "")
        _CRITERIA.append((mark.args[0], status, mark.args[1] if len(mark.args) > 1 else item.name, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for cid, status, title, detail in sorted(_CRITERIA, key=lambda r: (int(str(r[0]).rstrip("abcdefghijklmnopqrstuvwxyz")), str(r[0]))):
        line = f"criterion {cid:<4} {status:<4}  {title}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)


@pytest.fixture
def report(request):
    """Attach a measured-value summary to the criterion line of this test."""

    def _set(text):
        request.node.criterion_detail = text

    return _set


@pytest.fixture(scope="session")
def configs_dir():
    return CONFIGS
