import os

import pytest

# criterion id -> (passed, detail); filled in by the acceptance suite
ACCEPTANCE = pytest.StashKey[dict]()


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False,
                     help="also run the long acceptance checks (same as GENSEP_SLOW=1)")


def slow_enabled(config):
    return config.getoption("--run-slow") or os.environ.get("GENSEP_SLOW") == "1"


def pytest_collection_modifyitems(config, items):
    if slow_enabled(config):
        return
    skip = pytest.mark.skip(reason="slow; use --run-slow or GENSEP_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def record(request):
    """Log one criterion's outcome for the summary, then assert it."""
    def _record(key, passed, detail):
        request.config.stash[ACCEPTANCE][key] = (bool(passed), detail)
        print(f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}", flush=True)
        assert passed, detail
    return _record


def pytest_terminal_summary(terminalreporter):
    results = terminalreporter.config.stash[ACCEPTANCE]
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results, key=lambda k: (int(k.split("-")[0]), k)):
        passed, detail = results[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}")
