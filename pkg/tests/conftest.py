import contextlib

import pytest

from ogsgg import teresa_ontology
from ogsgg.reasoner import build_constraint_tensor

_CRITERIA = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_CRITERIA] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """``with criterion("name"):`` records one PASS/FAIL line for the summary."""
    log = request.config.stash[_CRITERIA]

    @contextlib.contextmanager
    def record(name):
        try:
            yield
        except BaseException as exc:
            first = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
            line = f"SKIP  {name}: {first}" if isinstance(exc, pytest.skip.Exception) else f"FAIL  {name}: {first}"
            log.append(line)
            print(line)
            raise
        log.append(f"PASS  {name}")
        print(f"PASS  {name}")

    return record


@pytest.fixture(scope="session")
def teresa():
    return teresa_ontology()


@pytest.fixture(scope="session")
def teresa_tensor(teresa):
    return build_constraint_tensor(teresa)
