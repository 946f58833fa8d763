import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from quantbench.core import Codeframe
from quantbench.data import synthesize_dataset

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

DATA_ENV = "QUANTBENCH_DATA"

_criteria: dict[str, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion checked by this test")
    config.addinivalue_line("markers", "slow: takes more than a few seconds")


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        outcome = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        # a criterion made of several tests passes only if all of them do
        previous = _criteria.get(marker)
        if previous is None or previous == "PASS" or outcome == "FAIL":
            _criteria[marker] = outcome


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        report.criterion = mark.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _criteria.items():
        terminalreporter.write_line(f"{outcome}  {name}")


def data_dir() -> Path | None:
    d = os.environ.get(DATA_ENV)
    return Path(d) if d and Path(d).is_dir() else None


@pytest.fixture(scope="session")
def sentiment():
    return Codeframe.sentiment()


@pytest.fixture(scope="session")
def bundle(sentiment):
    """Small ternary task with moderate class overlap."""
    return synthesize_dataset(sentiment, 300, (900, 300, 1200), 0.35, seed=3)


@pytest.fixture(scope="session")
def separable(sentiment):
    """Disjoint class vocabularies: every document is classified correctly."""
    return synthesize_dataset(sentiment, 120, (300, 150, 600), 1.0, seed=5, doc_length=8.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
