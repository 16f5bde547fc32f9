import datetime as dt

import numpy as np
import pytest

from latentconf.dataset import Dataset

ACCEPTANCE_LINES: list[str] = []


def make_dataset(features, target=None, dates=None, coords=None, ids=None, names=None):
    features = np.asarray(features, dtype=float)
    if features.ndim == 1:
        features = features[:, None]
    n, p = features.shape
    if ids is None:
        ids = [f"r{i}" for i in range(n)]
    if dates is None:
        dates = [dt.date(2020, 1, 1) + dt.timedelta(days=i) for i in range(n)]
    if coords is None:
        coords = np.zeros((n, 2))
    coords = np.asarray(coords, dtype=float)
    if names is None:
        names = [f"f{j}" for j in range(p)]
    return Dataset(ids, coords[:, 0], coords[:, 1], dates, features, names, target)


@pytest.fixture
def acceptance_log():
    def log(criterion: int, name: str, passed: bool, detail: str) -> None:
        status = "PASS" if passed else "FAIL"
        ACCEPTANCE_LINES.append(f"criterion {criterion} [{status}] {name}: {detail}")

    return log


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
