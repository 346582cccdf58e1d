from pathlib import Path

import numpy as np
import pytest

from regimescan import Dataset, DatasetConfig, load_dataset

ROOT = Path(__file__).resolve().parents[1]
BALTIMORE_CSV = ROOT / "data" / "baltimore.csv"
BALTIMORE_COLUMNS = ROOT / "data" / "baltimore.json"


@pytest.fixture(scope="session")
def baltimore() -> Dataset:
    return load_dataset(BALTIMORE_CSV, DatasetConfig.from_file(BALTIMORE_COLUMNS))


def random_dataset(n=40, p=2, seed=0, noise=1.0) -> Dataset:
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.standard_normal((n, p))])
    beta = rng.standard_normal(p + 1)
    y = X @ beta + noise * rng.standard_normal(n)
    return Dataset(y, X, rng.uniform(0, 1, (n, 2)))


def pytest_addoption(parser):
    parser.addoption("--fast", action="store_true", help="skip tests marked slow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--fast"):
        skip = pytest.mark.skip(reason="--fast given")
        for item in items:
            if "slow" in item.keywords:
                item.add_marker(skip)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
