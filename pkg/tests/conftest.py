from importlib import resources

import pytest

from fuscale.corrstats import load_correlation_csv

DATA = resources.files("fuscale") / "data"
ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    line = f"CRITERION {number:>2}: {'PASS' if passed else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def num_pre():
    return load_correlation_csv(DATA / "numerical_pre_efa.csv", n=1199)


@pytest.fixture(scope="session")
def cat_pre():
    return load_correlation_csv(DATA / "categorical_pre_efa.csv", n=942)


@pytest.fixture(scope="session")
def num_final():
    return load_correlation_csv(DATA / "numerical_final.csv", n=1198)


@pytest.fixture(scope="session")
def cat_final():
    return load_correlation_csv(DATA / "categorical_final.csv", n=951)
