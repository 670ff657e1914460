import warnings

import numpy as np
import pandas as pd
import pytest
from hypothesis import HealthCheck, settings

from ghselect.data import make_count_table

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_table(rng, n_rows=40, n_districts=4, industries=("C", "F", "G"), max_n=30, extra=True):
    """Random but valid count table; every status combination can occur."""
    sizes = ["to 9", "10-49", "50-249", "250+"]
    rows = []
    unemp = {str(d + 1): rng.uniform(0.02, 0.2) for d in range(n_districts)}
    compl = {str(d + 1): rng.uniform(0.0, 0.1) for d in range(n_districts)}
    for _ in range(n_rows):
        d = str(rng.integers(1, n_districts + 1))
        sel = int(rng.integers(0, 2))
        row = {"district": d, "industry": rng.choice(industries), "size": rng.choice(sizes),
               "selected": sel, "informal": int(rng.integers(0, 2)) if sel else "",
               "n": int(rng.integers(1, max_n))}
        if extra:
            row["complaints"] = compl[d]
            row["unemployment"] = unemp[d]
        rows.append(row)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return make_count_table(pd.DataFrame(rows))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
