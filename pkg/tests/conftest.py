import numpy as np
import pandas as pd
import pytest

from autoseries.dataset import LongTable, Schema


def make_table(rows, keys=("k",), cats=(), conts=("x",), period="H", budget=10.0):
    """LongTable from a list of dicts with 'timestamp', key, feature and 'y' entries."""
    schema = Schema("timestamp", keys, cats, conts, "y", period=period, budget_seconds=budget)
    frame = pd.DataFrame(rows, columns=schema.columns)
    frame["timestamp"] = pd.to_datetime(frame["timestamp"]).astype("datetime64[ns]")
    for c in (*conts, "y"):
        frame[c] = frame[c].astype(float)
    for c in (*keys, *cats):
        frame[c] = frame[c].astype(object).where(frame[c].notna(), None)
    return LongTable(schema, frame)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
