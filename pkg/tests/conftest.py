import numpy as np
import pytest

from amlbench.graph import NUM_AGGREGATED, NUM_LOCAL, Label, NodeTable, TransactionGraph, write_elliptic
from synthetic import make_dataset


def toy_table(n, labels=None, time_step=None, seed=0):
    rng = np.random.default_rng(seed)
    local = rng.normal(size=(n, NUM_LOCAL))
    if time_step is not None:
        local[:, 0] = time_step
    lab = np.full(n, int(Label.LICIT), dtype=np.int8) if labels is None else np.asarray(labels, dtype=np.int8)
    return NodeTable(local, rng.normal(size=(n, NUM_AGGREGATED)), lab)


def graph_from_pairs(n, pairs, time_step=None):
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    ts = np.ones(n, dtype=np.int64) if time_step is None else time_step
    return TransactionGraph.from_edges(n, pairs[:, 0], pairs[:, 1], time_step=ts)


@pytest.fixture(scope="session")
def synthetic():
    return make_dataset(nodes_per_step=20, seed=0)


@pytest.fixture(scope="session")
def synthetic_dir(tmp_path_factory, synthetic):
    path = tmp_path_factory.mktemp("elliptic")
    write_elliptic(*synthetic, path)
    return str(path)


# acceptance verdicts, printed once at the end of the session
ACCEPTANCE = {}


def record_criterion(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
