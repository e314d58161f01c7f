import numpy as np
import pytest
import scipy.sparse as sp

from fracaug.graphs import Dataset, Graph


def random_graph(rng, n, p=0.4, n_features=3, gid=0, label=0):
    upper = np.triu(rng.random((n, n)) < p, k=1)
    adj = (upper | upper.T).astype(float)
    return Graph(gid, sp.csr_matrix(adj), rng.normal(size=(n, n_features)), label)


def random_psd(rng, n, low=0.1, high=1.0):
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    lam = rng.uniform(low, high, size=n)
    lam[0], lam[-1] = low, high
    return (Q * lam) @ Q.T


def k3():
    return np.ones((3, 3)) - np.eye(3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_dataset(rng):
    graphs = [random_graph(rng, int(rng.integers(4, 9)), gid=i, label=int(i % 5 == 0))
              for i in range(40)]
    return Dataset("SMALL", tuple(graphs))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
