import numpy as np
import pytest

from ogclust.core import OmicsDataset


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: long-running reproduction criteria")


def small_mixture(n=60, q=4, p=1, K=2, seed=0, shift=4.0):
    """Well-separated toy mixture whose first feature drives the gating."""
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((n, q))
    z = (G[:, 0] + 0.5 * rng.standard_normal(n) > 0).astype(int) if K == 2 else rng.integers(0, K, n)
    X = rng.standard_normal((n, p))
    y = shift * z + (X @ np.ones(p) if p else 0.0) + rng.standard_normal(n)
    return OmicsDataset.continuous(y, G, X), z


@pytest.fixture
def toy():
    return small_mixture()


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "ACCEPTANCE_RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(lines):
        terminalreporter.write_line(lines[k])
