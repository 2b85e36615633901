import numpy as np
import pytest

from ddrf.leaves import CategoricalLeaves, GaussianLeaves
from ddrf.tree import TreeTopology, route

_ACCEPTANCE = {}


def record_criterion(number, name, passed, detail=""):
    """Acceptance tests report here; the terminal summary prints one line each."""
    _ACCEPTANCE[number] = (name, bool(passed), detail)


@pytest.fixture
def criterion():
    return record_criterion


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        name, passed, detail = _ACCEPTANCE[number]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number:2d}: {name}  {detail}".rstrip())


def random_instance(rng, head, depth, n, n_labels=3, n_units=None):
    """A tree, a batch of feature outputs, leaves and targets for ``head``."""
    n_units = n_units or max(1, 2 ** (depth - 1) - 1)
    topo = TreeTopology.random(depth, n_units, rng)
    feats = rng.normal(scale=1.5, size=(n, n_units))
    n_leaves = topo.leaf_count
    if head == "regression":
        leaves = GaussianLeaves(rng.normal(size=n_leaves), rng.uniform(0.3, 2.0, size=n_leaves))
        targets = rng.normal(size=n)
    else:
        leaves = CategoricalLeaves(rng.dirichlet(np.ones(n_labels), size=n_leaves))
        if head == "ldl":
            targets = rng.dirichlet(np.ones(n_labels), size=n)
        else:
            targets = rng.integers(0, n_labels, size=n)
    return topo, feats, leaves, targets


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def leaf_probs_for(topo, feats):
    return route(topo, feats).leaf_probs
