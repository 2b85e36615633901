import numpy as np
import pytest

from ddrf import splits
from ddrf.errors import DimensionError, InvalidInputError
from ddrf.leaves import CategoricalLeaves, GaussianLeaves
from ddrf.tree import TreeTopology, route

from conftest import random_instance
from oracles import fd_unit_gradient, leaf_probs, loss, rel_error

GRADIENTS = {
    "ldl": splits.ldl_split_gradient,
    "classification": splits.classification_split_gradient,
    "regression": splits.regression_split_gradient,
}
RISKS = {
    "ldl": splits.ldl_risk,
    "classification": splits.classification_risk,
    "regression": splits.regression_risk,
}


def _oracle_leaves(head, leaves):
    return (leaves.mean, leaves.var) if head == "regression" else leaves.probs


@pytest.mark.parametrize("head", list(GRADIENTS))
@pytest.mark.parametrize("temperature", [0.0, 0.7])
def test_gradient_matches_finite_differences(rng, head, temperature):
    for depth in (2, 3):
        topo, feats, leaves, targets = random_instance(rng, head, depth, 4)
        g = GRADIENTS[head](route(topo, feats), leaves, targets, temperature, topo)
        fd = fd_unit_gradient(head, depth, topo.index_assignment, feats,
                              _oracle_leaves(head, leaves), targets, temperature)
        assert rel_error(g.to_units(feats.shape[1]), fd) < 1e-6


@pytest.mark.parametrize("head", list(RISKS))
def test_risk_matches_oracle(rng, head):
    topo, feats, leaves, targets = random_instance(rng, head, 3, 5)
    r = route(topo, feats)
    value = splits.annealed_loss(RISKS[head](r, leaves, targets), r, 0.3)
    ref = loss(head, 3, topo.index_assignment, feats, _oracle_leaves(head, leaves), targets, 0.3)
    assert value.total == pytest.approx(ref, rel=1e-12)


def test_identical_leaves_give_zero_risk_gradient(rng):
    """With identical leaves the risk cannot depend on the routing."""
    topo = TreeTopology(2, [0])
    leaves = CategoricalLeaves(np.tile([0.3, 0.7], (2, 1)))
    feats = rng.normal(size=(3, 1))
    targets = np.tile([0.5, 0.5], (3, 1))
    g = splits.ldl_split_gradient(route(topo, feats), leaves, targets, 0.0, topo)
    np.testing.assert_allclose(g.per_node, 0.0, atol=1e-15)


def test_entropy_gradient_depth_two_closed_form():
    """For one split, dH/df = -s(1-s) log(s/(1-s)); so dE/df = T s(1-s) logit(s)."""
    topo = TreeTopology(2, [0])
    leaves = CategoricalLeaves(np.tile([0.5, 0.5], (2, 1)))
    f = np.array([[0.9]])
    s = 1 / (1 + np.exp(-0.9))
    g = splits.ldl_split_gradient(route(topo, f), leaves, np.array([[0.5, 0.5]]), 0.7, topo)
    np.testing.assert_allclose(g.per_node[0, 0], 0.7 * s * (1 - s) * np.log(s / (1 - s)), rtol=1e-12)


def test_classification_equals_ldl_under_one_hot(rng):
    topo, feats, leaves, labels = random_instance(rng, "classification", 3, 6)
    r = route(topo, feats)
    d = np.eye(leaves.n_labels)[labels]
    a = splits.classification_split_gradient(r, leaves, labels, 0.4, topo).per_node
    b = splits.ldl_split_gradient(r, leaves, d, 0.4, topo).per_node
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)
    assert splits.classification_risk(r, leaves, labels) == pytest.approx(
        splits.ldl_risk(r, leaves, d), rel=1e-13)


def test_shared_units_accumulate(rng):
    topo = TreeTopology(3, [0, 0, 1])
    feats = rng.normal(size=(2, 2))
    leaves = GaussianLeaves(rng.normal(size=4), np.ones(4))
    y = rng.normal(size=2)
    g = splits.regression_split_gradient(route(topo, feats), leaves, y, 0.0, topo)
    units = g.to_units(3)
    np.testing.assert_allclose(units[:, 0], g.per_node[:, 0] + g.per_node[:, 1])
    np.testing.assert_array_equal(units[:, 2], 0.0)
    fd = fd_unit_gradient("regression", 3, topo.index_assignment, feats,
                          (leaves.mean, leaves.var), y, 0.0)
    assert rel_error(units[:, :2], fd) < 1e-6


def test_far_outlier_gradient_is_finite():
    topo = TreeTopology(2, [0])
    leaves = GaussianLeaves([0.0, 1.0], [1e-4, 1e-4])
    g = splits.regression_split_gradient(route(topo, np.zeros((1, 1))), leaves,
                                         np.array([1e4]), 0.0, topo)
    assert np.all(np.isfinite(g.per_node))


def test_shape_checks(rng):
    topo, feats, leaves, targets = random_instance(rng, "ldl", 3, 2)
    with pytest.raises(DimensionError):
        splits.ldl_split_gradient(route(topo, feats[0]), leaves, targets, 0.0, topo)
    with pytest.raises(DimensionError):
        splits.ldl_risk(route(topo, feats), CategoricalLeaves.uniform(2, 3), targets)
    with pytest.raises(InvalidInputError):
        splits.classification_risk(route(topo, feats), leaves, np.array([0, 7]))


def test_cooling():
    assert splits.cool_split_temperature(1.0, 0.9) == 0.9
    with pytest.raises(InvalidInputError):
        splits.cool_split_temperature(1.0, 1.5)
    with pytest.raises(InvalidInputError):
        splits.cool_split_temperature(-1.0, 0.5)


def test_oracle_paths_agree_with_router(rng):
    topo = TreeTopology(4, rng.permutation(7))
    f = rng.normal(size=7)
    np.testing.assert_allclose(route(topo, f).leaf_probs, leaf_probs(4, topo.index_assignment, f),
                               rtol=1e-13)
