"""Losses and split-node gradients with the deterministic-annealing entropy bonus.

All gradients are with respect to the feature outputs feeding each split
node, for the batch-mean loss ``E = R - T * H``. Routing results must be
batched (``(N, S)`` activations, ``(N, L)`` leaf probabilities).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .errors import DimensionError, InvalidInputError
from .leaves import CategoricalLeaves, GaussianLeaves
from .tree import RoutingResult, TreeTopology, leaf_entropy_terms, sample_entropy

PROB_FLOOR = 1e-12
_LOG_TINY = 1e-300


@dataclass(frozen=True)
class AnnealedLossValue:
    risk: float
    entropy: float
    temperature: float

    @property
    def total(self) -> float:
        return self.risk - self.temperature * self.entropy


@dataclass(frozen=True)
class SplitGradient:
    """``dE/df`` per sample and split node, shape ``(N, S)``."""

    per_node: np.ndarray
    topology: TreeTopology

    def to_units(self, n_units: int) -> np.ndarray:
        """Scatter onto feature units via the tree's index assignment.

        Units shared by several split nodes accumulate; unreferenced units
        stay zero.
        """
        n = self.per_node.shape[0]
        out = np.zeros((n, n_units))
        phi = self.topology.index_assignment
        if phi.size == 0:
            return out
        if phi.max() >= n_units:
            raise DimensionError(f"tree reads unit {phi.max()} but only {n_units} units exist")
        if np.unique(phi).size == phi.size:
            out[:, phi] = self.per_node
        else:
            np.add.at(out, (slice(None), phi), self.per_node)
        return out


def _check(routing: RoutingResult, n_leaves: int):
    if not routing.batched:
        raise DimensionError("split learning expects batched routing results")
    if routing.leaf_probs.shape[1] != n_leaves:
        raise DimensionError(
            f"routing has {routing.leaf_probs.shape[1]} leaves, leaf model has {n_leaves}"
        )


def split_gradient_from_terms(routing, leaf_terms, temperature, topology):
    """Assemble split gradients from per-leaf ``D``/``Gamma`` summands.

    ``leaf_terms`` are the per-leaf contributions whose subtree sums give
    ``D_i^n`` (or ``Gamma_i^n``); the entropy summands are folded in here.
    """
    n = routing.leaf_probs.shape[0]
    if temperature:
        leaf_terms = leaf_terms - temperature * leaf_entropy_terms(routing)
    nodes = kernels.subtree_sums(leaf_terms)
    grad = kernels.split_node_grad(routing.split_activations, nodes) / n
    return SplitGradient(grad, topology)


def routing_entropy(routing: RoutingResult) -> float:
    """Batch-mean Shannon entropy of the leaf-reaching distribution."""
    return float(np.mean(sample_entropy(routing.as_batch())))


# ---------------------------------------------------------------------------
# label distribution head
# ---------------------------------------------------------------------------


def ldl_tree_output(routing, leaves: CategoricalLeaves):
    return routing.leaf_probs @ leaves.probs


def ldl_risk(routing: RoutingResult, leaves: CategoricalLeaves, targets) -> float:
    """Cross-entropy between target distributions ``(N, C)`` and tree outputs."""
    routing = routing.as_batch()
    _check(routing, leaves.n_leaves)
    d = np.atleast_2d(targets)
    g = np.maximum(ldl_tree_output(routing, leaves), PROB_FLOOR)
    return float(-np.mean(np.sum(d * np.log(g), axis=1)))


def ldl_leaf_terms(routing, leaves: CategoricalLeaves, targets):
    """Per-leaf summands of ``D_i^n``: ``P(l|x_i) sum_c d_ic pi_lc / g_ic``."""
    d = np.atleast_2d(targets)
    g = np.maximum(ldl_tree_output(routing, leaves), PROB_FLOOR)
    return routing.leaf_probs * ((d / g) @ leaves.probs.T)


def ldl_split_gradient(
    routing: RoutingResult, leaves: CategoricalLeaves, targets, temperature: float,
    topology: TreeTopology,
) -> SplitGradient:
    _check(routing, leaves.n_leaves)
    terms = ldl_leaf_terms(routing, leaves, targets)
    return split_gradient_from_terms(routing, terms, temperature, topology)


# ---------------------------------------------------------------------------
# classification head (one-hot specialisation)
# ---------------------------------------------------------------------------


def _class_probs(routing, leaves, labels):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or labels.size != routing.leaf_probs.shape[0]:
        raise DimensionError("need one integer class label per sample")
    if labels.min() < 0 or labels.max() >= leaves.n_labels:
        raise InvalidInputError("class label out of range")
    g = np.maximum(ldl_tree_output(routing, leaves), PROB_FLOOR)
    return labels, g[np.arange(labels.size), labels]


def classification_risk(routing: RoutingResult, leaves: CategoricalLeaves, labels) -> float:
    routing = routing.as_batch()
    _check(routing, leaves.n_leaves)
    _, gy = _class_probs(routing, leaves, labels)
    return float(-np.mean(np.log(gy)))


def classification_leaf_terms(routing, leaves: CategoricalLeaves, labels):
    labels, gy = _class_probs(routing, leaves, labels)
    return routing.leaf_probs * (leaves.probs[:, labels].T * (1.0 / gy)[:, None])


def classification_split_gradient(
    routing: RoutingResult, leaves: CategoricalLeaves, labels, temperature: float,
    topology: TreeTopology,
) -> SplitGradient:
    _check(routing, leaves.n_leaves)
    terms = classification_leaf_terms(routing, leaves, labels)
    return split_gradient_from_terms(routing, terms, temperature, topology)


# ---------------------------------------------------------------------------
# Gaussian regression head
# ---------------------------------------------------------------------------


def regression_log_joint(routing, leaves: GaussianLeaves, y):
    """``log P(l|x_i) + log pi_l(y_i)``, shape ``(N, L)``."""
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if y.shape[0] != routing.leaf_probs.shape[0]:
        raise DimensionError("need one target per sample")
    logp = np.log(np.maximum(routing.leaf_probs, _LOG_TINY))
    return logp + kernels.gaussian_logpdf(y, leaves.mean, leaves.var)


def regression_risk(routing: RoutingResult, leaves: GaussianLeaves, y) -> float:
    """Mean negative log-likelihood, density floored at ``PROB_FLOOR``."""
    routing = routing.as_batch()
    _check(routing, leaves.n_leaves)
    log_dens = logsumexp(regression_log_joint(routing, leaves, y), axis=1)
    return float(-np.mean(np.maximum(log_dens, np.log(PROB_FLOOR))))


def regression_leaf_terms(routing, leaves: GaussianLeaves, y):
    """Per-leaf summands of ``Gamma_i^n`` (the leaf posterior), log-domain."""
    lj = regression_log_joint(routing, leaves, y)
    return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))


def regression_terms_and_risk(routing, leaves: GaussianLeaves, y):
    """Leaf posterior and batch risk from a single log-joint evaluation."""
    lj = regression_log_joint(routing, leaves, y)
    log_dens = logsumexp(lj, axis=1, keepdims=True)
    risk = float(-np.mean(np.maximum(log_dens, np.log(PROB_FLOOR))))
    return np.exp(lj - log_dens), risk


def regression_split_gradient(
    routing: RoutingResult, leaves: GaussianLeaves, y, temperature: float,
    topology: TreeTopology,
) -> SplitGradient:
    _check(routing, leaves.n_leaves)
    terms = regression_leaf_terms(routing, leaves, y)
    return split_gradient_from_terms(routing, terms, temperature, topology)


def annealed_loss(risk: float, routing: RoutingResult, temperature: float) -> AnnealedLossValue:
    return AnnealedLossValue(float(risk), routing_entropy(routing), float(temperature))


def cool_split_temperature(temperature: float, eta: float) -> float:
    """One cooling tick ``T <- eta * T``."""
    if temperature < 0:
        raise InvalidInputError("temperature must be non-negative")
    if not 0 < eta <= 1:
        raise InvalidInputError("cooling factor must be in (0, 1]")
    return eta * temperature
