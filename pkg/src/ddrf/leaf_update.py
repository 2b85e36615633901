"""Closed-form leaf updates with the routing held fixed.

Each update takes the leaf-reaching probabilities ``P`` of shape ``(N, L)``
for the buffered samples, their targets, and the current leaves, and returns
new leaves. Categorical updates are the multiplicative fixed-point iteration
that minimises the Jensen bound; the Gaussian update is a (tempered) EM step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InvalidInputError, StateError
from .leaves import CategoricalLeaves, GaussianLeaves, one_hot
from .splits import (
    PROB_FLOOR,
    classification_risk,
    ldl_risk,
    regression_risk,
)
from .tree import RoutingResult

MASS_FLOOR = 1e-12
_LOG_TINY = 1e-300

HEADS = ("ldl", "regression", "classification")


@dataclass
class LeafBuffer:
    """Buffered samples for one leaf-update round.

    Holds the leaf-reaching probabilities of each buffered mini-batch for one
    tree together with the matching targets.
    """

    max_batches: int
    leaf_probs: list = field(default_factory=list)
    targets: list = field(default_factory=list)

    def add(self, leaf_probs, targets):
        if self.full:
            raise StateError("leaf buffer already holds max_batches mini-batches")
        self.leaf_probs.append(np.asarray(leaf_probs, dtype=np.float64))
        self.targets.append(np.asarray(targets))

    @property
    def n_batches(self) -> int:
        return len(self.leaf_probs)

    @property
    def full(self) -> bool:
        return self.n_batches >= self.max_batches

    def stacked(self):
        if not self.leaf_probs:
            raise StateError("leaf buffer is empty")
        return np.concatenate(self.leaf_probs), np.concatenate(self.targets)

    def clear(self):
        self.leaf_probs.clear()
        self.targets.clear()


def _as_routing(leaf_probs):
    p = np.atleast_2d(np.asarray(leaf_probs, dtype=np.float64))
    if p.shape[0] == 0:
        raise StateError("cannot update leaves from an empty buffer")
    return RoutingResult(np.zeros((p.shape[0], 0)), p)


def risk(head, leaf_probs, leaves, targets) -> float:
    """Tree risk for fixed routing probabilities."""
    routing = _as_routing(leaf_probs)
    if head == "ldl":
        return ldl_risk(routing, leaves, targets)
    if head == "classification":
        return classification_risk(routing, leaves, targets)
    if head == "regression":
        return regression_risk(routing, leaves, targets)
    raise InvalidInputError(f"unknown head {head!r}")


def _keep_degenerate(new, old, mass):
    dead = mass < MASS_FLOOR
    if np.any(dead):
        new[dead] = old[dead]
    return new


def ldl_leaf_update(leaf_probs, targets, leaves: CategoricalLeaves, iterations=1):
    p = _as_routing(leaf_probs).leaf_probs
    d = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    pi = leaves.probs.copy()
    for _ in range(iterations):
        g = np.maximum(p @ pi, PROB_FLOOR)
        num = pi * (p.T @ (d / g))
        mass = num.sum(axis=1)
        safe = np.where(mass < MASS_FLOOR, 1.0, mass)
        pi = _keep_degenerate(num / safe[:, None], pi, mass)
    return CategoricalLeaves(pi)


def classification_leaf_update(leaf_probs, labels, leaves: CategoricalLeaves, iterations=1):
    p = _as_routing(leaf_probs).leaf_probs
    labels = np.asarray(labels, dtype=np.int64)
    n_labels = leaves.n_labels
    if labels.min() < 0 or labels.max() >= n_labels:
        raise InvalidInputError("class label out of range")
    rows = np.arange(labels.size)
    pi = leaves.probs.copy()
    for _ in range(iterations):
        gy = np.maximum((p @ pi)[rows, labels], PROB_FLOOR)
        rho = p * pi[:, labels].T / gy[:, None]
        num = np.zeros_like(pi)
        np.add.at(num.T, labels, rho)
        mass = rho.sum(axis=0)
        safe = np.where(mass < MASS_FLOOR, 1.0, mass)
        pi = _keep_degenerate(num / safe[:, None], pi, mass)
    return CategoricalLeaves(pi)


def tempered_posterior(leaf_probs, y, leaves: GaussianLeaves, tau: float) -> np.ndarray:
    """Leaf responsibilities raised to ``tau`` and renormalised per sample."""
    if not 0 < tau <= 1:
        raise InvalidInputError(f"tau must be in (0, 1], got {tau}")
    p = _as_routing(leaf_probs).leaf_probs
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    log_joint = np.log(np.maximum(p, _LOG_TINY)) + kernels.gaussian_logpdf(
        y, leaves.mean, leaves.var
    )
    rho = kernels.tempered_posterior(log_joint, tau)
    bad = ~np.all(np.isfinite(rho), axis=1)
    if np.any(bad):
        rho[bad] = 1.0 / p.shape[1]
    return rho


def regression_leaf_update(leaf_probs, y, leaves: GaussianLeaves, tau=1.0, iterations=1):
    """Tempered EM on the Gaussian leaves: mean first, then the variance about it."""
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    cur = leaves.copy()
    for _ in range(iterations):
        rho = tempered_posterior(leaf_probs, y, cur, tau)
        mass = rho.sum(axis=0)
        safe = np.where(mass < MASS_FLOOR, 1.0, mass)
        mean = _keep_degenerate((rho.T @ y) / safe, cur.mean.copy(), mass)
        sq = (y[:, None] - mean[None, :]) ** 2
        var = _keep_degenerate((rho * sq).sum(axis=0) / safe, cur.var.copy(), mass)
        cur = GaussianLeaves(mean, np.maximum(var, cur.variance_floor), cur.variance_floor)
    return cur


def update_leaves(head, leaf_probs, targets, leaves, iterations, tau=1.0):
    if head == "ldl":
        return ldl_leaf_update(leaf_probs, targets, leaves, iterations)
    if head == "classification":
        return classification_leaf_update(leaf_probs, targets, leaves, iterations)
    if head == "regression":
        return regression_leaf_update(leaf_probs, targets, leaves, tau, iterations)
    raise InvalidInputError(f"unknown head {head!r}")


def warm_leaf_schedule(tau: float, eta: float) -> float:
    """One warming tick ``tau <- min(tau / eta, 1)``."""
    if not 0 < eta <= 1:
        raise InvalidInputError("cooling factor must be in (0, 1]")
    return min(tau / eta, 1.0)


def _xlogy_ratio(w, num_log, den_log):
    # sum of w * (num_log - den_log) where w == 0 contributes nothing
    with np.errstate(invalid="ignore"):
        t = np.where(w > 0, w * (num_log - den_log), 0.0)
    return t


def vb_bound(candidate, anchor, leaf_probs, targets, head) -> float:
    """Jensen upper bound on the risk at ``candidate``, tangent at ``anchor``.

    Only used to verify the Variational Bounding properties.
    """
    p = _as_routing(leaf_probs).leaf_probs
    n = p.shape[0]
    with np.errstate(divide="ignore"):
        logp = np.log(p)
    if head in ("ldl", "classification"):
        if head == "classification":
            d = one_hot(targets, anchor.n_labels)
        else:
            d = np.atleast_2d(np.asarray(targets, dtype=np.float64))
        joint_bar = p[:, :, None] * anchor.probs[None, :, :]
        g_bar = joint_bar.sum(axis=1, keepdims=True)
        rho_bar = joint_bar / g_bar
        with np.errstate(divide="ignore"):
            log_joint = logp[:, :, None] + np.log(candidate.probs)[None, :, :]
            log_rho = np.log(rho_bar)
        inner = _xlogy_ratio(rho_bar, log_joint, log_rho).sum(axis=1)
        return float(-np.sum(d * inner) / n)
    if head == "regression":
        y = np.atleast_1d(np.asarray(targets, dtype=np.float64))
        rho_bar = tempered_posterior(p, y, anchor, 1.0)
        log_new = kernels.gaussian_logpdf(y, candidate.mean, candidate.var)
        log_old = kernels.gaussian_logpdf(y, anchor.mean, anchor.var)
        anchor_risk = regression_risk(_as_routing(p), anchor, y)
        return float(anchor_risk - np.sum(_xlogy_ratio(rho_bar, log_new, log_old)) / n)
    raise InvalidInputError(f"unknown head {head!r}")
