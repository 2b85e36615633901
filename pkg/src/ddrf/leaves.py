"""Leaf parameters for the three heads and target label distributions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvalidInputError
from .tree import RoutingResult

VARIANCE_FLOOR = 1e-4


@dataclass
class CategoricalLeaves:
    """One probability vector over ``C`` labels per leaf, shape ``(L, C)``."""

    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.array(self.probs, dtype=np.float64, ndmin=2)
        if np.any(self.probs < 0) or not np.allclose(self.probs.sum(axis=1), 1.0, atol=1e-9):
            raise InvalidInputError("categorical leaves must lie on the simplex")

    @property
    def n_leaves(self) -> int:
        return self.probs.shape[0]

    @property
    def n_labels(self) -> int:
        return self.probs.shape[1]

    @classmethod
    def uniform(cls, n_leaves: int, n_labels: int) -> "CategoricalLeaves":
        return cls(np.full((n_leaves, n_labels), 1.0 / n_labels))

    def copy(self) -> "CategoricalLeaves":
        return CategoricalLeaves(self.probs.copy())


@dataclass
class GaussianLeaves:
    """Scalar Gaussian density per leaf: ``mean`` and ``var`` of shape ``(L,)``."""

    mean: np.ndarray
    var: np.ndarray
    variance_floor: float = VARIANCE_FLOOR

    def __post_init__(self):
        self.mean = np.array(self.mean, dtype=np.float64, ndmin=1)
        self.var = np.array(self.var, dtype=np.float64, ndmin=1)
        if self.mean.shape != self.var.shape:
            raise DimensionError("mean and var must have the same shape")
        if self.variance_floor <= 0:
            raise InvalidInputError("variance_floor must be positive")
        if not np.all(np.isfinite(self.mean)):
            raise InvalidInputError("leaf means must be finite")
        self.var = np.maximum(self.var, self.variance_floor)

    @property
    def n_leaves(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def random(cls, n_leaves, targets, rng, variance_floor=VARIANCE_FLOOR):
        """Means uniform over the target range, variances at the global variance."""
        y = np.asarray(targets, dtype=np.float64)
        mean = rng.uniform(y.min(), y.max(), size=n_leaves)
        var = np.full(n_leaves, max(float(y.var()), variance_floor))
        return cls(mean, var, variance_floor)

    def copy(self) -> "GaussianLeaves":
        return GaussianLeaves(self.mean.copy(), self.var.copy(), self.variance_floor)


def generate_label_distribution(age, labels, std):
    """Discretised Gaussian over ``labels`` centred at ``age``.

    ``age`` may be a scalar or an array of ``N`` ages (giving ``(N, C)``).
    With ``std == 0`` the result is one-hot at the nearest label, ties going
    to the smaller label.
    """
    labels = np.asarray(labels, dtype=np.float64)
    if labels.ndim != 1 or labels.size == 0:
        raise InvalidInputError("label set must be a non-empty 1-D sequence")
    if labels.size > 1 and np.any(np.diff(labels) <= 0):
        raise InvalidInputError("labels must be strictly increasing")
    if std < 0:
        raise InvalidInputError("std must be non-negative")
    y = np.asarray(age, dtype=np.float64)
    scalar = y.ndim == 0
    y = np.atleast_1d(y)
    diff = labels[None, :] - y[:, None]
    if std == 0:
        out = np.zeros((y.size, labels.size))
        out[np.arange(y.size), np.argmin(np.abs(diff), axis=1)] = 1.0
    else:
        # Normalisation constant of the Gaussian cancels; shift for stability.
        z = -0.5 * (diff / std) ** 2
        z -= z.max(axis=1, keepdims=True)
        w = np.exp(z)
        out = w / w.sum(axis=1, keepdims=True)
    return out[0] if scalar else out


def one_hot(indices, n_labels) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64)
    out = np.zeros((idx.size, n_labels))
    out[np.arange(idx.size), idx] = 1.0
    return out


def gaussian_density(mean, var, y):
    """``N(y; mean, var)``; broadcasts over arrays."""
    mean = np.asarray(mean, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return np.exp(-0.5 * (y - mean) ** 2 / var) / np.sqrt(2.0 * np.pi * var)


def tree_output_ldl(routing: RoutingResult, leaves: CategoricalLeaves) -> np.ndarray:
    """Mixture of leaf distributions weighted by the routing."""
    p = routing.leaf_probs
    if p.shape[-1] != leaves.n_leaves:
        raise DimensionError(
            f"routing has {p.shape[-1]} leaves but {leaves.n_leaves} leaf vectors were given"
        )
    return p @ leaves.probs


def leaf_densities(leaves: GaussianLeaves, y) -> np.ndarray:
    """Matrix of ``pi_l(y_i)``, shape ``(N, L)``."""
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    return gaussian_density(leaves.mean[None, :], leaves.var[None, :], y[:, None])


def tree_density_regression(routing: RoutingResult, leaves: GaussianLeaves, y):
    """Conditional density ``p(y | x)`` of the Gaussian-leaf tree."""
    p = routing.leaf_probs
    if p.shape[-1] != leaves.n_leaves:
        raise DimensionError(
            f"routing has {p.shape[-1]} leaves but {leaves.n_leaves} Gaussians were given"
        )
    y_arr = np.asarray(y, dtype=np.float64)
    if p.ndim == 1:
        return float(p @ gaussian_density(leaves.mean, leaves.var, y_arr))
    dens = leaf_densities(leaves, np.broadcast_to(y_arr, p.shape[:1]))
    return (p * dens).sum(axis=1)


def tree_mean_regression(routing: RoutingResult, leaves: GaussianLeaves):
    """Expected target under the mixture: ``sum_l P(l|x) mu_l``."""
    return routing.leaf_probs @ leaves.mean


def decode_argmax(dist, labels) -> np.ndarray:
    """Label with the largest predicted mass."""
    labels = np.asarray(labels, dtype=np.float64)
    return labels[np.argmax(dist, axis=-1)]


def decode_expectation(dist, labels) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.float64)
    return np.asarray(dist) @ labels
