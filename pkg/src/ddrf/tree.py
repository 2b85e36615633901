"""Complete binary soft decision trees: topology, splits and routing."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import kernels
from .errors import DimensionError, InvalidInputError

MAX_DEPTH = 13
ACTIVATION_EPS = 1e-12


@dataclass(frozen=True)
class TreeTopology:
    """A complete binary tree of fixed depth.

    ``index_assignment[j]`` is the feature-learner output unit that drives
    split node ``j``. A depth-1 tree has no split nodes and one leaf.
    """

    depth: int
    index_assignment: np.ndarray

    def __post_init__(self):
        if not 1 <= self.depth <= MAX_DEPTH:
            raise InvalidInputError(f"depth must be in [1, {MAX_DEPTH}], got {self.depth}")
        phi = np.array(self.index_assignment, dtype=np.int64)
        if phi.shape != (self.split_count,):
            raise DimensionError(
                f"index_assignment needs {self.split_count} entries, got {phi.shape}"
            )
        if phi.size and phi.min() < 0:
            raise InvalidInputError("index_assignment entries must be non-negative")
        phi.setflags(write=False)
        object.__setattr__(self, "index_assignment", phi)

    @property
    def split_count(self) -> int:
        return 2 ** (self.depth - 1) - 1

    @property
    def leaf_count(self) -> int:
        return 2 ** (self.depth - 1)

    @property
    def node_count(self) -> int:
        return self.split_count + self.leaf_count

    @property
    def max_unit(self) -> int:
        """Smallest feature length this tree can read from."""
        return int(self.index_assignment.max()) + 1 if self.split_count else 0

    def children(self, node: int) -> tuple[int, int]:
        if not 0 <= node < self.split_count:
            raise InvalidInputError(f"node {node} is not a split node")
        return 2 * node + 1, 2 * node + 2

    def is_leaf(self, node: int) -> bool:
        return node >= self.split_count

    def leaves_under(self, node: int) -> range:
        """Leaf indices (0-based among leaves) of the subtree rooted at ``node``."""
        level = int(math.floor(math.log2(node + 1)))
        span = 2 ** (self.depth - 1 - level)
        first = (node - (2**level - 1)) * span
        return range(first, first + span)

    @classmethod
    def random(cls, depth: int, n_units: int, rng: np.random.Generator) -> "TreeTopology":
        """Draw an index assignment uniformly from ``n_units`` units.

        Sampling is without replacement when the tree has no more split nodes
        than there are units, with replacement otherwise.
        """
        n_split = 2 ** (depth - 1) - 1
        if n_units < 1:
            raise InvalidInputError("n_units must be positive")
        replace = n_split > n_units
        phi = rng.choice(n_units, size=n_split, replace=replace)
        return cls(depth, phi)


@dataclass(frozen=True)
class RoutingResult:
    """Split activations and leaf-reaching probabilities.

    Arrays are ``(S,)``/``(L,)`` for one sample or ``(N, S)``/``(N, L)`` for
    a batch.
    """

    split_activations: np.ndarray
    leaf_probs: np.ndarray

    @property
    def batched(self) -> bool:
        return self.leaf_probs.ndim == 2

    def as_batch(self) -> "RoutingResult":
        if self.batched:
            return self
        return RoutingResult(self.split_activations[None, :], self.leaf_probs[None, :])


def _clamp(s):
    return np.clip(s, ACTIVATION_EPS, 1.0 - ACTIVATION_EPS)


def split_activation(feature_output):
    """Sigmoid split probability, kept strictly inside (0, 1)."""
    f = np.asarray(feature_output, dtype=np.float64)
    if not np.all(np.isfinite(f)):
        raise InvalidInputError("split_activation received a non-finite value")
    out = _clamp(expit(f))
    return float(out) if out.ndim == 0 else out


def route_activations(topology: TreeTopology, activations) -> RoutingResult:
    """Route from precomputed split activations (no clamping applied)."""
    s = np.asarray(activations, dtype=np.float64)
    single = s.ndim == 1
    s2 = s[None, :] if single else s
    if s2.ndim != 2 or s2.shape[1] != topology.split_count:
        raise DimensionError(
            f"expected {topology.split_count} activations per sample, got shape {s.shape}"
        )
    probs = kernels.path_products(s2, topology.leaf_count)
    if single:
        return RoutingResult(s2[0], probs[0])
    return RoutingResult(s2, probs)


def route(topology: TreeTopology, features) -> RoutingResult:
    """Soft-route one feature vector ``(M,)`` or a batch ``(N, M)``."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim not in (1, 2):
        raise DimensionError(f"features must be 1-D or 2-D, got shape {f.shape}")
    if f.shape[-1] < topology.max_unit:
        raise DimensionError(
            f"tree reads unit {topology.max_unit - 1} but features have length {f.shape[-1]}"
        )
    selected = f[..., topology.index_assignment]
    return route_activations(topology, split_activation(selected))


def bottom_up_accumulate(per_leaf_values, topology: TreeTopology) -> np.ndarray:
    """Sum ``per_leaf_values`` over every node's subtree.

    Returns ``(S + L,)`` (or ``(N, S + L)``) in heap order, so
    ``out[j] == out[2j+1] + out[2j+2]`` for split nodes and the trailing
    ``L`` entries are the inputs.
    """
    v = np.asarray(per_leaf_values, dtype=np.float64)
    single = v.ndim == 1
    v2 = v[None, :] if single else v
    if v2.ndim != 2 or v2.shape[1] != topology.leaf_count:
        raise DimensionError(
            f"expected {topology.leaf_count} leaf values, got shape {v.shape}"
        )
    out = kernels.subtree_sums(v2)
    return out[0] if single else out


def xlogx(p):
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)


def leaf_entropy_terms(routing: RoutingResult) -> np.ndarray:
    """Per-leaf ``P + P log P`` with ``0 log 0 = 0``."""
    p = routing.leaf_probs
    return p + xlogx(p)


def sample_entropy(routing: RoutingResult) -> np.ndarray:
    """Shannon entropy of the leaf distribution, per sample."""
    return -xlogx(routing.leaf_probs).sum(axis=-1)
