"""Batch inner loops for routing, subtree accumulation and leaf posteriors.

Every kernel exists twice: a vectorised numpy version and an explicit-loop
numba version. The active backend is chosen at import time from the
``DDRF_USE_NUMBA`` environment variable (``0``/``false``/``no`` selects pure
numpy); numba is also skipped when it is not installed. Both backends are
always reachable through :func:`get_backend` so they can be compared.

Trees use the heap layout: split node ``j`` has children ``2j+1`` (left) and
``2j+2`` (right); with ``S`` split nodes, node ``S + l`` is leaf ``l``.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

_FLAG = os.environ.get("DDRF_USE_NUMBA", "1").strip().lower()
NUMBA_REQUESTED = _FLAG not in ("0", "false", "no", "off")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is optional
    numba = None
    HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------


def _np_path_products(s, n_leaves):
    n = s.shape[0]
    mu = np.ones((n, 1))
    width = 1
    while width < n_leaves:
        sl = s[:, width - 1 : 2 * width - 1]
        mu = np.stack((mu * sl, mu * (1.0 - sl)), axis=2).reshape(n, 2 * width)
        width *= 2
    return mu


def _np_subtree_sums(leaf_vals):
    n, n_leaves = leaf_vals.shape
    levels = [leaf_vals]
    cur = leaf_vals
    while cur.shape[1] > 1:
        cur = cur[:, 0::2] + cur[:, 1::2]
        levels.append(cur)
    return np.concatenate(levels[::-1], axis=1)


def _np_split_node_grad(s, node_vals):
    n_split = s.shape[1]
    left = node_vals[:, 1 : 2 * n_split + 1 : 2]
    right = node_vals[:, 2 : 2 * n_split + 2 : 2]
    return s * right - (1.0 - s) * left


def _np_tempered_posterior(log_joint, tau):
    a = tau * log_joint
    a = a - a.max(axis=1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=1, keepdims=True)


def _np_gaussian_logpdf(y, mean, var):
    diff = y[:, None] - mean[None, :]
    return -0.5 * (np.log(2.0 * np.pi * var)[None, :] + diff * diff / var[None, :])


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------


def _nb_path_products(s, n_leaves):
    n, n_split = s.shape
    out = np.empty((n, n_leaves))
    mu = np.empty(n_split + n_leaves)
    for i in range(n):
        mu[0] = 1.0
        for j in range(n_split):
            mu[2 * j + 1] = mu[j] * s[i, j]
            mu[2 * j + 2] = mu[j] * (1.0 - s[i, j])
        for l in range(n_leaves):
            out[i, l] = mu[n_split + l]
    return out


def _nb_subtree_sums(leaf_vals):
    n, n_leaves = leaf_vals.shape
    n_split = n_leaves - 1
    out = np.empty((n, n_split + n_leaves))
    for i in range(n):
        for l in range(n_leaves):
            out[i, n_split + l] = leaf_vals[i, l]
        for j in range(n_split - 1, -1, -1):
            out[i, j] = out[i, 2 * j + 1] + out[i, 2 * j + 2]
    return out


def _nb_split_node_grad(s, node_vals):
    n, n_split = s.shape
    out = np.empty((n, n_split))
    for i in range(n):
        for j in range(n_split):
            sj = s[i, j]
            out[i, j] = sj * node_vals[i, 2 * j + 2] - (1.0 - sj) * node_vals[i, 2 * j + 1]
    return out


def _nb_tempered_posterior(log_joint, tau):
    n, n_leaves = log_joint.shape
    out = np.empty((n, n_leaves))
    for i in range(n):
        m = -np.inf
        for l in range(n_leaves):
            v = tau * log_joint[i, l]
            out[i, l] = v
            if v > m:
                m = v
        total = 0.0
        for l in range(n_leaves):
            e = np.exp(out[i, l] - m)
            out[i, l] = e
            total += e
        for l in range(n_leaves):
            out[i, l] /= total
    return out


def _nb_gaussian_logpdf(y, mean, var):
    n = y.shape[0]
    n_leaves = mean.shape[0]
    out = np.empty((n, n_leaves))
    log2pi = np.log(2.0 * np.pi)
    for l in range(n_leaves):
        lv = log2pi + np.log(var[l])
        for i in range(n):
            d = y[i] - mean[l]
            out[i, l] = -0.5 * (lv + d * d / var[l])
    return out


_NAMES = (
    "path_products",
    "subtree_sums",
    "split_node_grad",
    "tempered_posterior",
    "gaussian_logpdf",
)

numpy_backend = SimpleNamespace(
    name="numpy", **{k: globals()["_np_" + k] for k in _NAMES}
)

if HAVE_NUMBA:
    numba_backend = SimpleNamespace(
        name="numba",
        **{k: numba.njit(cache=True)(globals()["_nb_" + k]) for k in _NAMES},
    )
else:  # pragma: no cover
    numba_backend = None


def get_backend(name=None):
    """Return the kernel namespace for ``name`` (``"numpy"`` or ``"numba"``).

    With no argument, returns the backend selected by ``DDRF_USE_NUMBA``.
    """
    if name is None:
        return active
    if name == "numpy":
        return numpy_backend
    if name == "numba":
        if numba_backend is None:
            raise RuntimeError("numba is not installed")
        return numba_backend
    raise ValueError(f"unknown backend {name!r}")


active = numba_backend if (NUMBA_REQUESTED and HAVE_NUMBA) else numpy_backend
BACKEND = active.name


def path_products(s, n_leaves):
    """Leaf-reaching probabilities from split activations, shape ``(N, L)``."""
    return active.path_products(np.ascontiguousarray(s, dtype=np.float64), int(n_leaves))


def subtree_sums(leaf_vals):
    """Per-node sums over each node's leaves, shape ``(N, S + L)``."""
    return active.subtree_sums(np.ascontiguousarray(leaf_vals, dtype=np.float64))


def split_node_grad(s, node_vals):
    """``s_n * V[right] - (1 - s_n) * V[left]`` for every split node."""
    return active.split_node_grad(
        np.ascontiguousarray(s, dtype=np.float64),
        np.ascontiguousarray(node_vals, dtype=np.float64),
    )


def tempered_posterior(log_joint, tau):
    """Row-normalised ``exp(tau * log_joint)`` computed stably."""
    return active.tempered_posterior(
        np.ascontiguousarray(log_joint, dtype=np.float64), float(tau)
    )


def gaussian_logpdf(y, mean, var):
    """Matrix of ``log N(y_i; mean_l, var_l)``, shape ``(N, L)``."""
    return active.gaussian_logpdf(
        np.ascontiguousarray(y, dtype=np.float64),
        np.ascontiguousarray(mean, dtype=np.float64),
        np.ascontiguousarray(var, dtype=np.float64),
    )
