"""Differentiable feature learners ``f(x; theta): R^m -> R^M``.

Two kinds ship: ``linear`` (``Wx + b``) and ``mlp`` (dense layers with tanh
or relu hidden activations and a linear output layer). Parameters live in a
single flat vector so the optimiser and checkpoints can treat them uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InvalidInputError

KINDS = ("linear", "mlp")
ACTIVATIONS = ("tanh", "relu")


@dataclass(frozen=True)
class LearnerSpec:
    kind: str
    input_dim: int
    output_dim: int
    hidden: tuple = ()
    activation: str = "tanh"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"learner kind must be one of {KINDS}, got {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise InvalidInputError(f"activation must be one of {ACTIVATIONS}")
        hidden = tuple(int(h) for h in self.hidden) if self.kind == "mlp" else ()
        object.__setattr__(self, "hidden", hidden)
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in hidden):
            raise InvalidInputError("learner dimensions must be positive")

    @property
    def layer_sizes(self) -> tuple:
        return (self.input_dim, *self.hidden, self.output_dim)

    def layout(self):
        """``[(name, shape, offset), ...]`` for every weight and bias."""
        out, offset = [], 0
        sizes = self.layer_sizes
        for k in range(len(sizes) - 1):
            for name, shape in ((f"W{k}", (sizes[k + 1], sizes[k])), (f"b{k}", (sizes[k + 1],))):
                out.append((name, shape, offset))
                offset += int(np.prod(shape))
        return out

    @property
    def n_params(self) -> int:
        name, shape, offset = self.layout()[-1]
        return offset + int(np.prod(shape))


@dataclass
class ParameterVector:
    """Flat parameter vector together with the LearnerSpec that describes its layout."""

    spec: LearnerSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.spec.n_params,):
            raise DimensionError(
                f"expected {self.spec.n_params} parameters, got shape {self.values.shape}"
            )

    def views(self):
        """Named reshaped views into ``values`` (writes propagate)."""
        return {
            name: self.values[off : off + int(np.prod(shape))].reshape(shape)
            for name, shape, off in self.spec.layout()
        }

    def copy(self) -> "ParameterVector":
        return ParameterVector(self.spec, self.values.copy())


def init_params(spec: LearnerSpec, rng=None) -> ParameterVector:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    params = ParameterVector(spec, np.zeros(spec.n_params))
    for name, view in params.views().items():
        if name.startswith("W"):
            fan_out, fan_in = view.shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            view[...] = rng.uniform(-bound, bound, size=view.shape)
    return params


def _act(z, kind):
    return np.tanh(z) if kind == "tanh" else np.maximum(z, 0.0)


def _act_grad(z, a, kind):
    return 1.0 - a * a if kind == "tanh" else (z > 0).astype(np.float64)


def _as_batch(spec, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != spec.input_dim:
        raise DimensionError(f"expected inputs of width {spec.input_dim}, got shape {x.shape}")
    return x2, single


def _forward_trace(spec, params, x2):
    v = params.views()
    n_layers = len(spec.layer_sizes) - 1
    h = x2
    trace = [(None, h)]
    for k in range(n_layers):
        z = h @ v[f"W{k}"].T + v[f"b{k}"]
        h = z if k == n_layers - 1 else _act(z, spec.activation)
        trace.append((z, h))
    return trace


def forward(spec: LearnerSpec, params: ParameterVector, x) -> np.ndarray:
    x2, single = _as_batch(spec, x)
    out = _forward_trace(spec, params, x2)[-1][1]
    return out[0] if single else out


def backward(spec: LearnerSpec, params: ParameterVector, x, upstream) -> np.ndarray:
    """Flat ``sum_i (dE/df_i)(df_i/dtheta)`` for upstream ``dE/df``, shape ``(N, M)``."""
    x2, single = _as_batch(spec, x)
    up = np.asarray(upstream, dtype=np.float64)
    up = up[None, :] if single else up
    if up.shape != (x2.shape[0], spec.output_dim):
        raise DimensionError(
            f"upstream gradient must have shape {(x2.shape[0], spec.output_dim)}, got {up.shape}"
        )
    trace = _forward_trace(spec, params, x2)
    v = params.views()
    grad = ParameterVector(spec, np.zeros(spec.n_params))
    g = grad.views()
    n_layers = len(spec.layer_sizes) - 1
    delta = up
    for k in range(n_layers - 1, -1, -1):
        h_prev = trace[k][1]
        g[f"W{k}"][...] = delta.T @ h_prev
        g[f"b{k}"][...] = delta.sum(axis=0)
        if k > 0:
            z_prev, a_prev = trace[k]
            delta = (delta @ v[f"W{k}"]) * _act_grad(z_prev, a_prev, spec.activation)
    return grad.values


def sgd_step(params: ParameterVector, gradient, learning_rate: float) -> ParameterVector:
    """Plain gradient descent, in place; returns ``params`` for chaining."""
    gradient = np.asarray(gradient, dtype=np.float64)
    if gradient.shape != params.values.shape:
        raise DimensionError("gradient shape does not match parameters")
    if learning_rate:
        params.values -= learning_rate * gradient
    return params


def step_learning_rate(base: float, iteration: int, decay: float = 0.5, step: int = 10_000) -> float:
    """Step schedule: ``base * decay ** (iteration // step)`` (iterations from 0)."""
    if step <= 0:
        return base
    return base * decay ** (iteration // step)
