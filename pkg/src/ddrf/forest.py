"""Forests of soft trees sharing one feature learner, and their training loop.

Training alternates two steps. Every mini-batch updates the shared
feature-learner parameters by SGD on the annealed forest loss. After
``n_batches`` mini-batches have been buffered, the leaves of every tree are
refit on the buffer with the feature learner frozen; the split temperature
is then cooled and, for Gaussian leaves, the posterior temperature warmed.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import leaf_update as lu
from . import learner as fl
from .errors import ConfigError, InvalidInputError, ParseError, TrainingDivergedError
from .leaves import (
    CategoricalLeaves,
    GaussianLeaves,
    decode_argmax,
    decode_expectation,
    generate_label_distribution,
)
from .splits import (
    AnnealedLossValue,
    classification_leaf_terms,
    classification_risk,
    cool_split_temperature,
    ldl_leaf_terms,
    ldl_risk,
    regression_leaf_terms,
    regression_risk,
    regression_terms_and_risk,
    routing_entropy,
    split_gradient_from_terms,
)
from .tree import TreeTopology, route

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "ddrf-checkpoint/1"


@dataclass
class TrainConfig:
    head: str = "regression"
    n_trees: int = 5
    depth: int = 6
    n_units: int = 128
    n_batches: int = 50
    batch_size: int = 16
    max_iterations: int = 30_000
    lr: float = 0.05
    lr_decay: float = 0.5
    lr_step: int = 10_000
    alpha: float = 2.0
    T0: float = 1.0
    tau0: float = 0.5
    eta: float = 0.9
    leaf_iterations: int = 20
    seed: int = 0
    leaf_seed: int | None = None
    variance_floor: float = 1e-4
    learner: str = "linear"
    hidden: tuple = ()
    activation: str = "tanh"
    ensemble: str = "shared"
    decode: str = "argmax"
    label_step: float = 1.0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self):
        if self.head not in lu.HEADS:
            raise ConfigError(f"head must be one of {lu.HEADS}, got {self.head!r}")
        if self.ensemble not in ("shared", "dndf"):
            raise ConfigError("ensemble must be 'shared' or 'dndf'")
        if self.decode not in ("argmax", "expectation"):
            raise ConfigError("decode must be 'argmax' or 'expectation'")
        for name in ("n_trees", "depth", "n_units", "n_batches", "batch_size", "leaf_iterations"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.max_iterations < 0:
            raise ConfigError("max_iterations must be non-negative")
        if self.n_units < 2 ** (self.depth - 1) - 1:
            raise ConfigError(
                f"n_units={self.n_units} is below the {2 ** (self.depth - 1) - 1} split nodes of a depth-{self.depth} tree"
            )
        if self.T0 < 0 or self.alpha < 0 or self.lr < 0:
            raise ConfigError("T0, alpha and lr must be non-negative")
        if not 0 < self.tau0 <= 1:
            raise ConfigError("tau0 must be in (0, 1]")
        if not 0 < self.eta <= 1:
            raise ConfigError("eta must be in (0, 1]")
        if self.variance_floor <= 0 or self.label_step <= 0:
            raise ConfigError("variance_floor and label_step must be positive")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)


@dataclass
class Forest:
    """``K`` soft trees over one shared feature learner.

    Each tree has its own index assignment and leaf parameters. ``labels`` is
    the ordered label set for the categorical heads (``None`` for regression).
    """

    head: str
    params: fl.ParameterVector
    topologies: list
    leaves: list
    labels: np.ndarray | None = None
    alpha: float = 2.0
    decode: str = "argmax"

    @property
    def spec(self) -> fl.LearnerSpec:
        return self.params.spec

    @property
    def n_trees(self) -> int:
        return len(self.topologies)

    def features(self, x):
        return fl.forward(self.spec, self.params, x)

    def routings(self, features):
        return [route(t, features) for t in self.topologies]

    def encode_targets(self, y):
        """Map raw targets to what the head's losses consume."""
        y = np.asarray(y, dtype=np.float64)
        if self.head == "regression":
            return y
        if self.head == "ldl":
            return generate_label_distribution(y, self.labels, self.alpha)
        idx = np.searchsorted(self.labels, y)
        idx = np.clip(idx, 0, self.labels.size - 1)
        if not np.allclose(self.labels[idx], y):
            raise InvalidInputError("classification targets must be members of the label set")
        return idx

    def tree_risk(self, k, routing, targets):
        if self.head == "ldl":
            return ldl_risk(routing, self.leaves[k], targets)
        if self.head == "classification":
            return classification_risk(routing, self.leaves[k], targets)
        return regression_risk(routing, self.leaves[k], targets)

    def _leaf_terms(self, k, routing, targets):
        if self.head == "ldl":
            return ldl_leaf_terms(routing, self.leaves[k], targets)
        if self.head == "classification":
            return classification_leaf_terms(routing, self.leaves[k], targets)
        return regression_leaf_terms(routing, self.leaves[k], targets)

    def tree_losses(self, x, targets, temperature):
        routings = self.routings(self.features(x))
        return [
            AnnealedLossValue(self.tree_risk(k, r, targets), routing_entropy(r), temperature)
            for k, r in enumerate(routings)
        ]

    def loss(self, x, targets, temperature) -> AnnealedLossValue:
        """Forest loss: the mean of the per-tree annealed losses."""
        parts = self.tree_losses(x, targets, temperature)
        return AnnealedLossValue(
            float(np.mean([p.risk for p in parts])),
            float(np.mean([p.entropy for p in parts])),
            float(temperature),
        )

    def feature_gradient(self, features, targets, temperature):
        """``dE_F/df`` of shape ``(N, M)`` plus the forest loss on the batch."""
        n, m = features.shape
        grad = np.zeros((n, m))
        risks, ents = [], []
        for k, topo in enumerate(self.topologies):
            r = route(topo, features)
            if self.head == "regression":
                terms, risk = regression_terms_and_risk(r, self.leaves[k], targets)
            else:
                terms, risk = self._leaf_terms(k, r, targets), self.tree_risk(k, r, targets)
            grad += split_gradient_from_terms(r, terms, temperature, topo).to_units(m)
            risks.append(risk)
            ents.append(routing_entropy(r))
        grad /= self.n_trees
        value = AnnealedLossValue(float(np.mean(risks)), float(np.mean(ents)), float(temperature))
        return grad, value

    def split_gradient(self, x, targets, temperature):
        """Gradient of the forest loss w.r.t. the flat learner parameters."""
        feats = self.features(x)
        unit_grad, value = self.feature_gradient(feats, targets, temperature)
        return fl.backward(self.spec, self.params, x, unit_grad), value

    def predict_distribution(self, x):
        """Average of the per-tree label distributions (categorical heads)."""
        if self.head == "regression":
            raise InvalidInputError("regression forests do not output label distributions")
        feats = self.features(x)
        out = 0.0
        for k, r in enumerate(self.routings(feats)):
            out = out + r.leaf_probs @ self.leaves[k].probs
        return out / self.n_trees

    def predict(self, x):
        """Point predictions in target units."""
        if self.head == "regression":
            feats = self.features(x)
            preds = [r.leaf_probs @ self.leaves[k].mean for k, r in enumerate(self.routings(feats))]
            return np.mean(preds, axis=0)
        dist = self.predict_distribution(x)
        if self.decode == "expectation":
            return decode_expectation(dist, self.labels)
        return decode_argmax(dist, self.labels)

    def leaf_table(self):
        """Rows describing every leaf, ready for CSV export."""
        rows = []
        for k, leaves in enumerate(self.leaves):
            if self.head == "regression":
                for l in range(leaves.n_leaves):
                    rows.append({"tree": k, "leaf": l, "mean": leaves.mean[l], "var": leaves.var[l]})
            else:
                for l in range(leaves.n_leaves):
                    for c, lab in enumerate(self.labels):
                        rows.append({"tree": k, "leaf": l, "label": lab, "prob": leaves.probs[l, c]})
        return rows


def label_set(y, step=1.0):
    """Ordered label grid covering the targets."""
    y = np.asarray(y, dtype=np.float64)
    lo = np.floor(y.min() / step) * step
    hi = np.ceil(y.max() / step) * step
    return np.round(np.arange(lo, hi + 0.5 * step, step), 12)


def build_forest(config: TrainConfig, input_dim, y_train, labels=None, rngs=None) -> Forest:
    """Initialise a forest: random learner and index functions, head-specific leaves."""
    if config.ensemble == "dndf":
        raise NotImplementedError("unimplemented: per-tree alternating (dndf) ensemble training")
    rng_theta, rng_phi, rng_leaf = rngs or _rngs(config)[0]
    spec = fl.LearnerSpec(
        config.learner, int(input_dim), config.n_units, config.hidden, config.activation, config.seed
    )
    params = fl.init_params(spec, rng_theta)
    topologies = [TreeTopology.random(config.depth, config.n_units, rng_phi) for _ in range(config.n_trees)]
    n_leaves = topologies[0].leaf_count
    if config.head == "regression":
        leaves = [
            GaussianLeaves.random(n_leaves, y_train, rng_leaf, config.variance_floor)
            for _ in range(config.n_trees)
        ]
        labels = None
    else:
        if labels is None:
            if config.head == "classification":
                labels = np.unique(np.asarray(y_train, dtype=np.float64))
            else:
                labels = label_set(y_train, config.label_step)
        labels = np.asarray(labels, dtype=np.float64)
        leaves = [CategoricalLeaves.uniform(n_leaves, labels.size) for _ in range(config.n_trees)]
    return Forest(config.head, params, topologies, leaves, labels, config.alpha, config.decode)


def _rngs(config):
    theta, phi, batches, leaf = np.random.SeedSequence(config.seed).spawn(4)
    if config.leaf_seed is not None:
        leaf = np.random.SeedSequence(config.leaf_seed)
    return (
        np.random.default_rng(theta),
        np.random.default_rng(phi),
        np.random.default_rng(leaf),
    ), np.random.default_rng(batches)


LOG_FIELDS = ("iteration", "lr", "risk", "entropy", "total", "T", "tau")
LEAF_FIELDS = ("iteration", "risk_before", "risk_after", "T", "tau")


@dataclass
class TrainingLog:
    """Per-iteration batch losses and per-round leaf-update summaries.

    ``records`` row ``t`` holds the loss of mini-batch ``t`` evaluated before
    the SGD step it drives, with the temperatures in force at that step.
    """

    records: list = field(default_factory=list)
    leaf_updates: list = field(default_factory=list)

    def column(self, name):
        return np.array([r[name] for r in self.records])

    def to_csv(self, path):
        _write_rows(path, LOG_FIELDS, self.records)

    def leaf_updates_to_csv(self, path):
        _write_rows(path, LEAF_FIELDS, self.leaf_updates)


def _write_rows(path, fields, rows):
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


@dataclass
class ScheduleState:
    iteration: int = 0
    temperature: float = 1.0
    tau: float = 0.5


def train(x, y, config: TrainConfig, labels=None, callback=None):
    """Fit a forest on features ``x`` ``(N, m)`` and raw targets ``y`` ``(N,)``.

    Returns ``(forest, training_log, schedule_state)``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0 or x.shape[0] != y.shape[0]:
        raise InvalidInputError("training data must be a non-empty (N, m) matrix with N targets")
    config.validate()
    rngs, rng_batch = _rngs(config)
    forest = build_forest(config, x.shape[1], y, labels, rngs)
    targets = forest.encode_targets(y)
    state = ScheduleState(0, float(config.T0), float(config.tau0) if config.head == "regression" else 1.0)
    tlog = TrainingLog()
    buffer: list[np.ndarray] = []
    n = x.shape[0]

    while state.iteration < config.max_iterations:
        idx = rng_batch.integers(0, n, size=config.batch_size)
        lr = fl.step_learning_rate(config.lr, state.iteration, config.lr_decay, config.lr_step)
        grad, value = forest.split_gradient(x[idx], targets[idx], state.temperature)
        state.iteration += 1
        record = {
            "iteration": state.iteration,
            "lr": lr,
            "risk": value.risk,
            "entropy": value.entropy,
            "total": value.total,
            "T": state.temperature,
            "tau": state.tau,
        }
        if not (np.isfinite(value.total) and np.all(np.isfinite(grad))):
            last = tlog.records[-1] if tlog.records else None
            raise TrainingDivergedError(
                f"non-finite loss at iteration {state.iteration}",
                {"record": record, "last_finite": last, **dataclasses.asdict(state)},
            )
        tlog.records.append(record)
        fl.sgd_step(forest.params, grad, lr)
        buffer.append(idx)
        if callback is not None:
            callback(forest, state, record)
        if not np.all(np.isfinite(forest.params.values)):
            raise TrainingDivergedError(
                f"non-finite learner parameters after iteration {state.iteration}",
                {"record": record, "last_finite": record, **dataclasses.asdict(state)},
            )

        if len(buffer) == config.n_batches:
            _leaf_round(forest, x, targets, buffer, config, state, tlog)
            buffer.clear()
            state.temperature = cool_split_temperature(state.temperature, config.eta)
            if config.head == "regression":
                state.tau = lu.warm_leaf_schedule(state.tau, config.eta)

    return forest, tlog, state


def _leaf_round(forest, x, targets, buffer, config, state, tlog):
    idx = np.concatenate(buffer)
    xb, tb = x[idx], targets[idx]
    feats = forest.features(xb)
    before, after = [], []
    for k, r in enumerate(forest.routings(feats)):
        before.append(forest.tree_risk(k, r, tb))
        forest.leaves[k] = lu.update_leaves(
            forest.head, r.leaf_probs, tb, forest.leaves[k], config.leaf_iterations, state.tau
        )
        after.append(forest.tree_risk(k, r, tb))
    tlog.leaf_updates.append(
        {
            "iteration": state.iteration,
            "risk_before": float(np.mean(before)),
            "risk_after": float(np.mean(after)),
            "T": state.temperature,
            "tau": state.tau,
        }
    )
    log.debug("leaf round at %d: risk %.5f -> %.5f", state.iteration, np.mean(before), np.mean(after))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, forest: Forest, config: TrainConfig | None = None, state=None):
    """Write a self-describing JSON checkpoint; floats round-trip exactly."""
    spec = forest.spec
    doc = {
        "format": CHECKPOINT_FORMAT,
        "head": forest.head,
        "alpha": forest.alpha,
        "decode": forest.decode,
        "labels": None if forest.labels is None else forest.labels.tolist(),
        "learner": {
            "kind": spec.kind,
            "input_dim": spec.input_dim,
            "output_dim": spec.output_dim,
            "hidden": list(spec.hidden),
            "activation": spec.activation,
            "seed": spec.seed,
            "layout": [[name, list(shape), off] for name, shape, off in spec.layout()],
        },
        "params": forest.params.values.tolist(),
        "trees": [],
        "config": None if config is None else config.to_dict(),
        "schedule": None if state is None else dataclasses.asdict(state),
    }
    for topo, leaves in zip(forest.topologies, forest.leaves):
        tree = {"depth": topo.depth, "index_assignment": topo.index_assignment.tolist()}
        if forest.head == "regression":
            tree.update(mean=leaves.mean.tolist(), var=leaves.var.tolist(),
                        variance_floor=leaves.variance_floor)
        else:
            tree["probs"] = leaves.probs.tolist()
        doc["trees"].append(tree)
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(forest, config, state)``."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise InvalidInputError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    ls = doc["learner"]
    spec = fl.LearnerSpec(ls["kind"], ls["input_dim"], ls["output_dim"], tuple(ls["hidden"]),
                          ls["activation"], ls["seed"])
    params = fl.ParameterVector(spec, np.array(doc["params"], dtype=np.float64))
    topologies, leaves = [], []
    for t in doc["trees"]:
        topologies.append(TreeTopology(t["depth"], np.array(t["index_assignment"], dtype=np.int64)))
        if doc["head"] == "regression":
            leaves.append(GaussianLeaves(np.array(t["mean"]), np.array(t["var"]), t["variance_floor"]))
        else:
            leaves.append(CategoricalLeaves(np.array(t["probs"])))
    labels = None if doc["labels"] is None else np.array(doc["labels"], dtype=np.float64)
    forest = Forest(doc["head"], params, topologies, leaves, labels, doc["alpha"], doc["decode"])
    config = None if doc["config"] is None else TrainConfig.from_dict(doc["config"])
    state = None if doc["schedule"] is None else ScheduleState(**doc["schedule"])
    return forest, config, state
