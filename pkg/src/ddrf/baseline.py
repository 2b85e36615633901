"""The l2 "deep regression" baseline: same feature learner, scalar linear readout."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import learner as fl
from .errors import InvalidInputError, TrainingDivergedError
from .metrics import DEFAULT_LEVEL, evaluate


@dataclass
class L2Regressor:
    params: fl.ParameterVector
    readout: np.ndarray
    bias: float
    y_mean: float
    y_scale: float

    def predict(self, x):
        f = fl.forward(self.params.spec, self.params, x)
        return self.y_mean + self.y_scale * (f @ self.readout + self.bias)


def fit_l2_regression(x, y, config) -> L2Regressor:
    """SGD on mean squared error with the forest's learner, batch and lr settings.

    Targets are standardised internally; predictions are mapped back.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] == 0 or x.shape[0] != y.shape[0]:
        raise InvalidInputError("training data must be non-empty with one target per row")
    theta_seq, _, batch_seq, _ = np.random.SeedSequence(config.seed).spawn(4)
    rng, rng_batch = np.random.default_rng(theta_seq), np.random.default_rng(batch_seq)
    spec = fl.LearnerSpec(config.learner, x.shape[1], config.n_units, config.hidden,
                          config.activation, config.seed)
    params = fl.init_params(spec, rng)
    bound = np.sqrt(6.0 / (config.n_units + 1))
    w = rng.uniform(-bound, bound, size=config.n_units)
    c = 0.0
    mu, sd = float(y.mean()), float(y.std()) or 1.0
    z = (y - mu) / sd
    for it in range(config.max_iterations):
        idx = rng_batch.integers(0, x.shape[0], size=config.batch_size)
        xb, zb = x[idx], z[idx]
        f = fl.forward(spec, params, xb)
        resid = (f @ w + c - zb) / idx.size
        if not np.all(np.isfinite(resid)):
            raise TrainingDivergedError(f"l2 baseline diverged at iteration {it + 1}")
        lr = fl.step_learning_rate(config.lr, it, config.lr_decay, config.lr_step)
        g_theta = fl.backward(spec, params, xb, resid[:, None] * w[None, :])
        w = w - lr * (f.T @ resid)
        c -= lr * float(resid.sum())
        fl.sgd_step(params, g_theta, lr)
    return L2Regressor(params, w, c, mu, sd)


def baseline_l2_regression(train, config, test=None, levels=(DEFAULT_LEVEL,)):
    """Fit on ``train`` and report MAE/CS on ``test`` (or on ``train`` if omitted)."""
    model = fit_l2_regression(train.features, train.targets, config)
    ev = test if test is not None else train
    return evaluate(model.predict(ev.features), ev.targets, levels), model
