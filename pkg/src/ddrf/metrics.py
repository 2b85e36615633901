"""Mean absolute error and Cumulative Score."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvalidInputError

DEFAULT_LEVEL = 5


@dataclass
class EvalReport:
    mae: float
    cs: dict
    errors: np.ndarray

    def to_dict(self):
        return {
            "mae": self.mae,
            "cs": {repr(float(k)): v for k, v in self.cs.items()},
            "n": int(self.errors.size),
        }


def cumulative_score(abs_errors, level) -> float:
    """Percentage of samples whose absolute error is not greater than ``level``."""
    e = np.asarray(abs_errors, dtype=np.float64)
    return 100.0 * np.count_nonzero(e <= level) / e.size


def evaluate(predictions, truths, levels=(DEFAULT_LEVEL,)) -> EvalReport:
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    t = np.asarray(truths, dtype=np.float64).reshape(-1)
    if p.shape != t.shape:
        raise DimensionError(f"{p.size} predictions for {t.size} truths")
    if p.size == 0:
        raise InvalidInputError("cannot evaluate an empty prediction set")
    err = np.abs(p - t)
    cs = {float(l): cumulative_score(err, l) for l in levels}
    return EvalReport(float(err.mean()), cs, err)
