"""Datasets: CSV ingestion, seeded splits and the synthetic piecewise benchmark."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, InvalidInputError, ParseError


@dataclass
class Dataset:
    """Feature matrix ``(N, m)`` with one scalar target per row.

    ``label_range`` optionally declares the ordered label set as
    ``(min, max, step)``; targets must then fall inside ``[min, max]``.
    ``meta`` carries generator-side information (e.g. regime ids) that is not
    written to disk.
    """

    features: np.ndarray
    targets: np.ndarray
    feature_names: list
    target_name: str = "target"
    label_range: tuple | None = None
    meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.targets = np.asarray(self.targets, dtype=np.float64).reshape(-1)
        if self.features.shape[0] != self.targets.shape[0]:
            raise DimensionError(
                f"{self.features.shape[0]} feature rows but {self.targets.shape[0]} targets"
            )
        if len(self.feature_names) != self.features.shape[1]:
            raise DimensionError("feature_names does not match the feature width")
        if self.label_range is not None:
            lo, hi, step = self.label_range
            if step <= 0 or hi < lo:
                raise InvalidInputError("label_range must be (min, max, step) with step > 0")
            if self.targets.size and (self.targets.min() < lo or self.targets.max() > hi):
                raise InvalidInputError("targets fall outside the declared label range")

    def __len__(self):
        return self.targets.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def labels(self):
        if self.label_range is None:
            return None
        lo, hi, step = self.label_range
        return np.round(np.arange(lo, hi + 0.5 * step, step), 12)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        meta = {}
        for k, v in self.meta.items():
            per_sample = isinstance(v, np.ndarray) and v.shape[:1] == self.targets.shape
            meta[k] = v[idx] if per_sample and k not in ("weights", "intercepts") else v
        return Dataset(self.features[idx], self.targets[idx], list(self.feature_names),
                       self.target_name, self.label_range, meta)


def load_csv(path, target, features=None, label_range=None) -> Dataset:
    """Read a headered CSV of numeric columns.

    ``target`` names the target column; ``features`` lists feature columns
    (default: every other column). Row numbers in errors count data rows
    from 1, excluding the header.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if target not in header:
            raise ParseError(f"{path}: target column {target!r} not in header")
        if features is None:
            features = [h for h in header if h != target]
        missing = [f for f in features if f not in header]
        if missing:
            raise ParseError(f"{path}: feature columns not in header: {', '.join(missing)}")
        cols = [header.index(f) for f in features]
        tcol = header.index(target)
        rows_x, rows_y = [], []
        for rowno, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"{path}: row {rowno} has {len(row)} fields, header has {len(header)}"
                )
            try:
                values = [float(row[c]) for c in cols]
            except ValueError:
                bad = next(c for c in cols if not _is_float(row[c]))
                raise ParseError(
                    f"{path}: row {rowno}, column {header[bad]!r}: non-numeric value {row[bad]!r}"
                ) from None
            if not _is_float(row[tcol]):
                raise ParseError(
                    f"{path}: row {rowno}, column {target!r}: non-numeric value {row[tcol]!r}"
                )
            rows_x.append(values)
            rows_y.append(float(row[tcol]))
    if not rows_y:
        raise ParseError(f"{path}: no data rows")
    return Dataset(np.array(rows_x).reshape(len(rows_y), len(cols)), np.array(rows_y),
                   list(features), target, label_range)


def _is_float(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def save_csv(dataset: Dataset, path):
    """Write features then target; floats use ``repr`` so they reload exactly."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*dataset.feature_names, dataset.target_name])
        for x, y in zip(dataset.features, dataset.targets):
            w.writerow([repr(float(v)) for v in x] + [repr(float(y))])


def train_test_split(dataset: Dataset, test_fraction=0.2, seed=0):
    if not 0 < test_fraction < 1:
        raise InvalidInputError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(dataset))
    n_test = max(1, int(round(test_fraction * len(dataset))))
    return dataset.subset(np.sort(perm[n_test:])), dataset.subset(np.sort(perm[:n_test]))


def random_splits(dataset: Dataset, test_fraction=0.2, repeats=5, seed=0):
    """Yield ``repeats`` independent seeded train/test splits."""
    for seq in np.random.SeedSequence(seed).spawn(repeats):
        yield train_test_split(dataset, test_fraction, int(seq.generate_state(1)[0]))


def synth_inhomogeneous(n_samples=2000, n_regimes=2, n_features=8, noise=2.0, seed=0,
                        center=40.0, scale=10.0) -> Dataset:
    """Piecewise-linear regression data with regime-dependent maps and noise.

    Inputs are uniform on ``[-1, 1]^m``. The regime of a sample is the bin of
    its first coordinate among ``n_regimes`` equal-width bins. Regime ``r``
    has its own random linear map and intercept, and Gaussian noise with
    standard deviation ``noise * (r + 1) / n_regimes``. Targets are
    ``center + scale * (w_r . x + c_r) + eps``.

    ``meta`` on the result holds ``regime`` per sample plus the generating
    ``weights`` and ``intercepts``.
    """
    if n_samples < 1 or n_regimes < 1 or n_features < 1:
        raise InvalidInputError("n_samples, n_regimes and n_features must be positive")
    if noise < 0:
        raise InvalidInputError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    weights = rng.normal(size=(n_regimes, n_features)) / np.sqrt(n_features / 3.0)
    intercepts = rng.uniform(-1.5, 1.5, size=n_regimes)
    x = rng.uniform(-1.0, 1.0, size=(n_samples, n_features))
    regime = np.minimum(((x[:, 0] + 1.0) / 2.0 * n_regimes).astype(np.int64), n_regimes - 1)
    clean = center + scale * (np.einsum("ij,ij->i", x, weights[regime]) + intercepts[regime])
    sd = noise * (regime + 1) / n_regimes
    y = clean + sd * rng.standard_normal(n_samples)
    names = [f"x{j}" for j in range(n_features)]
    ds = Dataset(x, y, names, "age")
    ds.meta = {"regime": regime, "clean": clean, "weights": weights, "intercepts": intercepts}
    return ds
