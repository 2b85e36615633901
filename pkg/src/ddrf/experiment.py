"""Flat key-value experiment files and the train-then-evaluate driver.

An experiment file holds one ``key = value`` per line; ``#`` starts a
comment. Keys are the :class:`~ddrf.forest.TrainConfig` fields plus the data
keys in :data:`DATA_KEYS`. Unknown keys are rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
from pathlib import Path

import numpy as np

from .data import load_csv, train_test_split
from .errors import ConfigError
from .forest import TrainConfig, save_checkpoint, train
from .metrics import DEFAULT_LEVEL, evaluate

DATA_KEYS = {
    "train": None,
    "test": None,
    "target": "age",
    "features": None,
    "out": "run",
    "test_fraction": 0.2,
    "split_seed": 0,
    "levels": str(DEFAULT_LEVEL),
    "label_min": None,
    "label_max": None,
}

_TRAIN_DEFAULTS = {f.name: f.default for f in dataclasses.fields(TrainConfig)}


def _coerce(key, raw, default):
    raw = raw.strip()
    if key == "hidden":
        return tuple(int(v) for v in raw.replace(",", " ").split()) if raw else ()
    if raw.lower() in ("none", ""):
        return None
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int) or key in ("leaf_seed", "split_seed"):
            return int(raw)
        if isinstance(default, float) or key in ("label_min", "label_max", "test_fraction"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None
    return raw


def parse_config(text: str) -> dict:
    """Parse experiment text into typed values; rejects unknown keys."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string("[experiment]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}".replace("\n", " ")) from None
    raw = dict(cp["experiment"])
    known = set(DATA_KEYS) | set(_TRAIN_DEFAULTS)
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    out = {}
    for key, value in raw.items():
        default = DATA_KEYS.get(key, _TRAIN_DEFAULTS.get(key))
        out[key] = _coerce(key, value, default)
    return out


def split_config(values: dict):
    """Separate data keys from training keys, filling defaults for both."""
    data = {**DATA_KEYS, **{k: v for k, v in values.items() if k in DATA_KEYS}}
    train_cfg = TrainConfig(**{k: v for k, v in values.items() if k in _TRAIN_DEFAULTS})
    return data, train_cfg


def format_effective(data: dict, config: TrainConfig) -> str:
    lines = ["# effective configuration (defaults included)"]
    for k, v in {**data, **config.to_dict()}.items():
        if isinstance(v, (list, tuple)):
            v = " ".join(str(i) for i in v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def _levels(spec):
    return tuple(float(v) for v in str(spec).replace(",", " ").split())


def _label_range(data, y, step):
    if data["label_min"] is None and data["label_max"] is None:
        return None
    lo = data["label_min"] if data["label_min"] is not None else float(np.floor(y.min()))
    hi = data["label_max"] if data["label_max"] is not None else float(np.ceil(y.max()))
    return (lo, hi, step)


def run_experiment(config, out_dir=None):
    """Train, evaluate and write artifacts; ``config`` is a path, text or dict.

    Writes ``model.json``, ``report.json``, ``train_log.csv``,
    ``leaf_updates.csv``, ``leaves.csv`` and ``run.log`` into the output
    directory and returns the :class:`~ddrf.metrics.EvalReport`.
    """
    if isinstance(config, dict):
        values = config
    else:
        p = Path(str(config))
        values = parse_config(p.read_text() if "\n" not in str(config) and p.exists() else str(config))
    data, tcfg = split_config(values)
    if not data["train"]:
        raise ConfigError("missing required key: train")
    features = data["features"].replace(",", " ").split() if data["features"] else None
    train_ds = load_csv(data["train"], data["target"], features)
    if data["test"]:
        test_ds = load_csv(data["test"], data["target"], features)
    else:
        train_ds, test_ds = train_test_split(train_ds, data["test_fraction"], data["split_seed"])
    out = Path(out_dir or data["out"])
    out.mkdir(parents=True, exist_ok=True)

    lr = _label_range(data, np.concatenate([train_ds.targets, test_ds.targets]), tcfg.label_step)
    labels = None
    if lr is not None and tcfg.head != "regression":
        lo, hi, step = lr
        labels = np.round(np.arange(lo, hi + 0.5 * step, step), 12)

    (out / "run.log").write_text(format_effective(data, tcfg))
    forest, tlog, state = train(train_ds.features, train_ds.targets, tcfg, labels=labels)
    report = evaluate(forest.predict(test_ds.features), test_ds.targets, _levels(data["levels"]))

    save_checkpoint(out / "model.json", forest, tcfg, state)
    tlog.to_csv(out / "train_log.csv")
    tlog.leaf_updates_to_csv(out / "leaf_updates.csv")
    _write_leaf_table(out / "leaves.csv", forest.leaf_table())
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2))
    with open(out / "run.log", "a") as fh:
        fh.write(f"# iterations = {state.iteration}\n# final T = {state.temperature!r}\n"
                 f"# final tau = {state.tau!r}\n# test mae = {report.mae!r}\n")
    return report


def _write_leaf_table(path, rows):
    import csv

    if not rows:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(float(v)) if isinstance(v, (float, np.floating)) else v
                        for k, v in r.items()})
