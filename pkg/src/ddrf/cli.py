"""Command-line entry point: ``ddrf {synth,train,eval,baseline}``.

Failures exit with status 2 and print exactly one JSON line to stderr:
``{"error": <kind>, "message": <text>}``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import __version__
from .baseline import baseline_l2_regression
from .data import load_csv, save_csv, synth_inhomogeneous, train_test_split
from .errors import DDRFError
from .experiment import DATA_KEYS, _levels, parse_config, run_experiment
from .forest import TrainConfig, load_checkpoint
from .metrics import evaluate

_TRAIN_FIELDS = {f.name: f.default for f in dataclasses.fields(TrainConfig)}


def _add_train_flags(p):
    g = p.add_argument_group("training configuration")
    for name, default in _TRAIN_FIELDS.items():
        flag = "--" + name.replace("_", "-")
        if name == "hidden":
            g.add_argument(flag, type=int, nargs="*", default=None, help="hidden layer widths")
        elif name == "leaf_seed":
            g.add_argument(flag, type=int, default=None)
        else:
            g.add_argument(flag, type=type(default), default=None, help=f"default: {default}")


def _train_overrides(args):
    out = {}
    for name in _TRAIN_FIELDS:
        v = getattr(args, name)
        if v is not None:
            out[name] = tuple(v) if name == "hidden" else v
    return out


def _add_data_flags(p, need_out=True):
    p.add_argument("--data", help="training CSV")
    p.add_argument("--test", help="test CSV (default: hold out --test-fraction of --data)")
    p.add_argument("--target", default="age", help="target column name")
    p.add_argument("--features", help="comma-separated feature columns (default: all others)")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--levels", default="5", help="CS error levels, comma-separated")
    if need_out:
        p.add_argument("--out", default="run", help="output directory")


def build_parser():
    ap = argparse.ArgumentParser(prog="ddrf", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"ddrf {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate the piecewise-linear benchmark as CSV")
    s.add_argument("--out", required=True)
    s.add_argument("--test-out", help="also write a held-out split here")
    s.add_argument("--test-fraction", type=float, default=0.2)
    s.add_argument("--n-samples", type=int, default=2000)
    s.add_argument("--regimes", type=int, default=2)
    s.add_argument("--n-features", type=int, default=8)
    s.add_argument("--noise", type=float, default=2.0)
    s.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="train a forest and evaluate it")
    t.add_argument("--config", help="flat key = value experiment file")
    _add_data_flags(t)
    _add_train_flags(t)

    e = sub.add_parser("eval", help="evaluate a saved model on a CSV")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--target", default="age")
    e.add_argument("--features")
    e.add_argument("--levels", default="5")
    e.add_argument("--out", help="write the report JSON here as well")

    b = sub.add_parser("baseline", help="l2 regression with the same feature learner")
    _add_data_flags(b)
    _add_train_flags(b)
    return ap


def _cmd_synth(args):
    ds = synth_inhomogeneous(args.n_samples, args.regimes, args.n_features, args.noise, args.seed)
    if args.test_out:
        tr, te = train_test_split(ds, args.test_fraction, args.seed)
        save_csv(tr, args.out)
        save_csv(te, args.test_out)
        print(json.dumps({"train": args.out, "n_train": len(tr), "test": args.test_out, "n_test": len(te)}))
    else:
        save_csv(ds, args.out)
        print(json.dumps({"train": args.out, "n_train": len(ds)}))


def _cmd_train(args):
    values = parse_config(Path(args.config).read_text()) if args.config else {}
    flag_data = {
        "train": args.data, "test": args.test, "target": args.target, "features": args.features,
        "test_fraction": args.test_fraction, "split_seed": args.split_seed,
        "levels": args.levels, "out": args.out,
    }
    for k, v in flag_data.items():
        if v is not None and (k not in values or v != DATA_KEYS[k]):
            values[k] = v
    values.update(_train_overrides(args))
    report = run_experiment(values)
    print(json.dumps(report.to_dict()))


def _load_eval(path, target, features):
    feats = features.replace(",", " ").split() if features else None
    return load_csv(path, target, feats)


def _cmd_eval(args):
    forest, _, _ = load_checkpoint(args.model)
    ds = _load_eval(args.data, args.target, args.features)
    report = evaluate(forest.predict(ds.features), ds.targets, _levels(args.levels))
    text = json.dumps(report.to_dict())
    if args.out:
        Path(args.out).write_text(text)
    print(text)


def _cmd_baseline(args):
    if not args.data:
        raise DDRFError("missing required flag: --data")
    cfg = TrainConfig(**_train_overrides(args))
    train_ds = _load_eval(args.data, args.target, args.features)
    if args.test:
        test_ds = _load_eval(args.test, args.target, args.features)
    else:
        train_ds, test_ds = train_test_split(train_ds, args.test_fraction, args.split_seed)
    report, _ = baseline_l2_regression(train_ds, cfg, test_ds, _levels(args.levels))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "baseline_report.json").write_text(json.dumps(report.to_dict(), indent=2))
    print(json.dumps(report.to_dict()))


_COMMANDS = {"synth": _cmd_synth, "train": _cmd_train, "eval": _cmd_eval, "baseline": _cmd_baseline}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        _COMMANDS[args.command](args)
    except (DDRFError, OSError, NotImplementedError) as exc:
        kind = getattr(exc, "kind", None) or (
            "unimplemented" if isinstance(exc, NotImplementedError) else "io"
        )
        msg = str(exc).replace("\n", " ")
        print(json.dumps({"error": kind, "message": msg}), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
