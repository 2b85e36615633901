"""Exit criteria for the primary component, one test per criterion.

Each test records a PASS/FAIL line that the terminal summary prints after
the run (see ``conftest.py``).
"""

import time

import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.special import log_softmax

from ddrf import leaf_update as lu
from ddrf import splits
from ddrf.data import synth_inhomogeneous, train_test_split
from ddrf.baseline import baseline_l2_regression
from ddrf.forest import TrainConfig, build_forest, train
from ddrf.leaves import CategoricalLeaves, GaussianLeaves
from ddrf.metrics import evaluate
from ddrf.tree import TreeTopology, route

from conftest import leaf_probs_for, random_instance
from oracles import fd_unit_gradient, mixture_em, mixture_nll, rel_error

pytestmark = pytest.mark.acceptance

HEADS = ("ldl", "regression", "classification")
GRADIENTS = {
    "ldl": splits.ldl_split_gradient,
    "classification": splits.classification_split_gradient,
    "regression": splits.regression_split_gradient,
}


def _oracle_leaves(head, leaves):
    return (leaves.mean, leaves.var) if head == "regression" else leaves.probs


def test_c01_gradient_correctness(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    worst_unit, n_instances = 0.0, 0
    for head in HEADS:
        for temperature in (0.0, 0.7):
            for _ in range(50):
                depth = int(rng.integers(1, 5))
                n = int(rng.integers(1, 9))
                c = int(rng.integers(2, 6))
                topo, feats, leaves, targets = random_instance(rng, head, depth, n, c)
                g = GRADIENTS[head](route(topo, feats), leaves, targets, temperature, topo)
                fd = fd_unit_gradient(head, depth, topo.index_assignment, feats,
                                      _oracle_leaves(head, leaves), targets, temperature)
                worst_unit = max(worst_unit, rel_error(g.to_units(feats.shape[1]), fd))
                n_instances += 1

    worst_theta = 0.0
    for head in HEADS:
        for temperature in (0.0, 0.7):
            for k in range(3):
                cfg = TrainConfig(head=head, n_trees=2, depth=3, n_units=5, learner="mlp",
                                  hidden=(4,), alpha=1.0, seed=k)
                x = rng.normal(size=(6, 3))
                y = rng.integers(18, 23, size=6).astype(float)
                forest = build_forest(cfg, 3, y)
                if head == "regression":
                    forest.leaves = [GaussianLeaves(rng.normal(20, 2, size=4), rng.uniform(1, 4, 4))
                                     for _ in range(2)]
                else:
                    forest.leaves = [CategoricalLeaves(rng.dirichlet(np.ones(forest.labels.size), 4))
                                     for _ in range(2)]
                t = forest.encode_targets(y)
                grad, _ = forest.split_gradient(x, t, temperature)
                base = forest.params.values.copy()
                num = np.zeros_like(base)
                h = 1e-5
                for j in range(base.size):
                    forest.params.values[:] = base
                    forest.params.values[j] += h
                    up = forest.loss(x, t, temperature).total
                    forest.params.values[j] -= 2 * h
                    num[j] = (up - forest.loss(x, t, temperature).total) / (2 * h)
                forest.params.values[:] = base
                worst_theta = max(worst_theta, rel_error(grad, num))
    elapsed = time.perf_counter() - start
    ok = worst_unit < 1e-5 and worst_theta < 1e-4 and elapsed < 60
    criterion(1, "gradient correctness", ok,
              f"({n_instances} instances, max rel err f={worst_unit:.1e}, theta={worst_theta:.1e}, "
              f"{elapsed:.1f}s)")
    assert worst_unit < 1e-5
    assert worst_theta < 1e-4
    assert elapsed < 60


def test_c02_vb_descent(criterion):
    rng = np.random.default_rng(202)
    worst_rise, worst_gap = -np.inf, 0.0
    for head in HEADS:
        for _ in range(20):
            topo, feats, leaves, targets = random_instance(rng, head, int(rng.integers(2, 5)),
                                                           int(rng.integers(5, 30)), 4)
            p = leaf_probs_for(topo, feats)
            prev = lu.risk(head, p, leaves, targets)
            worst_gap = max(worst_gap, abs(lu.vb_bound(leaves, leaves, p, targets, head) - prev))
            for _ in range(20):
                leaves = lu.update_leaves(head, p, targets, leaves, 1, tau=1.0)
                cur = lu.risk(head, p, leaves, targets)
                worst_rise = max(worst_rise, cur - prev)
                prev = cur
    ok = worst_rise <= 1e-10 and worst_gap <= 1e-12
    criterion(2, "VB descent", ok, f"(max risk increase {worst_rise:.1e}, bound gap {worst_gap:.1e})")
    assert worst_rise <= 1e-10
    assert worst_gap <= 1e-12


def _simplex_oracle(p, d, start):
    """Minimise the LDL risk over both leaf simplices with L-BFGS on logits."""
    n_leaves, n_labels = start.shape

    def fun(z):
        logpi = log_softmax(z.reshape(n_leaves, n_labels), axis=1)
        pi = np.exp(logpi)
        g = p @ pi
        val = -np.mean(np.sum(d * np.log(g), axis=1))
        dg = -(d / g) / p.shape[0]
        dpi = p.T @ dg
        dz = pi * (dpi - np.sum(dpi * pi, axis=1, keepdims=True))
        return val, dz.ravel()

    res = minimize(fun, np.log(start).ravel(), jac=True, method="L-BFGS-B",
                   options={"gtol": 1e-13, "ftol": 1e-16, "maxiter": 20000})
    return res.fun


def test_c03_oracle_equivalence(criterion):
    rng = np.random.default_rng(303)
    topo = TreeTopology(2, [0])
    worst_drf, worst_ldl = 0.0, 0.0
    for _ in range(8):
        n = 40
        p = route(topo, rng.normal(scale=1.5, size=(n, 1))).leaf_probs
        y = np.where(rng.uniform(size=n) < 0.5, rng.normal(-2, 0.7, n), rng.normal(2, 1.3, n))
        start = GaussianLeaves(rng.normal(size=2), rng.uniform(0.5, 2, 2))
        ours = lu.regression_leaf_update(p, y, start, tau=1.0, iterations=3000)
        mean, var = mixture_em(p, y, start.mean, start.var, 3000)
        worst_drf = max(worst_drf, abs(lu.risk("regression", p, ours, y) - mixture_nll(p, y, mean, var)))

        d = rng.dirichlet(np.ones(4), size=n)
        init = CategoricalLeaves.uniform(2, 4)
        got = lu.ldl_leaf_update(p, d, init, iterations=5000)
        worst_ldl = max(worst_ldl, abs(lu.risk("ldl", p, got, d) - _simplex_oracle(p, d, init.probs)))
    ok = worst_drf <= 1e-6 and worst_ldl <= 1e-6
    criterion(3, "oracle equivalence", ok, f"(DRF NLL gap {worst_drf:.1e}, DLDLF gap {worst_ldl:.1e})")
    assert worst_drf <= 1e-6
    assert worst_ldl <= 1e-6


def test_c04_classification_specialisation(criterion):
    rng = np.random.default_rng(404)
    worst = 0.0
    for _ in range(20):
        topo, feats, leaves, labels = random_instance(rng, "classification", int(rng.integers(1, 5)),
                                                      int(rng.integers(1, 40)), 5)
        p = leaf_probs_for(topo, feats)
        a = lu.classification_leaf_update(p, labels, leaves, iterations=5)
        b = lu.ldl_leaf_update(p, np.eye(5)[labels], leaves, iterations=5)
        worst = max(worst, float(np.max(np.abs(a.probs - b.probs))))
    criterion(4, "classification specialisation", worst <= 1e-12, f"(max abs diff {worst:.1e})")
    assert worst <= 1e-12


def test_c05_annealing_limits(criterion):
    rng = np.random.default_rng(505)
    worst_rho, worst_limit = 0.0, 0.0
    topo = TreeTopology(3, [0, 1, 2])
    for _ in range(10):
        p = route(topo, rng.normal(scale=0.5, size=(30, 3))).leaf_probs
        y = rng.normal(size=30)
        leaves = GaussianLeaves(rng.normal(scale=0.5, size=4), rng.uniform(3, 5, size=4))
        joint = p * np.exp(-0.5 * (y[:, None] - leaves.mean) ** 2 / leaves.var) / np.sqrt(leaves.var)
        rho = joint / joint.sum(axis=1, keepdims=True)
        worst_rho = max(worst_rho, float(np.max(np.abs(lu.tempered_posterior(p, y, leaves, 1.0) - rho))))
        out = lu.regression_leaf_update(p, y, leaves, tau=1e-6)
        dev = max(np.max(np.abs(out.mean - y.mean())), np.max(np.abs(out.var - y.var())))
        worst_limit = max(worst_limit, float(dev))
    ok = worst_rho <= 1e-12 and worst_limit <= 1e-6
    criterion(5, "annealing limits", ok, f"(tau=1 gap {worst_rho:.1e}, tau=1e-6 gap {worst_limit:.1e})")
    assert worst_rho <= 1e-12
    assert worst_limit <= 1e-6


def test_c10_metrics(criterion):
    pred = np.array([10.0, 22.0, 35.0, 41.0, 50.0, 63.5])
    truth = np.array([15.0, 20.0, 35.0, 47.0, 44.0, 60.0])
    # |e| = 5, 2, 0, 6, 6, 3.5 -> MAE 22.5 / 6 = 3.75
    r = evaluate(pred, truth, levels=(0, 3.5, 5, 6))
    ok = (r.mae == 3.75 and r.cs == {0.0: 100 / 6, 3.5: 50.0, 5.0: 400 / 6, 6.0: 100.0})
    criterion(10, "metrics", ok, f"(MAE {r.mae}, CS {r.cs})")
    assert r.mae == 3.75
    assert r.cs == {0.0: 100 / 6, 3.5: 50.0, 5.0: 400 / 6, 6.0: 100.0}


# ---------------------------------------------------------------------------
# scaled-down experiments on the synthetic two-regime benchmark
# ---------------------------------------------------------------------------

BENCH = dict(head="regression", n_trees=5, depth=6, n_units=128, n_batches=50, batch_size=16,
             lr=5.0, max_iterations=6000, lr_step=2000, T0=1.0, tau0=0.5, eta=0.9)


@pytest.fixture(scope="module")
def bench_split():
    ds = synth_inhomogeneous(2000, n_regimes=2, n_features=8, noise=2.0, seed=0)
    return train_test_split(ds, 0.2, seed=0)


def _fit_mae(split, **overrides):
    tr, te = split
    forest, log, _ = train(tr.features, tr.targets, TrainConfig(**{**BENCH, **overrides}))
    return evaluate(forest.predict(te.features), te.targets).mae, log


@pytest.mark.slow
def test_c06_initialisation_freedom(criterion, bench_split):
    start = time.perf_counter()
    full = np.array([_fit_mae(bench_split, leaf_seed=s)[0] for s in range(10)])
    plain = np.array([_fit_mae(bench_split, leaf_seed=s, T0=0.0, tau0=1.0)[0] for s in range(10)])
    elapsed = time.perf_counter() - start
    spread_full, spread_plain = np.ptp(full), np.ptp(plain)
    ok = spread_full <= 0.1 * full.mean() and spread_plain > spread_full and elapsed < 600
    criterion(6, "initialisation freedom", ok,
              f"(spread {spread_full:.3f} = {100 * spread_full / full.mean():.1f}% of mean "
              f"{full.mean():.3f}; T=0,tau=1 spread {spread_plain:.3f}; {elapsed:.0f}s)")
    assert spread_full <= 0.1 * full.mean()
    assert spread_plain > spread_full
    assert elapsed < 600


@pytest.mark.slow
def test_c07_inhomogeneity_benefit(criterion, bench_split):
    start = time.perf_counter()
    drf, _ = _fit_mae(bench_split)
    report, _ = baseline_l2_regression(bench_split[0],
                                       TrainConfig(**{**BENCH, "lr": 0.05}), bench_split[1])
    elapsed = time.perf_counter() - start
    ok = drf < report.mae and elapsed < 600
    criterion(7, "inhomogeneity benefit", ok,
              f"(forest MAE {drf:.3f} vs l2 baseline {report.mae:.3f}; {elapsed:.0f}s)")
    assert drf < report.mae
    assert elapsed < 600


@pytest.mark.slow
def test_c08_ensemble_direction(criterion, bench_split):
    k5, _ = _fit_mae(bench_split, n_trees=5, max_iterations=12000, lr_step=4000)
    k1, _ = _fit_mae(bench_split, n_trees=1, max_iterations=12000, lr_step=4000)
    criterion(8, "ensemble direction", k5 <= k1, f"(K=5 MAE {k5:.3f}, K=1 MAE {k1:.3f})")
    assert k5 <= k1


def test_c09_entropy_dynamics(criterion, bench_split):
    first_phase = BENCH["n_batches"]
    _, hot = _fit_mae(bench_split, max_iterations=first_phase)
    _, cold = _fit_mae(bench_split, max_iterations=first_phase, T0=0.0)
    h_hot, h_cold = hot.column("entropy"), cold.column("entropy")
    assert h_hot.size == h_cold.size == first_phase
    assert not hot.leaf_updates[:-1] and np.all(hot.column("T") == 1.0)
    gap = float(np.min(h_hot - h_cold))
    criterion(9, "entropy dynamics", gap >= -1e-6,
              f"(min H(T0=1) - H(T=0) over {first_phase} steps = {gap:.2e}, "
              f"final gap {h_hot[-1] - h_cold[-1]:.3f})")
    assert gap >= -1e-6
