"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line with its measured values; the lines are
printed in the terminal summary (see ``conftest.py``) and also echoed
immediately with ``-s``.
"""
import time

import numpy as np
import pytest

from cloudrain.canonical import canonical_agreement, canonicalize
from cloudrain.data import synthetic_split
from cloudrain.evaluation import AXIS_TRANSFORMS, confusion, invariance_report, macc, miou
from cloudrain.gadgets import (compile_approximator, eval_polynomial, quadratic_multiplier,
                               reference_basis, relu_multiplier)
from cloudrain.linalg import householder
from cloudrain.model import SegModel, TrainConfig, train
from cloudrain.neurons import grad_check, init_conventional, init_quadratic

from conftest import random_cloud

SEED = 0
EPOCHS = 30
N_TRAIN, N_TEST = 48, 16


@pytest.fixture(scope="session")
def rooms():
    return synthetic_split(N_TRAIN, N_TEST, seed=SEED, n_points=512)


def _fit(rooms, kinds, canonicalize=False, aug_reflect=False):
    start = time.perf_counter()
    model = SegModel(kinds=kinds, canonicalize=canonicalize, seed=SEED)
    train(model, rooms[0], TrainConfig(epochs=EPOCHS, seed=SEED, aug_reflect=aug_reflect))
    return model, time.perf_counter() - start


@pytest.fixture(scope="session")
def strict_model(rooms):
    return _fit(rooms, "quadratic-strict")


@pytest.fixture(scope="session")
def canonical_model(rooms):
    return _fit(rooms, "quadratic-strict", canonicalize=True)


@pytest.fixture(scope="session")
def canonical_report(canonical_model, rooms):
    start = time.perf_counter()
    rep = invariance_report(canonical_model[0], rooms[1], transforms=("plane",), n_trials=5,
                            seed=SEED)
    return rep, time.perf_counter() - start


def test_c01_axis_flip_invariance(strict_model, rooms, acceptance):
    model, t_train = strict_model
    start = time.perf_counter()
    rep = invariance_report(model, rooms[1], transforms=AXIS_TRANSFORMS)
    runtime = t_train + time.perf_counter() - start
    drops = max(max(abs(r.dmacc_abs), abs(r.dmiou_abs)) for r in rep.rows)
    logit = max(r.max_logit_diff for r in rep.rows)
    ok = drops == 0.0 and logit <= 1e-8 and runtime <= 300
    acceptance(1, ok, f"max |dmAcc|,|dmIOU| = {drops:g} pp (need 0), max logit diff {logit:.2e} "
                      f"(<= 1e-8), base mAcc {rep.rows[0].macc_base:.3f}, {runtime:.0f}s (<= 300s)")
    assert ok


def test_c02_plane_invariance_with_canonicalization(canonical_model, canonical_report, rooms,
                                                   acceptance):
    rep, t_eval = canonical_report
    runtime = canonical_model[1] + t_eval
    drops = max(max(abs(r.dmacc_abs), abs(r.dmiou_abs)) for r in rep.rows)
    logit = max(r.max_logit_diff for r in rep.rows)
    frac = rep.n_degenerate / len(rooms[1])
    ok = len(rep.rows) == 5 and drops == 0.0 and frac <= 0.01 and runtime <= 300
    acceptance(2, ok, f"5 plane trials: max |drop| = {drops:g} pp (need 0), logit diff {logit:.2e}, "
                      f"degenerate {rep.n_degenerate}/{len(rooms[1])} (<= 1%), {runtime:.0f}s (<= 300s)")
    assert ok


def test_c03_conventional_baseline_is_fragile(rooms, acceptance):
    model, t_train = _fit(rooms, "conventional")
    rep = invariance_report(model, rooms[1], transforms=("z",))
    drop = rep.rows[0].dmacc_abs
    ok = drop >= 5.0 and t_train <= 300
    acceptance(3, ok, f"z-flip dmAcc = {drop:.2f} pp (>= 5), base mAcc {rep.rows[0].macc_base:.3f}, "
                      f"{t_train:.0f}s (<= 300s)")
    assert ok


def test_c04_augmentation_is_not_invariance(rooms, canonical_report, acceptance):
    model, t_train = _fit(rooms, "conventional", aug_reflect=True)
    start = time.perf_counter()
    rep = invariance_report(model, rooms[1], transforms=("plane",), n_trials=5, seed=SEED)
    runtime = t_train + time.perf_counter() - start
    aug = rep.summary()["plane"]
    ours = canonical_report[0].summary()["plane"]
    ok = (aug["dmacc_abs"] > 0 and aug["dmiou_abs"] > 0
          and ours["dmacc_abs"] == 0.0 and ours["dmiou_abs"] == 0.0 and runtime <= 600)
    acceptance(4, ok, f"augmented mean dmAcc {aug['dmacc_abs']:.2f} / dmIOU {aug['dmiou_abs']:.2f} pp "
                      f"(> 0) vs invariant {ours['dmacc_abs']:g} / {ours['dmiou_abs']:g} (== 0), "
                      f"{runtime:.0f}s (<= 600s)")
    assert ok


def test_c05_exact_quadratic_multiplier(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(SEED)
    net = quadratic_multiplier()
    xy = rng.uniform(-10, 10, (10_000, 2))
    err = float(np.abs(net(xy[:, 0], xy[:, 1]) - xy[:, 0] * xy[:, 1]).max())
    runtime = time.perf_counter() - start
    ok = err <= 1e-12 and net.units == 2 and net.param_count == 4 and runtime <= 1
    acceptance(5, ok, f"max error {err:.1e} (<= 1e-12), {net.units} neurons, {net.param_count} "
                      f"params, {runtime:.3f}s (<= 1s)")
    assert ok


def test_c06_relu_multiplier_bound_and_scaling(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(SEED)
    eps_values = (1e-1, 1e-2, 1e-3, 1e-4)
    errs, units = [], []
    for eps in eps_values:
        net = relu_multiplier(1.0, eps)
        xy = rng.uniform(-1, 1, (100_000, 2))
        errs.append(float(np.abs(net(xy[:, 0], xy[:, 1]) - xy[:, 0] * xy[:, 1]).max()))
        units.append(net.units)
    t = np.log(1 / np.array(eps_values))
    fit = np.polyval(np.polyfit(t, units, 1), t)
    r2 = 1 - np.sum((units - fit) ** 2) / np.sum((units - np.mean(units)) ** 2)
    runtime = time.perf_counter() - start
    within = all(e <= eps for e, eps in zip(errs, eps_values))
    ok = within and r2 >= 0.9 and runtime <= 30
    acceptance(6, ok, f"sup errors {[f'{e:.1e}' for e in errs]} vs eps {list(eps_values)}, units "
                      f"{units}, R^2 = {r2:.3f} (>= 0.9), {runtime:.1f}s (<= 30s)")
    assert ok


def test_c07_parameter_comparison(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(SEED)
    terms = reference_basis()
    N, d = terms[0].shape
    L = len(terms)
    limit = 4 * N * d * L
    X = rng.uniform(-1, 1, (10_000, N, d))
    oracle = eval_polynomial(X, terms)
    quad = compile_approximator(terms, "quadratic")
    q_err = float(np.abs(quad(X) - oracle).max())
    conv_counts, conv_ok = [], True
    for delta in (1e-1, 1e-2, 1e-3):
        conv = compile_approximator(terms, "conventional", delta=delta)
        conv_counts.append(conv.param_count)
        conv_ok &= float(np.abs(conv(X) - oracle).max()) <= delta
    runtime = time.perf_counter() - start
    monotone = all(a < b for a, b in zip(conv_counts, conv_counts[1:]))
    ok = (quad.param_count <= limit and min(conv_counts) > limit and monotone
          and q_err <= 1e-10 and conv_ok and runtime <= 30)
    acceptance(7, ok, f"quadratic {quad.param_count} params (<= 4NdL = {limit}), error {q_err:.1e}; "
                      f"conventional {conv_counts} (> {limit}, increasing), within delta: {conv_ok}, "
                      f"{runtime:.1f}s (<= 30s)")
    assert ok


def test_c08_gradient_correctness(acceptance):
    start = time.perf_counter()
    layers = {
        "conventional": init_conventional(6, 5, SEED),
        "quadratic": init_quadratic(6, 5, SEED),
        "quadratic-strict": init_quadratic(6, 5, SEED, strict=True),
    }
    reports = {k: grad_check(l, n_trials=100, h=1e-5, tolerance=1e-6, seed=SEED)
               for k, l in layers.items()}
    runtime = time.perf_counter() - start
    worst = max(r.max_rel_error for r in reports.values())
    ok = all(r.passed for r in reports.values()) and runtime <= 5
    acceptance(8, ok, f"max relative error {worst:.1e} over 100 trials per layer kind (<= 1e-6), "
                      f"{runtime:.2f}s (<= 5s)")
    assert ok


def test_c09_canonical_agreement(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(SEED)
    worst, done, skipped = 0.0, 0, 0
    while done < 1000:
        pts = random_cloud(rng, n=int(rng.integers(8, 200)),
                           spread=rng.uniform(0.2, 5.0, 3))
        a = canonicalize(pts)
        if a.degenerate:
            skipped += 1
            continue
        F = householder(rng.normal(size=3))
        b = canonicalize(pts @ F.T + rng.normal(size=3))
        worst = max(worst, canonical_agreement(a, b)[1])
        done += 1
    runtime = time.perf_counter() - start
    ok = worst <= 1e-8 and runtime <= 10
    acceptance(9, ok, f"max residual {worst:.1e} over 1000 clouds (<= 1e-8), {skipped} degenerate "
                      f"skipped, {runtime:.1f}s (<= 10s)")
    assert ok


def test_c10_metric_oracles(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(SEED)
    mismatches = 0
    for _ in range(100):
        C, n = int(rng.integers(2, 7)), int(rng.integers(1, 60))
        y, p = rng.integers(0, C, n), rng.integers(0, C, n)
        cm = confusion(p, y, C)
        accs, ious = [], []
        for c in range(C):
            tp = sum(1 for a, b in zip(y, p) if a == c and b == c)
            t = sum(1 for a in y if a == c)
            u = sum(1 for a, b in zip(y, p) if a == c or b == c)
            if t:
                accs.append(tp / t)
            if u:
                ious.append(tp / u)
        mismatches += macc(cm) != np.mean(accs) or miou(cm) != np.mean(ious)
    runtime = time.perf_counter() - start
    ok = mismatches == 0 and runtime <= 1
    acceptance(10, ok, f"{mismatches} mismatches in 100 instances (need 0), {runtime:.3f}s (<= 1s)")
    assert ok
