"""Acceptance gate: one test per criterion, each printing a single
PASS/FAIL line with the measured quantities at the stated tolerances.

Criterion 4 uses an MNIST subset when FOGLEARN_MNIST_DIR points at the
four raw IDX files; otherwise it falls back to Gaussian blobs.
"""

import json
import math
import os
import subprocess
import sys
import time
from dataclasses import replace

import numpy as np

import instances
import oracles
from foglearn import analytics, learning, optimizer, simulator, topology
from foglearn.simulator import (
    DatasetConfig,
    LearningConfig,
    SimConfig,
    TopologyConfig,
    run,
    run_centralized,
)
from foglearn.topology import ChurnConfig, DegreeDistribution

BLOBS = DatasetConfig(kind="blobs", dim=32, classes=10,
                      train_size=6000, test_size=1000, spread=3.0)


def acc_cfg(**overrides):
    base = dict(
        n=10, horizon=100, tau=10, seed=0, dataset=BLOBS,
        learning=LearningConfig(arch="softmax", step_size=0.05),
    )
    base.update(overrides)
    return SimConfig(**base)


def report(capsys, num: int, ok: bool, details: str) -> None:
    with capsys.disabled():
        print(f"\nACCEPTANCE {num} {'PASS' if ok else 'FAIL'}: {details}")


def test_criterion_1_optimizer_matches_bruteforce(capsys):
    t0 = time.perf_counter()
    worst_gap = 0.0
    grid_ok = 0
    for seed in range(200):
        problem = instances.random_linear_instance(seed)
        _, ledger = optimizer.solve_linear(problem)
        grid = oracles.grid_best_total(problem)
        slack = oracles.grid_step_increment(problem)
        gap = grid - ledger.total
        if ledger.total <= grid + 1e-9 and gap <= slack + 1e-9:
            grid_ok += 1
        worst_gap = max(worst_gap, gap)

    worst_diff = 0.0
    greedy_ok = 0
    for seed in range(200):
        problem = instances.random_linear_instance(seed + 1000)
        plan_g = optimizer.greedy_unconstrained(problem)
        _, ledger_l = optimizer.solve_linear(problem)
        diff = abs(
            optimizer.CostLedger.from_plan(problem, plan_g).total
            - ledger_l.total
        )
        worst_diff = max(worst_diff, diff)
        if diff < 1e-6:
            greedy_ok += 1
    elapsed = time.perf_counter() - t0

    ok = grid_ok == 200 and greedy_ok == 200 and elapsed < 60.0
    report(capsys, 1, ok,
           f"grid {grid_ok}/200 within one 0.05-step increment "
           f"(worst gap {worst_gap:.4f}), greedy==linear {greedy_ok}/200 "
           f"(worst diff {worst_diff:.2e} < 1e-6), {elapsed:.1f}s < 60s")
    assert ok


def test_criterion_2_closed_forms_match_simulation(capsys):
    t0 = time.perf_counter()

    # two-level split vs a generic numerical minimizer
    params = dict(error_scale=2.0, leaf_cost=1.0, hub_cost=0.5,
                  transmit_cost=0.3, leaves=3, batch=4.0)
    split = analytics.hierarchical_optimum(**params)
    r_num, s_num = oracles.star_numeric_optimum(**params)
    star_diff = max(abs(split.discard - r_num), abs(split.offload - s_num))

    # queueing capacity vs a waiting-time simulation at the target
    cap = analytics.capacity_for_wait(analytics.QueueParams(1.0, 1.0))
    wait = oracles.lindley_mean_wait(1.0, cap, n_arrivals=1_000_000, seed=0)

    # offloading saving: exact at degree 1, Monte Carlo for a mixture
    k1 = analytics.offloading_savings(DegreeDistribution.point_mass(1), 2.4)
    dist_w = [0.3, 0.5, 0.2]
    exact = analytics.offloading_savings(DegreeDistribution(tuple(dist_w)))
    mc, se = oracles.mc_offload_saving(dist_w, trials=1_000_000, seed=1)

    # violation estimator vs a whole-network simulation
    d3 = DegreeDistribution.point_mass(3)
    est = analytics.expected_capacity_violations(
        d3, 2.0, 1.0, 60, trials=400_000, seed=4, neighbor_dist=d3
    )
    sim_mean, sim_se = oracles.violation_network_sim(
        3, 60, 2.0, 1.0, trials=3000, seed=5
    )
    v_gap = abs(est.expected - sim_mean)
    v_band = 3.0 * math.hypot(est.stderr, sim_se)
    elapsed = time.perf_counter() - t0

    ok = (
        star_diff < 1e-3
        and abs(wait - 1.0) <= 0.02
        and k1 == 2.4 / 6.0
        and abs(exact - mc) < 3.0 * se
        and v_gap < v_band
        and elapsed < 180.0
    )
    report(capsys, 2, ok,
           f"star diff {star_diff:.1e} < 1e-3, sim wait {wait:.4f} in "
           f"1+-0.02, k=1 saving exactly C/6, mixture |{exact:.5f}-{mc:.5f}| "
           f"< 3se={3*se:.5f}, violations gap {v_gap:.3f} < 3s={v_band:.3f}, "
           f"{elapsed:.1f}s < 180s")
    assert ok


def test_criterion_3_learning_correctness(capsys):
    archs = [
        ("softmax", learning.SoftmaxArch(6, 4)),
        ("mlp", learning.MlpArch(5, 8, 3)),
    ]
    worst = 0.0
    rng = np.random.default_rng(0)
    for name, arch in archs:
        for draw in range(20):
            X = rng.normal(0, 1, (12, arch.dim))
            y = rng.integers(0, arch.classes, 12)
            w = rng.normal(0, 0.5, arch.param_count)
            _, grad = arch.loss_and_grad(w, X, y)
            fd = oracles.fd_gradient(lambda v: arch.loss(v, X, y), w)
            rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-12)
            worst = max(worst, rel)
    grad_ok = worst < 1e-4

    # aggregation: convex combination, permutation invariance, weight scale
    agg_ok = True
    for trial in range(30):
        m = int(rng.integers(1, 6))
        ws = [rng.normal(0, 1, 7) for _ in range(m)]
        hs = rng.uniform(0.1, 5.0, m)
        out = learning.aggregate(list(zip(hs, ws)))
        direct = sum(h * w for h, w in zip(hs, ws)) / hs.sum()
        agg_ok &= np.allclose(out, direct, atol=1e-12)
        lo = np.min(ws, axis=0)
        hi = np.max(ws, axis=0)
        agg_ok &= bool((out >= lo - 1e-12).all() and (out <= hi + 1e-12).all())
        perm = rng.permutation(m)
        shuffled = learning.aggregate([(hs[k], ws[k]) for k in perm])
        agg_ok &= np.allclose(out, shuffled, atol=1e-12)
        scaled = learning.aggregate([(3.0 * h, w) for h, w in zip(hs, ws)])
        agg_ok &= np.allclose(out, scaled, atol=1e-12)

    ok = grad_ok and agg_ok
    report(capsys, 3, ok,
           f"gradient vs finite differences worst rel err {worst:.2e} < 1e-4 "
           f"(20 draws x 2 architectures), aggregation convex/permutation/"
           f"scale properties {'hold' if agg_ok else 'VIOLATED'}")
    assert ok


def mnist_dataset() -> tuple[DatasetConfig | None, str]:
    root = os.environ.get("FOGLEARN_MNIST_DIR")
    if not root:
        return None, "blobs fallback (FOGLEARN_MNIST_DIR unset)"
    files = {
        "train_images": "train-images-idx3-ubyte",
        "train_labels": "train-labels-idx1-ubyte",
        "test_images": "t10k-images-idx3-ubyte",
        "test_labels": "t10k-labels-idx1-ubyte",
    }
    paths = {k: os.path.join(root, v) for k, v in files.items()}
    missing = [p for p in paths.values() if not os.path.exists(p)]
    if missing:
        return None, f"blobs fallback (missing {missing[0]})"
    return (
        DatasetConfig(kind="idx", classes=10, train_size=6000, test_size=1000,
                      **paths),
        f"MNIST from {root}",
    )


def test_criterion_4_accuracy_bands(capsys):
    t0 = time.perf_counter()
    data, source = mnist_dataset()
    base = acc_cfg() if data is None else acc_cfg(dataset=data)

    central = run_centralized(base)
    federated = run(replace(base, optimizer="none"))
    aware = run(replace(base, optimizer="linear"))
    elapsed = time.perf_counter() - t0

    gap_fed = (federated.final_accuracy - aware.final_accuracy) * 100
    gap_cen_f = (central.final_accuracy - federated.final_accuracy) * 100
    gap_cen_a = (central.final_accuracy - aware.final_accuracy) * 100
    ok = (
        gap_fed <= 5.0
        and gap_cen_f <= 10.0
        and gap_cen_a <= 10.0
        and elapsed < 300.0
    )
    report(capsys, 4, ok,
           f"{source}: central {central.final_accuracy:.3f}, federated "
           f"{federated.final_accuracy:.3f}, network-aware "
           f"{aware.final_accuracy:.3f}; aware trails federated by "
           f"{gap_fed:+.1f}pt (<=5), both trail centralized by "
           f"{gap_cen_f:+.1f}/{gap_cen_a:+.1f}pt (<=10), {elapsed:.1f}s < 300s")
    assert ok


def test_criterion_5_movement_cuts_unit_cost(capsys):
    units_a, units_b = [], []
    for seed in range(5):
        units_a.append(run(acc_cfg(optimizer="none", seed=seed)).ledger.unit_cost)
        units_b.append(run(acc_cfg(optimizer="linear", seed=seed)).ledger.unit_cost)
    mean_a = float(np.mean(units_a))
    mean_b = float(np.mean(units_b))
    ratio = mean_b / mean_a
    ok = ratio <= 0.65
    report(capsys, 5, ok,
           f"unit cost with movement {mean_b:.4f} vs without {mean_a:.4f} "
           f"over 5 seeds: ratio {ratio:.3f} <= 0.65")
    assert ok


def test_criterion_6_trend_reproduction(capsys):
    seeds = range(5)

    # (a) unit cost vs network size, mean of 5 seeds, one small inversion ok
    sizes = (5, 10, 15, 20, 25)
    means = []
    for n in sizes:
        means.append(float(np.mean([
            run(acc_cfg(optimizer="linear", n=n, seed=s)).ledger.unit_cost
            for s in seeds
        ])))
    inversions = [
        (sizes[k], (means[k + 1] - means[k]) / means[k])
        for k in range(len(means) - 1)
        if means[k + 1] > means[k]
    ]
    a_ok = len(inversions) == 0 or (
        len(inversions) == 1 and inversions[0][1] <= 0.02
    )

    # (b) denser links move at least as much data
    move = {}
    for rho in (0.2, 1.0):
        move[rho] = float(np.mean([
            np.nanmean(run(acc_cfg(
                optimizer="linear", seed=s,
                topology=TopologyConfig(kind="random", rho=rho),
            )).movement_rate)
            for s in seeds
        ]))
    b_ok = move[1.0] >= move[0.2]

    # (c) rare aggregation may not beat frequent by more than a point
    diff_c = float(np.mean([
        run(acc_cfg(optimizer="linear", tau=20, seed=s)).final_accuracy
        - run(acc_cfg(optimizer="linear", tau=1, seed=s)).final_accuracy
        for s in seeds
    ])) * 100
    c_ok = diff_c <= 1.0

    # (d) exit-only churn costs at most 12 accuracy points
    drop_d = float(np.mean([
        run(acc_cfg(optimizer="linear", seed=s)).final_accuracy
        - run(acc_cfg(optimizer="linear", seed=s,
                      churn=ChurnConfig(0.05, 0.0))).final_accuracy
        for s in seeds
    ])) * 100
    d_ok = drop_d <= 12.0

    ok = a_ok and b_ok and c_ok and d_ok
    report(capsys, 6, ok,
           f"(a) unit cost n=5..25 {[f'{m:.3f}' for m in means]} "
           f"{len(inversions)} inversion(s) {'ok' if a_ok else 'BAD'}; "
           f"(b) movement rho=1 {move[1.0]:.3f} >= rho=0.2 {move[0.2]:.3f}; "
           f"(c) tau20-tau1 {diff_c:+.2f}pt <= 1; "
           f"(d) churn drop {drop_d:+.2f}pt <= 12")
    assert ok


def test_criterion_7_churn_bookkeeping(capsys):
    vals = [
        run(acc_cfg(optimizer="none", seed=s,
                    churn=ChurnConfig(0.01, 0.01))).mean_active_per_window
        for s in range(20)
    ]
    mean_active = float(np.mean(vals))
    band_ok = 7.0 <= mean_active <= 8.6

    # scripted 3-slot run: device 1 exits before the only aggregation, so
    # corrupting its datapoints cannot change the aggregated model
    cfg = SimConfig(
        n=2, horizon=3, tau=3, optimizer="none", seed=3,
        dataset=DatasetConfig(kind="blobs", dim=4, classes=3,
                              train_size=60, test_size=30, spread=3.0),
        learning=LearningConfig(arch="softmax", step_size=0.05),
    )
    train, test = simulator.build_dataset(cfg)
    base = topology.build_fully_connected(2, 3)
    active = (frozenset({0, 1}), frozenset({0, 1}), frozenset({0}))
    edges = tuple(
        frozenset((i, j) for (i, j) in base.edges[t]
                  if i in active[t] and j in active[t])
        for t in range(3)
    )
    state = replace(base, active=active, edges=edges)
    counts = np.array([[3, 2], [2, 2], [2, 0]])
    slots, cursor = [], 0
    for t in range(3):
        row = []
        for i in range(2):
            row.append(np.arange(cursor, cursor + counts[t, i]))
            cursor += counts[t, i]
        slots.append(row)
    problem = optimizer.linear_problem(
        simulator._working_state(state, simulator.working_mask(state, 3)),
        counts.astype(float),
    )
    plan = optimizer.identity_plan(problem)
    first = simulator.simulate_on(cfg, state, train, test, counts, slots, plan)
    touched = not np.isnan(first.batch_loss[0, 1])

    corrupted = replace(train, features=train.features.copy())
    corrupted.features[np.concatenate([slots[0][1], slots[1][1]])] *= -5.0
    redo = simulator.simulate_on(cfg, state, corrupted, test, counts, slots, plan)
    excluded = np.array_equal(first.final_params, redo.final_params)

    control = replace(train, features=train.features.copy())
    control.features[slots[0][0]] *= -5.0
    changed = simulator.simulate_on(cfg, state, control, test, counts, slots, plan)
    sensitive = not np.array_equal(first.final_params, changed.final_params)

    ok = band_ok and touched and excluded and sensitive
    report(capsys, 7, ok,
           f"mean active per window {mean_active:.2f} in [7.0, 8.6] "
           f"(20 seeds); exiting device trained then was excluded bit-for-bit "
           f"({'yes' if touched and excluded and sensitive else 'NO'})")
    assert ok


def test_criterion_8_byte_identical_outputs(capsys, tmp_path):
    config = {
        "n": 3, "horizon": 8, "tau": 4, "optimizer": "linear", "seed": 13,
        "dataset": {"dim": 4, "classes": 3, "train_size": 200,
                    "test_size": 60, "spread": 3.0},
        "learning": {"step_size": 0.05},
    }
    cpath = tmp_path / "config.json"
    cpath.write_text(json.dumps(config))
    outs = []
    for name in ("first", "second"):
        out = tmp_path / name
        proc = subprocess.run(
            [sys.executable, "-m", "foglearn.cli", "simulate",
             "--config", str(cpath), "--out", str(out)],
            capture_output=True, text=True, timeout=300,
        )
        assert proc.returncode == 0, proc.stderr
        outs.append((out, proc.stdout))

    summary_same = (
        (outs[0][0] / "summary.json").read_bytes()
        == (outs[1][0] / "summary.json").read_bytes()
    )
    series_same = (
        (outs[0][0] / "timeseries.csv").read_bytes()
        == (outs[1][0] / "timeseries.csv").read_bytes()
    )
    stdout_same = outs[0][1] == outs[1][1]
    ok = summary_same and series_same and stdout_same
    report(capsys, 8, ok,
           f"repeated simulate: summary.json byte-identical "
           f"{'yes' if summary_same else 'NO'}, timeseries.csv "
           f"{'yes' if series_same else 'NO'}, stdout "
           f"{'yes' if stdout_same else 'NO'}")
    assert ok
