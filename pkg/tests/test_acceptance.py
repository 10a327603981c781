"""One test per acceptance criterion; each prints a PASS/FAIL line with its numbers.

Two criteria are known to be unattainable as stated and are marked as strict
expected failures; they are still evaluated at the stated tolerances.
"""
import math
import time
from collections import defaultdict

import numpy as np
import pytest

from empire.experiments import BatteryConfig, build_example, run_trials
from empire.pe import bernstein_radius, exact_pe_complexity, holdout_size, v_statistic_cov
from empire.protocol import EpochBoundInputs, epoch_bound
from empire.qopt import exact_q_complexity, exact_q_diag, q_conservative_bound, q_diag_cov
from empire.sampling import RewardModel, make_rng, sample_dataset
from empire.solvers import vrql_guarantee
from empire.tabular import (
    bellman_opt_apply,
    bfun,
    diag_norm,
    resolvent,
    resolvent as exact_resolvent,
    solve_q_exact,
    solve_value_exact,
)

from conftest import random_mdp, random_mrp, report_criterion, two_state_closed_form

GRID = (0.90, 0.92, 0.95)
LAMBDAS = (1.0, 1.5)


def by_cell(records):
    cells = defaultdict(list)
    for r in records:
        cells[(r.gamma, r.lam)].append(r)
    return cells


def test_criterion_01_exact_solvers():
    start = time.perf_counter()
    mdp = build_example(0.9, 1.0)
    q = solve_q_exact(mdp)
    elapsed = time.perf_counter() - start
    _, _, _, q_closed = two_state_closed_form(0.9, 1.0)
    err = np.max(np.abs(q - q_closed))
    residual = np.max(np.abs(bellman_opt_apply(mdp, q) - q))
    ok = err < 1e-8 and abs(q[1, 0] - 9.0) < 1e-8 and abs(q[0, 0] - 9.75) < 1e-8 and residual < 1e-10 and elapsed < 1
    report_criterion(1, ok, f"max|Q-Q*|={err:.1e} residual={residual:.1e} time={elapsed:.3f}s")
    assert ok


@pytest.mark.xfail(
    strict=True,
    reason="target value 0.02006 leaves out the squared discount; the unbiased mean is g^2 times it (0.01625)",
)
def test_criterion_02_diag_covariance_oracle():
    start = time.perf_counter()
    mdp = build_example(0.9, 1.0)
    p, tau = (4 * 0.9 - 1) / 2.7, 0.9
    target = p * (1 - p) * ((1 - tau) / (1 - 0.9 * p)) ** 2
    q_star = solve_q_exact(mdp)
    mean = np.mean(
        [q_diag_cov(q_star, sample_dataset(mdp, RewardModel(), 2000, make_rng(2002, t)), 0.9).diag for t in range(200)],
        axis=0,
    )
    elapsed = time.perf_counter() - start
    rel = abs(mean[0] - target) / target
    others = float(np.max(mean[1:]))
    ok = rel <= 0.05 and others < 1e-3 and elapsed < 30
    report_criterion(
        2,
        ok,
        f"mean(x1,u1)={mean[0]:.5f} target={target:.5f} rel.err={rel:.3f} (tol 0.05) "
        f"others max={others:.1e} exact g^2 variance={exact_q_diag(mdp, RewardModel())[0]:.5f} time={elapsed:.1f}s",
    )
    assert ok


def test_criterion_03_conservative_bound_dominates():
    start = time.perf_counter()
    rng = np.random.default_rng(3003)
    violations, gaps = 0, []
    for _ in range(100):
        mdp = random_mdp(rng, 2, 2)
        rm = RewardModel.uniform(rng.uniform(0, 1))
        cons = q_conservative_bound(exact_q_diag(mdp, rm), mdp.discount)
        exact = exact_q_complexity(mdp, rm)
        violations += cons < exact
        gaps.append(cons - exact)
    elapsed = time.perf_counter() - start
    ok = violations == 0 and elapsed < 60
    report_criterion(3, ok, f"violations={violations}/100 min gap={min(gaps):.3e} time={elapsed:.1f}s")
    assert ok


def test_criterion_04_holdout_sandwich():
    start = time.perf_counter()
    g, delta = 0.9, 0.1
    mrp = build_example(g, 1.0, "mrp")
    v_star = solve_value_exact(mrp)
    h = holdout_size(2, delta, g)
    r = exact_resolvent(mrp.transition, g)
    rng = np.random.default_rng(4004)
    held = {"data": 0, "random": 0}
    for t in range(400):
        z1 = sample_dataset(mrp, RewardModel(), h, make_rng(4004, 2 * t)).mean_transitions()[0]
        z2 = sample_dataset(mrp, RewardModel(), h, make_rng(4004, 2 * t + 1)).mean_transitions()[0]
        r1, r2 = resolvent(z1, g), resolvent(z2, g)
        main = sample_dataset(mrp, RewardModel.uniform(0.5), 2000, make_rng(4005, t))
        a = rng.normal(size=(2, 2))
        for name, m in (("data", v_statistic_cov(v_star, main, g).matrix), ("random", a @ a.T)):
            held[name] += diag_norm(r1 @ m @ r2.T) <= 3 * diag_norm(r @ m @ r.T)
    elapsed = time.perf_counter() - start
    ok = min(held.values()) >= (1 - delta) * 400 and elapsed < 120
    report_criterion(
        4, ok, f"h={h} held: V-statistic M {held['data']}/400, random PSD M {held['random']}/400 (need >= 360) time={elapsed:.1f}s"
    )
    assert ok


def test_criterion_05_empirical_bernstein():
    start = time.perf_counter()
    n, delta, runs = 50, 0.05, 10_000
    z = make_rng(5005).random((runs, n))
    dev = np.abs(math.sqrt(1 / 12) - np.sqrt(z.var(axis=1, ddof=1)))
    frac = float(np.mean(dev <= bernstein_radius(n, delta)))
    elapsed = time.perf_counter() - start
    ok = frac >= 1 - 2 * delta and elapsed < 10
    report_criterion(5, ok, f"covered fraction={frac:.4f} (need >= {1 - 2 * delta}) radius={bernstein_radius(n, delta):.4f} time={elapsed:.2f}s")
    assert ok


def test_criterion_06_lipschitz_properties():
    rng = np.random.default_rng(6006)
    q_viol = v_viol = 0
    for t in range(1000):
        mdp = random_mdp(rng, int(rng.integers(2, 5)), int(rng.integers(1, 4)))
        rm = RewardModel.uniform(rng.uniform(0, 1))
        data = sample_dataset(mdp, rm, int(rng.integers(2, 200)), make_rng(6006, t))
        g = mdp.discount
        q1, q2 = rng.normal(scale=rng.uniform(0.1, 10), size=(2,) + mdp.reward.shape)
        lhs = math.sqrt(q_diag_cov(q1, data, g).max)
        rhs = math.sqrt(2) * math.sqrt(q_diag_cov(q2, data, g).max) + math.sqrt(8) * np.max(np.abs(q1 - q2))
        q_viol += lhs > rhs + 1e-10

        mrp = random_mrp(rng, int(rng.integers(2, 5)))
        pe_data = sample_dataset(mrp, rm, int(rng.integers(2, 200)), make_rng(6007, t))
        res = resolvent(mrp.transition, mrp.discount)
        v1, v2 = rng.normal(scale=rng.uniform(0.1, 10), size=(2, mrp.num_states))

        def weighted(v):
            return math.sqrt(diag_norm(res @ v_statistic_cov(v, pe_data, mrp.discount).matrix @ res.T))

        bound = math.sqrt(2) * weighted(v2) + math.sqrt(8) / (1 - mrp.discount) * np.max(np.abs(v1 - v2))
        v_viol += weighted(v1) > bound + 1e-10
    ok = q_viol == 0 and v_viol == 0
    report_criterion(6, ok, f"violations: Q-diagonal {q_viol}/1000, resolvent-weighted {v_viol}/1000")
    assert ok


def test_criterion_07_policy_evaluation_coverage(pe_battery):
    config, records = pe_battery
    lines, ok = [], True
    for (g, lam), recs in sorted(by_cell(records).items()):
        cover = np.mean([r.true_error <= r.predicted_error for r in recs])
        below = np.mean([r.terminated and r.predicted_error <= config.eps for r in recs])
        ok &= cover >= 0.9 and below == 1.0 and len(recs) == 200
        lines.append(f"g={g} l={lam}: covered {cover:.3f} pred<=eps {below:.2f}")
    report_criterion(7, ok, "; ".join(lines))
    assert ok


def test_criterion_08_q_coverage(q_battery):
    config, records = q_battery
    lines, ok = [], True
    for (g, lam), recs in sorted(by_cell(records).items()):
        cover = np.mean([r.true_error <= r.predicted_error for r in recs])
        ok &= cover >= 0.9 and len(recs) == 200
        lines.append(f"g={g} l={lam}: covered {cover:.3f}")
    report_criterion(8, ok, "; ".join(lines))
    assert ok


@pytest.mark.xfail(
    strict=True,
    reason="at eps=0.1 every run stops in its first epoch, so the sample count is the same for both hardness "
    "values and exceeds 1/(eps^2 (1-g)^3)",
)
def test_criterion_09_factor_savings_ordering(pe_battery):
    config, records = pe_battery
    first_100 = [r for r in records if r.trial_id % config.trials < 100]
    cells = by_cell(first_100)
    lines, ok = [], True
    for g in GRID:
        means = [np.mean([r.factor_savings for r in cells[(g, lam)]]) for lam in LAMBDAS]
        increasing = all(b > a for a, b in zip(means, means[1:]))
        ok &= increasing and min(means) > 1
        lines.append(f"g={g}: savings " + " vs ".join(f"{m:.4f}" for m in means) + f" ({'strict' if increasing else 'not strict'})")
    report_criterion(9, ok, "; ".join(lines))
    assert ok


def test_criterion_10_epoch_bound(pe_battery):
    config, records = pe_battery
    excess = []
    bounds = {}
    for (g, lam), recs in sorted(by_cell(records).items()):
        mrp = build_example(g, lam, "mrp")
        guar = vrql_guarantee(2, g)
        inputs = EpochBoundInputs(
            complexity=exact_pe_complexity(mrp, RewardModel()) ** 2,
            b_star=bfun(solve_value_exact(mrp), 0.0, g),
            eps=config.eps,
            delta0=config.delta / 3,
            discount=g,
            c0=guar.phi_slow(0.5) / guar.phi_fast(0.5) ** 2,
            num_states=2,
        )
        bounds[(g, lam)] = epoch_bound(inputs)
        excess += [r.epochs - bounds[(g, lam)] for r in recs if r.terminated]
    constant = max(0, math.ceil(max(excess)))
    held = np.mean([e <= constant for e in excess])
    ok = held == 1.0 and constant <= 3
    detail = ", ".join(f"g={g} l={lam}: {b:.2f}" for (g, lam), b in bounds.items())
    report_criterion(10, ok, f"calibration constant={constant}; epoch bound per cell {detail}; max observed epochs={max(r.epochs for r in records)}")
    assert ok


def test_criterion_11_determinism(tmp_path):
    config = BatteryConfig(mode="pe", gammas=GRID, lambdas=LAMBDAS, trials=2, seed=1111)
    run_trials(config, tmp_path / "first")
    run_trials(config, tmp_path / "second")
    same = all(
        (tmp_path / "first" / name).read_bytes() == (tmp_path / "second" / name).read_bytes()
        for name in ("trials.csv", "trace.csv")
    )
    report_criterion(11, same, f"trials.csv and trace.csv byte-identical across two runs: {same}")
    assert same
