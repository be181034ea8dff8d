"""End-to-end acceptance checks. Each test records one PASS/FAIL line; the
lines are repeated in a summary section at the end of the pytest run."""

import time

import numpy as np
import pytest

from otformation.artifacts import read_trajectory_csv
from otformation.costs import ObstacleTerm, ShapeCostSpec, ShapeTerm, running_shape_cost
from otformation.dynamics import initial_states
from otformation.ot import DiscreteMeasure, emd
from otformation.scenarios import CATALOG_NAMES, get_scenario
from otformation.verification import gradient_suite, lqr_suite, ot_exactness, sinkhorn_gap


def final_positions(run):
    states, _ = read_trajectory_csv(run.trajectory)
    return states


def test_ot_exactness(record):
    t0 = time.perf_counter()
    value_err, marginal_err, methods = ot_exactness(200, seed=0)
    elapsed = time.perf_counter() - t0
    ok = value_err <= 1e-9 and marginal_err <= 1e-9 and elapsed < 10 and sum(methods.values()) == 200
    record("OT exactness (200 instances)", ok,
           f"value rel err {value_err:.2e}, marginal err {marginal_err:.2e}, "
           f"oracles {dict(sorted(methods.items()))}, {elapsed:.1f} s")
    assert ok


def test_sinkhorn_convergence(record):
    t0 = time.perf_counter()
    gap = sinkhorn_gap(50, seed=1, size=10, rel_eps=1e-3)
    elapsed = time.perf_counter() - t0
    ok = gap < 0.01 and elapsed < 30
    record("Sinkhorn within 1% of exact (50 instances, 10x10)", ok, f"max rel gap {gap:.2e}, {elapsed:.1f} s")
    assert ok


def test_gradient_fidelity(record):
    t0 = time.perf_counter()
    results = gradient_suite(seed=0)
    elapsed = time.perf_counter() - t0
    worst = max(r.measured for r in results)
    failed = [r.name for r in results if not r.passed]
    ok = not failed and elapsed < 60 and len(results) == 7 + len(CATALOG_NAMES)
    record("gradient fidelity (7 terms + 6 scenarios, >= 20 probes each)", ok,
           f"max rel err {worst:.2e}, {len(failed)} failing, {elapsed:.1f} s")
    assert ok, failed


def test_lqr_oracle(record):
    t0 = time.perf_counter()
    results = lqr_suite()
    elapsed = time.perf_counter() - t0
    worst = max(r.measured for r in results)
    ok = all(r.passed for r in results) and elapsed < 30
    record("LQR vs Riccati, (dt, S) in {0.05, 0.02} x {20, 50}", ok, f"max control deviation {worst:.2e}, {elapsed:.1f} s")
    assert ok


def test_proportional_split(record, catalog_runs):
    spec, run, elapsed = catalog_runs.get("prop-split")
    final = final_positions(run)[:, -1, :2]
    near_up = int((np.hypot(*(final - [2.0, 1.5]).T) <= 0.25).sum())
    near_dn = int((np.hypot(*(final - [2.0, -1.5]).T) <= 0.25).sum())
    ok = spec.n_agents == 20 and near_up == 8 and near_dn == 12 and run.summary["converged"] and elapsed < 300
    record("proportional split 8 / 12", ok,
           f"{near_up} agents near (2, 1.5), {near_dn} near (2, -1.5), converged={run.summary['converged']}, "
           f"{elapsed:.1f} s")
    assert ok


def test_terminal_circle(record, catalog_runs):
    spec, run, elapsed = catalog_runs.get("terminal-circle")
    states = final_positions(run)
    ref = next(t for t in spec.cost_terms() if isinstance(t, ShapeTerm)).spec.reference
    initial = emd(DiscreteMeasure.uniform(states[:, 0, :2]), ref)
    final = emd(DiscreteMeasure.uniform(states[:, -1, :2]), ref)
    ok = final < 1e-2 and final < 0.01 * initial and run.summary["converged"] and elapsed < 300
    record("circle-in-circle terminal EMD", ok,
           f"final EMD {final:.2e} (initial {initial:.3g}, ratio {final / initial:.1e}), {elapsed:.1f} s")
    assert ok


def min_pair_distance(states):
    pos = states[..., :2]
    d = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
    n = len(pos)
    d[np.arange(n), np.arange(n)] = np.inf
    return float(d.min())


def test_congestion_effect(record, catalog_runs):
    spec, run, t1 = catalog_runs.get("pincer-congestion")
    idx = spec.term_labels().index("congestion")
    _, run0, t0 = catalog_runs.get("pincer-congestion", {f"costs.{idx}.weight": 0.0})
    with_c = min_pair_distance(final_positions(run))
    without = min_pair_distance(final_positions(run0))
    ok = with_c >= 1.2 * without and run.summary["converged"] and t1 + t0 < 600
    record("congestion keeps agents apart", ok,
           f"min pair distance {with_c:.3g} with term vs {without:.3g} at weight 0 "
           f"(ratio {with_c / max(without, 1e-300):.3g}), {t1 + t0:.1f} s")
    assert ok


def obstacle_violations(states, obstacles):
    pos = states[..., :2].reshape(-1, 2)
    count, closest = 0, np.inf
    for ob in obstacles:
        d = np.hypot(*(pos - np.asarray(ob.center)).T) - ob.radius
        count += int((d < 0).sum())
        closest = min(closest, float(d.min()))
    return count, closest


def test_obstacle_avoidance(record, catalog_runs):
    spec, run, t1 = catalog_runs.get("flyv-obstacle")
    idx = next(k for k, t in enumerate(spec.cost_terms()) if isinstance(t, ObstacleTerm))
    _, run0, t0 = catalog_runs.get("flyv-obstacle", {f"costs.{idx}.weight": 0.0})
    obstacles = spec.obstacles()
    v1, gap1 = obstacle_violations(final_positions(run), obstacles)
    v0, gap0 = obstacle_violations(final_positions(run0), obstacles)
    ok = v1 == 0 and v0 >= 1 and run.summary["converged"] and t1 + t0 < 600
    record("obstacle avoided only when penalized", ok,
           f"{v1} violations with term (clearance {gap1:.3g} m), {v0} at weight 0 "
           f"(deepest {gap0:.3g} m), {t1 + t0:.1f} s")
    assert ok


def test_determinism(record, catalog_runs):
    same, converged = [], []
    for name in CATALOG_NAMES:
        _, a, _ = catalog_runs.get(name, tag="a")
        _, b, _ = catalog_runs.get(name, tag="b")
        same.append(a.trajectory.read_bytes() == b.trajectory.read_bytes())
        converged.append(a.summary["converged"])
    ok = all(same)
    record("byte-identical trajectory CSVs on rerun", ok, f"{sum(same)}/{len(same)} scenarios identical")
    record("every catalog scenario converges at shipped defaults", all(converged),
           f"{sum(converged)}/{len(converged)} converged")
    assert ok and all(converged)


def test_translation_invariance(record):
    rng = np.random.default_rng(0)
    worst = 0.0
    specs = [t.spec for name in CATALOG_NAMES for t in get_scenario(name).cost_terms()
             if isinstance(t, ShapeTerm) and t.spec.mode == "running"]
    for _ in range(50):
        n, m = (int(v) for v in rng.integers(1, 10, size=2))
        specs_here = specs + [ShapeCostSpec(DiscreteMeasure(rng.normal(size=(m, 2)), rng.random(m) + 0.1),
                                            mode="running", centered=True)]
        for spec in specs_here:
            nn = n if spec.agent_weights is None else len(spec.agent_weights)
            x = rng.normal(size=(nn, 2))
            shift = rng.normal(size=2) * 100
            v1, _ = running_shape_cost(initial_states(x), spec)
            v2, _ = running_shape_cost(initial_states(x + shift), spec)
            worst = max(worst, abs(v1 - v2) / max(1.0, abs(v1)))
    ok = worst <= 1e-12
    record("running shape cost translation invariant", ok, f"max change {worst:.2e} under shifts of size ~100")
    assert ok
