import numpy as np
import pytest

from otformation.dynamics import ControlSchedule, rollout
from otformation.ot import InvalidInputError
from otformation.scenarios import ScenarioSpec, get_scenario
from otformation.shooting import (
    DivergenceError,
    OptimizerOptions,
    check_gradient,
    cost_and_gradient,
    initial_schedule,
    optimize,
    relative_error,
)
from otformation.verification import lqr_deviation, random_schedule, riccati_controls


def scenario(costs, initial=((0.0, 0.0),), steps=10, horizon=1.0, **opt):
    return ScenarioSpec(
        name="t", initial=[list(p) for p in initial], costs=costs, horizon=horizon, steps=steps,
        optimizer=OptimizerOptions(**opt) if opt else OptimizerOptions(),
    )


CONTROL_ONLY = [{"type": "control_effort", "weight": 1.0}]


def test_control_only_gradient_is_dt_u():
    sc = scenario(CONTROL_ONLY, initial=[(0, 0), (1, 1)], steps=7)
    u = np.random.default_rng(0).normal(size=(2, 7, 2))
    _, g = cost_and_gradient(ControlSchedule(u, sc.dt), sc)
    assert np.array_equal(g, sc.dt * u)
    rep = check_gradient(sc, ControlSchedule(u, sc.dt), n_probes=20, seed=1)
    assert rep.max_rel_error < 1e-9


def test_terminal_position_gradient_closed_form():
    # one agent, J = w/2 |p_S - p*|^2; under Euler u_s reaches p_S through
    # S - 1 - s position updates, each scaled by dt after a dt velocity kick
    S, T, w = 12, 1.2, 3.0
    target = np.array([0.7, -0.4])
    sc = scenario([{"type": "mean_destination", "target": target.tolist(), "weight": w}], steps=S, horizon=T)
    dt = sc.dt
    u = np.random.default_rng(2).normal(size=(1, S, 2))
    traj = rollout(sc.initial_states(), ControlSchedule(u, dt))
    r = traj.final[0, :2] - target
    expected = np.array([w * dt * dt * (S - 1 - s) * r for s in range(S)])
    _, g = cost_and_gradient(ControlSchedule(u, dt), sc)
    assert np.allclose(g[0], expected, rtol=1e-12, atol=1e-14)


def test_smooth_scenario_adjoint_exact():
    costs = [
        {"type": "control_effort", "weight": 1.0},
        {"type": "terminal_velocity", "weight": 5.0},
        {"type": "mean_destination", "target": [1.0, 2.0], "weight": 10.0},
        {"type": "congestion", "sigma": 0.3, "weight": 2.0},
        {"type": "obstacle", "obstacles": [{"center": [0.5, 0.2], "radius": 0.3, "strength": 3.0, "sharpness": 2.0}],
         "weight": 1.0},
    ]
    sc = scenario(costs, initial=[(0, 0), (0.2, 0.1), (-0.1, 0.3)], steps=15)
    for seed in range(3):
        rep = check_gradient(sc, random_schedule(sc, seed), n_probes=20, seed=seed)
        assert len(rep.checked) == 20
        assert rep.max_rel_error < 1e-7


def test_double_precision_probe_also_works():
    sc = scenario(CONTROL_ONLY + [{"type": "mean_destination", "target": [1.0, 0.0]}], steps=8)
    rep = check_gradient(sc, random_schedule(sc, 0), extended=False, seed=0)
    assert rep.max_rel_error < 1e-6


def test_flying_v_random_schedule():
    sc = get_scenario("running-flyv")
    rep = check_gradient(sc, random_schedule(sc, 4), n_probes=20, seed=4)
    assert rep.skip_rate < 0.1
    assert rep.max_rel_error < 1e-5


def test_corrupted_component_is_flagged():
    sc = get_scenario("running-flyv")
    sched = random_schedule(sc, 0)
    _, g = cost_and_gradient(sched, sc)
    coords = [(0, 3, 1), (4, 20, 0), (8, 40, 1)]
    bad = g.copy()
    bad[coords[1]] *= 2.0
    rep = check_gradient(sc, sched, gradient=bad, coords=coords)
    assert rep.offending == [coords[1]]
    assert not rep.ok


def test_degenerate_plan_is_skipped():
    # two agents equidistant from both reference points: either matching is optimal
    costs = [{"type": "shape_terminal", "reference": [[0.0, -1.0], [0.0, 1.0]], "weight": 1.0}]
    sc = scenario(costs, initial=[(-1.0, 0.0), (1.0, 0.0)], steps=4)
    sched = ControlSchedule.zeros(2, 4, sc.dt)
    rep = check_gradient(sc, sched, coords=[(0, 0, 1)])
    assert rep.probes[0].degenerate
    assert rep.skipped and not rep.checked


def test_relative_error():
    assert relative_error(1.0, 1.0) == 0.0
    assert relative_error(2.0, 1.0) == 0.5
    assert relative_error(0.0, 0.0) == 0.0


# -- optimizer --------------------------------------------------------------

def test_stationary_point_converges_immediately():
    sc = scenario(CONTROL_ONLY, initial=[(0, 0), (1, 0)])
    res = optimize(sc)
    assert res.converged
    assert res.iterations_run == 1
    assert np.array_equal(res.schedule.controls, np.zeros((2, 10, 2)))
    assert res.final_cost.total == 0.0


def test_lqr_matches_riccati():
    dev, converged = lqr_deviation(0.05, 20)
    assert converged
    assert dev < 1e-4


def test_riccati_oracle_drives_to_target_with_large_weight():
    # sanity of the oracle itself: a huge terminal weight should nearly hit the target
    u = riccati_controls(0.05, 20, (0.0, 0.0), (1.0, 0.5), 1e8)
    sc = scenario(CONTROL_ONLY, steps=20)
    p = rollout(sc.initial_states(), ControlSchedule(u[None], 0.05)).final[0, :2]
    assert np.allclose(p, [1.0, 0.5], atol=1e-5)


def test_prop_split_descends_monotonically():
    sc = get_scenario("prop-split").with_overrides({"optimizer.max_iters": 40})
    res = optimize(sc)
    totals = [bd.total for _, bd in res.cost_history]
    assert totals[-1] < totals[0]
    assert all(b <= a for a, b in zip(totals, totals[1:]))


def test_history_recording_stride():
    sc = get_scenario("terminal-circle").with_overrides({"optimizer.max_iters": 25, "optimizer.record_every": 10})
    res = optimize(sc)
    its = [it for it, _ in res.cost_history]
    assert its == [0, 10, 20, 25]
    assert not res.converged


def test_optimize_is_deterministic():
    sc = get_scenario("running-pincer").with_overrides({"optimizer.max_iters": 15})
    a, b = optimize(sc), optimize(sc)
    assert np.array_equal(a.trajectory.states, b.trajectory.states)
    assert [bd.total for _, bd in a.cost_history] == [bd.total for _, bd in b.cost_history]


def test_divergence_raises():
    sc = scenario(CONTROL_ONLY + [{"type": "mean_destination", "target": [1.0, 0.0], "weight": 1.0}],
                  alpha=1e9, safeguard=False, max_iters=50)
    with pytest.raises(DivergenceError, match="alpha"):
        optimize(sc)


def test_straight_line_warm_start_hits_target():
    target = [1.5, -0.5]
    sc = scenario([{"type": "mean_destination", "target": target}], initial=[(0, 0)], steps=20)
    sched = initial_schedule(sc, "straight_line_warm_start")
    final = rollout(sc.initial_states(), sched).final[0, :2]
    assert np.allclose(final, target, atol=1e-12)


def test_options_validation():
    with pytest.raises(InvalidInputError):
        OptimizerOptions(alpha=0.0)
    with pytest.raises(InvalidInputError):
        OptimizerOptions(tol=-1.0)
    with pytest.raises(InvalidInputError):
        OptimizerOptions(max_iters=0)
    with pytest.raises(InvalidInputError):
        OptimizerOptions(init="random")


def test_cost_and_gradient_shape_check():
    sc = scenario(CONTROL_ONLY)
    with pytest.raises(InvalidInputError):
        cost_and_gradient(ControlSchedule.zeros(1, 3, sc.dt), sc)


def test_degenerate_probes_are_replaced():
    costs = [{"type": "shape_terminal", "reference": [[0.0, -1.0], [0.0, 1.0]], "weight": 1.0}]
    sc = scenario(costs, initial=[(-1.0, 0.0), (1.0, 0.0)], steps=4)
    sched = ControlSchedule.zeros(2, 4, sc.dt)
    plain = check_gradient(sc, sched, n_probes=6, seed=3)
    topped = check_gradient(sc, sched, n_probes=6, seed=3, replace_degenerate=True)
    assert plain.skipped
    assert len(topped.checked) == 6
    assert topped.max_rel_error < 1e-9
