"""Independent oracles and the check suites behind ``otformation verify``.

The oracles here deliberately share no code with the solvers they audit:

* permutation enumeration for uniform square transport problems,
* basis (vertex) enumeration of the transportation polytope,
* atom expansion for rational weights -- split every point into unit atoms
  of mass ``1/D`` and enumerate permutations of the atoms,
* backward Riccati recursion for the single-agent linear-quadratic case,
* central finite differences for gradients, with plan-support changes
  flagged as degenerate.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import costs
from .dynamics import ControlSchedule, initial_states
from .ot import SinkhornWarning, build_cost_matrix, solve_assignment, solve_exact, solve_sinkhorn
from .scenarios import ScenarioSpec, paper_scenarios
from .shooting import GradientProbe, GradientReport, OptimizerOptions, check_gradient, optimize, relative_error


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    threshold: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  ({self.detail})" if self.detail else ""
        return f"[{status}] {self.name}: {self.measured:.3g} (limit {self.threshold:g}){extra}"


# ---------------------------------------------------------------------------
# transport oracles
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _permutations(n: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(n))), dtype=np.intp).reshape(-1, n)


def brute_force_assignment(C) -> float:
    """Minimum of ``sum_i C[i, p(i)]`` over all permutations ``p``."""
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    perms = _permutations(n)
    return float(C[np.arange(n), perms].sum(axis=1).min())


def atom_expansion_value(a_counts, b_counts, C) -> float:
    """Exact transport value for integer masses with equal totals ``D``.

    Rational weights scaled to a common denominator become integer counts;
    every point splits into that many atoms of mass ``1/D`` and the problem
    becomes a ``D x D`` assignment, solved here by enumeration.
    """
    a_counts = [int(k) for k in a_counts]
    b_counts = [int(k) for k in b_counts]
    D = sum(a_counts)
    if D != sum(b_counts):
        raise ValueError("atom counts must have equal totals")
    rows = np.repeat(np.arange(len(a_counts)), a_counts)
    cols = np.repeat(np.arange(len(b_counts)), b_counts)
    expanded = np.asarray(C, dtype=float)[np.ix_(rows, cols)]
    return brute_force_assignment(expanded) / D


def vertex_enumeration_value(a, b, C, limit: int = 20000) -> float | None:
    """Minimum cost over all basic feasible solutions of the transportation
    polytope, or ``None`` when there are more than ``limit`` candidate bases.
    """
    a = np.asarray(a, dtype=float) / np.sum(a)
    b = np.asarray(b, dtype=float) / np.sum(b)
    C = np.asarray(C, dtype=float)
    n, m = C.shape
    k = n + m - 1
    if math.comb(n * m, k) > limit:
        return None
    cells = [(i, j) for i in range(n) for j in range(m)]
    best = math.inf
    for subset in itertools.combinations(cells, k):
        flow = _tree_solution(a, b, subset, n, m)
        if flow is None:
            continue
        best = min(best, sum(flow[c] * C[c] for c in flow))
    return best


def _tree_solution(a, b, subset, n, m):
    # union-find: the subset must be a spanning tree of K_{n,m}
    root = list(range(n + m))

    def find(x):
        while root[x] != x:
            root[x] = root[root[x]]
            x = root[x]
        return x

    for i, j in subset:
        ri, rj = find(i), find(n + j)
        if ri == rj:
            return None
        root[ri] = rj
    # peel leaves until the tree is consumed
    supply = {i: a[i] for i in range(n)}
    supply.update({n + j: b[j] for j in range(m)})
    degree = {v: 0 for v in range(n + m)}
    for i, j in subset:
        degree[i] += 1
        degree[n + j] += 1
    flow = {}
    remaining = set(subset)
    while remaining:
        for v in range(n + m):
            if degree[v] == 1:
                break
        else:
            return None
        edge = next(c for c in remaining if c[0] == v or n + c[1] == v)
        q = supply[v]
        if q < -1e-12:
            return None
        flow[edge] = max(q, 0.0)
        other = n + edge[1] if edge[0] == v else edge[0]
        supply[other] -= q
        supply[v] = 0.0
        degree[v] -= 1
        degree[other] -= 1
        remaining.discard(edge)
    return flow


def random_rational_weights(rng, n: int, denom: int) -> list[int]:
    """Random composition of ``denom`` into ``n`` positive integer parts."""
    cuts = np.sort(rng.choice(np.arange(1, denom), size=n - 1, replace=False)) if n > 1 else np.array([], int)
    bounds = np.concatenate([[0], cuts, [denom]])
    return [int(x) for x in np.diff(bounds)]


def ot_instance(rng, index: int):
    """Instance ``index`` of the random exactness suite.

    Every third instance is a uniform square problem; the rest use rational
    weights with a common denominator of at most 8.
    """
    if index % 3 == 0:
        n = int(rng.integers(1, 7))
        x, y = rng.random((n, 2)), rng.random((n, 2))
        return np.ones(n), np.ones(n), build_cost_matrix(x, y), "uniform"
    n, m = (int(v) for v in rng.integers(1, 7, size=2))
    denom = int(rng.integers(max(n, m, 2), 9))
    a = random_rational_weights(rng, n, denom)
    b = random_rational_weights(rng, m, denom)
    x, y = rng.random((n, 2)), rng.random((m, 2))
    return np.array(a, float), np.array(b, float), build_cost_matrix(x, y), "rational"


def oracle_value(a, b, C, kind: str) -> tuple[float, str]:
    if kind == "uniform":
        return brute_force_assignment(C) / len(a), "permutations"
    v = vertex_enumeration_value(a, b, C)
    if v is not None:
        return v, "vertices"
    return atom_expansion_value(a, b, C), "atoms"


def ot_exactness(n_instances: int = 200, seed: int = 0, tol: float = 1e-9):
    """Largest relative value error and marginal error over random instances."""
    rng = np.random.default_rng(seed)
    worst_value = worst_marginal = 0.0
    methods: dict[str, int] = {}
    for k in range(n_instances):
        a, b, C, kind = ot_instance(rng, k)
        plan = solve_exact(a, b, C)
        ref, method = oracle_value(a, b, C, kind)
        methods[method] = methods.get(method, 0) + 1
        worst_value = max(worst_value, relative_error(plan.value, ref, floor=1e-300) if ref or plan.value else 0.0)
        an, bn = a / a.sum(), b / b.sum()
        worst_marginal = max(
            worst_marginal,
            np.abs(plan.coupling.sum(1) - an).max(),
            np.abs(plan.coupling.sum(0) - bn).max(),
            max(0.0, -plan.coupling.min()),
        )
    return worst_value, worst_marginal, methods


def sinkhorn_gap(n_instances: int = 50, seed: int = 1, size: int = 10, rel_eps: float = 1e-3):
    """Largest relative gap between Sinkhorn and exact values."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        x, y = rng.random((size, 2)), rng.random((size, 2))
        a, b = rng.random(size) + 0.1, rng.random(size) + 0.1
        C = build_cost_matrix(x, y)
        exact = solve_exact(a, b, C).value
        with warnings.catch_warnings():
            # a few slow instances stop at max_iter; their value is still checked
            warnings.simplefilter("ignore", SinkhornWarning)
            approx = solve_sinkhorn(a, b, C, rel_eps * C.mean(), max_iter=20000, tol=1e-9).value
        worst = max(worst, abs(approx - exact) / exact)
    return worst


def ot_suite(n_instances: int = 200, seed: int = 0) -> list[CheckResult]:
    value_err, marg_err, methods = ot_exactness(n_instances, seed)
    out = [
        CheckResult("exact value vs brute force", value_err <= 1e-9, value_err, 1e-9,
                    ", ".join(f"{k}={v}" for k, v in sorted(methods.items()))),
        CheckResult("exact marginal feasibility", marg_err <= 1e-9, marg_err, 1e-9),
    ]
    rng = np.random.default_rng(seed + 1)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 7))
        C = rng.random((n, n))
        worst = max(worst, abs(solve_assignment(C)[1] - brute_force_assignment(C)))
    out.append(CheckResult("assignment vs permutation enumeration", worst <= 1e-12, worst, 1e-12))
    sym = ident = 0.0
    for _ in range(20):
        n, m = (int(v) for v in rng.integers(2, 7, size=2))
        x, y = rng.random((n, 2)), rng.random((m, 2))
        a, b = rng.random(n) + 0.1, rng.random(m) + 0.1
        fwd = solve_exact(a, b, build_cost_matrix(x, y)).value
        bwd = solve_exact(b, a, build_cost_matrix(y, x)).value
        sym = max(sym, abs(fwd - bwd) / max(fwd, 1e-300))
        ident = max(ident, solve_exact(a, a, build_cost_matrix(x, x)).value)
    out.append(CheckResult("EMD symmetry", sym <= 1e-9, sym, 1e-9))
    out.append(CheckResult("EMD identity", ident <= 1e-12, ident, 1e-12))
    gap = sinkhorn_gap(n_instances=10)
    out.append(CheckResult("Sinkhorn vs exact (eps = 1e-3 mean C)", gap < 0.01, gap, 0.01))
    return out


# ---------------------------------------------------------------------------
# gradient suites
# ---------------------------------------------------------------------------

def _fd_report(fn, x, h=1e-6) -> GradientReport:
    """Central differences of ``fn(x) -> (value, grad, signature)`` on every
    coordinate of ``x``. A coordinate whose perturbation changes the
    signature (the support of an OT plan) is marked degenerate."""
    x = np.array(x, dtype=float)
    _, g, sig = fn(x)
    report = GradientReport()
    for idx in np.ndindex(x.shape):
        up, dn = x.copy(), x.copy()
        up[idx] += h
        dn[idx] -= h
        v_up, _, s_up = fn(up)
        v_dn, _, s_dn = fn(dn)
        num = (v_up - v_dn) / (2 * h)
        report.probes.append(GradientProbe(
            tuple(int(i) for i in idx), float(g[idx]), float(num), relative_error(g[idx], num),
            degenerate=(s_up != sig or s_dn != sig),
        ))
    return report


def term_gradient_reports(seed: int = 0, n_agents: int = 12) -> dict[str, GradientReport]:
    """Analytic vs central-difference gradients of every individual cost
    term at a random configuration, probing all ``2 * n_agents`` (or more)
    coordinates."""
    rng = np.random.default_rng(seed)
    ref = costs.DiscreteMeasure(rng.random((5, 2)) * 2, rng.random(5) + 0.2)
    x = rng.random((n_agents, 2)) * 2
    v = rng.normal(size=(n_agents, 2))
    reports = {}

    def shape_fn(spec):
        def fn(p):
            value, grad, plan = costs.shape_cost(p, spec)
            return value, grad, plan.support.tobytes()
        return fn

    def smooth_fn(term):
        def fn(p):
            value, grad = term(initial_states(p))
            return value, grad, None
        return fn

    reports["shape_terminal"] = _fd_report(shape_fn(costs.ShapeCostSpec(ref)), x)
    reports["shape_running"] = _fd_report(shape_fn(costs.ShapeCostSpec(ref, mode="running", centered=True)), x)
    reports["congestion"] = _fd_report(smooth_fn(lambda s: costs.congestion_penalty(s, 0.5)), x)
    obstacles = [costs.ObstacleSpec((1.0, 1.0), 0.3, 2.0, 3.0)]
    reports["obstacle"] = _fd_report(smooth_fn(lambda s: costs.obstacle_penalty(s, obstacles)), x)
    reports["mean_destination"] = _fd_report(smooth_fn(lambda s: costs.mean_destination_cost(s, (2.0, 0.0))), x)

    def velocity_fn(vel):
        value, grad = costs.terminal_velocity_cost(initial_states(x, vel))
        return value, grad, None

    reports["terminal_velocity"] = _fd_report(velocity_fn, v)

    def effort_fn(u):
        value, grad = costs.control_effort(ControlSchedule(u, 0.1))
        return value, grad, None

    reports["control_effort"] = _fd_report(effort_fn, rng.normal(size=(n_agents, 3, 2)))
    return reports


def term_gradient_errors(seed: int = 0, n_agents: int = 12) -> dict[str, float]:
    return {k: r.max_rel_error for k, r in term_gradient_reports(seed, n_agents).items()}


def random_schedule(scenario: ScenarioSpec, seed: int = 0, scale: float = 1.0) -> ControlSchedule:
    rng = np.random.default_rng(seed)
    return ControlSchedule(scale * rng.normal(size=(scenario.n_agents, scenario.steps, 2)), scenario.dt)


def scenario_gradient_reports(n_probes: int = 20, seed: int = 0, scenarios=None):
    """Finite-difference reports for ``cost_and_gradient`` on each scenario,
    at a random schedule (plus extra probes to replace degenerate ones)."""
    scenarios = scenarios or paper_scenarios()
    reports = {}
    for name, sc in scenarios.items():
        sched = random_schedule(sc, seed)
        reports[name] = check_gradient(sc, sched, n_probes=n_probes, fd_step=1e-6, seed=seed,
                                       replace_degenerate=True)
    return reports


def _gradient_ok(rep: GradientReport, need: int = 20) -> bool:
    return rep.max_rel_error < 1e-5 and rep.skip_rate < 0.1 and len(rep.checked) >= need


def gradient_suite(seed: int = 0) -> list[CheckResult]:
    out = []
    for name, rep in term_gradient_reports(seed).items():
        out.append(CheckResult(
            f"term gradient: {name}", _gradient_ok(rep), rep.max_rel_error, 1e-5,
            f"{len(rep.checked)} probes, {len(rep.skipped)} degenerate skipped",
        ))
    for name, rep in scenario_gradient_reports(seed=seed).items():
        out.append(CheckResult(
            f"cost_and_gradient: {name}", _gradient_ok(rep), rep.max_rel_error, 1e-5,
            f"{len(rep.checked)} probes, {len(rep.skipped)} degenerate skipped",
        ))
    return out


# ---------------------------------------------------------------------------
# LQR oracle
# ---------------------------------------------------------------------------

def lqr_scenario(dt: float, steps: int, start=(0.0, 0.0), target=(1.0, 0.5), weight: float = 10.0) -> ScenarioSpec:
    """One agent, control effort plus ``weight/2 |p_S - target|^2``."""
    horizon = dt * steps
    alpha = 1.0 / (dt * (1.0 + weight * horizon**3 / 3.0))
    return ScenarioSpec(
        name="lqr",
        initial=[list(start)],
        horizon=horizon,
        steps=steps,
        costs=[
            {"type": "control_effort", "weight": 1.0},
            {"type": "mean_destination", "weight": weight, "target": list(target)},
        ],
        optimizer=OptimizerOptions(alpha=alpha, max_iters=5000, tol=1e-9),
    )


def riccati_controls(dt: float, steps: int, start, target, weight: float) -> np.ndarray:
    """Optimal open-loop controls from the discrete Riccati recursion.

    Works in error coordinates ``e = x - (target, 0, 0)``, which the Euler
    double integrator leaves invariant when ``u = 0``.
    """
    Ad = np.eye(4)
    Ad[0, 2] = Ad[1, 3] = dt
    Bd = np.zeros((4, 2))
    Bd[2, 0] = Bd[3, 1] = dt
    R = dt * np.eye(2)
    P = np.diag([weight, weight, 0.0, 0.0])
    gains = []
    for _ in range(steps):
        K = np.linalg.solve(R + Bd.T @ P @ Bd, Bd.T @ P @ Ad)
        P = Ad.T @ P @ (Ad - Bd @ K)
        gains.append(K)
    gains.reverse()
    e = np.array([start[0] - target[0], start[1] - target[1], 0.0, 0.0])
    u = np.zeros((steps, 2))
    for s, K in enumerate(gains):
        u[s] = -K @ e
        e = Ad @ e + Bd @ u[s]
    return u


def lqr_deviation(dt: float, steps: int, weight: float = 10.0) -> tuple[float, bool]:
    start, target = (0.0, 0.0), (1.0, 0.5)
    sc = lqr_scenario(dt, steps, start, target, weight)
    res = optimize(sc)
    ref = riccati_controls(dt, steps, start, target, weight)
    return float(np.abs(res.schedule.controls[0] - ref).max()), res.converged


def lqr_suite() -> list[CheckResult]:
    out = []
    for dt in (0.05, 0.02):
        for steps in (20, 50):
            dev, converged = lqr_deviation(dt, steps)
            out.append(CheckResult(
                f"LQR dt={dt} S={steps}", converged and dev < 1e-4, dev, 1e-4,
                "converged" if converged else "not converged",
            ))
    return out


SUITES = {"ot": ot_suite, "gradients": gradient_suite, "lqr": lqr_suite}


def run_suite(name: str) -> list[CheckResult]:
    if name == "all":
        return [r for key in ("ot", "gradients", "lqr") for r in SUITES[key]()]
    return SUITES[name]()

