"""Direct shooting: roll out, differentiate by a backward sweep, descend.

For Euler-discretised linear dynamics ``x_{s+1} = Ad x_s + Bd u_s`` the
adjoint recursion is

    lam_S = dJ/dx_S
    lam_s = dJ/dx_s (explicit) + Ad^T lam_{s+1}
    dJ/du_s = dJ/du_s (explicit) + Bd^T lam_{s+1}

OT plans are re-solved on the current rollout and held fixed while the
gradient is formed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .costs import (
    CongestionTerm,
    ControlEffortTerm,
    CostBreakdown,
    MeanDestinationTerm,
    ObstacleTerm,
    ShapeTerm,
    TerminalVelocityTerm,
    _agent_weights,
    evaluate,
)
from .dynamics import DEFAULT_DYNAMICS, ControlSchedule, Trajectory, rollout
from .ot import InvalidInputError, solve_exact

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e12


class DivergenceError(RuntimeError):
    pass


@dataclass
class OptimizerOptions:
    alpha: float = 1.0
    max_iters: int = 1000
    tol: float = 1e-6
    init: str = "zeros"
    record_every: int = 1
    safeguard: bool = True
    max_halvings: int = 20

    def __post_init__(self):
        if not self.alpha > 0:
            raise InvalidInputError("alpha must be positive")
        if not self.tol > 0:
            raise InvalidInputError("tol must be positive")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise InvalidInputError("max_iters must be an integer >= 1")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise InvalidInputError("record_every must be an integer >= 1")
        if self.init not in ("zeros", "straight_line_warm_start"):
            raise InvalidInputError(f"unknown init {self.init!r}")


@dataclass
class OptimizationResult:
    schedule: ControlSchedule
    trajectory: Trajectory
    cost_history: list[tuple[int, CostBreakdown]]
    iterations_run: int
    converged: bool
    final_grad_norm: float
    stalled: bool = False

    @property
    def final_cost(self) -> CostBreakdown:
        return self.cost_history[-1][1]


def _adjoint(ev, dynamics, dt):
    Ad, Bd = dynamics.jacobians(dt)
    S = ev.control_grad.shape[1]
    grad = np.empty_like(ev.control_grad)
    lam = ev.state_grad[:, S].copy()
    for s in range(S - 1, -1, -1):
        grad[:, s] = ev.control_grad[:, s] + lam @ Bd
        lam = ev.state_grad[:, s] + lam @ Ad
    return grad


def _evaluate(schedule: ControlSchedule, scenario, need_grad=True, warm_cache=None):
    traj = rollout(scenario.initial_states(), schedule, scenario.dynamics)
    ev = evaluate(traj, schedule, scenario.cost_terms(), need_grad=need_grad, warm_cache=warm_cache)
    grad = _adjoint(ev, scenario.dynamics, schedule.dt) if need_grad else None
    return traj, ev, grad


def cost_and_gradient(schedule: ControlSchedule, scenario):
    """Total cost breakdown and ``dJ/du`` with shape ``(N, S, 2)``."""
    if schedule.controls.shape[:2] != (scenario.n_agents, scenario.steps):
        raise InvalidInputError(
            f"schedule shape {schedule.controls.shape[:2]} does not match scenario "
            f"({scenario.n_agents}, {scenario.steps})"
        )
    _, ev, grad = _evaluate(schedule, scenario)
    return ev.breakdown, grad


def initial_schedule(scenario, init: str = "zeros") -> ControlSchedule:
    n, S, dt = scenario.n_agents, scenario.steps, scenario.dt
    schedule = ControlSchedule.zeros(n, S, dt)
    if init == "straight_line_warm_start":
        target = scenario.warm_start_target()
        if target is not None and S >= 2:
            # Euler: p_S = p_0 + dt^2 * a * S (S - 1) / 2 under constant a
            accel = (np.asarray(target) - scenario.initial_states()[:, :2]) / (dt * dt * S * (S - 1) / 2)
            schedule.controls[:] = accel[:, None, :]
    elif init != "zeros":
        raise InvalidInputError(f"unknown init {init!r}")
    return schedule


def optimize(scenario, options: OptimizerOptions | None = None, schedule: ControlSchedule | None = None) -> OptimizationResult:
    """Gradient descent ``u <- u - alpha * dJ/du`` on the shooting objective.

    Stops when ``alpha * max|dJ/du| < tol`` or after ``max_iters``. With the
    safeguard on, a step that raises the cost is halved (up to
    ``max_halvings`` times) so the recorded totals never increase.
    """
    opts = options or scenario.optimizer
    if schedule is None:
        schedule = initial_schedule(scenario, opts.init)
    u = schedule.controls.copy()
    dt = schedule.dt
    # OT bases from the previous iterate; local to this call so that
    # repeated runs are bit-identical
    warm: dict = {}

    traj, ev, grad = _evaluate(ControlSchedule(u, dt), scenario, warm_cache=warm)
    _check_divergence(ev.breakdown.total)
    history = [(0, ev.breakdown)]
    converged = stalled = False
    it = last_step = 0

    for it in range(1, opts.max_iters + 1):
        update = opts.alpha * grad
        if np.abs(update).max() < opts.tol:
            converged = True
            break

        step = 1.0
        for _ in range(opts.max_halvings + 1):
            trial = u - step * update
            t_traj, t_ev, t_grad = _evaluate(ControlSchedule(trial, dt), scenario, warm_cache=warm)
            t_total = t_ev.breakdown.total
            if not opts.safeguard or (np.isfinite(t_total) and t_total <= ev.breakdown.total):
                break
            step *= 0.5
        else:
            log.info("no decrease after %d halvings at iteration %d", opts.max_halvings, it)
            stalled = True
            break

        _check_divergence(t_total)
        u, traj, ev, grad = trial, t_traj, t_ev, t_grad
        last_step = it
        if it % opts.record_every == 0:
            history.append((it, ev.breakdown))

    if history[-1][1] is not ev.breakdown:
        history.append((last_step, ev.breakdown))
    return OptimizationResult(
        schedule=ControlSchedule(u, dt),
        trajectory=traj,
        cost_history=history,
        iterations_run=it,
        converged=converged,
        final_grad_norm=float(np.abs(grad).max()),
        stalled=stalled,
    )


def _check_divergence(total):
    if not np.isfinite(total) or total > DIVERGENCE_LIMIT:
        raise DivergenceError(f"cost diverged ({total:.3g}); try a smaller step size alpha")


# ---------------------------------------------------------------------------
# finite-difference verification
# ---------------------------------------------------------------------------

@dataclass
class GradientProbe:
    coord: tuple[int, int, int]
    analytic: float
    numeric: float
    rel_error: float
    degenerate: bool = False


@dataclass
class GradientReport:
    probes: list[GradientProbe] = field(default_factory=list)
    threshold: float = 1e-5

    @property
    def checked(self) -> list[GradientProbe]:
        return [p for p in self.probes if not p.degenerate]

    @property
    def skipped(self) -> list[GradientProbe]:
        return [p for p in self.probes if p.degenerate]

    @property
    def max_rel_error(self) -> float:
        return max((p.rel_error for p in self.checked), default=0.0)

    @property
    def offending(self) -> list[tuple[int, int, int]]:
        return [p.coord for p in self.checked if p.rel_error > self.threshold]

    @property
    def skip_rate(self) -> float:
        return len(self.skipped) / len(self.probes) if self.probes else 0.0

    @property
    def ok(self) -> bool:
        return not self.offending


def _plan_signature(plans):
    return [(label, s, plan.support.tobytes()) for label, s, plan in plans]


def relative_error(a: float, b: float, floor: float = 1e-12) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


# Finite differences at h = 1e-6 on an objective of size J lose about
# eps * J / h to cancellation, which in double precision swamps small
# gradient components once J is in the hundreds. The probe objective below
# is a separate value-only implementation carried out in long double. OT
# plans still come from the double-precision solver at each perturbed point;
# only the arithmetic around them is extended.
XP = np.longdouble


def _xp_shape(x, term, warm, plans, step):
    spec = term.spec
    a = _agent_weights(spec, len(x))
    b = spec.reference.normalized_weights
    z = spec.reference.points.astype(XP)
    if spec.centered:
        x = x - a.astype(XP) @ x
        z = z - b.astype(XP) @ z
    d = x[:, None, :] - z[None, :, :]
    C = (d * d).sum(-1)
    plan = solve_exact(a, b, C.astype(float), basis=warm.get((term.label, step)))
    plans.append((term.label, step, plan))
    return (plan.coupling.astype(XP) * C).sum()


def _xp_state_term(term, states, warm, plans, step):
    x = states[:, :2]
    if isinstance(term, ShapeTerm):
        return _xp_shape(x, term, warm, plans, step)
    if isinstance(term, TerminalVelocityTerm):
        v = states[:, 2:4]
        return XP(0.5) * (v * v).sum() / len(states)
    if isinstance(term, CongestionTerm):
        d = x[:, None, :] - x[None, :, :]
        return np.exp(-(d * d).sum(-1) / (XP(2) * XP(term.sigma) ** 2)).sum()
    if isinstance(term, ObstacleTerm):
        total = XP(0)
        for ob in term.obstacles:
            d = x - np.asarray(ob.center, dtype=XP)
            excess = np.maximum((d * d).sum(-1) - XP(ob.radius) ** 2, XP(0))
            total += (XP(ob.strength) * np.exp(-XP(ob.sharpness) * excess)).sum()
        return total
    if isinstance(term, MeanDestinationTerm):
        r = x.mean(0) - term.target.astype(XP)
        return XP(0.5) * (r @ r)
    raise NotImplementedError(type(term).__name__)


def _supports_extended(scenario) -> bool:
    known = (ShapeTerm, ControlEffortTerm, TerminalVelocityTerm, CongestionTerm, ObstacleTerm, MeanDestinationTerm)
    for t in scenario.cost_terms():
        if not isinstance(t, known):
            return False
        if isinstance(t, ShapeTerm) and t.spec.solver != "exact":
            return False
    return type(scenario.dynamics).deriv is type(DEFAULT_DYNAMICS).deriv


def _objective_extended(scenario, controls, dt, warm):
    """Total cost in long double plus the OT plans it used."""
    u = np.asarray(controls, dtype=XP)
    dt = XP(dt)
    n, S, _ = u.shape
    states = np.empty((n, S + 1, 4), dtype=XP)
    states[:, 0] = scenario.initial_states()
    for s in range(S):
        states[:, s + 1, :2] = states[:, s, :2] + dt * states[:, s, 2:]
        states[:, s + 1, 2:] = states[:, s, 2:] + dt * u[:, s]
    plans = []
    total = XP(0)
    for term in scenario.cost_terms():
        if term.stage == "control":
            value = XP(0.5) * dt * (u * u).sum()
        elif term.stage == "terminal":
            value = _xp_state_term(term, states[:, S], warm, plans, S)
        else:
            value = XP(0)
            for s in range(S):
                value += _xp_state_term(term, states[:, s], warm, plans, s)
            value *= dt
        total += XP(term.weight) * value
    return total, plans


def check_gradient(
    scenario,
    schedule: ControlSchedule,
    n_probes: int = 20,
    fd_step: float = 1e-6,
    seed: int | None = None,
    gradient: np.ndarray | None = None,
    coords=None,
    threshold: float = 1e-5,
    extended: bool = True,
    replace_degenerate: bool = False,
) -> GradientReport:
    """Compare ``dJ/du`` against central differences on random coordinates.

    Coordinates whose +/- perturbation changes the support of any OT plan
    are marked degenerate and excluded from the error. Pass ``gradient`` to
    audit an externally supplied gradient instead of the built-in one. With
    ``extended`` the differenced objective is evaluated in long double where
    the scenario allows it. With ``replace_degenerate`` each degenerate probe
    is replaced by a fresh random coordinate until ``n_probes`` usable ones
    are found (or the schedule runs out of coordinates).
    """
    u0 = schedule.controls
    dt = schedule.dt
    warm: dict = {}
    _, ev0, g0 = _evaluate(schedule, scenario, warm_cache=warm)
    if gradient is not None:
        g0 = np.asarray(gradient, dtype=float)
    extended = extended and _supports_extended(scenario)

    if extended:
        h = XP(fd_step)
        _, plans0 = _objective_extended(scenario, u0, dt, warm)

        def probe(up):
            return _objective_extended(scenario, up, dt, warm)
        u_base = u0.astype(XP)
    else:
        h = fd_step
        plans0 = ev0.plans

        def probe(up):
            _, ev, _ = _evaluate(ControlSchedule(up, dt), scenario, need_grad=False)
            return ev.breakdown.total, ev.plans
        u_base = u0
    base_sig = _plan_signature(plans0)

    rng = np.random.default_rng(scenario.seed if seed is None else seed)
    order = None
    if coords is None:
        order = rng.permutation(u0.size)
        coords = [_unravel(k, u0.shape) for k in np.sort(order[:n_probes])]

    report = GradientReport(threshold=threshold)

    def run(coord):
        up = u_base.copy()
        dn = u_base.copy()
        up[coord] += h
        dn[coord] -= h
        j_up, plans_up = probe(up)
        j_dn, plans_dn = probe(dn)
        degenerate = _plan_signature(plans_up) != base_sig or _plan_signature(plans_dn) != base_sig
        numeric = float((j_up - j_dn) / (2 * h))
        analytic = float(g0[coord])
        report.probes.append(GradientProbe(coord, analytic, numeric, relative_error(analytic, numeric), degenerate))

    for coord in coords:
        run(coord)
    if replace_degenerate and order is not None:
        spare = iter(order[n_probes:])
        while len(report.checked) < n_probes:
            k = next(spare, None)
            if k is None:
                break
            run(_unravel(k, u0.shape))
    return report


def _unravel(k, shape):
    return tuple(int(c) for c in np.unravel_index(k, shape))
