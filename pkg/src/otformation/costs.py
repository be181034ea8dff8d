"""Cost terms of the multi-agent objective and their analytic gradients.

Each term is evaluated either at the final state (terminal), at every state
``s = 0 .. S-1`` and scaled by ``dt`` (running), or on the controls
directly. Shape terms solve an optimal transport problem between the agents
and a reference measure and differentiate ``sum_ij P_ij C_ij`` with the plan
``P`` held fixed at its optimum, which is the exact gradient wherever the
optimal plan is unique.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import ControlSchedule, Trajectory
from .ot import DiscreteMeasure, InvalidInputError, build_cost_matrix, solve_exact, solve_sinkhorn

TERM_LABELS = (
    "shape_terminal",
    "shape_running",
    "control_effort",
    "terminal_velocity",
    "congestion",
    "obstacle",
    "mean_destination",
)


@dataclass
class ShapeCostSpec:
    reference: DiscreteMeasure
    agent_weights: np.ndarray | None = None
    mode: str = "terminal"
    centered: bool = False
    weight: float = 1.0
    solver: str = "exact"
    epsilon: float = 1e-3

    def __post_init__(self):
        if self.mode not in ("terminal", "running"):
            raise InvalidInputError(f"shape mode must be 'terminal' or 'running', got {self.mode!r}")
        if self.mode == "running" and not self.centered:
            raise InvalidInputError("running shape cost must be centered")
        if not self.weight >= 0:
            raise InvalidInputError("shape weight must be nonnegative")
        if self.solver not in ("exact", "sinkhorn"):
            raise InvalidInputError(f"unknown OT solver {self.solver!r}")


@dataclass(frozen=True)
class ObstacleSpec:
    center: tuple[float, float]
    radius: float
    strength: float = 1.0
    sharpness: float = 1.0

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidInputError("obstacle radius must be positive")
        if not self.strength >= 0:
            raise InvalidInputError("obstacle strength must be nonnegative")
        if not self.sharpness > 0:
            raise InvalidInputError("obstacle sharpness must be positive")


@dataclass
class CostBreakdown:
    """Unweighted per-term values plus the weights used to form ``total``."""

    total: float
    terms: dict[str, float] = field(default_factory=dict)
    weights: dict[str, float] = field(default_factory=dict)

    def weighted(self) -> dict[str, float]:
        return {k: self.weights[k] * v for k, v in self.terms.items()}

    def as_dict(self) -> dict:
        return {"total": self.total, "terms": dict(self.terms), "weights": dict(self.weights)}


# ---------------------------------------------------------------------------
# individual terms (unweighted)
# ---------------------------------------------------------------------------

def _positions(states) -> np.ndarray:
    states = np.atleast_2d(np.asarray(states, dtype=float))
    return states[:, :2]


def _agent_weights(spec: ShapeCostSpec, n: int) -> np.ndarray:
    if spec.agent_weights is None:
        return np.full(n, 1.0 / n)
    a = np.asarray(spec.agent_weights, dtype=float)
    if len(a) != n:
        raise InvalidInputError(f"{len(a)} agent weights for {n} agents")
    return a / a.sum()


def shape_cost(positions, spec: ShapeCostSpec, basis=None):
    """Transport cost between agents and reference, with gradient and plan.

    When ``spec.centered`` both point sets are shifted by their weighted means
    first, and the gradient is pulled back through that shift.
    """
    x = np.atleast_2d(np.asarray(positions, dtype=float))
    a = _agent_weights(spec, len(x))
    b = spec.reference.normalized_weights
    z = spec.reference.points
    if spec.centered:
        x = x - a @ x
        z = z - b @ z
    C = build_cost_matrix(x, z)
    if spec.solver == "exact":
        plan = solve_exact(a, b, C, basis=basis)
    else:
        plan = solve_sinkhorn(a, b, C, spec.epsilon)
    P = plan.coupling
    # d/dx_i sum_j P_ij |x_i - z_j|^2
    grad = 2.0 * (P.sum(1)[:, None] * x - P @ z)
    if spec.centered:
        grad = grad - a[:, None] * grad.sum(0)
    return plan.value, grad, plan


def terminal_shape_cost(final_states, spec: ShapeCostSpec):
    """EMD between the final agent positions and the reference measure."""
    if spec.mode != "terminal":
        raise InvalidInputError("terminal_shape_cost needs a terminal-mode spec")
    value, grad, _ = shape_cost(_positions(final_states), spec)
    return value, grad


def running_shape_cost(states_at_t, spec: ShapeCostSpec):
    """Mean-subtracted EMD, insensitive to where the formation is."""
    if spec.mode != "running" or not spec.centered:
        raise InvalidInputError("running_shape_cost needs a centered running-mode spec")
    value, grad, _ = shape_cost(_positions(states_at_t), spec)
    return value, grad


def control_effort(schedule: ControlSchedule):
    u = schedule.controls
    return 0.5 * schedule.dt * float(np.sum(u * u)), schedule.dt * u


def terminal_velocity_cost(final_states):
    states = np.atleast_2d(np.asarray(final_states, dtype=float))
    v = states[:, 2:4]
    n = len(states)
    return 0.5 * float(np.sum(v * v)) / n, v / n


def congestion_penalty(states_at_t, sigma: float):
    """Gaussian-kernel crowding penalty over all ordered pairs, diagonal included."""
    if not sigma > 0:
        raise InvalidInputError("sigma must be positive")
    x = _positions(states_at_t)
    diff = x[:, None, :] - x[None, :, :]
    K = np.exp(-np.einsum("ijk,ijk->ij", diff, diff) / (2.0 * sigma**2))
    # each unordered pair appears twice, hence the factor 2
    grad = -2.0 / sigma**2 * np.einsum("ij,ijk->ik", K, diff)
    return float(K.sum()), grad


def obstacle_penalty(states_at_t, obstacles):
    """``strength * exp(-sharpness * max(0, |p - c|^2 - r^2))`` per agent and obstacle."""
    x = _positions(states_at_t)
    value = 0.0
    grad = np.zeros_like(x)
    for ob in obstacles:
        d = x - np.asarray(ob.center, dtype=float)
        excess = np.einsum("ij,ij->i", d, d) - ob.radius**2
        outside = excess > 0
        k = ob.strength * np.exp(-ob.sharpness * np.maximum(excess, 0.0))
        value += float(k.sum())
        grad += np.where(outside[:, None], -2.0 * ob.sharpness * k[:, None] * d, 0.0)
    return value, grad


def mean_destination_cost(states, target):
    """Half squared distance between the fleet's mean position and ``target``."""
    x = _positions(states)
    r = x.mean(0) - np.asarray(target, dtype=float)
    return 0.5 * float(r @ r), np.tile(r / len(x), (len(x), 1))


# ---------------------------------------------------------------------------
# term objects used by the optimizer
# ---------------------------------------------------------------------------

class CostTerm:
    """One weighted summand of the objective.

    ``stage`` is ``"terminal"``, ``"running"`` or ``"control"``.
    ``evaluate`` returns the unweighted value, its gradient with respect to
    the ``(N, 4)`` states and an optional plan (for shape terms). ``warm`` is
    an optional OT basis from a previous call on a nearby configuration.
    """

    label: str
    stage: str
    weight: float

    def evaluate(self, states, warm=None):
        raise NotImplementedError


class ShapeTerm(CostTerm):
    def __init__(self, spec: ShapeCostSpec, label: str | None = None):
        self.spec = spec
        self.stage = spec.mode
        self.weight = spec.weight
        self.label = label or f"shape_{spec.mode}"

    def evaluate(self, states, warm=None):
        value, g, plan = shape_cost(_positions(states), self.spec, warm)
        grad = np.zeros((len(g), 4))
        grad[:, :2] = g
        return value, grad, plan


class ControlEffortTerm(CostTerm):
    stage = "control"

    def __init__(self, weight: float = 1.0, label: str = "control_effort"):
        self.weight = weight
        self.label = label


class TerminalVelocityTerm(CostTerm):
    stage = "terminal"

    def __init__(self, weight: float = 1.0, label: str = "terminal_velocity"):
        self.weight = weight
        self.label = label

    def evaluate(self, states, warm=None):
        value, g = terminal_velocity_cost(states)
        grad = np.zeros((len(g), 4))
        grad[:, 2:] = g
        return value, grad, None


class _PositionTerm(CostTerm):
    def _eval(self, states):
        raise NotImplementedError

    def evaluate(self, states, warm=None):
        value, g = self._eval(states)
        grad = np.zeros((len(g), 4))
        grad[:, :2] = g
        return value, grad, None


class CongestionTerm(_PositionTerm):
    stage = "running"

    def __init__(self, sigma: float, weight: float = 1.0, label: str = "congestion"):
        if not sigma > 0:
            raise InvalidInputError("sigma must be positive")
        self.sigma = sigma
        self.weight = weight
        self.label = label

    def _eval(self, states):
        return congestion_penalty(states, self.sigma)


class ObstacleTerm(_PositionTerm):
    stage = "running"

    def __init__(self, obstacles, weight: float = 1.0, label: str = "obstacle"):
        self.obstacles = list(obstacles)
        self.weight = weight
        self.label = label

    def _eval(self, states):
        return obstacle_penalty(states, self.obstacles)


class MeanDestinationTerm(_PositionTerm):
    stage = "terminal"

    def __init__(self, target, weight: float = 1.0, label: str = "mean_destination"):
        self.target = np.asarray(target, dtype=float)
        self.weight = weight
        self.label = label

    def _eval(self, states):
        return mean_destination_cost(states, self.target)


# ---------------------------------------------------------------------------
# full objective
# ---------------------------------------------------------------------------

@dataclass
class Evaluation:
    """Objective value plus the partial derivatives the adjoint sweep needs."""

    breakdown: CostBreakdown
    state_grad: np.ndarray | None  # dJ/dx_s, shape (N, S + 1, 4)
    control_grad: np.ndarray | None  # explicit dJ/du_s, shape (N, S, 2)
    plans: list  # (label, step, TransportPlan) for every OT solve, in order


def _resolve_terms(terms):
    if hasattr(terms, "cost_terms"):
        return terms.cost_terms()
    return list(terms)


def evaluate(trajectory: Trajectory, schedule: ControlSchedule, terms, need_grad: bool = True,
             warm_cache: dict | None = None) -> Evaluation:
    """Evaluate every term on a rollout.

    Terminal terms see ``x_S``; running terms see ``x_0 .. x_{S-1}`` and are
    summed in step order and scaled by ``dt``. ``warm_cache`` maps
    ``(label, step)`` to the last OT basis there and is updated in place.
    """
    cache = warm_cache if warm_cache is not None else {}
    terms = _resolve_terms(terms)
    n, S1, _ = trajectory.states.shape
    S = S1 - 1
    if schedule.controls.shape[:2] != (n, S):
        raise InvalidInputError("trajectory and schedule dimensions disagree")
    dt = schedule.dt
    values: dict[str, float] = {}
    weights: dict[str, float] = {}
    state_grad = np.zeros_like(trajectory.states) if need_grad else None
    control_grad = np.zeros_like(schedule.controls) if need_grad else None
    plans = []

    for term in terms:
        weights[term.label] = term.weight
        if term.stage == "control":
            value, g = control_effort(schedule)
            if need_grad:
                control_grad += term.weight * g
        elif term.stage == "terminal":
            value, g, plan = term.evaluate(trajectory.states[:, S], cache.get((term.label, S)))
            if plan is not None:
                plans.append((term.label, S, plan))
                cache[(term.label, S)] = plan.basis
            if need_grad:
                state_grad[:, S] += term.weight * g
        elif term.stage == "running":
            value = 0.0
            for s in range(S):
                v, g, plan = term.evaluate(trajectory.states[:, s], cache.get((term.label, s)))
                if plan is not None:
                    plans.append((term.label, s, plan))
                    cache[(term.label, s)] = plan.basis
                value += v
                if need_grad:
                    state_grad[:, s] += (term.weight * dt) * g
            value *= dt
        else:
            raise InvalidInputError(f"unknown cost stage {term.stage!r}")
        values[term.label] = value

    total = 0.0
    for label, value in values.items():
        total += weights[label] * value
    return Evaluation(CostBreakdown(total, values, weights), state_grad, control_grad, plans)


def total_cost(trajectory: Trajectory, schedule: ControlSchedule, scenario) -> CostBreakdown:
    return evaluate(trajectory, schedule, scenario, need_grad=False).breakdown
