"""Agent dynamics, forward-Euler stepping and full-horizon rollout.

States are stored as ``(N, 4)`` arrays ``(x, y, vx, vy)`` and controls as
``(N, 2)`` accelerations, so a whole fleet steps in one vectorised call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ot import InvalidInputError

STATE_DIM = 4
CONTROL_DIM = 2


class DoubleIntegrator:
    """Planar double integrator ``x' = A x + B u``."""

    state_dim = STATE_DIM
    control_dim = CONTROL_DIM

    A = np.array([
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0],
    ])
    B = np.array([
        [0.0, 0.0],
        [0.0, 0.0],
        [1.0, 0.0],
        [0.0, 1.0],
    ])

    def deriv(self, state, control):
        state = np.asarray(state, dtype=float)
        control = np.asarray(control, dtype=float)
        return np.concatenate([state[..., 2:4], control], axis=-1)

    def jacobians(self, dt: float):
        """Discrete-time transition matrices ``(I + dt A, dt B)`` of one Euler step."""
        return np.eye(4) + dt * self.A, dt * self.B


DEFAULT_DYNAMICS = DoubleIntegrator()


@dataclass
class ControlSchedule:
    """Controls for N agents over S steps, shape ``(N, S, 2)``."""

    controls: np.ndarray
    dt: float

    def __post_init__(self):
        self.controls = np.asarray(self.controls, dtype=float)
        if self.controls.ndim != 3 or self.controls.shape[2] != CONTROL_DIM:
            raise InvalidInputError(f"controls must have shape (N, S, 2), got {self.controls.shape}")
        n, s, _ = self.controls.shape
        if n < 1 or s < 1:
            raise InvalidInputError("schedule needs at least one agent and one step")
        if not self.dt > 0:
            raise InvalidInputError("dt must be positive")

    @classmethod
    def zeros(cls, n_agents: int, steps: int, dt: float) -> ControlSchedule:
        return cls(np.zeros((n_agents, steps, CONTROL_DIM)), dt)

    @property
    def n_agents(self) -> int:
        return self.controls.shape[0]

    @property
    def steps(self) -> int:
        return self.controls.shape[1]

    @property
    def horizon(self) -> float:
        return self.steps * self.dt


@dataclass
class Trajectory:
    """States for N agents at S + 1 time points, shape ``(N, S + 1, 4)``."""

    states: np.ndarray
    dt: float

    @property
    def n_agents(self) -> int:
        return self.states.shape[0]

    @property
    def steps(self) -> int:
        return self.states.shape[1] - 1

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.steps + 1)

    @property
    def positions(self) -> np.ndarray:
        return self.states[..., :2]

    @property
    def final(self) -> np.ndarray:
        return self.states[:, -1, :]


def double_integrator_deriv(state, control):
    return DEFAULT_DYNAMICS.deriv(state, control)


def euler_step(state, control, dt: float, dynamics=DEFAULT_DYNAMICS):
    state = np.asarray(state, dtype=float)
    return state + dt * dynamics.deriv(state, control)


def initial_states(positions, velocities=None) -> np.ndarray:
    """Stack 2D positions (and optional velocities, default zero) into states."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    states = np.zeros((len(positions), STATE_DIM))
    states[:, :2] = positions
    if velocities is not None:
        states[:, 2:] = velocities
    return states


def rollout(initial, schedule: ControlSchedule, dynamics=DEFAULT_DYNAMICS) -> Trajectory:
    initial = np.atleast_2d(np.asarray(initial, dtype=float))
    if initial.shape != (schedule.n_agents, STATE_DIM):
        raise InvalidInputError(
            f"initial states have shape {initial.shape}, schedule expects ({schedule.n_agents}, {STATE_DIM})"
        )
    if not np.all(np.isfinite(initial)):
        raise InvalidInputError("non-finite initial state")
    states = np.empty((schedule.n_agents, schedule.steps + 1, STATE_DIM))
    states[:, 0] = initial
    for s in range(schedule.steps):
        states[:, s + 1] = euler_step(states[:, s], schedule.controls[:, s], schedule.dt, dynamics)
    return Trajectory(states, schedule.dt)
