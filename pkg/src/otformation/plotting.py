"""Static SVG figures of optimized formations.

Start and end states are drawn opaque (blue and orange), the states in
between faded, so a single frame shows the whole maneuver. Every drawn group
carries an SVG id (``agents-start``, ``agents-intermediate``,
``agents-final``, ``reference-<label>``, ``obstacle-<k>``) so the output can
be inspected or restyled without parsing coordinates.
"""

from __future__ import annotations

import matplotlib
from matplotlib.figure import Figure
from matplotlib.patches import Circle
import numpy as np

from .costs import ShapeTerm, _agent_weights
from .ot import InvalidInputError

START_COLOR = "tab:blue"
FINAL_COLOR = "tab:orange"
MID_COLOR = "tab:blue"
REF_COLOR = "k"
OBSTACLE_COLOR = "tab:red"

# fixed ids and no timestamp, so identical inputs give identical bytes
SVG_RC = {"svg.hashsalt": "otformation", "svg.fonttype": "path"}
SVG_META = {"Date": None}


def _save(fig: Figure, path):
    with matplotlib.rc_context(SVG_RC):
        fig.savefig(path, format="svg", metadata=SVG_META)


def reference_overlays(scenario, final_positions):
    """``(label, points, mode)`` for every shape reference.

    Centered references are drawn around the agents' final (weighted) mean,
    since only their shape is scored.
    """
    out = []
    for term in scenario.cost_terms():
        if not isinstance(term, ShapeTerm):
            continue
        spec = term.spec
        z = spec.reference.points
        if spec.centered:
            a = _agent_weights(spec, len(final_positions))
            z = z - spec.reference.normalized_weights @ z + a @ final_positions
        out.append((term.label, z, spec.mode))
    return out


def formation_figure(states, scenario, stride: int = 1, opacity: float = 0.15,
                     show_references: bool = True) -> Figure:
    """Agents over time, with references and obstacles, on one axis.

    ``states`` has shape ``(N, S + 1, 4)``. Every ``stride``-th intermediate
    step is drawn with alpha ``opacity``.
    """
    states = np.asarray(states, dtype=float)
    if states.ndim != 3 or states.shape[2] < 2:
        raise InvalidInputError(f"states must have shape (N, S + 1, 4), got {states.shape}")
    if states.shape[0] != scenario.n_agents:
        raise InvalidInputError(
            f"trajectory has {states.shape[0]} agents, scenario {scenario.name!r} has {scenario.n_agents}"
        )
    if stride < 1:
        raise InvalidInputError("stride must be >= 1")
    if not 0 <= opacity <= 1:
        raise InvalidInputError("opacity must lie in [0, 1]")

    pos = states[..., :2]
    fig = Figure(figsize=(6, 5))
    ax = fig.add_subplot(111)

    mid = pos[:, 1:-1:stride].reshape(-1, 2)
    if len(mid):
        ax.plot(mid[:, 0], mid[:, 1], marker="o", linestyle="none", markersize=3,
                color=MID_COLOR, alpha=opacity, markeredgewidth=0, gid="agents-intermediate")
    ax.plot(pos[:, 0, 0], pos[:, 0, 1], marker="o", linestyle="none", markersize=5,
            color=START_COLOR, label="start", gid="agents-start")
    if pos.shape[1] > 1:
        ax.plot(pos[:, -1, 0], pos[:, -1, 1], marker="o", linestyle="none", markersize=5,
                color=FINAL_COLOR, label="final", gid="agents-final")

    if show_references:
        for label, z, mode in reference_overlays(scenario, pos[:, -1]):
            marker = "+" if mode == "running" else "x"
            ax.plot(z[:, 0], z[:, 1], marker=marker, linestyle="none", markersize=6, color=REF_COLOR, label=label.replace("_", " "), gid=f"reference-{label}")

    for k, ob in enumerate(scenario.obstacles()):
        ax.add_patch(Circle(ob.center, ob.radius, facecolor=OBSTACLE_COLOR, alpha=0.3,
                            edgecolor=OBSTACLE_COLOR, gid=f"obstacle-{k}"))

    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(scenario.name)
    ax.legend(loc="best", fontsize="small", frameon=False)
    fig.tight_layout()
    return fig


def cost_history_figure(history, title: str = "") -> Figure:
    """Total and weighted per-term cost against iteration, log scale."""
    its = np.array([it for it, _ in history])
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot(111)
    ax.plot(its, [bd.total for _, bd in history], color="k", label="total")
    labels = list(history[0][1].terms) if history else []
    for label in labels:
        vals = np.array([bd.weighted()[label] for _, bd in history])
        if np.any(vals > 0):
            ax.plot(its, np.where(vals > 0, vals, np.nan), label=label.replace("_", " "), linewidth=1)
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("weighted cost")
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize="small", frameon=False)
    fig.tight_layout()
    return fig


def render_formation(states, scenario, path, stride: int = 1, opacity: float = 0.15):
    _save(formation_figure(states, scenario, stride=stride, opacity=opacity), path)


def render_cost_history(history, path, title: str = ""):
    _save(cost_history_figure(history, title), path)
