"""Reading and writing run outputs: trajectory and cost-history CSVs, summary JSON."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ot import InvalidInputError

TRAJECTORY_COLUMNS = ["agent_id", "step", "t", "x1", "x2", "x3", "x4"]

TRAJECTORY_FILE = "trajectory.csv"
HISTORY_FILE = "cost_history.csv"
SUMMARY_FILE = "summary.json"
SCENARIO_FILE = "scenario.json"
FIGURE_FILE = "formation.svg"
HISTORY_FIGURE_FILE = "cost_history.svg"


@dataclass
class RunArtifacts:
    out_dir: Path
    trajectory: Path
    cost_history: Path
    summary_file: Path
    scenario_file: Path
    rendering: Path
    history_rendering: Path
    summary: dict

    def paths(self) -> list[Path]:
        return [self.trajectory, self.cost_history, self.summary_file, self.scenario_file,
                self.rendering, self.history_rendering]


def _num(x) -> str:
    # repr round-trips doubles exactly
    return repr(float(x))


def write_trajectory_csv(trajectory, path) -> None:
    states = trajectory.states
    times = trajectory.times
    n, S1, _ = states.shape
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for i in range(n):
            for s in range(S1):
                w.writerow([i, s, _num(times[s]), *(_num(v) for v in states[i, s])])


def read_trajectory_csv(path):
    """Load a trajectory CSV back into ``(states (N, S + 1, 4), times (S + 1,))``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != TRAJECTORY_COLUMNS:
        raise InvalidInputError(f"{path}: expected header {','.join(TRAJECTORY_COLUMNS)}")
    body = rows[1:]
    if not body:
        raise InvalidInputError(f"{path}: no data rows")
    try:
        data = np.array([[float(c) for c in r] for r in body])
    except ValueError as exc:
        raise InvalidInputError(f"{path}: {exc}") from None
    if data.shape[1] != len(TRAJECTORY_COLUMNS):
        raise InvalidInputError(f"{path}: rows must have {len(TRAJECTORY_COLUMNS)} columns")
    agents = data[:, 0].astype(int)
    steps = data[:, 1].astype(int)
    n, S1 = agents.max() + 1, steps.max() + 1
    if len(data) != n * S1 or agents.min() < 0 or steps.min() < 0:
        raise InvalidInputError(f"{path}: expected one row per (agent, step), {n} x {S1}")
    states = np.full((n, S1, 4), np.nan)
    times = np.full(S1, np.nan)
    states[agents, steps] = data[:, 3:]
    times[steps] = data[:, 2]
    if np.isnan(states).any():
        raise InvalidInputError(f"{path}: missing or duplicate (agent, step) rows")
    return states, times


def write_cost_history_csv(history, labels, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "total", *labels])
        for it, bd in history:
            w.writerow([it, _num(bd.total), *(_num(bd.terms[k]) for k in labels)])


def read_cost_history_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    return header, np.array([[float(c) for c in r] for r in rows[1:]])


def summary_dict(result, wall_time: float, scenario) -> dict:
    return {
        "scenario": scenario.name,
        "converged": bool(result.converged),
        "stalled": bool(result.stalled),
        "iterations": int(result.iterations_run),
        "final_cost": result.final_cost.as_dict(),
        "final_grad_norm": float(result.final_grad_norm),
        "wall_time_s": float(wall_time),
    }


def write_summary(summary: dict, path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
