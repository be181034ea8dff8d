"""Reference shapes, scenario configuration files and the built-in catalog.

A scenario file is a JSON document::

    {
      "name": "prop-split",
      "initial": {"kind": "grid", "params": {...}}   # or [[x, y], ...]
      "horizon": 1.0,
      "steps": 50,
      "costs": [{"type": "control_effort", "weight": 1.0}, ...],
      "optimizer": {"alpha": ..., "max_iters": ..., "tol": ..., "init": ...,
                    "safeguard": ..., "record_every": ...},
      "seed": 0
    }

The canonical form (what :func:`save_scenario` writes) has every default
filled in, sorted keys and two-space indentation, so loading and saving a
canonical file reproduces it byte for byte.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .costs import (
    CongestionTerm,
    ControlEffortTerm,
    CostTerm,
    MeanDestinationTerm,
    ObstacleSpec,
    ObstacleTerm,
    ShapeCostSpec,
    ShapeTerm,
    TerminalVelocityTerm,
)
from .dynamics import DEFAULT_DYNAMICS, initial_states
from .ot import DiscreteMeasure
from .shooting import OptimizerOptions


class ScenarioError(ValueError):
    """Malformed or invalid scenario; ``field`` names the offending key."""

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


# ---------------------------------------------------------------------------
# shape generators
# ---------------------------------------------------------------------------

def generate_grid(rows: int, cols: int, spacing: float = 1.0, anchor=(0.0, 0.0)) -> np.ndarray:
    """``rows x cols`` lattice in row-major order, centred on ``anchor``."""
    if rows < 1 or cols < 1:
        raise ScenarioError("grid needs rows, cols >= 1")
    cx = (np.arange(cols) - (cols - 1) / 2.0) * spacing
    cy = (np.arange(rows) - (rows - 1) / 2.0) * spacing
    xx, yy = np.meshgrid(cx, cy)
    return np.column_stack([xx.ravel(), yy.ravel()]) + np.asarray(anchor, dtype=float)


def generate_circle(n: int, radius: float, center=(0.0, 0.0)) -> np.ndarray:
    if n < 0:
        raise ScenarioError("circle point count must be >= 0")
    if not radius > 0:
        raise ScenarioError("circle radius must be positive")
    theta = 2.0 * np.pi * np.arange(n) / max(n, 1)
    pts = radius * np.column_stack([np.cos(theta), np.sin(theta)])
    return pts.reshape(n, 2) + np.asarray(center, dtype=float)


def generate_circle_in_circle(n_outer: int, n_inner: int, r_outer: float, r_inner: float, center=(0.0, 0.0)) -> np.ndarray:
    """Equally spaced points on two concentric circles, outer ring first."""
    if not 0 < r_inner < r_outer:
        raise ScenarioError("need 0 < r_inner < r_outer")
    if n_outer + n_inner < 1:
        raise ScenarioError("circle_in_circle needs at least one point")
    return np.vstack([
        generate_circle(n_outer, r_outer, center),
        generate_circle(n_inner, r_inner, center),
    ])


def generate_flying_v(n_per_wing: int, apex=(0.0, 0.0), wing_angle: float = 45.0, spacing: float = 1.0) -> np.ndarray:
    """Apex followed by alternating upper/lower wing points trailing in -x.

    ``wing_angle`` is in degrees, measured between each wing and the -x axis.
    """
    if n_per_wing < 1:
        raise ScenarioError("flying_v needs n_per_wing >= 1")
    apex = np.asarray(apex, dtype=float)
    phi = math.radians(wing_angle)
    back, side = -math.cos(phi), math.sin(phi)
    pts = [apex]
    for k in range(1, n_per_wing + 1):
        pts.append(apex + k * spacing * np.array([back, side]))
        pts.append(apex + k * spacing * np.array([back, -side]))
    return np.array(pts)


GENERATORS = {
    "grid": (generate_grid, {"rows", "cols"}, {"spacing", "anchor"}),
    "circle": (generate_circle, {"n", "radius"}, {"center"}),
    "circle_in_circle": (generate_circle_in_circle, {"n_outer", "n_inner", "r_outer", "r_inner"}, {"center"}),
    "flying_v": (generate_flying_v, {"n_per_wing"}, {"apex", "wing_angle", "spacing"}),
    "point_set": (None, {"points"}, set()),
}


def resolve_points(source, where: str = "points") -> np.ndarray:
    """Expand a generator object ``{kind, params}`` or an explicit point list."""
    if isinstance(source, dict):
        _check_keys(source, {"kind", "params"}, {"kind", "params"}, where)
        kind = source["kind"]
        if kind not in GENERATORS:
            raise ScenarioError(f"unknown generator kind {kind!r}; expected one of {sorted(GENERATORS)}", f"{where}.kind")
        fn, required, optional = GENERATORS[kind]
        params = source["params"]
        if not isinstance(params, dict):
            raise ScenarioError("params must be an object", f"{where}.params")
        _check_keys(params, required, required | optional, f"{where}.params")
        if kind == "point_set":
            return resolve_points(params["points"], f"{where}.params.points")
        try:
            pts = fn(**params)
        except ScenarioError as exc:
            raise ScenarioError(str(exc), f"{where}.params") from None
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"bad generator parameters ({exc})", f"{where}.params") from None
        return pts
    try:
        pts = np.asarray(source, dtype=float)
    except (TypeError, ValueError):
        raise ScenarioError("expected a generator object or a list of [x, y] points", where) from None
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) == 0:
        raise ScenarioError("expected a non-empty list of [x, y] points", where)
    if not np.all(np.isfinite(pts)):
        raise ScenarioError("non-finite coordinates", where)
    return pts


def _check_keys(obj: dict, required: set, allowed: set, where: str):
    if not isinstance(obj, dict):
        raise ScenarioError("expected an object", where)
    for key in sorted(required):
        if key not in obj:
            raise ScenarioError(f"missing required field {key!r}", f"{where}.{key}" if where else key)
    for key in sorted(obj):
        if key not in allowed:
            raise ScenarioError(f"unknown field {key!r}", f"{where}.{key}" if where else key)


# ---------------------------------------------------------------------------
# cost term configuration
# ---------------------------------------------------------------------------

SHAPE_DEFAULTS = {
    "b_weights": None,
    "a_weights": None,
    "normalize": True,
    "solver": "exact",
    "epsilon": 1e-3,
}
TERM_FIELDS = {
    "control_effort": ({"type"}, {}),
    "terminal_velocity": ({"type"}, {}),
    "shape_terminal": ({"type", "reference"}, {**SHAPE_DEFAULTS, "centered": False}),
    "shape_running": ({"type", "reference"}, {**SHAPE_DEFAULTS, "centered": True}),
    "congestion": ({"type", "sigma"}, {}),
    "obstacle": ({"type", "obstacles"}, {}),
    "mean_destination": ({"type", "target"}, {}),
}
OBSTACLE_DEFAULTS = {"strength": 1.0, "sharpness": 1.0}


def _canonical_term(raw: dict, where: str) -> dict:
    if not isinstance(raw, dict):
        raise ScenarioError("cost term must be an object", where)
    kind = raw.get("type")
    if kind not in TERM_FIELDS:
        raise ScenarioError(f"unknown cost type {kind!r}; expected one of {sorted(TERM_FIELDS)}", f"{where}.type")
    required, defaults = TERM_FIELDS[kind]
    _check_keys(raw, required, required | set(defaults) | {"weight"}, where)
    term = {"weight": 1.0, **copy.deepcopy(defaults), **copy.deepcopy(raw)}
    weight = term["weight"]
    if not isinstance(weight, (int, float)) or isinstance(weight, bool) or not weight >= 0 or not math.isfinite(weight):
        raise ScenarioError("weight must be a finite nonnegative number", f"{where}.weight")

    if kind.startswith("shape_"):
        pts = resolve_points(term["reference"], f"{where}.reference")
        if kind == "shape_running" and not term["centered"]:
            raise ScenarioError("running shape terms must be centered", f"{where}.centered")
        if term["solver"] not in ("exact", "sinkhorn"):
            raise ScenarioError("solver must be 'exact' or 'sinkhorn'", f"{where}.solver")
        if not term["epsilon"] > 0:
            raise ScenarioError("epsilon must be positive", f"{where}.epsilon")
        if term["b_weights"] is not None:
            _check_weights(term["b_weights"], len(pts), term["normalize"], f"{where}.b_weights")
    elif kind == "congestion":
        if not isinstance(term["sigma"], (int, float)) or not term["sigma"] > 0:
            raise ScenarioError("sigma must be positive", f"{where}.sigma")
    elif kind == "obstacle":
        if not isinstance(term["obstacles"], list):
            raise ScenarioError("obstacles must be a list", f"{where}.obstacles")
        obs = []
        for k, ob in enumerate(term["obstacles"]):
            w = f"{where}.obstacles.{k}"
            _check_keys(ob, {"center", "radius"}, {"center", "radius", "strength", "sharpness"}, w)
            ob = {**OBSTACLE_DEFAULTS, **ob}
            try:
                ObstacleSpec(tuple(ob["center"]), ob["radius"], ob["strength"], ob["sharpness"])
            except (TypeError, ValueError) as exc:
                raise ScenarioError(str(exc), w) from None
            obs.append(ob)
        term["obstacles"] = obs
    elif kind == "mean_destination":
        if len(term["target"]) != 2:
            raise ScenarioError("target must be an [x, y] pair", f"{where}.target")
    return term


def _check_weights(w, n, normalize, where):
    try:
        arr = np.asarray(w, dtype=float)
    except (TypeError, ValueError):
        raise ScenarioError("weights must be numbers", where) from None
    if arr.shape != (n,):
        raise ScenarioError(f"expected {n} weights, got {arr.size}", where)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0) or arr.sum() <= 0:
        raise ScenarioError("weights must be nonnegative with positive sum", where)
    if not normalize and abs(arr.sum() - 1.0) > 1e-9:
        raise ScenarioError(f"weights sum to {arr.sum():g}, not 1, and normalization is disabled", where)


def _build_term(term: dict, label: str, n_agents: int) -> CostTerm:
    kind, weight = term["type"], float(term["weight"])
    if kind == "control_effort":
        return ControlEffortTerm(weight, label)
    if kind == "terminal_velocity":
        return TerminalVelocityTerm(weight, label)
    if kind == "congestion":
        return CongestionTerm(float(term["sigma"]), weight, label)
    if kind == "obstacle":
        return ObstacleTerm([obstacle_from_dict(ob) for ob in term["obstacles"]], weight, label)
    if kind == "mean_destination":
        return MeanDestinationTerm(term["target"], weight, label)
    pts = resolve_points(term["reference"])
    b = np.full(len(pts), 1.0 / len(pts)) if term["b_weights"] is None else np.asarray(term["b_weights"], dtype=float)
    a = None if term["a_weights"] is None else np.asarray(term["a_weights"], dtype=float)
    if a is not None and len(a) != n_agents:
        raise ScenarioError(f"expected {n_agents} agent weights, got {len(a)}", "a_weights")
    spec = ShapeCostSpec(
        reference=DiscreteMeasure(pts, b),
        agent_weights=a,
        mode="terminal" if kind == "shape_terminal" else "running",
        centered=bool(term["centered"]),
        weight=weight,
        solver=term["solver"],
        epsilon=float(term["epsilon"]),
    )
    return ShapeTerm(spec, label)


def obstacle_from_dict(ob: dict) -> ObstacleSpec:
    ob = {**OBSTACLE_DEFAULTS, **ob}
    return ObstacleSpec(tuple(float(c) for c in ob["center"]), float(ob["radius"]), float(ob["strength"]), float(ob["sharpness"]))


# ---------------------------------------------------------------------------
# scenario
# ---------------------------------------------------------------------------

OPTIMIZER_KEYS = {"alpha", "max_iters", "tol", "init", "safeguard", "record_every"}
TOP_REQUIRED = {"name", "initial", "horizon", "steps", "costs"}
TOP_ALLOWED = TOP_REQUIRED | {"optimizer", "seed"}


@dataclass
class ScenarioSpec:
    """Full problem description.

    ``initial`` and every ``reference`` keep their file form (generator object
    or point list) so a scenario round-trips losslessly; the expanded arrays
    are available from :meth:`initial_positions` and :meth:`cost_terms`.
    """

    name: str
    initial: Any
    costs: list[dict]
    horizon: float = 1.0
    steps: int = 50
    optimizer: OptimizerOptions = field(default_factory=OptimizerOptions)
    seed: int = 0
    dynamics: Any = field(default=DEFAULT_DYNAMICS, repr=False, compare=False)

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name:
            raise ScenarioError("name must be a non-empty string", "name")
        if not isinstance(self.steps, int) or isinstance(self.steps, bool) or self.steps < 1:
            raise ScenarioError("steps must be an integer >= 1", "steps")
        if not isinstance(self.horizon, (int, float)) or not self.horizon > 0 or not math.isfinite(self.horizon):
            raise ScenarioError("horizon must be a positive number", "horizon")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ScenarioError("seed must be an integer", "seed")
        self._positions = resolve_points(self.initial, "initial")
        if not isinstance(self.costs, list):
            raise ScenarioError("costs must be a list", "costs")
        self.costs = [_canonical_term(t, f"costs.{k}") for k, t in enumerate(self.costs)]
        self._terms = None

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def n_agents(self) -> int:
        return len(self._positions)

    def initial_positions(self) -> np.ndarray:
        return self._positions.copy()

    def initial_states(self) -> np.ndarray:
        return initial_states(self._positions)

    def cost_terms(self) -> list[CostTerm]:
        if self._terms is None:
            counts: dict[str, int] = {}
            terms = []
            for term in self.costs:
                counts[term["type"]] = counts.get(term["type"], 0) + 1
                k = counts[term["type"]]
                label = term["type"] if k == 1 else f"{term['type']}_{k}"
                terms.append(_build_term(term, label, self.n_agents))
            self._terms = terms
        return self._terms

    def term_labels(self) -> list[str]:
        return [t.label for t in self.cost_terms()]

    def obstacles(self) -> list[ObstacleSpec]:
        return [ob for t in self.cost_terms() if isinstance(t, ObstacleTerm) for ob in t.obstacles]

    def reference_points(self) -> list[np.ndarray]:
        return [t.spec.reference.points for t in self.cost_terms() if isinstance(t, ShapeTerm)]

    def warm_start_target(self):
        """Where the straight-line warm start aims: a mean destination, else
        the weighted mean of the first uncentered shape reference."""
        for t in self.cost_terms():
            if isinstance(t, MeanDestinationTerm):
                return t.target
        for t in self.cost_terms():
            if isinstance(t, ShapeTerm) and not t.spec.centered:
                ref = t.spec.reference
                return ref.normalized_weights @ ref.points
        return None

    # -- serialisation -------------------------------------------------------

    def to_dict(self) -> dict:
        o = self.optimizer
        return {
            "name": self.name,
            "initial": copy.deepcopy(self.initial),
            "horizon": self.horizon,
            "steps": self.steps,
            "costs": copy.deepcopy(self.costs),
            "optimizer": {
                "alpha": o.alpha,
                "max_iters": o.max_iters,
                "tol": o.tol,
                "init": o.init,
                "safeguard": o.safeguard,
                "record_every": o.record_every,
            },
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> ScenarioSpec:
        _check_keys(data, TOP_REQUIRED, TOP_ALLOWED, "")
        opt = data.get("optimizer", {})
        _check_keys(opt, set(), OPTIMIZER_KEYS, "optimizer")
        try:
            options = OptimizerOptions(**opt)
        except (TypeError, ValueError) as exc:
            raise ScenarioError(str(exc), "optimizer") from None
        return cls(
            name=data["name"],
            initial=copy.deepcopy(data["initial"]),
            costs=copy.deepcopy(data["costs"]),
            horizon=data["horizon"],
            steps=data["steps"],
            optimizer=options,
            seed=data.get("seed", 0),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def with_overrides(self, overrides: dict[str, Any]) -> ScenarioSpec:
        data = self.to_dict()
        for key, value in overrides.items():
            set_dotted(data, key, value)
        return ScenarioSpec.from_dict(data)


def set_dotted(data: dict, key: str, value):
    """Assign ``value`` at a dotted path such as ``optimizer.max_iters`` or
    ``costs.2.weight``. Only existing keys may be replaced."""
    parts = key.split(".")
    node = data
    for depth, part in enumerate(parts):
        last = depth == len(parts) - 1
        if isinstance(node, list):
            if not part.isdigit() or int(part) >= len(node):
                raise ScenarioError("invalid override key (no such field)", key)
            part = int(part)
        elif not isinstance(node, dict) or part not in node:
            raise ScenarioError("invalid override key (no such field)", key)
        if last:
            node[part] = value
        else:
            node = node[part]


def parse_scenario(text: str, source: str = "<string>") -> ScenarioSpec:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{source}: JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ScenarioError(f"{source}: top level must be an object")
    return ScenarioSpec.from_dict(data)


def load_scenario(path) -> ScenarioSpec:
    path = Path(path)
    return parse_scenario(path.read_text(encoding="utf-8"), str(path))


def save_scenario(spec: ScenarioSpec, path) -> None:
    Path(path).write_text(spec.to_json(), encoding="utf-8")


# ---------------------------------------------------------------------------
# catalog
# ---------------------------------------------------------------------------

CATALOG_DIR = Path(__file__).parent / "catalog"
CATALOG_NAMES = (
    "terminal-circle",
    "prop-split",
    "running-flyv",
    "running-pincer",
    "pincer-congestion",
    "flyv-obstacle",
)


def paper_scenarios() -> dict[str, ScenarioSpec]:
    """The six demonstration scenarios, keyed by name."""
    return {name: load_scenario(CATALOG_DIR / f"{name}.json") for name in CATALOG_NAMES}


def get_scenario(name_or_path) -> ScenarioSpec:
    if str(name_or_path) in CATALOG_NAMES:
        return load_scenario(CATALOG_DIR / f"{name_or_path}.json")
    path = Path(name_or_path)
    if path.suffix == ".json" and path.exists():
        return load_scenario(path)
    raise ScenarioError(
        f"unknown scenario {str(name_or_path)!r}; catalog scenarios are: {', '.join(CATALOG_NAMES)}"
    )
