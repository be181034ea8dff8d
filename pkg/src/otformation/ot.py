"""Discrete optimal transport between weighted point clouds.

Three solvers share one plan type:

* :func:`solve_exact` -- transportation (network) simplex on the bipartite
  graph, exact to floating point.
* :func:`solve_assignment` -- the uniform square special case, returned as a
  permutation.
* :func:`solve_sinkhorn` -- entropic regularisation, iterated in the log
  domain so small ``epsilon`` does not underflow.

Weights are always normalised to sum to one before solving, so transport
costs are comparable across different agent counts.
"""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = [
    "DiscreteMeasure",
    "TransportPlan",
    "InvalidInputError",
    "SolverFailureError",
    "SinkhornUnderflowError",
    "SinkhornWarning",
    "build_cost_matrix",
    "solve_exact",
    "solve_assignment",
    "solve_sinkhorn",
    "emd_value",
    "emd",
]


class InvalidInputError(ValueError):
    pass


class SolverFailureError(RuntimeError):
    pass


class SinkhornUnderflowError(FloatingPointError):
    pass


class SinkhornWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted point cloud in the plane."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        points = np.atleast_2d(np.asarray(self.points, dtype=float))
        weights = np.asarray(self.weights, dtype=float).ravel()
        if points.size == 0:
            raise InvalidInputError("measure needs at least one point")
        if points.ndim != 2:
            raise InvalidInputError(f"points must be a 2D array, got shape {points.shape}")
        if len(weights) != len(points):
            raise InvalidInputError(f"{len(points)} points but {len(weights)} weights")
        if not np.all(np.isfinite(points)):
            raise InvalidInputError("non-finite point coordinates")
        if not np.all(np.isfinite(weights)) or np.any(weights < 0) or weights.sum() <= 0:
            raise InvalidInputError("weights must be finite, nonnegative and not all zero")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, points) -> DiscreteMeasure:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(points, np.full(len(points), 1.0 / max(len(points), 1)))

    def __len__(self):
        return len(self.points)

    @property
    def normalized_weights(self) -> np.ndarray:
        return self.weights / self.weights.sum()


@dataclass
class TransportPlan:
    coupling: np.ndarray
    value: float
    solver_tag: str
    marginal_error: float = 0.0
    iterations: int = 0
    converged: bool = True
    basis: list | None = None

    @property
    def support(self) -> np.ndarray:
        """Boolean mask of couplings that carry mass."""
        return self.coupling > 1e-12

    @property
    def T(self) -> TransportPlan:
        return TransportPlan(
            self.coupling.T.copy(), self.value, self.solver_tag,
            self.marginal_error, self.iterations, self.converged,
        )


def build_cost_matrix(source, target, metric: str = "squared_euclidean") -> np.ndarray:
    """Pairwise squared distances between source and target support points.

    ``source`` and ``target`` may be :class:`DiscreteMeasure` instances or raw
    ``(n, d)`` point arrays.
    """
    if metric != "squared_euclidean":
        raise InvalidInputError(f"unsupported metric {metric!r}")
    p = _points(source)
    q = _points(target)
    if p.shape[1] != q.shape[1]:
        raise InvalidInputError(f"dimension mismatch: {p.shape[1]} vs {q.shape[1]}")
    diff = p[:, None, :] - q[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _points(obj) -> np.ndarray:
    if isinstance(obj, DiscreteMeasure):
        return obj.points
    pts = np.atleast_2d(np.asarray(obj, dtype=float))
    if pts.size == 0:
        raise InvalidInputError("empty point set")
    if not np.all(np.isfinite(pts)):
        raise InvalidInputError("non-finite point coordinates")
    return pts


def _normalize(w, name: str) -> np.ndarray:
    w = np.asarray(w, dtype=float).ravel()
    if w.size == 0 or not np.all(np.isfinite(w)) or np.any(w < 0):
        raise InvalidInputError(f"{name} must be finite and nonnegative")
    total = w.sum()
    if total <= 0:
        raise InvalidInputError(f"{name} has zero total mass")
    return w / total


def _check_problem(a, b, cost):
    a = _normalize(a, "source weights")
    b = _normalize(b, "target weights")
    C = np.asarray(cost, dtype=float)
    if C.shape != (len(a), len(b)):
        raise InvalidInputError(f"cost matrix shape {C.shape} does not match weights ({len(a)}, {len(b)})")
    if not np.all(np.isfinite(C)):
        raise InvalidInputError("cost matrix has non-finite entries")
    return a, b, C


# ---------------------------------------------------------------------------
# exact solver
# ---------------------------------------------------------------------------

def _northwest_corner(a, b):
    """Initial spanning-tree basis; always returns exactly n + m - 1 cells."""
    n, m = len(a), len(b)
    flow = np.zeros((n, m))
    ra, rb = a.copy(), b.copy()
    basis = []
    i = j = 0
    while True:
        q = min(ra[i], rb[j])
        flow[i, j] = q
        basis.append((i, j))
        ra[i] -= q
        rb[j] -= q
        if i == n - 1 and j == m - 1:
            break
        if i == n - 1:
            j += 1
        elif j == m - 1:
            i += 1
        elif ra[i] <= rb[j]:
            i += 1
        else:
            j += 1
    np.clip(flow, 0.0, None, out=flow)
    return flow, basis


def _tree(n, m, basis):
    """BFS over the basis tree rooted at row 0.

    Nodes 0..n-1 are rows, n..n+m-1 are columns. Returns parent, depth and
    BFS order.
    """
    adj = [[] for _ in range(n + m)]
    for i, j in basis:
        adj[i].append(n + j)
        adj[n + j].append(i)
    parent = [-1] * (n + m)
    depth = [-1] * (n + m)
    depth[0] = 0
    order = [0]
    queue = deque([0])
    while queue:
        node = queue.popleft()
        for nb in adj[node]:
            if depth[nb] < 0:
                depth[nb] = depth[node] + 1
                parent[nb] = node
                order.append(nb)
                queue.append(nb)
    if len(order) != n + m:
        raise SolverFailureError("basis is not a spanning tree")
    return parent, depth, order


def _basis_flows(a, b, basis):
    """Basic solution of a given spanning-tree basis, or None if infeasible."""
    n, m = len(a), len(b)
    if len(basis) != n + m - 1:
        return None
    try:
        parent, _, order = _tree(n, m, basis)
    except SolverFailureError:
        return None
    flow = np.zeros((n, m))
    residual = np.concatenate([a, b])
    for node in reversed(order[1:]):
        p = parent[node]
        cell = (node, p - n) if node < n else (p, node - n)
        q = residual[node]
        if q < -1e-12:
            return None
        q = max(q, 0.0)
        flow[cell] = q
        residual[p] -= q
    return flow


def _potentials(C, n, parent, order):
    u = np.zeros(C.shape[0])
    v = np.zeros(C.shape[1])
    for node in order[1:]:
        p = parent[node]
        if node >= n:
            v[node - n] = C[p, node - n] - u[p]
        else:
            u[node] = C[node, p - n] - v[p - n]
    return u, v


def _cycle_path(n, parent, depth, i, j):
    """Tree path from row node ``i`` to column node ``n + j``, as a node list."""
    left, right = [i], [n + j]
    x, y = i, n + j
    while depth[x] > depth[y]:
        x = parent[x]
        left.append(x)
    while depth[y] > depth[x]:
        y = parent[y]
        right.append(y)
    while x != y:
        x = parent[x]
        y = parent[y]
        left.append(x)
        right.append(y)
    return left + right[-2::-1]


def solve_exact(a, b, cost, *, max_pivots: int | None = None, basis=None) -> TransportPlan:
    """Exact optimal transport by the transportation simplex method.

    Pricing is Dantzig's most-negative reduced cost. After a run of degenerate
    pivots the solver switches to Bland's smallest-index rule for entering and
    leaving cells, which cannot cycle; it switches back once a pivot moves
    mass again. Ties between optimal plans are broken by this deterministic
    pivot order.

    ``basis`` optionally warm-starts from the ``plan.basis`` of an earlier
    solve with the same weights; an unusable basis is silently replaced by
    the northwest-corner start.
    """
    a, b, C = _check_problem(a, b, cost)
    n, m = C.shape
    flow = None
    if basis is not None:
        basis = [tuple(c) for c in basis]
        flow = _basis_flows(a, b, basis)
    if flow is None:
        flow, basis = _northwest_corner(a, b)
    if max_pivots is None:
        max_pivots = 50 * (n + m) * max(n, m) + 100
    scale = max(1.0, float(np.abs(C).max()))
    rc_tol = 1e-12 * scale
    bland = False
    degenerate_run = 0
    pivots = 0

    while True:
        parent, depth, order = _tree(n, m, basis)
        u, v = _potentials(C, n, parent, order)
        reduced = C - u[:, None] - v[None, :]
        improving = reduced < -rc_tol
        if not improving.any():
            break
        if pivots >= max_pivots:
            raise SolverFailureError(f"transportation simplex did not terminate in {max_pivots} pivots")
        if bland:
            flat = int(np.flatnonzero(improving)[0])
        else:
            flat = int(np.argmin(reduced))
        ei, ej = divmod(flat, m)

        path = _cycle_path(n, parent, depth, ei, ej)
        edges = []
        for t in range(len(path) - 1):
            x, y = path[t], path[t + 1]
            edges.append((x, y - n) if x < n else (y, x - n))
        minus = edges[0::2]
        plus = edges[1::2]
        theta = min(flow[c] for c in minus)
        tie_tol = 1e-15 * max(1.0, theta)
        leaving_candidates = [c for c in minus if flow[c] - theta <= tie_tol]
        leave = min(leaving_candidates) if bland else leaving_candidates[0]

        for c in minus:
            flow[c] -= theta
        for c in plus:
            flow[c] += theta
        flow[ei, ej] += theta
        flow[leave] = 0.0
        basis.remove(leave)
        basis.append((ei, ej))
        pivots += 1

        if theta <= tie_tol:
            degenerate_run += 1
            if degenerate_run > n + m:
                bland = True
        else:
            degenerate_run = 0
            bland = False

    np.clip(flow, 0.0, None, out=flow)
    value = float(np.sum(flow * C))
    err = max(np.abs(flow.sum(1) - a).max(), np.abs(flow.sum(0) - b).max())
    return TransportPlan(flow, value, "exact", float(err), pivots, True, list(basis))


def solve_assignment(cost) -> tuple[np.ndarray, float]:
    """Optimal permutation for a square cost matrix.

    Returns ``(perm, value)`` where row ``i`` is matched to column ``perm[i]``
    and ``value`` is the unnormalised total ``sum_i C[i, perm[i]]``.
    """
    C = np.asarray(cost, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise InvalidInputError(f"assignment needs a square cost matrix, got shape {C.shape}")
    if not np.all(np.isfinite(C)):
        raise InvalidInputError("cost matrix has non-finite entries")
    rows, cols = linear_sum_assignment(C)
    perm = np.empty(len(rows), dtype=int)
    perm[rows] = cols
    return perm, float(C[rows, cols].sum())


# ---------------------------------------------------------------------------
# entropic solver
# ---------------------------------------------------------------------------

def solve_sinkhorn(a, b, cost, epsilon: float, max_iter: int = 10000, tol: float = 1e-9) -> TransportPlan:
    """Entropy-regularised transport by log-domain Sinkhorn iteration.

    The coupling is ``exp((f_i + g_j - C_ij) / epsilon)`` for dual potentials
    ``f, g``, which equals
    ``diag(u) K diag(v)`` with ``K = exp(-C / epsilon)``. Iteration stops when
    the max-norm marginal violation drops below ``tol``. Hitting ``max_iter``
    first returns the plan with ``converged=False`` and a warning.
    """
    if not epsilon > 0:
        raise InvalidInputError("epsilon must be positive")
    a, b, C = _check_problem(a, b, cost)
    with np.errstate(divide="ignore"):
        log_a = np.log(a)
        log_b = np.log(b)
    with np.errstate(over="ignore", invalid="ignore"):
        M = -C / epsilon
    if not np.all(np.isfinite(M)):
        raise SinkhornUnderflowError(
            f"kernel exp(-C/epsilon) is not representable at epsilon={epsilon:g}; use a larger epsilon"
        )

    # epsilon-scaling: warm-start the potentials on a decreasing schedule,
    # then iterate at the requested epsilon until the marginals are met
    f = np.zeros(len(a))
    g = np.zeros(len(b))
    c_max = float(C.max())
    schedule = []
    eps_k = c_max
    while eps_k > epsilon:
        schedule.append(eps_k)
        eps_k *= 0.5
    it = 0
    for eps_k in schedule:
        for _ in range(50):
            f, g = _sinkhorn_sweep(C, log_a, log_b, f, g, eps_k)
    for it in range(1, max_iter + 1):
        f, g = _sinkhorn_sweep(C, log_a, log_b, f, g, epsilon)
        if it % 10 and it != max_iter:
            continue
        # columns are exact after the g update; check rows only
        P = np.exp((f[:, None] + g[None, :] - C) / epsilon)
        err = float(np.abs(P.sum(1) - a).max())
        if err < tol:
            break

    P = np.exp((f[:, None] + g[None, :] - C) / epsilon)
    if not np.all(np.isfinite(P)) or np.any(P.sum(1)[a > 0] == 0) or np.any(P.sum(0)[b > 0] == 0):
        raise SinkhornUnderflowError(
            f"Sinkhorn plan underflowed at epsilon={epsilon:g}; use a larger epsilon"
        )
    err = float(max(np.abs(P.sum(1) - a).max(), np.abs(P.sum(0) - b).max()))
    converged = err < tol
    if not converged:
        warnings.warn(
            f"Sinkhorn stopped after {max_iter} iterations with marginal error {err:.3g} > tol={tol:g}",
            SinkhornWarning,
            stacklevel=2,
        )
    return TransportPlan(P, float(np.sum(P * C)), "sinkhorn", err, it, converged)


def _sinkhorn_sweep(C, log_a, log_b, f, g, eps):
    """One row + column update of the dual potentials (scaled by eps)."""
    f = eps * (log_a - _logsumexp((g[None, :] - C) / eps, axis=1))
    g = eps * (log_b - _logsumexp((f[:, None] - C) / eps, axis=0))
    return f, g


def _logsumexp(X, axis):
    top = X.max(axis=axis, keepdims=True)
    return np.log(np.exp(X - top).sum(axis=axis)) + top.squeeze(axis)


def emd_value(plan, cost) -> float:
    """Transport cost ``sum_ij plan_ij * cost_ij``."""
    P = plan.coupling if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=float)
    C = np.asarray(cost, dtype=float)
    if P.shape != C.shape:
        raise InvalidInputError(f"plan shape {P.shape} does not match cost shape {C.shape}")
    return float(np.sum(P * C))


def emd(source: DiscreteMeasure, target: DiscreteMeasure) -> float:
    """Exact squared-Euclidean EMD between two measures."""
    C = build_cost_matrix(source, target)
    return solve_exact(source.weights, target.weights, C).value
