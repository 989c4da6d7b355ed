"""Computation-side scheduling: which server runs each task and with how much
VM capability.

The exact problem assigns every task to one server and sizes its VM so the
task finishes within ``tau_ex``; VM power is ``chi * A``. Splitting tasks
across servers gives a linear relaxation that is written in the load split
``l`` only, because the deadline constraint ``l <= efficiency * a * tau_ex``
is always tight at the optimum (``chi > 0``), so ``a = l / (efficiency *
tau_ex)``.

``branch_and_bound`` is exact; ``heuristic`` is a fast greedy that may fail;
``combinational`` runs the heuristic and falls back to branch and bound.
Infeasible instances give ``None``; numerical or budget problems raise.
"""

from __future__ import annotations

import heapq
import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from ._lp import simplex
from .errors import ConfigError, ResourceLimitError

INTEGRAL_TOL = 1e-9


@dataclass(frozen=True)
class SchedulingInstance:
    """Computation-side data: ``K`` tasks and ``S`` servers.

    ``efficiency`` and ``chi`` are ``S x K``.
    """

    loads: np.ndarray
    tau_ex: np.ndarray
    capacity: np.ndarray
    efficiency: np.ndarray
    chi: np.ndarray

    def __post_init__(self):
        for name in ("loads", "tau_ex", "capacity", "efficiency", "chi"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        K, S = self.loads.size, self.capacity.size
        if K < 1 or S < 1:
            raise ConfigError("need at least one task and one server")
        if self.efficiency.shape != (S, K) or self.chi.shape != (S, K):
            raise ConfigError("efficiency and chi must be S x K")
        if self.tau_ex.shape != (K,) or np.any(~(self.tau_ex > 0)):
            raise ConfigError("tau_ex must be positive for every task")
        if np.any(~(self.loads > 0)) or np.any(~(self.capacity > 0)):
            raise ConfigError("loads and capacities must be positive")
        if np.any(self.efficiency < 0) or np.any(~(self.chi > 0)):
            raise ConfigError("efficiency must be >= 0 and chi > 0")

    @classmethod
    def from_scenario(cls, scenario, tau_ex=None):
        return cls(
            loads=scenario.loads,
            tau_ex=scenario.tau_ex if tau_ex is None else tau_ex,
            capacity=scenario.capacity,
            efficiency=scenario.efficiency,
            chi=scenario.chi,
        )

    @property
    def K(self):
        return self.loads.size

    @property
    def S(self):
        return self.capacity.size

    @property
    def allowed(self):
        """Pairs that may be assigned (positive efficiency)."""
        return self.efficiency > 0

    def min_allocation(self):
        """``L_k / (tau_ex_k * efficiency_sk)``; ``inf`` where efficiency is 0."""
        with np.errstate(divide="ignore"):
            return np.where(self.allowed,
                            self.loads[None, :] / (self.tau_ex[None, :] * self.efficiency),
                            np.inf)

    def unit_cost(self):
        """Cost per unit of load, ``chi / (efficiency * tau_ex)``."""
        with np.errstate(divide="ignore"):
            return np.where(self.allowed,
                            self.chi / (self.efficiency * self.tau_ex[None, :]), np.inf)


@dataclass
class SchedulePlan:
    """Binary assignment ``x`` and VM capabilities ``A`` (both ``S x K``).

    ``method`` records which algorithm produced the plan; ``nodes`` counts
    branch-and-bound expansions (0 for the other methods).
    """

    x: np.ndarray
    A: np.ndarray
    objective: float
    method: str = ""
    nodes: int = 0
    wall_time: float = 0.0

    def residuals(self, instance: SchedulingInstance):
        """Worst violation of each feasibility condition."""
        x, A = self.x, self.A
        used = np.sum(x * A, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            t_ex = np.where(x > 0, instance.loads[None, :]
                            / (instance.efficiency * A), 0.0)
        return {
            "assignment": float(np.max(np.abs(x.sum(axis=0) - 1.0))),
            "capacity": float(np.max(np.maximum(used - instance.capacity, 0.0))),
            "deadline": float(np.max(np.maximum(t_ex.max(axis=0) - instance.tau_ex, 0.0))),
            "idle_alloc": float(np.max(np.where(x == 0, np.abs(A), 0.0))),
        }

    def server_power(self, instance: SchedulingInstance):
        return np.sum(instance.chi * self.x * self.A, axis=1)


@dataclass
class RelaxedPlan:
    """Optimal split-load relaxation: load split ``l``, capabilities ``a``."""

    l: np.ndarray
    a: np.ndarray
    z: float

    def is_integral(self, instance, tol=INTEGRAL_TOL):
        frac = self.l / instance.loads[None, :]
        return bool(np.all(np.minimum(frac, 1.0 - frac) <= tol))


@dataclass(order=True)
class BnbNode:
    """Branch-and-bound node: pairs fixed to 0 (``S0``) or 1 (``S1``).

    Nodes order by ``(z, order)``, so equal bounds pop in creation order.
    """

    z: float
    order: int
    S0: frozenset = field(compare=False)
    S1: frozenset = field(compare=False)
    relaxed: RelaxedPlan = field(compare=False, default=None)


def _plan_from_assignment(instance, servers, method, nodes=0):
    S, K = instance.S, instance.K
    x = np.zeros((S, K))
    x[servers, np.arange(K)] = 1.0
    A = np.where(x > 0, instance.min_allocation(), 0.0)
    A[~np.isfinite(A)] = 0.0
    obj = float(np.sum(instance.chi * A))
    return SchedulePlan(x=x, A=A, objective=obj, method=method, nodes=nodes)


def solve_relaxation(instance: SchedulingInstance, S0=(), S1=()):
    """Split-load LP with pairs in ``S0`` forbidden and pairs in ``S1`` forced
    to carry their whole task.

    Returns
    -------
    RelaxedPlan or None
        ``None`` when the relaxation is infeasible.
    """
    S, K = instance.S, instance.K
    free = instance.allowed.copy()
    for s, k in S0:
        free[s, k] = False
    for s, k in S1:
        if not instance.allowed[s, k]:
            return None
    idx = np.argwhere(free)  # variable j <-> pair idx[j]
    if idx.size == 0 or np.any(~free.any(axis=0)):
        return None
    n = len(idx)
    unit = instance.unit_cost()[idx[:, 0], idx[:, 1]]
    need = 1.0 / (instance.efficiency[idx[:, 0], idx[:, 1]] * instance.tau_ex[idx[:, 1]])

    A_eq = np.zeros((K, n))
    A_eq[idx[:, 1], np.arange(n)] = 1.0
    b_eq = instance.loads.copy()
    rows, rhs = [], []
    pos = {(int(s), int(k)): j for j, (s, k) in enumerate(idx)}
    for s, k in sorted(S1):
        j = pos.get((s, k))
        if j is None:  # also in S0
            return None
        r = np.zeros(n)
        r[j] = 1.0
        rows.append(r)
        rhs.append(instance.loads[k])
    if rows:
        A_eq = np.vstack([A_eq, rows])
        b_eq = np.concatenate([b_eq, rhs])
    A_ub = np.zeros((S, n))
    A_ub[idx[:, 0], np.arange(n)] = need
    res = simplex(unit, A_eq, b_eq, A_ub, instance.capacity)
    if res.status != "optimal":
        return None
    l = np.zeros((S, K))
    l[idx[:, 0], idx[:, 1]] = res.x
    a = np.zeros((S, K))
    a[idx[:, 0], idx[:, 1]] = res.x * need
    return RelaxedPlan(l=l, a=a, z=res.value)


def priority(instance: SchedulingInstance, s, k):
    """Branching priority ``chi L / efficiency`` (``inf`` for zero efficiency)."""
    eff = instance.efficiency[s, k]
    if eff <= 0:
        return np.inf
    return float(instance.chi[s, k] * instance.loads[k] / eff)


def _branch_pair(instance, S0, S1):
    best, best_val = None, -np.inf
    for s in range(instance.S):
        for k in range(instance.K):
            if (s, k) in S0 or (s, k) in S1:
                continue
            v = priority(instance, s, k)
            if v > best_val:  # strict: lexicographic order wins ties
                best, best_val = (s, k), v
    return best


def branch_and_bound(instance: SchedulingInstance, node_limit=100_000):
    """Exact best-first branch and bound over the split-load relaxation.

    Fixing a pair to 1 also fixes the task's other pairs to 0. A node whose
    relaxation is already integral is solved and becomes an incumbent
    candidate without further branching.

    Returns
    -------
    SchedulePlan or None
        ``None`` when the instance is infeasible.

    Raises
    ------
    ResourceLimitError
        More than ``node_limit`` nodes expanded; carries the incumbent and
        the gap to the smallest open bound.
    """
    t0 = time.perf_counter()
    counter = itertools.count()
    S0 = frozenset((int(s), int(k)) for s, k in np.argwhere(~instance.allowed))
    root_rel = solve_relaxation(instance, S0, ())
    if root_rel is None:
        return None
    best_z, best_assign = np.inf, None

    def leaf_assignment(rel):
        return np.argmax(rel.l, axis=0)

    def consider(node):
        nonlocal best_z, best_assign
        rel = node.relaxed
        fixed_all = len(node.S0) + len(node.S1) == instance.S * instance.K
        if fixed_all or rel.is_integral(instance):
            if rel.z < best_z:
                best_z, best_assign = rel.z, leaf_assignment(rel)
            return None
        return node

    open_nodes = []
    root = BnbNode(root_rel.z, next(counter), S0, frozenset(), root_rel)
    if consider(root) is not None:
        heapq.heappush(open_nodes, root)
    expanded = 0
    while open_nodes:
        node = heapq.heappop(open_nodes)
        if node.z > best_z:
            continue
        if expanded >= node_limit:
            heapq.heappush(open_nodes, node)
            inc = (None if best_assign is None else
                   _plan_from_assignment(instance, best_assign, "bnb", expanded))
            gap = best_z - min(n.z for n in open_nodes)
            raise ResourceLimitError(
                f"branch and bound exceeded {node_limit} nodes", inc, gap)
        expanded += 1
        pair = _branch_pair(instance, node.S0, node.S1)
        if pair is None:
            continue
        s, k = pair
        others = {(t, k) for t in range(instance.S) if t != s}
        children = [
            (node.S0 | {pair}, node.S1),
            (node.S0 | others, node.S1 | {pair}),
        ]
        for c0, c1 in children:
            rel = solve_relaxation(instance, c0, c1)
            if rel is None or not rel.z < best_z:
                continue
            child = consider(BnbNode(rel.z, next(counter), c0, c1, rel))
            if child is not None:
                heapq.heappush(open_nodes, child)
        open_nodes = [n for n in open_nodes if not n.z > best_z]
        heapq.heapify(open_nodes)
    if best_assign is None:
        return None
    plan = _plan_from_assignment(instance, best_assign, "bnb", expanded)
    plan.wall_time = time.perf_counter() - t0
    return plan


def heuristic(instance: SchedulingInstance):
    """Greedy: largest task first, onto the cheapest server (smallest
    ``chi / efficiency``) that still has room for the minimum VM.

    Returns ``None`` when some task fits on no server.
    """
    t0 = time.perf_counter()
    left = instance.capacity.astype(float).copy()
    need = instance.min_allocation()
    with np.errstate(divide="ignore"):
        ratio = np.where(instance.allowed, instance.chi / instance.efficiency, np.inf)
    assign = np.full(instance.K, -1)
    for k in sorted(range(instance.K), key=lambda j: (-instance.loads[j], j)):
        for s in sorted(range(instance.S), key=lambda t: (ratio[t, k], t)):
            if not instance.allowed[s, k]:
                continue
            if need[s, k] <= left[s]:
                left[s] -= need[s, k]
                assign[k] = s
                break
        else:
            return None
    plan = _plan_from_assignment(instance, assign, "heuristic")
    plan.wall_time = time.perf_counter() - t0
    return plan


def combinational(instance: SchedulingInstance, node_limit=100_000):
    """Heuristic first; branch and bound if the heuristic fails."""
    plan = heuristic(instance)
    if plan is not None:
        return plan
    return branch_and_bound(instance, node_limit=node_limit)


def brute_force_oracle(instance: SchedulingInstance, max_assignments=10**6):
    """Enumerate every assignment; for testing only.

    Raises
    ------
    ResourceLimitError
        When ``S**K`` exceeds ``max_assignments``.
    """
    S, K = instance.S, instance.K
    if S ** K > max_assignments:
        raise ResourceLimitError(f"{S}^{K} assignments exceed {max_assignments}")
    need = instance.min_allocation()
    cost = instance.chi * need
    grid = np.array(list(itertools.product(range(S), repeat=K)), dtype=int).reshape(-1, K)
    cols = np.arange(K)
    load = np.zeros((grid.shape[0], S))
    for k in cols:
        np.add.at(load, (np.arange(grid.shape[0]), grid[:, k]), need[grid[:, k], k])
    total = cost[grid, cols].sum(axis=1)
    ok = np.all(load <= instance.capacity[None, :], axis=1) & np.isfinite(total)
    if not np.any(ok):
        return None
    best = np.flatnonzero(ok)[np.argmin(total[ok])]
    return _plan_from_assignment(instance, grid[best], "brute_force")
