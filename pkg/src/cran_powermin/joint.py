"""Joint scheduling and transmission design by hierarchical dual decomposition.

The coupled delay constraint ``L_k / (efficiency A_k) + D_k / (B R_k) <=
tau_k`` is priced by ``mu_k``. For fixed prices the Lagrangian splits into a
computation subproblem :func:`solve_g1` (assignment and VM sizing) and a
transmission subproblem :func:`solve_g2` over the lifted ``(W, Psi)``; the
prices follow projected subgradient steps.

The UE rate is minorized with a scalar ``phi_k`` (touching at
``phi_k = 1 / Int_k``) and the fronthaul rate majorized with ``Gamma_l``, so
every subproblem is convex: ``1 / R`` of a positive concave ``R`` is convex.
An outer loop refreshes ``(Gamma, phi)``, the fixed-point values ``e`` and
the sleep weights at the best primal point found so far.

Primal points come from the convex problem obtained by fixing the
assignment: VM sizes, ``W`` and ``Psi`` are then optimized jointly under
the delay constraint. Every assignment produced by ``g1`` is tried.
"""

from __future__ import annotations

import heapq
import itertools
import queue
import threading
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import (
    DomainError, InfeasibleError, NumericalLimitError, ResourceLimitError,
)
from .largesystem import (
    LOG2, TransmitPlan, approx_fronthaul_rate, approx_transmit_power, fixed_point,
    sig_int,
)
from .scenario import Scenario
from .scheduler import SchedulePlan, SchedulingInstance
from .sdpcore import (
    Affine, Concave, ConvexProgram, Function, Layout, NegLogDet, Reciprocal, minimize,
)
from .transmit import (
    PSI_FLOOR, LiftedModel, ReweightState, _psi_blocks, extract_plan, initial_plan,
    polish_sleep, power_report,
)

MU_MAX = 1e8
SLACK_CLIP = 10.0
DELAY_TOL = 1e-6


# ----------------------------------------------------------------------------
# state and results


@dataclass
class DualState:
    """Prices and majorizer parameters of one outer iteration.

    ``mu`` is in watts per second of delay violation; ``gamma`` is
    ``L x N x N``; ``rho`` holds the sleep weights and ``e`` the frozen
    fixed-point values.
    """

    mu: np.ndarray
    phi: np.ndarray
    gamma: np.ndarray
    best_dual: float = -np.inf
    rho: np.ndarray = None
    e: np.ndarray = None

    def check(self):
        if np.any(self.mu < 0):
            raise DomainError("prices must be nonnegative")
        if np.any(~(self.phi > 0)):
            raise DomainError("phi must be positive")
        for g in self.gamma:
            if np.linalg.eigvalsh(0.5 * (g + g.T)).min() <= 0:
                raise DomainError("gamma must be positive definite")


@dataclass
class JointPlan:
    """Final schedule and transmit plan with exact powers and delays.

    ``total_power`` is VM power plus ``omega`` times RRH and fronthaul
    power; ``delay_slack`` is ``tau - T_ex - T_tr`` per UE.
    """

    schedule: SchedulePlan
    transmit: TransmitPlan
    total_power: float
    delay_slack: np.ndarray
    vm_power: float = 0.0
    radio_power: float = 0.0
    exec_delay: np.ndarray = None
    tx_delay: np.ndarray = None


@dataclass
class JointResult:
    plan: JointPlan
    trace: list
    outer_trace: list
    best_dual: float
    best_primal: float
    outer_iterations: int
    wall_time: float

    @property
    def gap(self):
        """Relative primal-dual gap of the last outer iteration."""
        return (self.best_primal - self.best_dual) / abs(self.best_primal)


# ----------------------------------------------------------------------------
# rates


def ue_rate(W, psi, k, stats, sigma2):
    """Deterministic UE rate ``log2(1 + Sig / Int)`` from a lift ``W``."""
    sig, intf = _sig_int_lifted(W, psi, k, stats, sigma2)
    return float(np.log1p(sig / intf) / LOG2)


def _sig_int_lifted(W, psi, k, stats, sigma2):
    L, K = stats.d.shape
    W = np.asarray(W, dtype=float)
    p = np.diag(W).reshape(K, L).T
    N = np.asarray(psi).shape[-1] if np.ndim(psi) == 3 else np.asarray(psi).shape[0] // L
    blocks = _psi_blocks(psi, L, N)
    dbar = np.sqrt(stats.xi2) * stats.d[:, k]
    Wk = W[k * L:(k + 1) * L, k * L:(k + 1) * L]
    sig = float(dbar @ Wk @ dbar)
    cross = sum(stats.xi2 @ (stats.d[:, i] * stats.d[:, k] * p[:, i])
                for i in range(K) if i != k)
    tr_psi = np.trace(blocks, axis1=1, axis2=2)
    intf = float(cross / N + (stats.d[:, k] @ tr_psi + sigma2) / N ** 2)
    return sig, intf


def majorized_ue_rate(W, psi, phi_k, k, stats, sigma2):
    """Lower bound on the UE rate in bits per channel use.

    ``log(Sig + Int) + log(phi) - phi Int + 1`` in nats, divided by
    ``ln 2``. Equal to the deterministic rate at ``phi_k = 1 / Int_k``.
    ``W`` is the ``KL x KL`` lift and ``psi`` block diagonal or stacked.
    """
    if not phi_k > 0:
        raise DomainError("phi must be positive")
    sig, intf = _sig_int_lifted(W, psi, k, stats, sigma2)
    val = np.log(sig + intf) + np.log(phi_k) - phi_k * intf + 1.0
    return float(val / LOG2)


def update_majorizers(scenario: Scenario, plan: TransmitPlan):
    """Touching parameters at ``plan``: ``(gamma, phi, e)``.

    ``gamma_l = Lambda_l^{-1}``, ``phi_k = 1 / Int_k`` and ``e`` the fixed
    point; applying the update twice at the same plan changes nothing.
    """
    fp = fixed_point(plan, scenario.stats)
    gamma = np.linalg.inv(fp.lambda_mat)
    gamma = 0.5 * (gamma + np.transpose(gamma, (0, 2, 1)))
    _, intf = sig_int(plan, scenario.stats, scenario.radio.sigma2)
    return gamma, 1.0 / intf, fp.e


# ----------------------------------------------------------------------------
# computation side


def scheduling_instance(scenario: Scenario, tau_ex=None):
    tau_ex = scenario.tau if tau_ex is None else tau_ex
    return SchedulingInstance(loads=scenario.loads, tau_ex=tau_ex,
                              capacity=scenario.capacity,
                              efficiency=scenario.efficiency, chi=scenario.chi)


def _server_allocation(coef, chi, capacity):
    """Minimize ``sum chi A + coef / A`` subject to ``sum A <= capacity``.

    Returns ``(A, value)``. ``A_k = sqrt(coef_k / (chi_k + nu))`` with the
    capacity price ``nu >= 0`` found by bisection.
    """
    coef = np.asarray(coef, dtype=float)
    chi = np.asarray(chi, dtype=float)
    if coef.size == 0:
        return coef.copy(), 0.0

    def alloc(nu):
        return np.sqrt(coef / (chi + nu))

    A = alloc(0.0)
    if A.sum() > capacity:
        hi = 1.0
        while alloc(hi).sum() > capacity:
            hi *= 4.0
        nu = brentq(lambda v: alloc(v).sum() - capacity, 0.0, hi, xtol=1e-300, rtol=1e-15)
        A = alloc(nu)
        A *= min(1.0, capacity / A.sum())
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(coef > 0, coef / A, 0.0)
    return A, float(np.sum(chi * A) + inv.sum())


def _assignment_value(instance, mu, servers):
    """``(A, value)`` of a full assignment; ``A`` is ``S x K``."""
    S, K = instance.S, instance.K
    A = np.zeros((S, K))
    total = 0.0
    for s in range(S):
        ks = np.flatnonzero(servers == s)
        if ks.size == 0:
            continue
        coef = mu[ks] * instance.loads[ks] / instance.efficiency[s, ks]
        a, v = _server_allocation(coef, instance.chi[s, ks], instance.capacity[s])
        A[s, ks] = a
        total += v
    return A, total


def _g1_relaxation(instance, mu, S0, S1, tol):
    """Split-capability relaxation of ``g1``: a task may draw capability from
    several servers; its delay uses the summed effective capability.

    Returns ``(lower_bound, y)`` with ``y`` ``S x K``, or ``None`` when some
    priced task has no allowed server.
    """
    S, K = instance.S, instance.K
    free = instance.allowed.copy()
    for s, k in S0:
        free[s, k] = False
    active = mu > 0
    free[:, ~active] = False
    if np.any(~free[:, active].any(axis=0)):
        return None
    idx = np.argwhere(free)
    n = len(idx)
    if n == 0:
        return 0.0, np.zeros((S, K))
    lay = Layout([], n)
    terms = [Affine(instance.chi[idx[:, 0], idx[:, 1]])]
    for k in np.flatnonzero(active):
        c = np.where(idx[:, 1] == k, instance.efficiency[idx[:, 0], idx[:, 1]], 0.0)
        terms.append(Reciprocal(Concave(np.zeros((0, n)), np.zeros(0), np.zeros(0), c),
                                float(mu[k] * instance.loads[k])))
    prog = ConvexProgram(lay, Function(terms))
    for s in range(S):
        row = (idx[:, 0] == s).astype(float)
        if row.any():
            prog.add_constraint([Affine(row)], instance.capacity[s])
    for j in range(n):
        e = np.zeros(n)
        e[j] = -1.0
        prog.add_constraint([Affine(e)], 0.0)
    per = np.bincount(idx[:, 0], minlength=S)
    x0 = instance.capacity[idx[:, 0]] / (2.0 * per[idx[:, 0]])
    sol = minimize(prog, x0, tol=tol)
    y = np.zeros((S, K))
    y[idx[:, 0], idx[:, 1]] = sol.x
    return sol.lower_bound, y


def _greedy_servers(instance, mu, score):
    """Each task on its best allowed server by ``score`` (``S x K``)."""
    masked = np.where(instance.allowed, score, -np.inf)
    return np.argmax(masked, axis=0)


def solve_g1(mu, instance: SchedulingInstance, node_limit=10_000, tol=1e-10):
    """Computation subproblem ``min sum chi A + sum mu_k L_k / (eff A)``.

    Exact best-first branch and bound over binary assignments. Node bounds
    come from the split-capability relaxation; leaves (every priced task
    assigned) are solved in closed form per server. Unpriced tasks get
    ``A = 0`` on their first allowed server.

    Returns
    -------
    (x, A, value)
        ``x`` and ``A`` are ``S x K``.

    Raises
    ------
    ResourceLimitError
        More than ``node_limit`` nodes; carries ``(x, A, value)`` of the
        incumbent and the gap to the smallest open bound.
    """
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (instance.K,) or np.any(mu < 0):
        raise DomainError("mu must be a nonnegative length-K vector")
    S, K = instance.S, instance.K
    if np.any(~instance.allowed.any(axis=0)):
        raise InfeasibleError("some task has no server with positive efficiency")
    with np.errstate(divide="ignore", invalid="ignore"):
        # unconstrained per-pair cost 2 sqrt(mu L chi / eff)
        single = np.where(instance.allowed,
                          2.0 * np.sqrt(mu[None, :] * instance.loads[None, :]
                                        * instance.chi / instance.efficiency), np.inf)
    base = _greedy_servers(instance, mu, -single)
    best_A, best_val = _assignment_value(instance, mu, base)
    best_servers = base.copy()

    def consider(servers):
        nonlocal best_A, best_val, best_servers
        A, val = _assignment_value(instance, mu, servers)
        if val < best_val:
            best_A, best_val, best_servers = A, val, servers.copy()

    priced = np.flatnonzero(mu > 0)
    S0 = frozenset((int(s), int(k)) for s, k in np.argwhere(~instance.allowed))
    counter = itertools.count()
    open_nodes = []
    expanded = 0
    rel = _g1_relaxation(instance, mu, S0, frozenset(), tol)
    if rel is not None:
        heapq.heappush(open_nodes, (rel[0], next(counter), S0, frozenset(), rel[1]))
    while open_nodes:
        z, _, n0, n1, y = heapq.heappop(open_nodes)
        if z >= best_val - tol * (1.0 + abs(best_val)):
            continue
        if expanded >= node_limit:
            x = np.zeros((S, K))
            x[best_servers, np.arange(K)] = 1.0
            raise ResourceLimitError(f"g1 branch and bound exceeded {node_limit} nodes",
                                     (x, best_A, best_val), best_val - z)
        expanded += 1
        eff_y = instance.efficiency * y
        consider(np.where(mu > 0, np.argmax(eff_y, axis=0), base))
        fixed = {k for _, k in n1}
        open_tasks = [k for k in priced if k not in fixed]
        if not open_tasks:
            continue
        # branch on the task whose capability is most spread out
        share = eff_y[:, open_tasks] / np.maximum(eff_y[:, open_tasks].sum(axis=0), 1e-300)
        col = int(np.argmin(share.max(axis=0)))
        k = open_tasks[col]
        s = int(np.argmax(eff_y[:, k]))
        others = {(t, k) for t in range(S) if t != s}
        for c0, c1 in ((n0 | {(s, k)}, n1), (n0 | others, n1 | {(s, k)})):
            if len({kk for _, kk in c1}) == priced.size:
                servers = base.copy()
                for ss, kk in c1:
                    servers[kk] = ss
                consider(servers)
                continue
            child = _g1_relaxation(instance, mu, c0, c1, tol)
            if child is None or child[0] >= best_val:
                continue
            heapq.heappush(open_nodes, (child[0], next(counter), c0, c1, child[1]))
    x = np.zeros((S, K))
    x[best_servers, np.arange(K)] = 1.0
    return x, best_A, float(best_val)


def exec_delay(instance: SchedulingInstance, x, A):
    """``L_k / (eff A)`` on the assigned server (``inf`` when ``A = 0``)."""
    cap = np.sum(x * instance.efficiency * A, axis=0)
    with np.errstate(divide="ignore"):
        return np.where(cap > 0, instance.loads / cap, np.inf)


# ----------------------------------------------------------------------------
# transmission side


class _JointModel:
    """Terms of the convexified problem over ``[W_1..W_K, Psi_1..Psi_L]``
    plus ``extra`` trailing scalars."""

    def __init__(self, scenario: Scenario, extra=0, psi_floor=PSI_FLOOR):
        self.sc = scenario
        self.base = LiftedModel(scenario, psi_floor)
        b = self.base.layout
        self.layout = Layout(b.dims, extra, b.floors)
        self.n0 = b.size
        self.size = self.layout.size

    def pad(self, c):
        out = np.zeros(self.size)
        out[:self.n0] = c
        return out

    def radio_terms(self, rho, gamma, e):
        """``omega`` times the surrogate RRH and majorized fronthaul power."""
        m, radio, w = self.base, self.sc.radio, self.sc.omega
        coef = 1.0 / radio.upsilon + np.asarray(rho) * radio.delta_p
        c = (coef[:, None] * m.power).sum(axis=0)
        terms = [Affine(self.pad(w * c), float(w * m.L * radio.p_sleep))]
        scale = w * radio.eta / LOG2
        for l in range(m.L):
            aff, nld = m.fronthaul_terms(l, gamma[l], e)
            terms.append(Affine(self.pad(aff.c * scale), aff.c0 * scale))
            terms.append(NegLogDet(nld.block, scale))
        return terms

    def rate(self, k, phi_k):
        """Minorized UE rate in nats as a :class:`Concave`."""
        m = self.base
        row = self.pad(m.sig[k] + m.intf[k])[None, :]
        return Concave(row, np.array([m.noise]), np.ones(1), self.pad(-phi_k * m.intf[k]),
                       float(np.log(phi_k) - phi_k * m.noise + 1.0))

    def delay_term(self, k, phi_k, weight=1.0):
        """``weight * D_k / (B R_k)`` in seconds times ``weight``."""
        scale = weight * self.sc.D[k] * LOG2 / self.sc.radio.B
        return Reciprocal(self.rate(k, phi_k), float(scale))

    def add_radio_constraints(self, prog, gamma, e):
        m, radio = self.base, self.sc.radio
        for l in range(m.L):
            aff, nld = m.fronthaul_terms(l, gamma[l], e)
            prog.add_constraint([Affine(self.pad(aff.c), aff.c0), nld], radio.C * LOG2)
            scale = 1.0 / max(1.0, radio.p_max)
            prog.add_constraint([Affine(self.pad(m.power[l] * scale))], radio.p_max * scale)

    def rates_at(self, x, phi):
        """Minorized rates (nats) at ``x``; ``nan`` where undefined."""
        out = np.full(self.sc.K, np.nan)
        for k in range(self.sc.K):
            v = self.rate(k, phi[k]).eval(x, order=0)[0]
            out[k] = v
        return out


def _value_and_start(prog, x):
    return prog.objective.eval(prog.layout, x, order=0)[0]


def solve_g2(mu, scenario: Scenario, state: DualState, x0=None, tol=1e-9, model=None):
    """Transmission subproblem at fixed majorizers.

    ``min omega (surrogate RRH power + eta R_F) + sum mu_k D_k / (B R_k)``
    subject to the fronthaul and transmit power limits, with ``R_F``
    majorized by ``gamma`` and ``R_k`` minorized by ``phi``.

    Parameters
    ----------
    x0 : numpy.ndarray, optional
        Start in the block layout; must give every priced UE a positive
        minorized rate. Defaults to the initial equal-power plan.

    Returns
    -------
    (W, psi, value, lower_bound, x)
        ``W`` is the ``KL x KL`` lift and ``psi`` ``L x N x N``.

    Raises
    ------
    InfeasibleError
        The fronthaul and power limits admit no point.
    """
    mu = np.asarray(mu, dtype=float)
    if np.any(mu < 0):
        raise DomainError("prices must be nonnegative")
    model = model or _JointModel(scenario)
    rho = np.zeros(scenario.L) if state.rho is None else state.rho
    e = state.e
    if e is None:
        e = fixed_point(initial_plan(scenario), scenario.stats).e
    terms = model.radio_terms(rho, state.gamma, e)
    for k in range(scenario.K):
        if mu[k] > 0 and scenario.D[k] > 0:
            terms.append(model.delay_term(k, state.phi[k], mu[k]))
    prog = ConvexProgram(model.layout, Function(terms))
    model.add_radio_constraints(prog, state.gamma, e)
    if x0 is None:
        x0 = model.base.pack_plan(initial_plan(scenario))
    if not np.isfinite(_value_and_start(prog, x0)):
        raise DomainError("start point gives a priced UE a nonpositive rate")
    sol = minimize(prog, x0, tol=tol)
    W = _lift_of(model.base, sol.x)
    return W, model.base.psi_blocks(sol.x), sol.value, sol.lower_bound, sol.x


def _lift_of(base, x):
    from .transmit import _block_diag
    return _block_diag(base.w_blocks(x))


def subgradient_step(mu, plan_slacks, step_index, delta0=0.1, step=None):
    """Projected price update ``max(0, mu + delta * slack)``.

    ``delta = delta0 / sqrt(step_index)`` unless ``step`` is given.
    """
    if step_index < 1:
        raise DomainError("step_index starts at 1")
    mu = np.asarray(mu, dtype=float)
    delta = delta0 / np.sqrt(step_index) if step is None else step
    return np.maximum(0.0, mu + delta * np.asarray(plan_slacks, dtype=float))


# ----------------------------------------------------------------------------
# primal recovery: fixed assignment


@dataclass
class _Primal:
    servers: np.ndarray
    x: np.ndarray          # block layout plus one VM size per task
    value: float           # convexified objective at the current majorizers
    prices: np.ndarray = None  # delay-constraint multipliers


def _restricted(scenario, model, state, servers, start, tol):
    """Fixed-assignment problem: VM sizes, ``W`` and ``Psi`` jointly.

    Returns a :class:`_Primal` or ``None`` when infeasible.
    """
    K = scenario.K
    eff = scenario.efficiency[servers, np.arange(K)]
    chi = scenario.chi[servers, np.arange(K)]
    n0 = model.n0
    c = np.zeros(model.size)
    c[n0:] = chi
    terms = [Affine(c)] + model.radio_terms(state.rho, state.gamma, state.e)
    prog = ConvexProgram(model.layout, Function(terms))
    for k in range(K):
        ck = np.zeros(model.size)
        ck[n0 + k] = eff[k]
        dterms = [Reciprocal(Concave(np.zeros((0, model.size)), np.zeros(0), np.zeros(0), ck),
                             float(scenario.loads[k]))]
        if scenario.D[k] > 0:
            dterms.append(model.delay_term(k, state.phi[k]))
        prog.add_constraint(dterms, scenario.tau[k])
    for s in range(scenario.S):
        ks = np.flatnonzero(servers == s)
        if ks.size:
            row = np.zeros(model.size)
            row[n0 + ks] = 1.0
            prog.add_constraint([Affine(row)], scenario.capacity[s])
    model.add_radio_constraints(prog, state.gamma, state.e)
    # VM sizes start at an equal share of each server
    x = np.array(start, dtype=float)
    counts = np.bincount(servers, minlength=scenario.S)
    x[n0:] = scenario.capacity[servers] / (counts[servers] + 1.0)
    try:
        sol = minimize(prog, x, tol=tol)
    except (InfeasibleError, DomainError):
        return None
    return _Primal(servers=np.asarray(servers).copy(), x=sol.x, value=sol.value,
                   prices=sol.multipliers[:K].copy())


def _primal_value(scenario, model, state, primal: _Primal):
    """Convexified objective of a stored primal point at ``state``."""
    K = scenario.K
    chi = scenario.chi[primal.servers, np.arange(K)]
    terms = model.radio_terms(state.rho, state.gamma, state.e)
    val = Function(terms).eval(model.layout, primal.x, order=0)[0]
    return float(val + chi @ primal.x[model.n0:])


def _merit(scenario, model, primal: _Primal, c1, c2):
    """Network power with the log sleep penalty: the quantity every outer
    iteration decreases."""
    radio = scenario.radio
    plan = model.base.plan(primal.x[:model.n0])
    P = approx_transmit_power(plan, scenario.stats)
    rate = approx_fronthaul_rate(plan, scenario.stats)
    chi = scenario.chi[primal.servers, np.arange(scenario.K)]
    radio_part = np.sum(P / radio.upsilon + radio.delta_p * c1 * np.log(P + c2)
                        + radio.p_sleep + radio.eta * rate)
    return float(chi @ primal.x[model.n0:] + scenario.omega * radio_part)


# ----------------------------------------------------------------------------
# message passing


class _Actor:
    """Worker thread applying ``fn`` to each price vector it receives."""

    def __init__(self, fn):
        self.fn = fn
        self.inbox = queue.Queue()
        self.outbox = queue.Queue()
        self.thread = threading.Thread(target=self._run, daemon=True)
        self.thread.start()

    def _run(self):
        while True:
            msg = self.inbox.get()
            if msg is None:
                return
            try:
                self.outbox.put((True, self.fn(msg)))
            except Exception as exc:  # forwarded to the price owner
                self.outbox.put((False, exc))

    def send(self, mu):
        self.inbox.put(mu)

    def receive(self):
        ok, val = self.outbox.get()
        if not ok:
            raise val
        return val

    def stop(self):
        self.inbox.put(None)
        self.thread.join()


class _Sequential:
    def __init__(self, fn):
        self.fn = fn
        self.pending = None

    def send(self, mu):
        self.pending = mu

    def receive(self):
        return self.fn(self.pending)

    def stop(self):
        pass


# ----------------------------------------------------------------------------
# algorithm


def _initial_prices(scenario):
    """Price making the unconstrained VM meet half of the budget on the best
    server: ``mu = chi L / (eff (tau/2)^2)``."""
    eff, chi = scenario.efficiency, scenario.chi
    with np.errstate(divide="ignore"):
        mu = np.where(eff > 0, chi * scenario.loads / (eff * (0.5 * scenario.tau) ** 2), np.inf)
    return mu.min(axis=0)


def alg5(scenario: Scenario, tol_outer=1e-4, tol_inner=1e-4, max_outer=10, max_inner=500,
         stall_window=20, gap_tol=1e-4, delta0=0.1, step_rule="polyak", schedule="sequential",
         c1=1.0, c2=1e-5, samples=100, seed=0, solver_tol=1e-9, warm_prices=True,
         patience=2):
    """Joint minimization of VM, RRH and fronthaul power under per-UE delay
    budgets.

    Parameters
    ----------
    step_rule : {"polyak", "diminishing"}
        Polyak steps toward the best primal value, or ``delta0 / sqrt(p)``.
    schedule : {"sequential", "message"}
        Run the computation and transmission subproblems in turn, or as
        threads exchanging prices and delays each iteration. Results are
        identical.
    gap_tol : float
        Inner loop also stops when the relative primal-dual gap is below this.
    warm_prices : bool
        When a primal candidate improves the incumbent, move the prices to
        its delay multipliers instead of taking a subgradient step.
    patience : int
        Outer reweighting stops once the exact total power of the finalized
        incumbent has not improved for this many rounds. The best finalized
        plan over all rounds is returned.

    Returns
    -------
    JointResult

    Raises
    ------
    InfeasibleError
        No assignment admits a feasible transmit design, or prices diverge.
    """
    if schedule not in ("sequential", "message"):
        raise DomainError(f"unknown schedule {schedule!r}")
    if step_rule not in ("polyak", "diminishing"):
        raise DomainError(f"unknown step rule {step_rule!r}")
    start_time = time.perf_counter()
    K = scenario.K
    instance = scheduling_instance(scenario)
    txm = _JointModel(scenario)
    prm = _JointModel(scenario, extra=K)

    rho = ReweightState.from_power(np.full(scenario.L, scenario.radio.p_max), c1, c2)
    x_ref = _feasible_start(scenario, rho)
    plan0 = txm.base.plan(x_ref)
    gamma, phi, e = update_majorizers(scenario, plan0)
    state = DualState(mu=_initial_prices(scenario), phi=phi, gamma=gamma, rho=rho.rho, e=e)
    incumbent = None
    trace, outer_trace = [], []
    merit = np.inf
    outer = 0
    final, stale = None, 0
    finalize_error = None
    for outer in range(1, max_outer + 1):
        state.best_dual = -np.inf
        cache = {}
        best = None
        if incumbent is not None:
            # still feasible at the new majorizers; kept as a fallback so the
            # merit cannot increase
            best = _Primal(incumbent.servers, incumbent.x,
                           _primal_value(scenario, prm, state, incumbent), incumbent.prices)
        warm = {"x": x_ref}

        def g1_fn(mu):
            return solve_g1(mu, instance)

        def g2_fn(mu):
            x0 = warm["x"]
            if not np.isfinite(_g2_start_value(txm, state, mu, x0)):
                x0 = x_ref
            try:
                W, psi, val, lb, x = solve_g2(mu, scenario, state, x0=x0, tol=solver_tol,
                                              model=txm)
            except InfeasibleError:
                if x0 is x_ref:
                    raise
                W, psi, val, lb, x = solve_g2(mu, scenario, state, x0=x_ref, tol=solver_tol,
                                              model=txm)
            warm["x"] = x
            return val, lb, x

        actors = ([_Actor(g1_fn), _Actor(g2_fn)] if schedule == "message"
                  else [_Sequential(g1_fn), _Sequential(g2_fn)])
        history = []
        mu = state.mu.copy()
        try:
            for it in range(1, max_inner + 1):
                for a in actors:
                    a.send(mu.copy())
                x_asg, A, v1 = actors[0].receive()
                v2, lb2, x2 = actors[1].receive()
                dual = v1 + lb2 - float(mu @ scenario.tau)
                state.best_dual = max(state.best_dual, dual)
                servers = np.argmax(x_asg, axis=0)
                key = tuple(int(s) for s in servers)
                if key not in cache:
                    start = np.concatenate([x2, np.zeros(K)])
                    if not np.all(txm.rates_at(x2, state.phi) > 0):
                        start[:txm.n0] = x_ref
                    cache[key] = _restricted(scenario, prm, state, servers, start, solver_tol)
                cand = cache[key]
                improved = cand is not None and (best is None or cand.value < best.value)
                if improved:
                    best = cand
                t_ex = exec_delay(instance, x_asg, A)
                rates = txm.rates_at(x2, state.phi)
                with np.errstate(divide="ignore", invalid="ignore"):
                    t_tr = np.where(scenario.D > 0,
                                    scenario.D * LOG2 / (scenario.radio.B * rates), 0.0)
                t_tr = np.where(np.isfinite(t_tr) & (t_tr >= 0), t_tr, np.inf)
                slack = np.minimum(t_ex + t_tr - scenario.tau, SLACK_CLIP * scenario.tau)
                primal = np.inf if best is None else best.value
                trace.append({"outer": outer, "inner": it, "dual": dual,
                              "best_dual": state.best_dual, "primal": primal,
                              "mu": mu.copy(), "slack": slack.copy()})
                history.append(state.best_dual)
                if np.isfinite(primal) and primal - state.best_dual <= gap_tol * abs(primal):
                    break
                if (len(history) > stall_window and history[-1] - history[-1 - stall_window]
                        <= tol_inner * abs(history[-1])):
                    break
                norm2 = float(slack @ slack)
                if improved and warm_prices:
                    # the fixed-assignment multipliers price the new incumbent
                    mu = best.prices.copy()
                elif norm2 == 0.0:
                    break
                elif step_rule == "polyak" and np.isfinite(primal):
                    step = (primal - dual) / norm2
                    mu = subgradient_step(mu, slack, it, step=step)
                else:
                    mu = subgradient_step(mu, slack, it, delta0=delta0)
                if np.any(mu > MU_MAX):
                    raise InfeasibleError("delay prices diverge")
        finally:
            for a in actors:
                a.stop()
        state.mu = mu
        if best is None:
            raise InfeasibleError("no assignment admits a feasible design")
        incumbent = best
        new_merit = _merit(scenario, prm, incumbent, c1, c2)
        try:
            jplan = _finalize(scenario, instance, prm, incumbent, samples, seed)
        except NumericalLimitError as exc:
            jplan, finalize_error = None, exc
        exact = np.inf if jplan is None else jplan.total_power
        outer_trace.append({"outer": outer, "merit": new_merit, "primal": best.value,
                            "best_dual": state.best_dual, "inner_iterations": len(history),
                            "total_power": exact})
        if jplan is not None and (final is None or exact < final[0].total_power):
            final, stale = (jplan, best.value, state.best_dual), 0
        else:
            stale += 1
        x_ref = incumbent.x[:txm.n0]
        plan = txm.base.plan(x_ref)
        P = approx_transmit_power(plan, scenario.stats)
        state.gamma, state.phi, state.e = update_majorizers(scenario, plan)
        state.rho = c1 / (P + c2)
        if np.isfinite(merit) and merit - new_merit <= tol_outer * abs(new_merit):
            break
        if stale >= patience:
            break
        merit = new_merit

    if final is None:
        raise finalize_error
    jplan, final_primal, final_dual = final
    return JointResult(plan=jplan, trace=trace, outer_trace=outer_trace, best_dual=final_dual,
                       best_primal=final_primal, outer_iterations=outer,
                       wall_time=time.perf_counter() - start_time)


def _feasible_start(scenario, rho):
    """One convex transmit step under the scenario's own delay split.

    The majorizers are built at this point, so the fronthaul and power
    limits hold there and every UE has a positive rate. Falls back on the
    equal-power plan when the split itself is infeasible.
    """
    from .transmit import _descent
    try:
        return _descent(scenario, None, rho, 0.0, 1, None, 1e-6).x
    except InfeasibleError:
        return LiftedModel(scenario).pack_plan(initial_plan(scenario))


def _g2_start_value(model, state, mu, x):
    for k in range(model.sc.K):
        if mu[k] > 0 and model.sc.D[k] > 0:
            if not model.rate(k, state.phi[k]).eval(x, order=0)[0] > 0:
                return np.inf
    return 0.0


def _finalize(scenario, instance, model, primal: _Primal, samples, seed):
    """Rank-one extraction, exact delays and powers, VM sizes shrunk to the
    remaining execution budget."""
    K = scenario.K
    servers = primal.servers
    eff = scenario.efficiency[servers, np.arange(K)]
    chi = scenario.chi[servers, np.arange(K)]
    A = primal.x[model.n0:].copy()
    t_ex = scenario.loads / (eff * A)
    budget = scenario.tau - t_ex
    if np.any(budget[scenario.D > 0] <= 0):
        raise NumericalLimitError("execution delay leaves no transmission budget")
    with np.errstate(divide="ignore"):
        targets = np.where(scenario.D > 0,
                           np.expm1(scenario.D / (np.maximum(budget, 1e-300)
                                                  * scenario.radio.B) * LOG2), 0.0)
    x = primal.x[:model.n0]
    plan = extract_plan(scenario, model.base, x, targets, samples=samples, seed=seed)
    plan = polish_sleep(scenario, plan, targets)
    sig, intf = sig_int(plan, scenario.stats, scenario.radio.sigma2)
    rate = np.log1p(sig / intf) / LOG2
    with np.errstate(divide="ignore"):
        t_tr = np.where(scenario.D > 0, scenario.D / (scenario.radio.B * rate), 0.0)
    # the exact rate is at least the minorized one: give any spare time back
    need = scenario.loads / (eff * (scenario.tau - t_tr))
    A = np.minimum(A, np.where(need > 0, need, A))
    t_ex = scenario.loads / (eff * A)
    x_mat = np.zeros((scenario.S, K))
    x_mat[servers, np.arange(K)] = 1.0
    A_mat = x_mat * A[None, :]
    vm = float(chi @ A)
    schedule = SchedulePlan(x=x_mat, A=A_mat, objective=vm, method="alg5")
    report = power_report(scenario, plan)
    radio_power = scenario.omega * report.total
    slack = scenario.tau - t_ex - t_tr
    if np.any(slack < -DELAY_TOL):
        raise NumericalLimitError("final plan violates a delay budget")
    return JointPlan(schedule=schedule, transmit=plan, total_power=vm + radio_power,
                     delay_slack=slack, vm_power=vm, radio_power=radio_power,
                     exec_delay=t_ex, tx_delay=t_tr)


def trace_rows(trace):
    """Flatten an iteration trace into CSV-ready dictionaries."""
    rows = []
    for t in trace:
        row = {"outer": t["outer"], "inner": t["inner"], "dual": t["dual"],
               "best_dual": t["best_dual"], "primal": t["primal"]}
        for k, (m, s) in enumerate(zip(t["mu"], t["slack"])):
            row[f"mu_{k}"] = m
            row[f"slack_{k}"] = s
        rows.append(row)
    return rows
