"""Transmission-side power minimization on the deterministic equivalents.

The power coefficients are lifted to ``W = w w^T`` with ``w`` stacking the
per-UE vectors ``sqrt(p_k)`` (index ``k * L + l``). Every quantity except the
signal term depends on ``W`` only through its diagonal, and the signal term
of UE ``k`` only through the ``k``-th ``L x L`` diagonal block, so the solver
works with the blocks ``W_k`` and the quantization covariances ``Psi_l``.

The fronthaul rate is concave in ``Lambda``; it is majorized with a matrix
``Gamma_l`` (touching at ``Gamma_l = Lambda_l^{-1}``) and with the
fixed-point values ``e`` frozen at the previous iterate. Each coordinate
descent step therefore solves a convex program with linear, trace and
``-log det Psi`` terms, handled by :func:`sdpcore.minimize`.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ExtractionFail, InfeasibleError
from .largesystem import (
    LOG2, TransmitPlan, approx_fronthaul_rate, approx_transmit_power,
    fixed_point, sig_int,
)
from .scenario import RadioSpec, Scenario
from .sdpcore import Affine, ConvexProgram, Function, Layout, NegLogDet, minimize
from .sdpcore.extract import extract_rank_one

ACTIVITY_THRESHOLD = 1e-4
PSI_FLOOR = 1e-8
CHECK_TOL = 1e-9
WARM_GAP = 1e-4
EXTRAPOLATION_STEPS = tuple(2.0 ** (np.arange(13) / 2.0))
RANK_ONE_DAMPING = 1e-10


# ----------------------------------------------------------------------------
# power model


def rrh_power(P_tr, spec: RadioSpec, active=True):
    """Linear RRH power model: ``P_tr / upsilon + p_active`` or ``p_sleep``."""
    if P_tr < 0:
        raise DomainError("transmit power must be nonnegative")
    if active:
        return P_tr / spec.upsilon + spec.p_active
    return spec.p_sleep


@dataclass
class ReweightState:
    """Weights ``rho_l = c1 / (P_l + c2)`` of the sleep-mode surrogate."""

    rho: np.ndarray
    c1: float = 1.0
    c2: float = 1e-5

    @classmethod
    def from_power(cls, transmit_power, c1=1.0, c2=1e-5):
        P = np.asarray(transmit_power, dtype=float)
        return cls(rho=c1 / (P + c2), c1=c1, c2=c2)

    def updated(self, transmit_power):
        return ReweightState.from_power(transmit_power, self.c1, self.c2)


@dataclass
class PowerReport:
    """Per-RRH powers and rates of a transmit plan.

    ``rrh_power_surrogate`` uses the reweighted form, ``rrh_power`` the
    on/off model with ``active = transmit_power > ACTIVITY_THRESHOLD``.
    """

    transmit_power: np.ndarray
    rrh_power_surrogate: np.ndarray
    rrh_power: np.ndarray
    fronthaul_rate: np.ndarray
    fronthaul_power: np.ndarray
    active: np.ndarray

    @property
    def total(self):
        return float(self.rrh_power.sum() + self.fronthaul_power.sum())

    @property
    def surrogate_total(self):
        return float(self.rrh_power_surrogate.sum() + self.fronthaul_power.sum())


def power_report(scenario: Scenario, plan: TransmitPlan, rho=None, fp=None):
    radio = scenario.radio
    P = approx_transmit_power(plan, scenario.stats)
    rate = approx_fronthaul_rate(plan, scenario.stats, fp)
    rho = np.zeros(scenario.L) if rho is None else np.asarray(rho, dtype=float)
    active = P > ACTIVITY_THRESHOLD
    exact = np.array([rrh_power(max(P[l], 0.0), radio, bool(active[l]))
                      for l in range(scenario.L)])
    surrogate = (1.0 / radio.upsilon + rho * radio.delta_p) * P + radio.p_sleep
    return PowerReport(transmit_power=P, rrh_power_surrogate=surrogate, rrh_power=exact,
                       fronthaul_rate=rate, fronthaul_power=radio.eta * rate, active=active)


def surrogate_objective(scenario: Scenario, plan: TransmitPlan, rho, fp=None):
    """``sum_l (1/upsilon + rho_l dP) P_l + P_sleep + eta R_F_l``."""
    return power_report(scenario, plan, rho, fp).surrogate_total


def sinr_targets(scenario: Scenario, tau_tr=None):
    """``2^(D / (tau B)) - 1`` per UE."""
    tau_tr = scenario.tau_tr if tau_tr is None else np.broadcast_to(
        np.asarray(tau_tr, dtype=float), (scenario.K,))
    if np.any(~(np.asarray(tau_tr) > 0)):
        raise DomainError("transmission budgets must be positive")
    return np.expm1(scenario.D / (tau_tr * scenario.radio.B) * LOG2)


# ----------------------------------------------------------------------------
# lifted matrices


@dataclass
class LiftMatrices:
    """Indicator and gain matrices of the lifted formulation.

    ``W`` is ``KL x KL`` (index ``k * L + l``); ``Psi`` is ``NL x NL``
    block diagonal.
    """

    A: list
    T: np.ndarray
    B: list
    E: np.ndarray
    J: list
    G: dict
    Dbar: np.ndarray
    F: list
    Dtilde: dict
    Dk: list
    N: int

    def transmit_power(self, W, Psi, l):
        return self.N * np.trace(self.A[l] @ self.T @ W) + np.trace(self.B[l] @ Psi)

    def lambda_mat(self, W, Psi, l):
        J = self.J[l]
        return (np.trace(self.A[l] @ self.E @ self.A[l] @ W) * np.eye(self.N)
                + J @ self.B[l] @ Psi @ J.T)

    def e_value(self, W, lam, l, k):
        return np.trace(self.T @ self.G[l, k] @ W) * np.trace(np.linalg.inv(lam))

    def signal(self, W, k):
        return np.trace(self.F[k] @ self.Dbar @ self.F[k] @ W)

    def interference(self, W, Psi, k, sigma2):
        K = len(self.F)
        val = sum(np.trace(self.Dtilde[i, k] @ self.F[i] @ W) for i in range(K) if i != k)
        return val / self.N + (np.trace(self.Dk[k] @ Psi) + sigma2) / self.N ** 2


def build_lift_matrices(scenario: Scenario, e=None):
    """Lifted matrices for ``scenario``; ``E`` uses ``e`` (zeros if omitted)."""
    L, K, N = scenario.L, scenario.K, scenario.N
    d, xi2 = scenario.stats.d, scenario.stats.xi2
    e = np.zeros((L, K)) if e is None else np.asarray(e, dtype=float)
    KL, NL = K * L, N * L

    def at(k, l):
        return k * L + l

    A = []
    for l in range(L):
        v = np.zeros(KL)
        v[[at(k, l) for k in range(K)]] = 1.0
        A.append(np.diag(v))
    t = np.array([xi2[l] * d[l, k] for k in range(K) for l in range(L)])
    T = np.diag(t)
    B, J = [], []
    for l in range(L):
        v = np.zeros(NL)
        v[l * N:(l + 1) * N] = 1.0
        B.append(np.diag(v))
        Jl = np.zeros((N, NL))
        Jl[:, l * N:(l + 1) * N] = np.eye(N)
        J.append(Jl)
    E = np.diag([xi2[l] * d[l, k] / (1.0 + e[l, k]) for k in range(K) for l in range(L)])
    G = {}
    for l in range(L):
        for k in range(K):
            M = np.zeros((KL, KL))
            M[at(k, l), at(k, l)] = 1.0
            G[l, k] = M
    dbar = np.array([np.sqrt(xi2[l]) * d[l, k] for k in range(K) for l in range(L)])
    F = []
    for k in range(K):
        v = np.zeros(KL)
        v[k * L:(k + 1) * L] = 1.0
        F.append(np.diag(v))
    Dtilde = {}
    for i in range(K):
        for k in range(K):
            v = np.zeros(KL)
            v[i * L:(i + 1) * L] = xi2 * d[:, i] * d[:, k]
            Dtilde[i, k] = np.diag(v)
    Dk = [np.diag(np.repeat(d[:, k], N)) for k in range(K)]
    return LiftMatrices(A=A, T=T, B=B, E=E, J=J, G=G, Dbar=np.outer(dbar, dbar), F=F,
                        Dtilde=Dtilde, Dk=Dk, N=N)


@dataclass
class LiftedVars:
    """Lifted iterate: ``W`` (KL x KL), ``psi`` (NL x NL block diagonal),
    ``gamma`` (L x N x N majorizer) and the frozen fixed-point values ``e``."""

    W: np.ndarray
    psi: np.ndarray
    gamma: np.ndarray
    e: np.ndarray = None

    def plan(self, L, K, N):
        p = np.diag(self.W).reshape(K, L).T.copy()
        psi = np.stack([self.psi[l * N:(l + 1) * N, l * N:(l + 1) * N] for l in range(L)])
        return TransmitPlan(np.maximum(p, 0.0), psi)


def _block_diag(blocks):
    n = sum(b.shape[0] for b in blocks)
    out = np.zeros((n, n))
    pos = 0
    for b in blocks:
        m = b.shape[0]
        out[pos:pos + m, pos:pos + m] = b
        pos += m
    return out


def _psi_blocks(psi, L, N):
    psi = np.asarray(psi, dtype=float)
    if psi.ndim == 3:
        return psi
    return np.stack([psi[l * N:(l + 1) * N, l * N:(l + 1) * N] for l in range(L)])


def majorized_fronthaul_rate(W, psi, gamma, l, stats, e=None):
    """Majorized fronthaul rate of RRH ``l`` in bits per channel use.

    ``W`` is the ``KL x KL`` lift, ``psi`` the ``NL x NL`` block-diagonal
    covariance (or an ``L x N x N`` stack), ``gamma`` an ``N x N`` positive
    definite matrix. ``e`` defaults to the fixed point at ``(diag W, psi)``,
    in which case the value equals the deterministic rate at
    ``gamma = Lambda_l^{-1}`` and exceeds it elsewhere.
    """
    L, K = stats.d.shape
    W = np.asarray(W, dtype=float)
    p = np.diag(W).reshape(K, L).T
    N = np.asarray(gamma).shape[0]
    blocks = _psi_blocks(psi, L, N)
    if e is None:
        e = fixed_point(TransmitPlan(np.maximum(p, 0.0), blocks), stats).e
    gamma = np.asarray(gamma, dtype=float)
    sg, logdet_gamma = np.linalg.slogdet(gamma)
    sp, logdet_psi = np.linalg.slogdet(blocks[l])
    if sg <= 0 or sp <= 0:
        raise DomainError("gamma and psi must be positive definite")
    e_l = np.asarray(e)[l]
    scalar = np.sum(stats.xi2[l] * p[l] * stats.d[l] / (1.0 + e_l))
    lam = scalar * np.eye(N) + blocks[l]
    val = (-logdet_gamma + np.trace(gamma @ lam) - N - logdet_psi
           + np.sum(1.0 / (1.0 + e_l) + np.log1p(e_l)) - K)
    return float(val / LOG2)


# ----------------------------------------------------------------------------
# block model shared with the joint solver


class LiftedModel:
    """Coefficient vectors over the solver layout ``[W_1..W_K, Psi_1..Psi_L]``.

    All affine quantities (transmit power, signal, interference, the
    ``Lambda`` scalar) are exposed as ``(c, c0)`` pairs with value
    ``c . x + c0``.
    """

    def __init__(self, scenario: Scenario, psi_floor=PSI_FLOOR):
        self.sc = scenario
        L, K, N = scenario.L, scenario.K, scenario.N
        self.L, self.K, self.N = L, K, N
        self.psi_floor = psi_floor
        self.layout = Layout([L] * K + [N] * L, 0, [0.0] * K + [psi_floor] * L)
        lay = self.layout
        d, xi2 = scenario.stats.d, scenario.stats.xi2
        n = lay.size
        self.diag_w = np.zeros((K, L, n))
        for k in range(K):
            for l in range(L):
                E = np.zeros((L, L))
                E[l, l] = 1.0
                self.diag_w[k, l] = lay.trace_coeffs(k, E)
        self.tr_psi = np.array([lay.trace_coeffs(K + l, np.eye(N)) for l in range(L)])
        # transmit power per RRH
        self.power = np.array([
            N * sum(xi2[l] * d[l, k] * self.diag_w[k, l] for k in range(K)) + self.tr_psi[l]
            for l in range(L)])
        dbar = np.sqrt(xi2)[:, None] * d
        self.sig = np.array([lay.trace_coeffs(k, np.outer(dbar[:, k], dbar[:, k]))
                             for k in range(K)])
        self.intf = np.zeros((K, n))
        for k in range(K):
            for i in range(K):
                if i != k:
                    self.intf[k] += (xi2 * d[:, i] * d[:, k]) @ self.diag_w[i] / N
            self.intf[k] += (d[:, k] @ self.tr_psi) / N ** 2
        self.noise = scenario.radio.sigma2 / N ** 2

    # conversions -----------------------------------------------------------
    def pack(self, W_blocks, psi_blocks):
        return self.layout.pack(list(W_blocks) + list(psi_blocks))

    def pack_plan(self, plan: TransmitPlan, rank_one=True):
        """Lift a plan: ``W_k = sqrt(p_k) sqrt(p_k)^T`` (or ``diag(p_k)``)."""
        rt = np.sqrt(np.maximum(plan.p, 0.0))
        Wb = [np.outer(rt[:, k], rt[:, k]) if rank_one else np.diag(plan.p[:, k])
              for k in range(self.K)]
        return self.pack(Wb, np.real(plan.psi))

    def w_blocks(self, x):
        return [self.layout.mat(x, k) for k in range(self.K)]

    def psi_blocks(self, x):
        return np.stack([self.layout.mat(x, self.K + l) for l in range(self.L)])

    def plan(self, x):
        p = np.array([[self.layout.mat(x, k)[l, l] for k in range(self.K)]
                      for l in range(self.L)])
        return TransmitPlan(np.maximum(p, 0.0), self.psi_blocks(x))

    def lifted(self, x, gamma=None, e=None):
        W = _block_diag(self.w_blocks(x))
        psi = _block_diag(list(self.psi_blocks(x)))
        return LiftedVars(W=W, psi=psi, gamma=gamma, e=e)

    # majorizer pieces --------------------------------------------------------
    def lambda_scalar(self, e):
        """Coefficients of ``sum_k xi2 d / (1 + e) p_lk`` per RRH."""
        d, xi2 = self.sc.stats.d, self.sc.stats.xi2
        return np.array([
            sum(xi2[l] * d[l, k] / (1.0 + e[l, k]) * self.diag_w[k, l]
                for k in range(self.K)) for l in range(self.L)])

    def fronthaul_terms(self, l, gamma_l, e):
        """Majorized fronthaul rate of RRH ``l`` in nats as a list of terms."""
        lay = self.layout
        lam = self.lambda_scalar(e)[l]
        c = np.trace(gamma_l) * lam + lay.trace_coeffs(self.K + l, gamma_l)
        e_l = e[l]
        c0 = (-np.linalg.slogdet(gamma_l)[1] - self.N
              + np.sum(1.0 / (1.0 + e_l) + np.log1p(e_l)) - self.K)
        return [Affine(c, float(c0)), NegLogDet(self.K + l, 1.0)]

    def add_common_constraints(self, prog, gamma, e, fronthaul=True, power=True):
        radio = self.sc.radio
        for l in range(self.L):
            if fronthaul:
                prog.add_constraint(self.fronthaul_terms(l, gamma[l], e), radio.C * LOG2)
            if power:
                scale = 1.0 / max(1.0, radio.p_max)
                prog.add_constraint([Affine(self.power[l] * scale)], radio.p_max * scale)

    def sinr_constraint(self, k, target):
        """``target * Int_k - Sig_k <= 0`` scaled to unit coefficients."""
        c = target * self.intf[k] - self.sig[k]
        c0 = target * self.noise
        scale = 1.0 / max(np.abs(c).max(), abs(c0))
        return [Affine(c * scale, c0 * scale)]


def _refresh(model: LiftedModel, x):
    plan = model.plan(x)
    fp = fixed_point(plan, model.sc.stats)
    gamma = np.linalg.inv(fp.lambda_mat)
    gamma = 0.5 * (gamma + np.transpose(gamma, (0, 2, 1)))
    return plan, fp, gamma


def initial_plan(scenario: Scenario):
    """Equal power ``p_max / (2K)`` per pair and ``Psi = p_max / (2N) I``."""
    L, K, N = scenario.L, scenario.K, scenario.N
    p_max = scenario.radio.p_max
    return TransmitPlan.isotropic(np.full((L, K), p_max / (2 * K)), p_max / (2 * N), N)


# ----------------------------------------------------------------------------
# coordinate descent


@dataclass
class DescentResult:
    x: np.ndarray
    vars: LiftedVars
    plan: TransmitPlan
    trace: list
    iterations: int
    sinr_multipliers: np.ndarray = field(default=None)


def _p12_program(model: LiftedModel, rho, gamma, e, targets):
    radio = model.sc.radio
    lay = model.layout
    coef = 1.0 / radio.upsilon + np.asarray(rho) * radio.delta_p
    c = (coef[:, None] * model.power).sum(axis=0)
    obj_terms = [Affine(c, float(model.L * radio.p_sleep))]
    for l in range(model.L):
        for term in model.fronthaul_terms(l, gamma[l], e):
            if isinstance(term, Affine):
                obj_terms.append(Affine(term.c * radio.eta / LOG2, term.c0 * radio.eta / LOG2))
            else:
                obj_terms.append(NegLogDet(term.block, radio.eta / LOG2))
    prog = ConvexProgram(lay, Function(obj_terms))
    sinr_rows = []
    for k in range(model.K):
        if targets[k] > 0:
            sinr_rows.append(k)
            prog.add_constraint(model.sinr_constraint(k, targets[k]), 0.0)
    model.add_common_constraints(prog, gamma, e)
    return prog, sinr_rows


def coordinate_descent(scenario: Scenario, tau_tr=None, rho: ReweightState = None,
                       tol=1e-5, max_iter=100, x0=None, solver_tol=1e-9):
    """Alternate the convex step over ``(W, Psi)`` with the ``Gamma`` update.

    Parameters
    ----------
    rho : ReweightState, optional
        Sleep-mode weights; defaults to weights at full power ``p_max``.
    tol : float
        Stop once the relative objective decrease falls below ``tol``.
    x0 : numpy.ndarray, optional
        Warm start in the layout of :class:`LiftedModel`.

    Returns
    -------
    (LiftedVars, list)
        Final lifted iterate and the objective trace, one value per
        accepted step. A step is accepted only if it does not raise the
        surrogate objective, so the trace is non-increasing.

    Raises
    ------
    InfeasibleError
        No point meets the rate, fronthaul and power constraints.
    """
    res = _descent(scenario, tau_tr, rho, tol, max_iter, x0, solver_tol)
    return res.vars, res.trace


def _warm_start(prog, x, warm):
    """Barrier schedule: from a previous optimum, start near the target gap."""
    if not warm:
        return {}
    f = prog.objective.eval(prog.layout, x, order=0)[0]
    return {"t0": prog.nu / (WARM_GAP * (1.0 + abs(f))), "mu": 100.0}


def _extrapolate(model: LiftedModel, x_old, x_new, beta, rho, targets):
    """Point ``x_new + beta (x_new - x_old)`` with its refresh, or ``None``
    when it leaves the PSD cone or violates a constraint."""
    lay = model.layout
    y = x_new + beta * (x_new - x_old)
    psi = []
    for l in range(model.L):
        P = lay.mat(y, model.K + l)
        if np.linalg.eigvalsh(P).min() <= lay.floors[model.K + l]:
            return None
        psi.append(P)
    # only the powers are extrapolated; each W_k is rebuilt as a slightly
    # damped rank-one block, which has the same diagonal and at least the
    # signal power of any other PSD block
    p = np.array([np.diag(lay.mat(y, k)) for k in range(model.K)])
    p = np.maximum(p, 1e-12 * max(p.max(), 1e-300))
    if np.any(targets > 0):
        # a straight step leaves the curved SINR boundary; scale back onto it
        p = power_control(model.sc, p.T, np.stack(psi), targets * (1.0 + 1e-7))
        if p is None:
            return None
        p = np.maximum(p.T, 1e-12 * max(p.max(), 1e-300))
    W = []
    for pk in p:
        rt = np.sqrt(pk)
        W.append((1.0 - RANK_ONE_DAMPING) * np.outer(rt, rt) + RANK_ONE_DAMPING * np.diag(pk))
    y = model.pack(W, psi)
    sc = model.sc
    for k in range(model.K):
        if targets[k] > 0:
            if targets[k] * (model.intf[k] @ y + model.noise) - model.sig[k] @ y >= 0:
                return None
    plan = model.plan(y)
    if np.any(approx_transmit_power(plan, sc.stats) >= sc.radio.p_max):
        return None
    try:
        plan, fp, gamma = _refresh(model, y)
    except (DomainError, np.linalg.LinAlgError):
        return None
    if np.any(approx_fronthaul_rate(plan, sc.stats, fp) >= sc.radio.C):
        return None
    return y, plan, fp, gamma, surrogate_objective(sc, plan, rho, fp)


def _descent(scenario, tau_tr, rho, tol, max_iter, x0, solver_tol):
    model = LiftedModel(scenario)
    targets = sinr_targets(scenario, tau_tr)
    if rho is None:
        rho = ReweightState.from_power(np.full(scenario.L, scenario.radio.p_max))
    x = model.pack_plan(initial_plan(scenario)) if x0 is None else np.asarray(x0, float)
    plan, fp, gamma = _refresh(model, x)
    trace = []
    obj = np.inf
    mult = None
    it = 0
    for it in range(1, max_iter + 1):
        prog, rows = _p12_program(model, rho.rho, gamma, fp.e, targets)
        try:
            sol = minimize(prog, x, tol=solver_tol,
                           **_warm_start(prog, x, bool(trace) or x0 is not None))
        except InfeasibleError:
            if not trace:
                raise InfeasibleError("rate, fronthaul and power constraints are infeasible")
            break
        x_new = sol.x
        plan_new, fp_new, gamma_new = _refresh(model, x_new)
        obj_new = surrogate_objective(scenario, plan_new, rho.rho, fp_new)
        if obj_new > obj:
            break
        if trace:
            # steps along a slow mode shrink geometrically: try jumps of
            # several lengths along the last step and keep the best one that
            # is feasible and lowers the objective
            best = None
            for beta in EXTRAPOLATION_STEPS:
                ext = _extrapolate(model, x, x_new, beta, rho.rho, targets)
                if ext is not None and ext[4] < (obj_new if best is None else best[4]):
                    best = ext
            if best is not None:
                x_new, plan_new, fp_new, gamma_new, obj_new = best
        x, plan, fp, gamma = x_new, plan_new, fp_new, gamma_new
        mult = np.zeros(scenario.K)
        mult[rows] = sol.multipliers[:len(rows)]
        prev, obj = obj, obj_new
        trace.append(obj)
        if np.isfinite(prev) and prev - obj <= tol * abs(obj):
            break
    vars_ = model.lifted(x, gamma=gamma, e=fp.e)
    return DescentResult(x=x, vars=vars_, plan=plan, trace=trace, iterations=it,
                         sinr_multipliers=mult)


# ----------------------------------------------------------------------------
# feasibility, rescaling and extraction


def constraint_violation(scenario: Scenario, plan: TransmitPlan, targets):
    """Largest relative violation of the SINR, fronthaul and power limits."""
    radio = scenario.radio
    sig, intf = sig_int(plan, scenario.stats, radio.sigma2)
    with np.errstate(divide="ignore", invalid="ignore"):
        sinr = np.where(targets > 0, (targets * intf - sig) / (targets * intf), -1.0)
    try:
        rate = approx_fronthaul_rate(plan, scenario.stats)
    except DomainError:
        return np.inf
    P = approx_transmit_power(plan, scenario.stats)
    return float(max(sinr.max(initial=-1.0), ((rate - radio.C) / radio.C).max(),
                     ((P - radio.p_max) / radio.p_max).max()))


def power_control(scenario: Scenario, p, psi, targets):
    """Scale each UE's power column so its SINR target holds with equality.

    Solves the linear system ``c_k Sig_k = target_k (sum_i c_i X_ki + n_k)``.
    Returns the rescaled ``p`` or ``None`` if no positive solution exists.
    """
    N = scenario.N
    d, xi2 = scenario.stats.d, scenario.stats.xi2
    p = np.asarray(p, dtype=float)
    plan = TransmitPlan(p, psi)
    sig, _ = sig_int(plan, scenario.stats, scenario.radio.sigma2)
    cross = np.einsum("l,lk,li,li->ki", xi2, d, d, p) / N
    np.fill_diagonal(cross, 0.0)
    tr_psi = np.trace(psi, axis1=1, axis2=2)
    noise = (d * tr_psi[:, None]).sum(axis=0) / N ** 2 + scenario.radio.sigma2 / N ** 2
    M = np.diag(sig) - targets[:, None] * cross
    rhs = targets * noise
    try:
        c = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError:
        return None
    if np.any(c < 0) or np.any((targets > 0) & ~(c > 0)) or not np.all(np.isfinite(c)):
        return None
    return p * c[None, :]


def _w_to_p(w, L, K):
    return (np.asarray(w) ** 2).reshape(K, L).T


def extract_plan(scenario: Scenario, model: LiftedModel, x, targets, samples=100,
                 seed=0, scorer=None, tol=CHECK_TOL):
    """Rank-one extraction from the block lift ``x``.

    The square root of the diagonal of each ``W_k`` is tried first: it has
    the same transmit power and fronthaul load as the relaxed point and at
    least its signal power. Gaussian draws follow. Each candidate is offered
    as is and after SINR-equality power control; the feasible one with the
    least ``scorer`` value wins.
    """
    L, K = model.L, model.K
    psi = model.psi_blocks(x)
    W = _block_diag(model.w_blocks(x))
    base = np.sqrt(np.maximum(np.diag(W), 0.0))
    scorer = scorer or (lambda plan: power_report(scenario, plan).total)

    def plan_of(w):
        return TransmitPlan(_w_to_p(w, L, K), psi)

    def feasible(w):
        return constraint_violation(scenario, plan_of(w), targets) <= tol

    def score(w):
        try:
            return scorer(plan_of(w))
        except DomainError:
            return np.inf

    def rescaler(w):
        p = power_control(scenario, _w_to_p(w, L, K), psi, targets)
        if p is None:
            return None
        cand = np.sqrt(p.T.reshape(-1))
        # keep the unscaled candidate when it scores better
        return cand if score(cand) <= score(w) or not feasible(w) else w

    candidates = [base]
    try:
        w = extract_rank_one(W, samples=samples, feasibility_check=feasible,
                             rescaler=rescaler, objective=score, seed=seed,
                             candidates=candidates)
    except ExtractionFail:
        if feasible(base):
            w = base
        else:
            raise
    if not feasible(w):
        # a rank-one W skips randomization; fall back on the diagonal candidate
        alt = rescaler(base) if rescaler(base) is not None else base
        w = alt if feasible(alt) else base
        if not feasible(w):
            raise InfeasibleError("extracted plan violates the constraints")
    return plan_of(w)


def polish_sleep(scenario: Scenario, plan: TransmitPlan, targets, psi_floor=PSI_FLOOR):
    """Switch off RRHs below the activity threshold and re-run power control.

    Returns the polished plan when it stays feasible and is not worse.
    """
    # an RRH with no beamformed power carries no fronthaul rate, so its Psi is pure cost
    P = approx_transmit_power(plan, scenario.stats)
    beam = P - np.trace(plan.psi, axis1=1, axis2=2)
    idle = (P <= ACTIVITY_THRESHOLD) | (beam <= ACTIVITY_THRESHOLD)
    if not np.any(idle):
        return plan
    p = plan.p.copy()
    psi = plan.psi.copy()
    p[idle] = 0.0
    psi[idle] = psi_floor * np.eye(scenario.N)
    if np.any(targets > 0):
        p2 = power_control(scenario, p, psi, targets)
        if p2 is None:
            return plan
        p = p2
    cand = TransmitPlan(p, psi)
    if constraint_violation(scenario, cand, targets) > CHECK_TOL:
        return plan
    if power_report(scenario, cand).total > power_report(scenario, plan).total:
        return plan
    return cand


# ----------------------------------------------------------------------------
# full transmission solve


@dataclass
class TransmitResult:
    plan: TransmitPlan
    report: PowerReport
    rho: ReweightState
    traces: list
    outer_iterations: int
    wall_time: float


def solve_p1(scenario: Scenario, tau_tr=None, outer_iterations=5, c1=1.0, c2=1e-5,
             rho_tol=1e-4, samples=100, seed=None, cd_tol=1e-5, max_iter=100):
    """Reweighted coordinate descent plus rank-one extraction.

    Returns
    -------
    (TransmitPlan, PowerReport)
        The report is recomputed from the extracted plan; use
        :func:`solve_p1_detailed` for traces and weights.
    """
    res = solve_p1_detailed(scenario, tau_tr, outer_iterations, c1, c2, rho_tol,
                            samples, seed, cd_tol, max_iter)
    return res.plan, res.report


def solve_p1_detailed(scenario: Scenario, tau_tr=None, outer_iterations=5, c1=1.0,
                      c2=1e-5, rho_tol=1e-4, samples=100, seed=None, cd_tol=1e-5,
                      max_iter=100):
    start = time.perf_counter()
    targets = sinr_targets(scenario, tau_tr)
    model = LiftedModel(scenario)
    rho = ReweightState.from_power(np.full(scenario.L, scenario.radio.p_max), c1, c2)
    x = None
    traces = []
    outer = 0
    for outer in range(1, outer_iterations + 1):
        res = _descent(scenario, tau_tr, rho, cd_tol, max_iter, x, 1e-9)
        x = res.x
        traces.append(res.trace)
        new = rho.updated(approx_transmit_power(res.plan, scenario.stats))
        change = np.max(np.abs(new.rho - rho.rho) / np.maximum(rho.rho, 1e-300))
        rho = new
        if change < rho_tol:
            break
    seed = scenario.seed if seed is None else seed
    plan = extract_plan(scenario, model, x, targets, samples=samples,
                        seed=0 if seed is None else seed)
    plan = polish_sleep(scenario, plan, targets)
    report = power_report(scenario, plan, rho.rho)
    return TransmitResult(plan=plan, report=report, rho=rho, traces=traces,
                          outer_iterations=outer, wall_time=time.perf_counter() - start)
