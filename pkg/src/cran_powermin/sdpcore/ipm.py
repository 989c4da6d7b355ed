"""Primal-dual path-following for :class:`SdpProblem`.

Nesterov-Todd scaling with a Mehrotra predictor-corrector. Inequalities are
turned into equalities with one 1x1 slack block each, so the solver itself
only sees ``<A_i, X> = b_i`` over a list of PSD blocks.

Infeasibility is declared from normalized Farkas-type certificates: a dual
ray ``y`` with ``-sum y_i A_i`` PSD and ``b.y > 0`` (primal infeasible), or a
primal ray ``X`` PSD with ``A(X) = 0`` and ``<C, X> < 0`` (dual infeasible).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from ..errors import DomainError
from .problem import KktResiduals, SdpProblem, inner, kkt_residuals

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
NUMERICAL_LIMIT = "NumericalLimit"


@dataclass
class SdpSolution:
    """Solver output.

    ``X`` lists the primal blocks of the original problem; ``y`` is
    ``(y_eq, u_ineq)`` in the sign convention of :mod:`.problem`.
    ``certificate`` is set when ``status`` is ``Infeasible``.
    """

    X: list
    y: np.ndarray
    status: str
    kkt: KktResiduals
    iterations: int
    primal_objective: float
    dual_objective: float
    certificate: object = None

    @property
    def value(self):
        return self.primal_objective


def _embed(problem: SdpProblem):
    """Standard-form data with slack blocks appended for inequalities."""
    dims = list(problem.dims) + [1] * problem.m_ineq
    nb = len(problem.dims)
    C = [c.copy() for c in problem.C] + [np.zeros((1, 1))] * problem.m_ineq
    A = []
    for Ai in problem.A:
        A.append([a.copy() for a in Ai] + [np.zeros((1, 1))] * problem.m_ineq)
    for j, Gj in enumerate(problem.G):
        slack = [np.zeros((1, 1)) for _ in range(problem.m_ineq)]
        slack[j] = np.ones((1, 1))
        A.append([g.copy() for g in Gj] + slack)
    b = np.concatenate([problem.b, problem.h])
    return dims, C, A, b, nb


def _chol(M):
    return np.linalg.cholesky(M)


def _max_step(X, dX):
    """Largest ``a <= 1/0.95`` region bound with ``X + a dX`` PSD, per block."""
    amax = np.inf
    for Xb, dXb in zip(X, dX):
        Lx = _chol(Xb)
        Li = np.linalg.inv(Lx)
        ev = np.linalg.eigvalsh(Li @ dXb @ Li.T)
        lo = ev.min()
        if lo < 0:
            amax = min(amax, -1.0 / lo)
    return amax


class _Nt:
    """NT scaling point for one block: ``W = G G^T`` with ``W Z W = X``."""

    def __init__(self, X, Z):
        Lx = _chol(X)
        Lz = _chol(Z)
        U, s, Vt = np.linalg.svd(Lz.T @ Lx)
        self.v = s
        self.G = Lx @ Vt.T / np.sqrt(s)[None, :]
        self.Ginv = np.linalg.inv(self.G)
        self.W = self.G @ self.G.T

    def to_scaled_x(self, dX):
        return self.Ginv @ dX @ self.Ginv.T

    def to_scaled_z(self, dZ):
        return self.G.T @ dZ @ self.G


def solve(problem: SdpProblem, tol=1e-7, max_iter=200):
    """Solve an SDP to relative KKT tolerance ``tol``.

    Returns
    -------
    SdpSolution
        ``status`` is ``Optimal``, ``Infeasible`` (with a certificate) or
        ``NumericalLimit`` (best iterate attached).
    """
    if not isinstance(problem, SdpProblem):
        raise DomainError("expected an SdpProblem")
    dims, C, A, b, nb = _embed(problem)
    m = len(A)
    nblk = len(dims)
    normb = 1.0 + np.linalg.norm(b)
    normC = 1.0 + np.sqrt(sum(np.sum(c * c) for c in C))
    normA = [np.sqrt(sum(np.sum(a * a) for a in Ai)) for Ai in A]

    # standard scaled-identity start
    scale = max(normb, normC, *(normA or [1.0]))
    X = [scale * np.eye(n) for n in dims]
    Z = [scale * np.eye(n) for n in dims]
    y = np.zeros(m)
    nu = sum(dims)

    def Aop(M):
        return np.array([inner(Ai, M) for Ai in A])

    def ATop(v):
        out = [np.zeros((n, n)) for n in dims]
        for coef, Ai in zip(v, A):
            if coef != 0.0:
                for ob, ab in zip(out, Ai):
                    ob += coef * ab
        return out

    status = NUMERICAL_LIMIT
    cert = None
    best = None
    it = 0
    for it in range(1, max_iter + 1):
        rp = b - Aop(X)
        ATy = ATop(y)
        Rd = [c - a - z for c, a, z in zip(C, ATy, Z)]
        mu = sum(inner([xb], [zb]) for xb, zb in zip(X, Z)) / nu
        pobj = inner(C, X)
        dobj = float(b @ y)
        pres = np.linalg.norm(rp) / normb
        dres = np.sqrt(sum(np.sum(r * r) for r in Rd)) / normC
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        best = (X, y, Z)
        if max(pres, dres, gap) < tol:
            status = OPTIMAL
            break

        # Farkas-type certificates on the normalized iterates
        if dobj > 0:
            ray_y = y / dobj
            Zr = [-a / dobj for a in ATy]
            neg = sum(max(0.0, -np.linalg.eigvalsh(zb).min()) for zb in Zr)
            if dobj > 1e6 * normC and neg < 1e-7:
                status, cert = INFEASIBLE, ("primal", ray_y)
                break
        if pobj < 0:
            ray_x = [xb / -pobj for xb in X]
            if -pobj > 1e6 * normb and np.linalg.norm(Aop(ray_x)) < 1e-7:
                status, cert = INFEASIBLE, ("dual", ray_x)
                break

        try:
            nts = [_Nt(xb, zb) for xb, zb in zip(X, Z)]
        except np.linalg.LinAlgError:
            break
        # Schur complement M_ij = <A_i, W A_j W>
        WAW = [[nt.W @ ab @ nt.W for nt, ab in zip(nts, Ai)] for Ai in A]
        M = np.empty((m, m))
        for i in range(m):
            for j in range(i, m):
                M[i, j] = M[j, i] = sum(np.vdot(a, w) for a, w in zip(A[i], WAW[j]))
        try:
            fac = cho_factor(M + 1e-14 * np.trace(M) / max(m, 1) * np.eye(m))
        except np.linalg.LinAlgError:
            break
        WRW = [nt.W @ r @ nt.W for nt, r in zip(nts, Rd)]

        def direction(Rtil):
            # D solves (V D + D V)/2 = Rtil in the scaled space
            D = [2.0 * R / (nt.v[:, None] + nt.v[None, :]) for nt, R in zip(nts, Rtil)]
            GDG = [nt.G @ d @ nt.G.T for nt, d in zip(nts, D)]
            rhs = rp - Aop(GDG) + Aop(WRW)
            dy = cho_solve(fac, rhs)
            ATdy = ATop(dy)
            dZ = [r - a for r, a in zip(Rd, ATdy)]
            dX = [g - nt.W @ z @ nt.W for g, nt, z in zip(GDG, nts, dZ)]
            dX = [0.5 * (d + d.T) for d in dX]
            dZ = [0.5 * (d + d.T) for d in dZ]
            return dX, dy, dZ

        # predictor
        Rp = [-np.diag(nt.v ** 2) for nt in nts]
        dXa, dya, dZa = direction(Rp)
        ap = min(1.0, _max_step(X, dXa))
        ad = min(1.0, _max_step(Z, dZa))
        mu_a = sum(inner([x + ap * dx], [z + ad * dz])
                   for x, dx, z, dz in zip(X, dXa, Z, dZa)) / nu
        sigma = min(1.0, (mu_a / mu) ** 3)
        # corrector with the second-order term
        Rc = []
        for nt, dx, dz in zip(nts, dXa, dZa):
            sx = nt.to_scaled_x(dx)
            sz = nt.to_scaled_z(dz)
            jordan = 0.5 * (sx @ sz + sz @ sx)
            Rc.append(sigma * mu * np.eye(nt.v.size) - np.diag(nt.v ** 2) - jordan)
        dX, dy, dZ = direction(Rc)
        ap = min(1.0, 0.95 * _max_step(X, dX))
        ad = min(1.0, 0.95 * _max_step(Z, dZ))
        X = [x + ap * d for x, d in zip(X, dX)]
        y = y + ad * dy
        Z = [z + ad * d for z, d in zip(Z, dZ)]
        X = [0.5 * (x + x.T) for x in X]
        Z = [0.5 * (z + z.T) for z in Z]

    X, y, Z = best
    Xo = [x.copy() for x in X[:nb]]
    kkt = kkt_residuals(problem, Xo, y)
    return SdpSolution(
        X=Xo, y=y.copy(), status=status, kkt=kkt, iterations=it,
        primal_objective=problem.objective(Xo),
        dual_objective=problem.dual_objective(y),
        certificate=cert,
    )
