"""Block-structured standard-form SDP and an independent KKT checker.

Primal::

    min  <C, X>
    s.t. <A_i, X> = b_i          (equalities)
         <G_j, X> <= h_j         (inequalities)
         X = blockdiag(X_1, ..., X_m) PSD

Dual::

    max  b.y + h.u
    s.t. Z = C - sum_i y_i A_i - sum_j u_j G_j  PSD,   u <= 0

Only real symmetric blocks are supported. Every matrix is given as a list of
blocks matching ``dims``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError


def _as_blocks(mats, dims, name):
    if len(mats) != len(dims):
        raise DomainError(f"{name}: expected {len(dims)} blocks, got {len(mats)}")
    out = []
    for M, n in zip(mats, dims):
        M = np.atleast_2d(np.asarray(M, dtype=float))
        if M.shape != (n, n):
            raise DomainError(f"{name}: block shape {M.shape} != {(n, n)}")
        if not np.allclose(M, M.T, atol=1e-12 * (1 + np.abs(M).max())):
            raise DomainError(f"{name}: block is not symmetric")
        out.append(0.5 * (M + M.T))
    return out


def inner(U, V):
    """Block trace inner product ``sum_b tr(U_b V_b)``."""
    return float(sum(np.vdot(u, v) for u, v in zip(U, V)))


@dataclass
class SdpProblem:
    """Standard-form SDP; see the module docstring for the sign conventions."""

    dims: list
    C: list
    A: list = field(default_factory=list)
    b: np.ndarray = None
    G: list = field(default_factory=list)
    h: np.ndarray = None

    def __post_init__(self):
        self.dims = [int(n) for n in self.dims]
        if not self.dims or min(self.dims) < 1:
            raise DomainError("block dimensions must be positive")
        self.C = _as_blocks(self.C, self.dims, "C")
        self.A = [_as_blocks(Ai, self.dims, f"A[{i}]") for i, Ai in enumerate(self.A)]
        self.G = [_as_blocks(Gj, self.dims, f"G[{j}]") for j, Gj in enumerate(self.G)]
        self.b = np.zeros(0) if self.b is None else np.asarray(self.b, dtype=float).ravel()
        self.h = np.zeros(0) if self.h is None else np.asarray(self.h, dtype=float).ravel()
        if self.b.size != len(self.A) or self.h.size != len(self.G):
            raise DomainError("constraint data and right-hand sides differ in length")

    @property
    def m_eq(self):
        return len(self.A)

    @property
    def m_ineq(self):
        return len(self.G)

    def apply(self, X):
        """Return ``(A(X), G(X))``."""
        ax = np.array([inner(Ai, X) for Ai in self.A])
        gx = np.array([inner(Gj, X) for Gj in self.G])
        return ax, gx

    def dual_slack(self, y):
        """``Z = C - sum y_i A_i - sum u_j G_j`` for ``y = (y_eq, u)``."""
        y = np.asarray(y, dtype=float)
        Z = [c.copy() for c in self.C]
        mats = self.A + self.G
        for coef, M in zip(y, mats):
            for zb, mb in zip(Z, M):
                zb -= coef * mb
        return Z

    def objective(self, X):
        return inner(self.C, X)

    def dual_objective(self, y):
        return float(np.concatenate([self.b, self.h]) @ np.asarray(y, dtype=float))

    def dump(self, fh):
        """Write a plain-text listing: dims, then C, A_i, G_j blocks row by row."""
        fh.write("dims " + " ".join(map(str, self.dims)) + "\n")

        def blocks(tag, M):
            for n, B in enumerate(M):
                fh.write(f"{tag} block {n}\n")
                for row in B:
                    fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")

        blocks("C", self.C)
        for i, Ai in enumerate(self.A):
            fh.write(f"b {i} {self.b[i]:.17g}\n")
            blocks(f"A{i}", Ai)
        for j, Gj in enumerate(self.G):
            fh.write(f"h {j} {self.h[j]:.17g}\n")
            blocks(f"G{j}", Gj)


@dataclass
class KktResiduals:
    """Scale-normalized residuals of a primal-dual pair.

    ``primal``: equality misfit plus inequality and PSD violations of ``X``.
    ``dual``: PSD violation of ``Z`` plus sign violations of ``u``.
    ``complementarity``: ``<X, Z> + sum_j |u_j| slack_j``.
    ``gap``: primal minus dual objective.
    """

    primal: float
    dual: float
    complementarity: float
    gap: float

    def max(self):
        return max(self.primal, self.dual, abs(self.complementarity), abs(self.gap))


def kkt_residuals(problem: SdpProblem, X, y):
    """Recompute KKT residuals from ``(X, y)`` without solver internals.

    ``primal`` and ``dual`` are relative to ``1 + |b|`` and ``1 + |C|``;
    ``complementarity`` and ``gap`` to ``1 + |primal obj| + |dual obj|``.
    """
    X = _as_blocks(X, problem.dims, "X")
    y = np.asarray(y, dtype=float).ravel()
    if y.size != problem.m_eq + problem.m_ineq:
        raise DomainError("y has the wrong length")
    u = y[problem.m_eq:]
    ax, gx = problem.apply(X)
    eq = np.linalg.norm(ax - problem.b)
    slack = problem.h - gx
    ineq = np.linalg.norm(np.minimum(slack, 0.0))
    x_neg = sum(np.linalg.norm(np.minimum(np.linalg.eigvalsh(B), 0.0)) for B in X)
    scale_p = 1.0 + np.linalg.norm(np.concatenate([problem.b, problem.h]))
    Z = problem.dual_slack(y)
    z_neg = sum(np.linalg.norm(np.minimum(np.linalg.eigvalsh(B), 0.0)) for B in Z)
    u_pos = np.linalg.norm(np.maximum(u, 0.0))
    scale_d = 1.0 + np.sqrt(sum(np.sum(c * c) for c in problem.C))
    pobj = problem.objective(X)
    dobj = problem.dual_objective(y)
    scale_g = 1.0 + abs(pobj) + abs(dobj)
    comp = inner(X, Z) + float(np.sum(-u * slack))
    return KktResiduals(
        primal=float((eq + ineq + x_neg) / scale_p),
        dual=float((z_neg + u_pos) / scale_d),
        complementarity=float(comp / scale_g),
        gap=float((pobj - dobj) / scale_g),
    )
