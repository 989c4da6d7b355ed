"""Dense two-phase tableau simplex for the small scheduling LPs.

Solves ``min c.x  s.t.  A_eq x = b_eq, A_ub x <= b_ub, x >= 0``. Pivoting uses
Dantzig's most-negative reduced cost and switches to Bland's rule after a run
of degenerate pivots, which rules out cycling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalLimitError

FEAS_TOL = 1e-8
_PIVOT_TOL = 1e-11


@dataclass
class LpResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None
    value: float


class _Tableau:
    def __init__(self, T, basis):
        self.T = T  # last row holds reduced costs, last column the rhs
        self.basis = basis

    def pivot(self, r, c):
        T = self.T
        T[r] /= T[r, c]
        col = T[:, c].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        self.basis[r] = c

    def run(self, allowed, max_iter):
        """Minimize the objective row over columns flagged in ``allowed``."""
        T = self.T
        m = T.shape[0] - 1
        degenerate = 0
        for _ in range(max_iter):
            cost = T[-1, :-1]
            cand = np.flatnonzero(allowed & (cost < -1e-10))
            if cand.size == 0:
                return "optimal"
            bland = degenerate > 50
            c = cand[0] if bland else cand[np.argmin(cost[cand])]
            colv = T[:m, c]
            pos = colv > _PIVOT_TOL
            if not np.any(pos):
                return "unbounded"
            ratios = np.full(m, np.inf)
            ratios[pos] = T[:m, -1][pos] / colv[pos]
            best = ratios.min()
            ties = np.flatnonzero(ratios <= best + 1e-12 * (1.0 + abs(best)))
            # Bland: leave on the smallest basic index among ties
            r = ties[np.argmin(np.asarray(self.basis)[ties])]
            degenerate = degenerate + 1 if best <= 1e-12 else 0
            self.pivot(r, c)
        raise NumericalLimitError("simplex iteration limit reached")


def simplex(c, A_eq=None, b_eq=None, A_ub=None, b_ub=None, max_iter=5000):
    """Solve a small dense LP in nonnegative variables.

    Returns
    -------
    LpResult
        ``x`` is ``None`` unless the status is ``"optimal"``.
    """
    c = np.asarray(c, dtype=float)
    n = c.size
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, float)
    A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, float)
    m_eq, m_ub = A_eq.shape[0], A_ub.shape[0]
    m = m_eq + m_ub
    n_tot = n + m_ub  # structural + slack

    A = np.zeros((m, n_tot))
    A[:m_eq, :n] = A_eq
    A[m_eq:, :n] = A_ub
    A[m_eq:, n:] = np.eye(m_ub)
    b = np.concatenate([b_eq, b_ub])
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0

    # phase 1 with one artificial per row
    T = np.zeros((m + 1, n_tot + m + 1))
    T[:m, :n_tot] = A
    T[:m, n_tot:n_tot + m] = np.eye(m)
    T[:m, -1] = b
    T[-1, :n_tot] = -A.sum(axis=0)
    T[-1, -1] = -b.sum()
    tab = _Tableau(T, list(range(n_tot, n_tot + m)))
    allowed = np.ones(n_tot + m, dtype=bool)
    tab.run(allowed, max_iter)
    scale = 1.0 + np.abs(b).max(initial=0.0)
    if -tab.T[-1, -1] > FEAS_TOL * scale:
        return LpResult("infeasible", None, np.inf)

    # drive remaining artificials out of the basis; drop redundant rows
    keep = []
    for r in range(m):
        if tab.basis[r] >= n_tot:
            row = tab.T[r, :n_tot]
            nz = np.flatnonzero(np.abs(row) > 1e-9)
            if nz.size:
                tab.pivot(r, nz[0])
                keep.append(r)
        else:
            keep.append(r)
    T2 = np.zeros((len(keep) + 1, n_tot + 1))
    T2[:-1, :n_tot] = tab.T[keep, :n_tot]
    T2[:-1, -1] = tab.T[keep, -1]
    basis = [tab.basis[r] for r in keep]
    full_c = np.concatenate([c, np.zeros(m_ub)])
    T2[-1, :n_tot] = full_c
    for r, j in enumerate(basis):
        T2[-1] -= full_c[j] * T2[r]
    tab2 = _Tableau(T2, basis)
    status = tab2.run(np.ones(n_tot, dtype=bool), max_iter)
    if status == "unbounded":
        return LpResult("unbounded", None, -np.inf)
    x = np.zeros(n_tot)
    for r, j in enumerate(tab2.basis):
        x[j] = tab2.T[r, -1]
    x = np.maximum(x[:n], 0.0)
    return LpResult("optimal", x, float(c @ x))
