"""Log-barrier Newton method for smooth convex programs over PSD blocks.

The transmission subproblems are SDPs plus ``-log det`` and ``log`` terms
(compression noise and majorized rates), which the standard-form solver in
:mod:`.ipm` cannot express. This module handles

    min  f0(x)   s.t.  f_i(x) <= h_i,   X_b - floor_b I  PSD

where ``x`` stacks symmetric blocks (upper-triangle coordinates) and free
scalars, and each ``f`` is a sum of :class:`Term` objects. Iterates follow
the central path ``t f0 - sum log(h_i - f_i) - sum log det(X_b - floor_b I)``
with damped Newton steps; the returned ``lower_bound = f0 - nu/t`` is a
certified bound from the barrier duality gap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError, InfeasibleError, NumericalLimitError


class Layout:
    """Coordinates of symmetric blocks and free scalars in one vector.

    Block ``b`` uses one coordinate per upper-triangle entry, so
    ``X[i, j] = X[j, i] = x[k]``. ``floors[b]`` is the PSD lower bound.
    """

    def __init__(self, dims, n_scalar=0, floors=None):
        self.dims = [int(n) for n in dims]
        self.n_scalar = int(n_scalar)
        self.floors = list(floors) if floors is not None else [0.0] * len(self.dims)
        self.offsets = []
        self._iu = []
        self._hess_idx = []
        pos = 0
        for n in self.dims:
            self.offsets.append(pos)
            i, j = np.triu_indices(n)
            self._iu.append((i, j))
            w = np.where(i == j, 1.0, 2.0)
            self._hess_idx.append((np.ix_(i, i), np.ix_(j, j), np.ix_(i, j), np.ix_(j, i),
                                   w, 0.5 * np.outer(w, w)))
            pos += n * (n + 1) // 2
        self.scalar_offset = pos
        self.size = pos + self.n_scalar

    def block_slice(self, b):
        n = self.dims[b]
        return slice(self.offsets[b], self.offsets[b] + n * (n + 1) // 2)

    def scalar(self, i):
        return self.scalar_offset + i

    def mat(self, x, b):
        n = self.dims[b]
        M = np.empty((n, n))
        i, j = self._iu[b]
        v = x[self.block_slice(b)]
        M[i, j] = v
        M[j, i] = v
        return M

    def pack(self, blocks, scalars=()):
        x = np.zeros(self.size)
        for b, B in enumerate(blocks):
            x[self.block_slice(b)] = np.asarray(B, dtype=float)[self._iu[b]]
        if self.n_scalar:
            x[self.scalar_offset:] = np.asarray(scalars, dtype=float)
        return x

    def trace_coeffs(self, b, M):
        """Vector ``c`` with ``c . x == tr(M X_b)`` for symmetric ``M``."""
        M = np.asarray(M, dtype=float)
        M = 0.5 * (M + M.T)
        c = np.zeros(self.size)
        i, j = self._iu[b]
        c[self.block_slice(b)] = np.where(i == j, 1.0, 2.0) * M[i, j]
        return c

    def logdet_derivs(self, x, b, shift=0.0, order=2):
        """``log det(X_b + shift I)`` with gradient and Hessian in block coords."""
        n = self.dims[b]
        X = self.mat(x, b)
        X[np.diag_indices(n)] += shift
        try:
            Lc = np.linalg.cholesky(X)
        except np.linalg.LinAlgError:
            return -np.inf, None, None
        if np.diag(Lc).min() < 1e-150:
            # inverse would overflow: numerically on the boundary
            return -np.inf, None, None
        val = 2.0 * np.sum(np.log(np.diag(Lc)))
        if order == 0:
            return val, None, None
        with np.errstate(over="ignore", invalid="ignore"):
            Li = np.linalg.inv(Lc)
            Xi = Li.T @ Li
        if not np.all(np.isfinite(Xi)):
            return -np.inf, None, None
        i, j = self._iu[b]
        ii, jj, ij, ji, w, ww = self._hess_idx[b]
        grad = w * Xi[i, j]
        if order == 1:
            return val, grad, None
        # d2/dx_a dx_c log det = -tr(X^-1 E_a X^-1 E_c), E symmetric unit
        H = -(Xi[ii] * Xi[jj] + Xi[ij] * Xi[ji]) * ww
        return val, grad, H


class Term:
    """Convex function of ``x``; subclasses return ``(value, grad, hess)``.

    ``value`` is ``inf`` outside the domain.
    """

    def eval(self, layout, x, order=2):
        raise NotImplementedError


@dataclass
class Affine(Term):
    c: np.ndarray
    c0: float = 0.0

    def eval(self, layout, x, order=2):
        # a zero Hessian is reported as None
        return float(self.c @ x + self.c0), self.c, None


@dataclass
class NegLogDet(Term):
    """``-weight * log det(X_block + shift I)``."""

    block: int
    weight: float = 1.0
    shift: float = 0.0

    def eval(self, layout, x, order=2):
        n = layout.size
        val, g, H = layout.logdet_derivs(x, self.block, self.shift, order)
        if not np.isfinite(val):
            return np.inf, None, None
        if order == 0:
            return -self.weight * val, None, None
        sl = layout.block_slice(self.block)
        grad = np.zeros(n)
        grad[sl] = -self.weight * g
        hess = None
        if order > 1:
            hess = np.zeros((n, n))
            hess[sl, sl] = -self.weight * H
        return -self.weight * val, grad, hess


@dataclass
class Concave:
    """``r(x) = sum_i w_i log(a_i . x + a0_i) + c . x + c0`` with ``w_i >= 0``."""

    A: np.ndarray
    a0: np.ndarray
    w: np.ndarray
    c: np.ndarray
    c0: float = 0.0

    def eval(self, x, order=2):
        arg = self.A @ x + self.a0 if len(self.w) else np.zeros(0)
        if np.any(arg <= 0):
            return -np.inf, None, None
        val = float(np.sum(self.w * np.log(arg)) + self.c @ x + self.c0)
        grad = self.A.T @ (self.w / arg) + self.c if len(self.w) else self.c.copy()
        hess = None
        if order > 1:
            s = np.sqrt(self.w) / arg
            As = self.A * s[:, None]
            hess = -(As.T @ As)
        return val, grad, hess


@dataclass
class NegConcave(Term):
    """``-r(x)``."""

    r: Concave

    def eval(self, layout, x, order=2):
        v, g, H = self.r.eval(x, order)
        if not np.isfinite(v):
            return np.inf, None, None
        return -v, -g, (None if H is None else -H)


@dataclass
class Reciprocal(Term):
    """``scale / r(x)``, convex where ``r > 0``."""

    r: Concave
    scale: float

    def eval(self, layout, x, order=2):
        v, g, H = self.r.eval(x, order)
        if not (np.isfinite(v) and v > 0):
            return np.inf, None, None
        val = self.scale / v
        grad = -self.scale * g / v ** 2
        hess = None
        if order > 1:
            hess = self.scale * (2.0 * np.outer(g, g) / v ** 3 - H / v ** 2)
        return val, grad, hess


@dataclass
class Function:
    terms: list = field(default_factory=list)

    def eval(self, layout, x, order=2):
        n = layout.size
        val, grad = 0.0, np.zeros(n)
        hess = np.zeros((n, n)) if order > 1 else None
        for t in self.terms:
            v, g, H = t.eval(layout, x, order)
            if not np.isfinite(v):
                return np.inf, None, None
            val += v
            if order:
                grad += g
            if order > 1 and H is not None:
                hess += H
        return val, grad, hess


@dataclass
class ConvexProgram:
    """``min objective  s.t. constraints[i] <= rhs[i]`` over ``layout``."""

    layout: Layout
    objective: Function
    constraints: list = field(default_factory=list)
    rhs: list = field(default_factory=list)

    def add_constraint(self, fn, rhs):
        self.constraints.append(fn if isinstance(fn, Function) else Function(list(fn)))
        self.rhs.append(float(rhs))

    @property
    def nu(self):
        return len(self.constraints) + sum(self.layout.dims)


@dataclass
class BarrierResult:
    """``multipliers[i]`` prices ``constraints[i]``."""

    x: np.ndarray
    value: float
    lower_bound: float
    multipliers: np.ndarray
    newton_steps: int

    def block(self, layout, b):
        return layout.mat(self.x, b)


class _Barrier:
    def __init__(self, prog, t, slack_index=None, cap=None):
        self.p = prog
        self.t = t
        self.s_idx = slack_index  # phase-1 slack coordinate or None
        # phase one: (objective, level) kept as an unrelaxed barrier so that
        # Newton steps see the objective's domain boundary
        self.cap = cap

    def value(self, x):
        return self._eval(x, order=0)[0]

    def _eval(self, x, order=2):
        lay = self.p.layout
        n = x.size
        s = 0.0 if self.s_idx is None else x[self.s_idx]
        if self.s_idx is None:
            f0, g0, H0 = self.p.objective.eval(lay, x, order)
            if not np.isfinite(f0):
                return np.inf, None, None
        else:
            f0 = s
            g0 = np.zeros(n)
            g0[self.s_idx] = 1.0
            H0 = np.zeros((n, n)) if order else None
        val = self.t * f0
        grad = self.t * g0 if order else None
        hess = self.t * H0 if order > 1 else None
        if self.cap is not None:
            fn, level = self.cap
            v, g, H = fn.eval(lay, x, order)
            if not (np.isfinite(v) and v < level):
                return np.inf, None, None
            gap = level - v
            val -= np.log(gap)
            if order:
                grad += g / gap
                if order > 1:
                    hess += np.outer(g, g) / gap ** 2 + H / gap
        for fn, h in zip(self.p.constraints, self.p.rhs):
            v, g, H = fn.eval(lay, x, max(order, 1) if order else 0)
            if not np.isfinite(v):
                return np.inf, None, None
            slack = h - v + s
            if slack <= 0:
                return np.inf, None, None
            val -= np.log(slack)
            if order:
                gg = g.copy()
                if self.s_idx is not None:
                    gg[self.s_idx] -= 1.0
                grad += gg / slack
                if order > 1:
                    hess += np.outer(gg, gg) / slack ** 2 + H / slack
        for b, fl in enumerate(lay.floors):
            v, g, H = lay.logdet_derivs(x, b, -fl, order)
            if not np.isfinite(v):
                return np.inf, None, None
            val -= v
            if order:
                sl = lay.block_slice(b)
                grad[sl] -= g
                if order > 1:
                    hess[sl, sl] -= H
        return val, grad, hess


def _centre(bar, x, max_steps, stop=None):
    """Damped Newton on the barrier function.

    Returns ``(x, steps, centred)``; ``centred`` is False when the line
    search stalls or the step budget runs out.
    """
    steps = 0
    for _ in range(max_steps):
        val, g, H = bar._eval(x)
        if not np.isfinite(val):
            raise NumericalLimitError("iterate left the barrier domain", best=x)
        n = x.size
        # Jacobi scaling: block floors make the diagonal span many decades
        dg = np.abs(np.diag(H))
        sc = 1.0 / np.sqrt(np.where(dg > 0, dg, 1.0))
        Hs = H * sc[:, None] * sc[None, :] + 1e-13 * np.eye(n)
        try:
            L = np.linalg.cholesky(Hs)
            dx = -sc * np.linalg.solve(L.T, np.linalg.solve(L, g * sc))
        except np.linalg.LinAlgError:
            dx = -sc * np.linalg.lstsq(Hs, g * sc, rcond=None)[0]
        dec = float(-g @ dx)
        steps += 1
        # below the rounding level of the barrier value no descent is measurable
        noise = 1e-14 * (1.0 + abs(val))
        if dec / 2.0 < max(1e-10, noise):
            return x, steps, True
        a = min(1.0, 0.99 * _psd_step(bar.p.layout, x, dx))
        while True:
            cand = x + a * dx
            v = bar.value(cand)
            if np.isfinite(v) and v <= val - 0.25 * a * dec + noise:
                break
            a *= 0.5
            if a < 1e-14:
                return x, steps, False
        x = cand
        if stop is not None and stop(x):
            return x, steps, True
    return x, steps, False


def _psd_step(layout, x, dx):
    """Largest step keeping every block strictly above its floor."""
    amax = np.inf
    for b, fl in enumerate(layout.floors):
        X = layout.mat(x, b)
        X[np.diag_indices(X.shape[0])] -= fl
        try:
            Li = np.linalg.inv(np.linalg.cholesky(X))
        except np.linalg.LinAlgError:
            return 0.0
        lo = np.linalg.eigvalsh(Li @ layout.mat(dx, b) @ Li.T).min()
        if lo < 0:
            amax = min(amax, -1.0 / lo)
    return amax


def _interior_blocks(layout, x):
    """Clip block eigenvalues strictly above their floors."""
    x = x.copy()
    for b, fl in enumerate(layout.floors):
        X = layout.mat(x, b)
        ev, V = np.linalg.eigh(X)
        lo = fl + 1e-6 * (1.0 + abs(fl) + np.abs(ev).max())
        if ev.min() < lo:
            X = (V * np.maximum(ev, lo)) @ V.T
            x[layout.block_slice(b)] = X[np.triu_indices(layout.dims[b])]
    return x


def _phase_one(prog, x0, tol, max_newton):
    """Find a point strictly inside every constraint and PSD floor.

    Blocks are first moved inside their floors; the inequality constraints
    are then relaxed by a common slack ``s`` that is driven below zero.
    """
    lay = prog.layout
    if _strict(prog, x0):
        return x0
    x0 = _interior_blocks(lay, x0)
    if _strict(prog, x0):
        return x0
    worst = 0.0
    for fn, h in zip(prog.constraints, prog.rhs):
        v = fn.eval(lay, x0, order=0)[0]
        if not np.isfinite(v):
            raise DomainError("starting point outside a constraint's domain")
        worst = max(worst, v - h)
    aug = Layout(lay.dims, lay.n_scalar + 1, lay.floors)
    z = np.concatenate([x0, [worst + 1.0]])
    s_idx = aug.size - 1
    aug_prog = ConvexProgram(aug, Function([]),
                             [Function([_Lift(t, lay) for t in fn.terms]) for fn in prog.constraints],
                             list(prog.rhs))
    # f0 <= level keeps phase one inside the objective's domain; a feasible
    # set lying entirely above this level would be reported as infeasible
    f_start = prog.objective.eval(lay, x0, order=0)[0]
    if not np.isfinite(f_start):
        raise DomainError("starting point outside the objective's domain")
    cap = (Function([_Lift(t, lay) for t in prog.objective.terms]),
           f_start + 1e3 * (1.0 + abs(f_start)))
    t = 1.0
    margin = 1e-9 * (1.0 + abs(worst))
    for _ in range(60):
        bar = _Barrier(aug_prog, t, slack_index=s_idx, cap=cap)
        z, _, centred = _centre(bar, z, max_newton, stop=lambda v: v[s_idx] < -margin)
        if z[s_idx] < -margin:
            return z[:-1]
        bound = z[s_idx] - (aug_prog.nu + 1) / t
        if centred and bound > tol:
            raise InfeasibleError(f"no strictly feasible point (phase-one bound {bound:.3g})")
        t *= 20.0
    raise InfeasibleError("phase one could not certify feasibility")


def _strict(prog, x):
    return np.isfinite(_Barrier(prog, 1.0).value(x))


@dataclass
class _Lift(Term):
    """Evaluate a term on the first ``n`` coordinates of a longer vector."""

    inner: Term
    base: Layout

    def eval(self, layout, x, order=2):
        n = x.size - 1
        v, g, H = self.inner.eval(self.base, x[:n], order)
        if not np.isfinite(v) or order == 0:
            return v, None, None
        gg = np.zeros(x.size)
        gg[:n] = g
        HH = None
        if order > 1 and H is not None:
            HH = np.zeros((x.size, x.size))
            HH[:n, :n] = H
        return v, gg, HH


def minimize(prog: ConvexProgram, x0, tol=1e-8, max_newton=100, t0=1.0, mu=20.0):
    """Solve ``prog`` from ``x0`` (need not be strictly feasible).

    Parameters
    ----------
    tol : float
        Target absolute duality gap ``nu / t`` relative to ``1 + |f0|``.

    Raises
    ------
    InfeasibleError
        Phase one proves there is no strictly feasible point.
    NumericalLimitError
        Newton steps fail to make progress.
    """
    lay = prog.layout
    x0 = np.asarray(x0, dtype=float)
    if x0.size != lay.size:
        raise DomainError("x0 has the wrong size")
    if not np.isfinite(prog.objective.eval(lay, x0, order=0)[0]):
        raise DomainError("starting point outside the objective's domain")
    x = _phase_one(prog, x0, tol, max_newton)
    if not np.isfinite(prog.objective.eval(lay, x, order=0)[0]):
        raise DomainError("phase one left the objective's domain")
    t = t0
    total = 0
    nu = prog.nu
    while True:
        bar = _Barrier(prog, t)
        x, k, _ = _centre(bar, x, max_newton)
        total += k
        f0 = prog.objective.eval(lay, x, order=0)[0]
        if nu / t < tol * (1.0 + abs(f0)):
            break
        if total > 50 * max_newton:
            raise NumericalLimitError("barrier method made no progress", best=x)
        t *= mu
    mult = np.array([1.0 / (t * (h - fn.eval(lay, x, order=0)[0]))
                     for fn, h in zip(prog.constraints, prog.rhs)])
    return BarrierResult(x=x, value=float(f0), lower_bound=float(f0 - nu / t),
                         multipliers=mult, newton_steps=total)
