"""Large-system (deterministic-equivalent) transmit power, UE rate and
fronthaul rate, together with Monte-Carlo oracles for the exact expectations.

Rates are in bits per channel use; multiply by the bandwidth for bits/s.

Two Monte-Carlo UE-rate estimators are provided. ``"coherent"`` averages the
rate of the instantaneous SINR seen by a UE that knows its own effective
gain; it is the quantity the deterministic equivalent converges to and is the
default for validation. ``"hardening"`` evaluates the worst-case
uncorrelated-noise bound literally (signal ``|E[h^H v]|^2``, the variance of
the effective gain counted as noise). The latter keeps the self-interference
variance term, which the deterministic equivalent omits, so it stays below
the deterministic value by a non-vanishing margin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import ConvergenceError, DomainError
from .scenario import ChannelStats

LOG2 = np.log(2.0)


@dataclass
class TransmitPlan:
    """Power coefficients ``p`` (L x K) and quantization covariances ``psi``
    (L x N x N, one Hermitian PSD block per RRH)."""

    p: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.psi = np.asarray(self.psi)
        if self.p.ndim != 2 or self.psi.ndim != 3:
            raise ValueError("p must be L x K and psi L x N x N")
        if self.psi.shape[0] != self.p.shape[0] or self.psi.shape[1] != self.psi.shape[2]:
            raise ValueError("psi must hold one square block per RRH")
        if np.any(self.p < 0):
            raise DomainError("power coefficients must be nonnegative")

    @property
    def N(self):
        return self.psi.shape[1]

    @classmethod
    def isotropic(cls, p, psi_scale, N):
        """Plan with ``psi_l = psi_scale[l] * I_N``."""
        p = np.asarray(p, dtype=float)
        q = np.broadcast_to(np.asarray(psi_scale, dtype=float), (p.shape[0],))
        return cls(p, q[:, None, None] * np.eye(N)[None])

    def check(self, tol=1e-10):
        for l, blk in enumerate(self.psi):
            if not np.allclose(blk, blk.conj().T, atol=1e-12):
                raise DomainError(f"psi[{l}] is not Hermitian")
            if np.linalg.eigvalsh(blk).min() < -tol:
                raise DomainError(f"psi[{l}] is not PSD")
        return self


@dataclass
class FixedPointState:
    """Solution ``e`` (L x K) and ``Lambda`` (L x N x N) of the
    self-consistent equations, plus the final residual and iteration count."""

    e: np.ndarray
    lambda_mat: np.ndarray
    residual: float
    iterations: int


def _column_variance(plan: TransmitPlan, stats: ChannelStats):
    # xi2_l * p_lk * d_lk: per-column variance of the effective precoder
    return stats.xi2[:, None] * plan.p * stats.d


def _trace_map(a_row, eig_row, t):
    # sum_n 1 / (sum_k a_k / (1 + a_k t) + psi_n)
    return np.sum(1.0 / (np.sum(a_row / (1.0 + a_row * t)) + eig_row))


def _scalar_root(a_row, eig_row, tol):
    # e_k = a_k t with t = tr(Lambda^{-1}); bracket t and solve g(t) = 0
    def g(t):
        return _trace_map(a_row, eig_row, t) - t

    hi = max(1.0, _trace_map(a_row, eig_row, 0.0))
    for _ in range(200):
        if g(hi) < 0:
            break
        hi *= 2.0
    else:
        raise ConvergenceError("could not bracket the fixed point", float(g(hi)))
    return brentq(g, 0.0, hi, xtol=tol * 1e-3, rtol=1e-15, maxiter=500)


def fixed_point(plan: TransmitPlan, stats: ChannelStats, tol=1e-10, max_iter=1000):
    """Solve ``e_lk = a_lk tr(Lambda_l^{-1})`` with
    ``Lambda_l = sum_k a_lk / (1 + e_lk) I + Psi_l`` by Picard iteration.

    Starts from ``e = 0``. The map is monotone so the iterates increase to the
    fixed point; a 0.5 damping kicks in only if the residual ever grows.
    Rows that have not converged after ``max_iter`` sweeps (slow when
    ``Psi`` is tiny next to the signal) are finished with a bracketed scalar
    root solve, using that ``e_lk / a_lk`` is the same for every ``k``.
    """
    a = _column_variance(plan, stats)
    L, K = a.shape
    N = plan.N
    eig = np.array([np.linalg.eigvalsh(plan.psi[l]).real for l in range(L)])
    e = np.zeros((L, K))
    active = a > 0
    res = np.inf
    damp = 1.0
    step = np.zeros_like(e)
    for it in range(1, max_iter + 1):
        c = np.sum(a / (1.0 + e), axis=1)
        denom = c[:, None] + eig
        with np.errstate(divide="ignore", invalid="ignore"):
            tr_inv = np.sum(1.0 / denom, axis=1)
            new = np.where(active, a * tr_inv[:, None], 0.0)
        if not np.all(np.isfinite(new)):
            raise DomainError("Lambda is singular (zero power with singular psi)")
        step = new - e
        r = float(np.max(np.abs(step))) if step.size else 0.0
        if r > res:
            damp = 0.5
        res = r
        e = e + damp * step
        if r < tol:
            break
    else:
        for l in np.flatnonzero(np.max(np.abs(step), axis=1) >= tol):
            e[l] = a[l] * _scalar_root(a[l], eig[l], tol)
        c = np.sum(a / (1.0 + e), axis=1)
        tr_inv = np.sum(1.0 / (c[:, None] + eig), axis=1)
        res = float(np.max(np.abs(a * tr_inv[:, None] - e)))
        if not res < max(tol, 1e-8 * float(np.max(np.abs(e)))):
            raise ConvergenceError(
                f"fixed point did not converge in {max_iter} iterations", res)
    c = np.sum(a / (1.0 + e), axis=1)
    lam = c[:, None, None] * np.eye(N)[None] + plan.psi
    return FixedPointState(e=e, lambda_mat=lam, residual=res, iterations=it)


def approx_transmit_power(plan: TransmitPlan, stats: ChannelStats):
    """Per-RRH deterministic transmit power ``xi2 N sum_k p d + tr(Psi)``."""
    N = plan.N
    sig = stats.xi2 * N * np.sum(plan.p * stats.d, axis=1)
    return sig + np.trace(plan.psi, axis1=1, axis2=2).real


def sig_int(plan: TransmitPlan, stats: ChannelStats, sigma2: float):
    """Deterministic signal and interference-plus-noise terms per UE."""
    N = plan.N
    d, xi2 = stats.d, stats.xi2
    dbar = np.sqrt(xi2)[:, None] * d  # L x K
    sig = np.sum(dbar * np.sqrt(plan.p), axis=0) ** 2
    # cross[k, i] = sum_l xi2_l d_li d_lk p_li
    cross = np.einsum("l,lk,li,li->ki", xi2, d, d, plan.p)
    interf = (cross.sum(axis=1) - np.diag(cross)) / N
    tr_psi = np.trace(plan.psi, axis1=1, axis2=2).real
    quant = (d * tr_psi[:, None]).sum(axis=0) / N**2
    return sig, interf + quant + sigma2 / N**2


def approx_ue_rate(plan: TransmitPlan, stats: ChannelStats, sigma2: float, k=None):
    """Deterministic UE rate(s) ``log2(1 + Sig/Int)`` in bits per channel use."""
    sig, intf = sig_int(plan, stats, sigma2)
    rate = np.log2(1.0 + sig / intf)
    return rate if k is None else float(rate[k])


def approx_fronthaul_rate(plan: TransmitPlan, stats: ChannelStats,
                          fp: FixedPointState = None, l=None):
    """Deterministic fronthaul rate(s) per RRH in bits per channel use."""
    L, K = plan.p.shape
    for j in range(L):
        if np.linalg.slogdet(plan.psi[j])[0] <= 0:
            raise DomainError(f"psi[{j}] is singular; fronthaul rate is infinite")
    if fp is None:
        fp = fixed_point(plan, stats)
    out = np.empty(L)
    for j in range(L):
        sgn, logdet_psi = np.linalg.slogdet(plan.psi[j])
        if sgn <= 0 or not np.isfinite(logdet_psi):
            raise DomainError(f"psi[{j}] is singular; fronthaul rate is infinite")
        logdet_lam = np.linalg.slogdet(fp.lambda_mat[j])[1]
        e = fp.e[j]
        delta = logdet_lam + np.sum(1.0 / (1.0 + e) + np.log1p(e)) - K
        out[j] = (delta - logdet_psi) / LOG2
    return out if l is None else float(out[l])


# ----------------------------------------------------------------------------
# Monte-Carlo oracles


@dataclass
class McEstimate:
    """Sample mean and its standard error (per RRH or per UE)."""

    mean: np.ndarray
    stderr: np.ndarray
    draws: int


def draw_channel(seed, index, L, N, K):
    """Small-scale fading for one draw: ``L x N x K`` i.i.d. CN(0, 1)."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))
    re = rng.standard_normal((L, N, K))
    im = rng.standard_normal((L, N, K))
    return (re + 1j * im) * np.sqrt(0.5)


def _draw_batch(seed, start, stop, L, N, K):
    return np.stack([draw_channel(seed, i, L, N, K) for i in range(start, stop)])


def _batches(draws, batch=200):
    for start in range(0, draws, batch):
        yield start, min(draws, start + batch)


def _effective(plan, stats, h_tilde):
    # h: (B, L, N, K) true channels; V: (B, L, N, K) MRT precoders
    h = np.sqrt(stats.d)[None, :, None, :] * h_tilde
    scale = np.sqrt(stats.xi2)[None, :, None, None] * np.sqrt(plan.p)[None, :, None, :]
    return h, h * scale


def _mean_se(samples):
    samples = np.asarray(samples)
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.full_like(mean, np.nan)
    return mean, se


def mc_transmit_power(plan, stats, draws, seed=0):
    """Sample mean of ``tr(V V^H) + tr(Psi)`` per RRH."""
    if draws < 1:
        raise ValueError("draws must be >= 1")
    L, K = plan.p.shape
    tr_psi = np.trace(plan.psi, axis1=1, axis2=2).real
    vals = []
    for a, b in _batches(draws):
        _, V = _effective(plan, stats, _draw_batch(seed, a, b, L, plan.N, K))
        vals.append(np.sum(np.abs(V) ** 2, axis=(2, 3)))
    # the constant trace is added after averaging so it carries no rounding
    mean, se = _mean_se(np.concatenate(vals))
    return McEstimate(mean + tr_psi, se, draws)


def mc_fronthaul_rate(plan, stats, draws, seed=0):
    """Sample mean of ``log2 |V V^H + Psi| / |Psi|`` per RRH (0 without signal)."""
    if draws < 1:
        raise ValueError("draws must be >= 1")
    L, K = plan.p.shape
    N = plan.N
    silent = ~np.any(plan.p > 0, axis=1)
    logdet_psi = np.zeros(L)
    for l in np.flatnonzero(~silent):
        sgn, ld = np.linalg.slogdet(plan.psi[l])
        if sgn <= 0:
            raise DomainError(f"psi[{l}] is singular; fronthaul rate is infinite")
        logdet_psi[l] = ld
    vals = []
    for a, b in _batches(draws):
        _, V = _effective(plan, stats, _draw_batch(seed, a, b, L, N, K))
        cov = V @ np.conj(np.swapaxes(V, -1, -2)) + plan.psi[None]
        ld = np.linalg.slogdet(cov)[1]
        r = (ld - logdet_psi[None]) / LOG2
        r[:, silent] = 0.0
        vals.append(r)
    mean, se = _mean_se(np.concatenate(vals))
    return McEstimate(mean, se, draws)


def _gains(plan, stats, h_tilde):
    """g[b, k, i] = h_k^H v_i and q[b, k] = h_k^H Psi h_k."""
    h, V = _effective(plan, stats, h_tilde)
    g = np.einsum("blnk,blni->bki", np.conj(h), V)
    q = np.einsum("blnk,lnm,blmk->bk", np.conj(h), plan.psi, h).real
    return g, q


def mc_ue_rate(plan, stats, sigma2, draws, seed=0, mode="coherent"):
    """Monte-Carlo UE rates in bits per channel use.

    ``mode="coherent"`` averages ``log2(1 + SINR)`` of the instantaneous
    SINR ``|h_k^H v_k|^2 / (sum_{i!=k} |h_k^H v_i|^2 + h_k^H Psi h_k + s2)``.
    ``mode="hardening"`` estimates the worst-case-noise bound
    ``log2(1 + |E g_kk|^2 / (var g_kk + sum_{i!=k} E|g_ki|^2 + E q_k + s2))``;
    its standard error comes from 20 batch means.
    """
    if draws < 1:
        raise ValueError("draws must be >= 1")
    if mode not in ("coherent", "hardening"):
        raise ValueError(f"unknown mode {mode!r}")
    L, K = plan.p.shape
    gs, qs = [], []
    for a, b in _batches(draws):
        g, q = _gains(plan, stats, _draw_batch(seed, a, b, L, plan.N, K))
        gs.append(g)
        qs.append(q)
    g = np.concatenate(gs)
    q = np.concatenate(qs)
    p2 = np.abs(g) ** 2
    own = np.einsum("bkk->bk", p2)
    others = p2.sum(axis=2) - own
    if mode == "coherent":
        sinr = own / (others + q + sigma2)
        mean, se = _mean_se(np.log2(1.0 + sinr))
        return McEstimate(mean, se, draws)

    def bound(gk, oth, qq):
        gkk = np.einsum("bkk->bk", gk)
        s = np.abs(gkk.mean(axis=0)) ** 2
        var = np.mean(np.abs(gkk - gkk.mean(axis=0)) ** 2, axis=0)
        return np.log2(1.0 + s / (var + oth.mean(axis=0) + qq.mean(axis=0) + sigma2))

    mean = bound(g, others, q)
    nb = min(20, draws)
    if nb > 1:
        parts = np.array_split(np.arange(draws), nb)
        bm = np.array([bound(g[ix], others[ix], q[ix]) for ix in parts])
        se = bm.std(axis=0, ddof=1) / np.sqrt(nb)
    else:
        se = np.full(K, np.nan)
    return McEstimate(mean, se, draws)


@dataclass
class InaccuracyMetrics:
    """Summed relative errors of the deterministic equivalents.

    ``eps1`` UE rates, ``eps2`` fronthaul rates, ``eps3`` RRH transmit powers.
    ``excluded`` lists terms skipped because the exact value was zero.
    """

    eps1: float
    eps2: float
    eps3: float
    excluded: list

    def as_tuple(self):
        return self.eps1, self.eps2, self.eps3


def _rel_sum(approx, exact, label, excluded):
    total = 0.0
    for i, (a, x) in enumerate(zip(approx, exact)):
        if x == 0:
            if a != 0:
                excluded.append(f"{label}[{i}]")
            continue
        total += abs(a - x) / abs(x)
    return total


def inaccuracy_metrics(plan, stats, sigma2, draws, seed=0, mode="coherent"):
    """Relative errors between deterministic equivalents and Monte-Carlo."""
    excluded = []
    r_u = approx_ue_rate(plan, stats, sigma2)
    r_u_mc = mc_ue_rate(plan, stats, sigma2, draws, seed=seed, mode=mode).mean
    p_bar = approx_transmit_power(plan, stats)
    p_mc = mc_transmit_power(plan, stats, draws, seed=seed).mean
    silent = ~np.any(plan.p > 0, axis=1)
    r_f = np.zeros(plan.p.shape[0])
    if np.any(~silent):
        fp = fixed_point(plan, stats)
        rf_all = approx_fronthaul_rate(plan, stats, fp)
        r_f[~silent] = rf_all[~silent]
    r_f_mc = mc_fronthaul_rate(plan, stats, draws, seed=seed).mean
    eps1 = _rel_sum(r_u, r_u_mc, "ue", excluded)
    eps2 = _rel_sum(r_f, r_f_mc, "fronthaul", excluded)
    eps3 = _rel_sum(p_bar, p_mc, "power", excluded)
    return InaccuracyMetrics(eps1, eps2, eps3, excluded)


def random_feasible_plan(scenario, rng, load=(0.5, 1.0)):
    """Random isotropic plan meeting the per-RRH power and fronthaul limits.

    Power shares follow ``u * d_lk / max_l d_lk`` with ``u ~ U[0.1, 1]``.
    Each RRH's quantization level is solved so that its deterministic
    fronthaul rate equals ``C * U[load]``. Power and quantization are then
    scaled jointly (which leaves the fronthaul rate unchanged) so the
    deterministic transmit power equals ``p_max * U[load]``. QoS targets are
    not enforced.
    """
    stats = scenario.stats
    N, L, K = scenario.N, scenario.L, scenario.K
    C, p_max = scenario.radio.C, scenario.radio.p_max
    u = rng.uniform(0.1, 1.0, (L, K))
    p = u * stats.d / stats.d.max(axis=0)
    p = p / approx_transmit_power(TransmitPlan.isotropic(p, 0.0, N), stats)[:, None]
    psi = np.empty(L)
    for l in range(L):
        target = C * rng.uniform(*load)
        sub_stats = ChannelStats(stats.d[l:l + 1], stats.xi2[l:l + 1])

        def gap(log_psi):
            plan = TransmitPlan.isotropic(p[l:l + 1], np.exp(log_psi), N)
            return approx_fronthaul_rate(plan, sub_stats)[0] - target

        psi[l] = np.exp(brentq(gap, np.log(1e-6 / N), np.log(1e4 / N), xtol=1e-10))
    plan = TransmitPlan.isotropic(p, psi, N)
    scale = p_max * rng.uniform(*load, L) / approx_transmit_power(plan, stats)
    return TransmitPlan.isotropic(p * scale[:, None], psi * scale, N)
