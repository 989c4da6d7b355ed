"""Rank-one extraction from a relaxed PSD solution by Gaussian randomization."""

from __future__ import annotations

import numpy as np

from ..errors import DomainError, ExtractionFail

RANK_ONE_TOL = 1e-9


def _fix_sign(w):
    nz = np.flatnonzero(np.abs(w) > 0)
    if nz.size and w[nz[0]] < 0:
        return -w
    return w


def _default_objective(w):
    return float(w @ w)


def extract_rank_one(W, samples=100, feasibility_check=None, rescaler=None,
                     objective=None, seed=0, candidates=()):
    """Recover a vector ``w`` with ``w w^T`` close to the PSD matrix ``W``.

    If ``W`` is rank one (second eigenvalue below ``1e-9`` of the first) the
    dominant eigenvector scaled by the square root of its eigenvalue is
    returned directly. Otherwise ``samples`` real Gaussian vectors with
    covariance ``W`` are drawn; each (and each entry of ``candidates``, tried
    first) is passed through ``rescaler`` and kept if ``feasibility_check``
    accepts it. The feasible candidate with the least ``objective`` wins.

    Parameters
    ----------
    rescaler : callable, optional
        Maps a raw candidate to a rescaled one, or ``None`` to discard it.
    feasibility_check : callable, optional
        Predicate on rescaled candidates; all candidates pass if omitted.
    objective : callable, optional
        Defaults to the squared norm.

    Returns
    -------
    numpy.ndarray
        Sign fixed so the first nonzero entry is positive.

    Raises
    ------
    ExtractionFail
        No candidate passed; ``best`` holds the least-objective rejected one.
    """
    if samples < 1:
        raise DomainError("samples must be at least 1")
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise DomainError("W must be square")
    W = 0.5 * (W + W.T)
    ev, V = np.linalg.eigh(W)
    scale = 1.0 + np.abs(ev).max(initial=0.0)
    if ev.size and ev.min() < -1e-8 * scale:
        raise DomainError("W is not positive semidefinite")
    ev = np.maximum(ev, 0.0)
    top = ev[-1] if ev.size else 0.0
    if top > 0 and (ev.size == 1 or ev[-2] <= RANK_ONE_TOL * top):
        return _fix_sign(np.sqrt(top) * V[:, -1])

    objective = objective or _default_objective
    root = V * np.sqrt(ev)[None, :]
    rng = np.random.default_rng(seed)
    draws = rng.standard_normal((samples, W.shape[0])) @ root.T
    best, best_val = None, np.inf
    reject, reject_val = None, np.inf
    for raw in list(candidates) + list(draws):
        w = np.asarray(raw, dtype=float)
        if rescaler is not None:
            w = rescaler(w)
            if w is None:
                continue
        val = objective(w)
        if feasibility_check is None or feasibility_check(w):
            if val < best_val:
                best, best_val = w, val
        elif val < reject_val or reject is None:
            reject, reject_val = w, val
    if best is None:
        raise ExtractionFail("no feasible candidate among the randomized draws",
                             best=None if reject is None else _fix_sign(reject))
    return _fix_sign(best)
