import cvxpy as cp
import numpy as np
import pytest

from cran_powermin.errors import DomainError, ExtractionFail, InfeasibleError
from cran_powermin.sdpcore import (INFEASIBLE, OPTIMAL, Affine, Concave, ConvexProgram,
                                   Function, Layout, NegLogDet, Reciprocal, SdpProblem,
                                   extract_rank_one, kkt_residuals, minimize, solve)


def sym(rng, n):
    M = rng.normal(size=(n, n))
    return 0.5 * (M + M.T)


def random_sdp(rng):
    dims = [int(d) for d in rng.integers(1, 5, rng.integers(1, 4))]
    X0 = [(lambda M: M @ M.T + 0.1 * np.eye(n))(rng.normal(size=(n, n))) for n in dims]
    A = [[sym(rng, n) for n in dims] for _ in range(rng.integers(1, 4))]
    A[0] = [np.eye(n) for n in dims]
    b = [sum(np.sum(a * x) for a, x in zip(Ai, X0)) for Ai in A]
    G = [[sym(rng, n) for n in dims] for _ in range(rng.integers(0, 3))]
    h = [sum(np.sum(g * x) for g, x in zip(Gj, X0)) + rng.uniform(0, 1) for Gj in G]
    C = [(lambda M: M @ M.T)(rng.normal(size=(n, n))) + 0.5 * sym(rng, n) for n in dims]
    return SdpProblem(dims, C, A, b, G, h)


def cvxpy_value(p):
    Xs = [cp.Variable((n, n), PSD=True) for n in p.dims]
    cons = [sum(cp.trace(a @ x) for a, x in zip(Ai, Xs)) == bi for Ai, bi in zip(p.A, p.b)]
    cons += [sum(cp.trace(g @ x) for g, x in zip(Gj, Xs)) <= hj for Gj, hj in zip(p.G, p.h)]
    prob = cp.Problem(cp.Minimize(sum(cp.trace(c @ x) for c, x in zip(p.C, Xs))), cons)
    prob.solve(solver="CLARABEL")
    return prob.value


def test_minimum_eigenvalue_problem():
    sol = solve(SdpProblem([2], [np.diag([1.0, 2.0])], [[np.eye(2)]], [1.0]), tol=1e-10)
    assert sol.status == OPTIMAL
    assert sol.value == pytest.approx(1.0, abs=1e-8)
    assert np.allclose(sol.X[0], np.diag([1.0, 0.0]), atol=1e-8)


def test_off_diagonal_eigenvalue_problem():
    C = np.array([[0.0, 1.0], [1.0, 0.0]])
    sol = solve(SdpProblem([2], [C], [[np.eye(2)]], [1.0]), tol=1e-10)
    assert sol.value == pytest.approx(-1.0, abs=1e-8)
    assert np.allclose(sol.X[0], 0.5 * np.array([[1, -1], [-1, 1]]), atol=1e-8)


def test_random_sdps_meet_kkt_and_match_reference():
    rng = np.random.default_rng(0)
    for _ in range(20):
        p = random_sdp(rng)
        sol = solve(p)
        assert sol.status == OPTIMAL
        assert kkt_residuals(p, sol.X, sol.y).max() < 1e-6
        assert abs(sol.primal_objective - sol.dual_objective) <= 1e-6 * (1 + abs(sol.value))
        assert all(np.linalg.eigvalsh(X).min() >= -1e-8 * (1 + np.linalg.norm(X)) for X in sol.X)
        assert sol.value == pytest.approx(cvxpy_value(p), rel=1e-5, abs=1e-6)


def test_solver_is_deterministic():
    p = random_sdp(np.random.default_rng(5))
    a, b = solve(p), solve(p)
    assert all(np.array_equal(x, y) for x, y in zip(a.X, b.X))


def test_infeasible_sdp_is_reported():
    sol = solve(SdpProblem([2], [np.eye(2)], [[np.eye(2)]], [-1.0]))
    assert sol.status == INFEASIBLE and sol.certificate is not None


def test_kkt_residuals_of_analytic_optimum():
    p = SdpProblem([2], [np.diag([1.0, 2.0])], [[np.eye(2)]], [1.0])
    assert kkt_residuals(p, [np.diag([1.0, 0.0])], [1.0]).max() < 1e-12


def test_kkt_residuals_of_perturbed_point():
    p = SdpProblem([2], [np.diag([1.0, 2.0])], [[np.eye(2)]], [1.0])
    X = np.diag([1.0, 0.0]) + 0.1 * np.eye(2)
    r = kkt_residuals(p, [X / np.trace(X)], [1.0])
    assert r.primal < 1e-12
    assert r.complementarity > 0.01


def test_kkt_residuals_of_zero_problem():
    p = SdpProblem([3], [np.zeros((3, 3))])
    r = kkt_residuals(p, [np.eye(3)], [])
    assert r.primal == 0 and r.dual == 0 and r.gap == 0


def test_extract_rank_one_exact():
    w = np.array([-0.3, 1.2, 0.5])
    out = extract_rank_one(np.outer(w, w))
    assert np.allclose(out, -w, atol=1e-10)
    assert np.linalg.norm(np.outer(out, out) - np.outer(w, w)) <= 1e-8 * np.linalg.norm(w) ** 2


def test_extract_rank_one_randomization_approaches_best_direction():
    def rescale(v):
        return v / np.linalg.norm(v)

    def objective(v):
        return v @ np.diag([1.0, 2.0]) @ v

    out = extract_rank_one(np.eye(2), samples=4000, rescaler=rescale, objective=objective)
    assert objective(out) < 1.0 + 1e-3
    assert abs(out[0]) == pytest.approx(1.0, abs=1e-3)


def test_extract_rank_one_contract():
    with pytest.raises(DomainError):
        extract_rank_one(np.eye(2), samples=0)
    with pytest.raises(ExtractionFail):
        extract_rank_one(np.eye(2), samples=5, feasibility_check=lambda v: False)
    a = extract_rank_one(np.eye(3), samples=20, seed=7)
    assert np.array_equal(a, extract_rank_one(np.eye(3), samples=20, seed=7))


def test_barrier_logdet_closed_form():
    rng = np.random.default_rng(0)
    M = rng.normal(size=(3, 3))
    C = M @ M.T + np.eye(3)
    lay = Layout([3])
    prog = ConvexProgram(lay, Function([Affine(lay.trace_coeffs(0, C)), NegLogDet(0)]))
    res = minimize(prog, lay.pack([np.eye(3)]))
    assert np.allclose(lay.mat(res.x, 0), np.linalg.inv(C), atol=1e-7)
    assert res.value - res.lower_bound < 1e-7


def test_barrier_matches_reference_solver():
    rng = np.random.default_rng(1)
    for _ in range(5):
        n1, n2 = 2, 3
        lay = Layout([n1, n2], 1, floors=[0, 1e-3])
        C1 = (lambda M: M @ M.T)(rng.normal(size=(n1, n1)))
        C2 = (lambda M: M @ M.T + np.eye(n2))(rng.normal(size=(n2, n2)))
        a = rng.uniform(0.5, 1, n1)
        recip = Reciprocal(Concave(np.zeros((0, lay.size)), np.zeros(0), np.zeros(0),
                                   lay.trace_coeffs(0, np.outer(a, a)), 0.1), 2.0)
        obj = Function([Affine(lay.trace_coeffs(0, C1) + lay.trace_coeffs(1, C2)),
                        NegLogDet(1, 0.5), recip])
        prog = ConvexProgram(lay, obj)
        prog.add_constraint([Affine(lay.trace_coeffs(0, np.eye(n1))
                                    + lay.trace_coeffs(1, np.eye(n2)))], 3.0)
        prog.add_constraint([NegLogDet(1, 1.0)], 2.0)
        cs = np.zeros(lay.size)
        cs[lay.scalar(0)] = 1.0
        prog.add_constraint([Affine(-cs)], 0.0)
        prog.add_constraint([Affine(cs - lay.trace_coeffs(0, np.eye(n1)))], 0.0)
        res = minimize(prog, lay.pack([np.eye(n1), np.eye(n2)], [0.5]))

        X1 = cp.Variable((n1, n1), PSD=True)
        X2 = cp.Variable((n2, n2), PSD=True)
        z = cp.Variable()
        o = (cp.trace(C1 @ X1) + cp.trace(C2 @ X2) - 0.5 * cp.log_det(X2)
             + 2 * cp.inv_pos(a @ X1 @ a + 0.1))
        cons = [cp.trace(X1) + cp.trace(X2) <= 3, -cp.log_det(X2) <= 2, z >= 0,
                z <= cp.trace(X1), X2 >> 1e-3 * np.eye(n2)]
        ref = cp.Problem(cp.Minimize(o), cons)
        ref.solve(solver="CLARABEL")
        assert res.value == pytest.approx(ref.value, rel=1e-6, abs=1e-7)


def test_barrier_infeasible():
    lay = Layout([2])
    prog = ConvexProgram(lay, Function([Affine(lay.trace_coeffs(0, np.eye(2)))]))
    prog.add_constraint([Affine(lay.trace_coeffs(0, np.eye(2)))], -1.0)
    with pytest.raises(InfeasibleError):
        minimize(prog, lay.pack([np.eye(2)]))
