import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cran_powermin.errors import DomainError, InfeasibleError
from cran_powermin.largesystem import (TransmitPlan, approx_fronthaul_rate,
                                       approx_transmit_power, fixed_point, sig_int)
from cran_powermin.scenario import ChannelStats, ScenarioConfig, generate_scenario
from cran_powermin.transmit import (ACTIVITY_THRESHOLD, LiftedModel, ReweightState,
                                    build_lift_matrices, constraint_violation,
                                    coordinate_descent, majorized_fronthaul_rate, power_report,
                                    rrh_power, sinr_targets, solve_p1, solve_p1_detailed)

from conftest import toy_scenario


def lifted_pair(rng, L, K, N):
    w = rng.uniform(0.1, 1.0, K * L)
    blocks = []
    for _ in range(L):
        B = rng.normal(size=(N, N))
        blocks.append(B @ B.T + 0.1 * np.eye(N))
    psi = np.zeros((N * L, N * L))
    for l, b in enumerate(blocks):
        psi[l * N:(l + 1) * N, l * N:(l + 1) * N] = b
    p = (w ** 2).reshape(K, L).T
    return np.outer(w, w), psi, TransmitPlan(p, np.stack(blocks))


def test_rrh_power_model():
    radio = generate_scenario(ScenarioConfig(), 0).radio
    assert rrh_power(0.5, radio, active=True) == pytest.approx(8.8)
    assert rrh_power(0.0, radio, active=False) == pytest.approx(4.3)
    assert radio.delta_p == pytest.approx(2.5)
    with pytest.raises(DomainError):
        rrh_power(-1.0, radio)


def test_fronthaul_power_is_linear_in_rate():
    sc = generate_scenario(ScenarioConfig(K=2, S=1, L=1, N=2), 0)
    plan = TransmitPlan.isotropic(np.array([[0.3, 0.2]]), 0.05, 2)
    rep = power_report(sc, plan)
    assert np.allclose(rep.fronthaul_power, 0.5 * rep.fronthaul_rate)
    scaled = dataclasses.replace(rep, fronthaul_rate=np.array([2.0]))
    assert sc.radio.eta * scaled.fronthaul_rate[0] == pytest.approx(1.0)


def test_reweight_weights():
    rho = ReweightState.from_power([0.0, 1.0], c1=1.0, c2=1e-5)
    assert np.allclose(rho.rho, [1e5, 1 / (1 + 1e-5)])


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6), L=st.integers(1, 3), K=st.integers(1, 3),
       N=st.integers(1, 3))
def test_lift_matches_scalar_forms(seed, L, K, N):
    rng = np.random.default_rng(seed)
    stats = ChannelStats.from_gains(rng.uniform(0.2, 2.0, (L, K)), N)
    sc = toy_scenario(stats.d, N=N)
    W, psi, plan = lifted_pair(rng, L, K, N)
    fp = fixed_point(plan, stats)
    lift = build_lift_matrices(sc, fp.e)
    sig, intf = sig_int(plan, stats, 0.3)
    P = approx_transmit_power(plan, stats)
    for k in range(K):
        assert lift.signal(W, k) == pytest.approx(sig[k], rel=1e-10, abs=1e-14)
        assert lift.interference(W, psi, k, 0.3) == pytest.approx(intf[k], rel=1e-10)
    for l in range(L):
        assert lift.transmit_power(W, psi, l) == pytest.approx(P[l], rel=1e-10)
        lam = lift.lambda_mat(W, psi, l)
        assert np.allclose(lam, fp.lambda_mat[l], rtol=1e-10, atol=1e-14)
        for k in range(K):
            assert lift.e_value(W, lam, l, k) == pytest.approx(fp.e[l, k], rel=1e-9, abs=1e-14)


def test_lift_degenerates_to_scalars():
    sc = toy_scenario([[2.0]], N=1)
    lift = build_lift_matrices(sc)
    dbar2 = sc.stats.xi2[0] * 4.0
    assert lift.A[0].shape == (1, 1) and lift.A[0][0, 0] == 1
    assert lift.F[0][0, 0] == 1
    assert lift.Dbar[0, 0] == pytest.approx(dbar2)


def test_majorizer_touches_and_bounds(rng):
    stats = ChannelStats.from_gains(rng.uniform(0.2, 2.0, (2, 2)), 3)
    W, psi, plan = lifted_pair(rng, 2, 2, 3)
    fp = fixed_point(plan, stats)
    exact = approx_fronthaul_rate(plan, stats, fp)
    for l in range(2):
        touch = np.linalg.inv(fp.lambda_mat[l])
        assert majorized_fronthaul_rate(W, psi, touch, l, stats) == pytest.approx(
            exact[l], abs=1e-10)
        assert majorized_fronthaul_rate(W, psi, 2 * touch, l, stats) > exact[l]
        for _ in range(50):
            B = rng.normal(size=(3, 3))
            gamma = touch + 0.3 * B @ B.T - 0.05 * np.linalg.eigvalsh(touch).min() * np.eye(3)
            if np.linalg.eigvalsh(gamma).min() <= 0:
                continue
            assert majorized_fronthaul_rate(W, psi, gamma, l, stats) >= exact[l] - 1e-12


def test_scalar_log_bound_identity():
    phi, gamma = 2.0, 0.5
    assert np.log(phi) == pytest.approx(-np.log(gamma) + phi * gamma - 1)


def test_majorizer_rejects_singular_input(rng):
    stats = ChannelStats.from_gains(np.ones((1, 1)), 2)
    W, psi, _ = lifted_pair(rng, 1, 1, 2)
    with pytest.raises(DomainError):
        majorized_fronthaul_rate(W, psi, np.zeros((2, 2)), 0, stats)


def single_link():
    # target 2^(D / (tau_tr B)) - 1 = 1
    return toy_scenario([[1.0]], N=2, sigma2=1.0, D=0.5, C=8.0, tau=1.0, B=1.0)


def test_single_link_sinr_is_tight():
    sc = single_link()
    vars_, trace = coordinate_descent(sc, max_iter=60)
    plan = vars_.plan(1, 1, 2)
    sig, intf = sig_int(plan, sc.stats, sc.radio.sigma2)
    assert sig[0] / intf[0] == pytest.approx(1.0, rel=1e-5)
    assert np.all(np.diff(trace) <= 1e-9)


def test_infeasible_demand_raises():
    sc = toy_scenario([[1.0]], N=2, sigma2=1.0, D=20.0, C=8.0, B=1.0)
    with pytest.raises(InfeasibleError):
        coordinate_descent(sc, max_iter=5)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_looser_budget_never_costs_more(seed):
    sc = generate_scenario(ScenarioConfig(L=2, K=2, S=1, N=2), seed)
    _, tight = coordinate_descent(sc, tau_tr=0.5)
    _, loose = coordinate_descent(sc, tau_tr=1.0)
    assert loose[-1] <= tight[-1] * (1 + 1e-6)


def test_descent_trace_is_non_increasing(desk_scenario):
    _, trace = coordinate_descent(desk_scenario, max_iter=30)
    assert np.all(np.diff(trace) <= 1e-9)


def test_solve_p1_plan_is_feasible(desk_scenario):
    plan, report = solve_p1(desk_scenario, outer_iterations=2)
    assert constraint_violation(desk_scenario, plan, sinr_targets(desk_scenario)) <= 1e-6
    assert report.total == pytest.approx(
        sum(rrh_power(P, desk_scenario.radio, a) for P, a in
            zip(report.transmit_power, report.active)) + report.fronthaul_power.sum())


def test_zero_demand_gives_zero_power():
    sc = generate_scenario(ScenarioConfig(L=2, K=2, S=1, N=2, D=0.0), 0)
    plan, report = solve_p1(sc)
    assert np.all(plan.p == 0)
    assert np.all(report.transmit_power < ACTIVITY_THRESHOLD)
    assert not np.any(report.active)
    assert report.total == pytest.approx(2 * sc.radio.p_sleep + report.fronthaul_power.sum())


def test_far_rrh_goes_to_sleep():
    sc = generate_scenario(ScenarioConfig(L=2, K=2, S=1, N=4), 3)
    d = sc.stats.d.copy()
    d[1] /= 100.0
    sc = sc.replace(stats=ChannelStats.from_gains(d, sc.N))
    res = solve_p1_detailed(sc)
    assert res.report.transmit_power[1] < ACTIVITY_THRESHOLD
    assert constraint_violation(sc, res.plan, sinr_targets(sc)) <= 1e-6


def test_lifted_model_pack_round_trip(rng):
    sc = generate_scenario(ScenarioConfig(L=2, K=3, S=1, N=2), 0)
    model = LiftedModel(sc)
    plan = TransmitPlan.isotropic(rng.uniform(0, 1, (2, 3)), 0.1, 2)
    back = model.plan(model.pack_plan(plan))
    assert np.allclose(back.p, plan.p) and np.allclose(back.psi, plan.psi)
