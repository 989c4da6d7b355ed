import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from cran_powermin._lp import simplex
from cran_powermin.errors import ConfigError, ResourceLimitError
from cran_powermin.scheduler import (BnbNode, branch_and_bound, brute_force_oracle, combinational,
                                     heuristic, priority, solve_relaxation)

from conftest import make_instance, random_instance

TWO_BY_TWO = dict(loads=[0.4, 0.6], capacity=[1.0, 1.0], efficiency=np.ones((2, 2)))


def test_relaxation_single_pair():
    rel = solve_relaxation(make_instance([0.1], [1.0], [[1.0]]))
    assert rel.l[0, 0] == pytest.approx(0.1) and rel.a[0, 0] == pytest.approx(0.1)
    assert rel.z == pytest.approx(0.1)


def test_relaxation_cost_is_split_invariant():
    assert solve_relaxation(make_instance(**TWO_BY_TWO)).z == pytest.approx(1.0, abs=1e-10)


def test_relaxation_forced_pairs_can_be_infeasible():
    inst = make_instance([0.4, 0.6], [0.5, 0.5], np.ones((2, 2)))
    assert solve_relaxation(inst, S1={(0, 0), (0, 1)}) is None


def test_relaxation_binding_capability(rng):
    inst = random_instance(rng, 4, 3, capacity=(1.0, 2.0))
    rel = solve_relaxation(inst)
    mask = rel.l > 0
    ref = rel.l / (inst.efficiency * inst.tau_ex[None, :])
    assert np.allclose(rel.a[mask], ref[mask], rtol=1e-12)
    assert np.allclose(rel.l.sum(axis=0), inst.loads, rtol=1e-9)


@pytest.mark.parametrize("chi, load, eff, expected", [(1, 0.1, 0.5, 0.2), (2, 0.1, 0.5, 0.4)])
def test_priority(chi, load, eff, expected):
    inst = make_instance([load], [1.0], [[eff]], chi=[[chi]])
    assert priority(inst, 0, 0) == pytest.approx(expected)


def test_priority_prefers_larger_load():
    inst = make_instance([0.1, 0.05], [1.0], [[0.5, 0.5]])
    assert priority(inst, 0, 0) > priority(inst, 0, 1)


def test_priority_of_forbidden_pair_is_infinite():
    assert priority(make_instance([0.1], [1.0], [[0.0]]), 0, 0) == np.inf


def test_bnb_two_by_two_ties():
    inst = make_instance(**TWO_BY_TWO)
    assert branch_and_bound(inst).objective == pytest.approx(1.0, abs=1e-12)
    assert brute_force_oracle(inst).objective == pytest.approx(1.0, abs=1e-12)


def test_bnb_detects_infeasibility():
    inst = make_instance([0.4, 0.6], [0.5, 0.5], np.ones((2, 2)))
    assert branch_and_bound(inst) is None
    assert brute_force_oracle(inst) is None
    assert combinational(inst) is None


def test_single_server_optimum(rng):
    inst = make_instance([0.05, 0.02, 0.03], [1.0], [[0.5, 0.8, 0.3]], chi=[[1.0, 2.0, 1.5]],
                         tau_ex=[0.5, 1.0, 0.4])
    expected = np.sum(inst.chi[0] * inst.loads / (inst.efficiency[0] * inst.tau_ex))
    assert branch_and_bound(inst).objective == pytest.approx(expected, rel=1e-12)


def test_heuristic_picks_cheapest_server():
    plan = heuristic(make_instance([0.1], [1.0, 1.0], [[0.5], [1.0]]))
    assert plan.x[1, 0] == 1 and plan.A[1, 0] == pytest.approx(0.1)
    assert plan.objective == pytest.approx(0.1)


def test_heuristic_capacity_exhaustion():
    assert heuristic(make_instance([0.1, 0.1], [0.15], [[1.0, 1.0]])) is None


def test_combinational_uses_heuristic_when_it_succeeds(rng):
    inst = random_instance(rng, 4, 3, capacity=(2.0, 3.0), efficiency=(0.5, 1.0))
    h, c = heuristic(inst), combinational(inst)
    assert c.method == "heuristic"
    assert np.array_equal(h.x, c.x) and h.objective == c.objective


def test_combinational_falls_back_to_bnb():
    # greedy: 0.5 -> server 0, 0.4 -> server 1, then 0.3 fits nowhere;
    # {0.4, 0.3} on server 0 and 0.5 on server 1 is feasible
    inst = make_instance([0.5, 0.4, 0.3], [0.7, 0.5], np.ones((2, 3)),
                         chi=[[1.0] * 3, [1.2] * 3])
    assert heuristic(inst) is None
    c = combinational(inst)
    assert c.method == "bnb"
    assert c.objective == pytest.approx(brute_force_oracle(inst).objective, abs=1e-9)


def test_brute_force_size_guard():
    inst = make_instance(np.full(8, 0.01), np.ones(6), np.ones((6, 8)))
    with pytest.raises(ResourceLimitError):
        brute_force_oracle(inst)


def test_bnb_node_limit_reports_incumbent_and_gap(rng):
    inst = random_instance(np.random.default_rng(3), 7, 4)
    with pytest.raises(ResourceLimitError) as info:
        branch_and_bound(inst, node_limit=1)
    assert info.value.gap >= 0


def test_heuristic_monotonicity_counterexample():
    # larger efficiencies shrink VMs and let task 2 take the server task 1 needs
    loads, tau, cap = [0.2, 0.35], [1.0, 1.0], [0.36, 0.25]
    eff = np.array([[0.25, 1.0], [1.0, 1.0]])
    chi = [[2.0, 2.0], [1.0, 1.0]]
    assert heuristic(make_instance(loads, cap, eff, chi, tau)) is not None
    assert heuristic(make_instance(loads, cap, 1.5 * eff, chi, tau)) is None


def test_instance_validation():
    with pytest.raises(ConfigError):
        make_instance([0.1], [1.0], [[1.0]], tau_ex=[0.0])
    with pytest.raises(ConfigError):
        make_instance([0.1], [1.0], [[1.0, 1.0]])


def test_simplex_matches_linprog(rng):
    for _ in range(30):
        n, me, mi = 6, 2, 3
        c = rng.uniform(0.1, 1, n)
        A_eq = rng.uniform(0, 1, (me, n))
        x0 = rng.uniform(0, 1, n)
        b_eq = A_eq @ x0
        A_ub = rng.uniform(0, 1, (mi, n))
        b_ub = A_ub @ x0 + rng.uniform(0, 0.5, mi)
        ours = simplex(c, A_eq, b_eq, A_ub, b_ub)
        ref = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, method="highs")
        assert ours.status == "optimal"
        assert ours.value == pytest.approx(ref.fun, rel=1e-8, abs=1e-10)


instances = st.builds(
    lambda seed, K, S: random_instance(np.random.default_rng(seed), K, S),
    st.integers(0, 10**6), st.integers(1, 5), st.integers(1, 3))


@settings(max_examples=60, deadline=None)
@given(inst=instances)
def test_bnb_matches_oracle_and_bounds(inst):
    bnb, ref = branch_and_bound(inst), brute_force_oracle(inst)
    assert (bnb is None) == (ref is None)
    if bnb is None:
        return
    assert bnb.objective == pytest.approx(ref.objective, abs=1e-6)
    assert solve_relaxation(inst).z <= bnb.objective + 1e-9
    assert max(bnb.residuals(inst).values()) < 1e-9
    h = heuristic(inst)
    if h is not None:
        assert h.objective >= bnb.objective - 1e-9
        assert max(h.residuals(inst).values()) < 1e-9


@settings(max_examples=40, deadline=None)
@given(inst=instances, data=st.data())
def test_child_bounds_dominate_parent(inst, data):
    root = solve_relaxation(inst)
    if root is None:
        return
    s = data.draw(st.integers(0, inst.S - 1))
    k = data.draw(st.integers(0, inst.K - 1))
    others = {(t, k) for t in range(inst.S) if t != s}
    for S0, S1 in (({(s, k)}, set()), (others, {(s, k)})):
        child = solve_relaxation(inst, S0, S1)
        if child is not None:
            assert child.z >= root.z - 1e-9


@settings(max_examples=40, deadline=None)
@given(inst=instances, scale=st.floats(1.0, 3.0))
def test_exact_feasibility_is_monotone_in_efficiency(inst, scale):
    if branch_and_bound(inst) is None:
        return
    scaled = make_instance(inst.loads, inst.capacity, inst.efficiency * scale, inst.chi,
                           inst.tau_ex)
    assert branch_and_bound(scaled) is not None


def test_nodes_order_by_bound_then_creation():
    a = BnbNode(1.0, 0, frozenset(), frozenset())
    b = BnbNode(1.0, 1, frozenset(), frozenset())
    c = BnbNode(0.5, 2, frozenset(), frozenset())
    assert sorted([b, a, c]) == [c, a, b]
