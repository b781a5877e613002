import numpy as np
import pytest

from irs_alloc.milp import BranchAndBound, MilpProblem, MilpStatus, MilpTolerance, brute_force, solve_milp


def test_pick_one():
    p = MilpProblem(c=[-1.0, -1.0], A_ineq=[[1.0, 1.0]], b_ineq=[1.0], binary_idx=[0, 1])
    res = solve_milp(p)
    assert res.status is MilpStatus.OPTIMAL
    np.testing.assert_allclose(res.obj, -1.0, atol=1e-9)
    assert set(res.x) <= {0.0, 1.0}


def test_one_hot_assignment_takes_the_cheapest_entry():
    c = np.array([3.0, 1.0, 2.0, 0.5, 4.0, 2.5])
    A_eq = np.zeros((2, 6))
    A_eq[0, :3] = 1.0
    A_eq[1, 3:] = 1.0
    p = MilpProblem(c=c, A_eq=A_eq, b_eq=[1.0, 1.0], binary_idx=range(6))
    assert p.one_hot_groups() == [(0, 1, 2), (3, 4, 5)]
    res = solve_milp(p)
    np.testing.assert_array_equal(res.x, [0, 1, 0, 1, 0, 0])
    np.testing.assert_allclose(res.obj, 1.5, atol=1e-9)


def test_infeasible_binaries():
    p = MilpProblem(c=[1.0, 1.0], A_ineq=[[-1.0, -1.0]], b_ineq=[-3.0], binary_idx=[0, 1])
    assert solve_milp(p).status is MilpStatus.INFEASIBLE
    assert brute_force(p).status is MilpStatus.INFEASIBLE


@pytest.mark.parametrize('seed', range(4))
def test_random_binary_program_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = 12
    c = rng.standard_normal(n)
    A = rng.standard_normal((4, n))
    x0 = rng.integers(0, 2, n).astype(float)
    b = A @ x0 + 0.5
    p = MilpProblem(c=c, A_ineq=A, b_ineq=b, binary_idx=range(n))
    res, ref = solve_milp(p), brute_force(p)
    assert res.optimal
    np.testing.assert_allclose(res.obj, ref.obj, atol=1e-6)
    assert p.violation(res.x) <= 1e-7


@pytest.mark.parametrize('seed', range(3))
def test_epigraph_master_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    N, L = 3, 2
    nb = N * L
    rows = np.hstack([rng.standard_normal((5, nb)), -np.ones((5, 1))])
    rhs = -rng.standard_normal(5)
    A_eq = np.zeros((N, nb + 1))
    for n in range(N):
        A_eq[n, n * L:(n + 1) * L] = 1.0
    c = np.zeros(nb + 1)
    c[-1] = 1.0
    p = MilpProblem(c=c, A_ineq=rows, b_ineq=rhs, A_eq=A_eq, b_eq=np.ones(N), binary_idx=range(nb))
    res, ref = solve_milp(p), brute_force(p)
    assert res.optimal
    np.testing.assert_allclose(res.obj, ref.obj, atol=1e-6)
    np.testing.assert_allclose(res.x[-1], np.max(rows[:, :nb] @ res.x[:nb] - rhs), atol=1e-6)


def test_parallel_nodes_agree_with_sequential():
    rng = np.random.default_rng(9)
    n = 10
    p = MilpProblem(c=rng.standard_normal(n), A_ineq=rng.standard_normal((3, n)), b_ineq=np.full(3, 0.5),
                    binary_idx=range(n))
    seq = solve_milp(p)
    par = solve_milp(p, MilpTolerance(workers=2))
    np.testing.assert_allclose(par.obj, seq.obj, atol=1e-7)


def test_problem_validation():
    with pytest.raises(ValueError):
        MilpProblem(c=[1.0], A_ineq=[[1.0]], b_ineq=[1.0, 2.0])
    with pytest.raises(ValueError):
        MilpProblem(c=[1.0], binary_idx=[1])
    with pytest.raises(ValueError):
        MilpTolerance(int_tol=0.5)


def test_enumeration_runs_without_branch_and_bound(monkeypatch):
    def refuse(*args, **kwargs):
        raise AssertionError("enumeration reached the branch-and-bound code path")

    monkeypatch.setattr(BranchAndBound, '_complete', refuse)
    monkeypatch.setattr(BranchAndBound, '_solve_lp', refuse)
    # eta >= 2 x0 - 1, eta >= 1 - x0 - x1, eta >= -3
    rows = np.array([[2.0, 0.0, -1.0], [-1.0, -1.0, -1.0], [0.0, 0.0, -1.0]])
    p = MilpProblem(c=[0.5, 0.25, 1.0], A_ineq=rows, b_ineq=[1.0, -1.0, 3.0], binary_idx=[0, 1])
    ref = brute_force(p)
    assert ref.optimal
    # (0, 1): eta = max(-1, 0, -3) = 0, cost 0.25
    np.testing.assert_allclose(ref.x, [0.0, 1.0, 0.0], atol=1e-9)
    np.testing.assert_allclose(ref.obj, 0.25, atol=1e-9)
    assert ref.node_count == 4


def test_enumeration_reoptimizes_several_continuous_variables():
    # x2 + x3 >= 2 - x0, x2 - x3 <= 1, x2, x3 in [0, 5]
    p = MilpProblem(c=[1.5, 0.0, 1.0, 2.0], A_ineq=[[-1.0, 0.0, -1.0, -1.0], [0.0, 0.0, 1.0, -1.0]],
                    b_ineq=[-2.0, 1.0], binary_idx=[0, 1], lower=[0, 0, 0, 0], upper=[1, 1, 5, 5])
    ref = brute_force(p)
    res = solve_milp(p)
    # x0 = 0: (x2, x3) = (1.5, 0.5) costs 2.5; x0 = 1: (1, 0) costs 1.5 + 1
    np.testing.assert_allclose(ref.obj, 2.5, atol=1e-7)
    np.testing.assert_allclose(res.obj, ref.obj, atol=1e-6)


def test_enumeration_reports_an_unbounded_continuous_part():
    p = MilpProblem(c=[1.0, -1.0], A_ineq=[[1.0, 0.0]], b_ineq=[1.0], binary_idx=[0])
    assert brute_force(p).status is MilpStatus.UNBOUNDED
