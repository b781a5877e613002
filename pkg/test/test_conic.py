import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from irs_alloc.affine import ProgramBuilder, VariablePool, group_dual
from irs_alloc.conic import (
    ConeBlock, ConeKind, ConeProgram, ConicStatus, ToleranceSet, dual_unembed, dump_program, hermitian_embed,
    load_program, smat, soc_det, solve, solve_lp, svec,
)


def _hermitian(rng, n):
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return A + A.conj().T


def test_second_order_cone_norm():
    p = ConeProgram(c=[1.0], G=[[-1.0], [0.0], [0.0]], h=[0.0, 3.0, 4.0], A=np.zeros((0, 1)), b=[],
                    cones=[ConeBlock(ConeKind.SOC, 3)])
    sol = solve(p)
    assert sol.status is ConicStatus.OPTIMAL
    np.testing.assert_allclose(sol.obj, 5.0, rtol=1e-7)


def test_lp_with_shadow_price():
    sol = solve_lp(c=[1.0, 2.0], A_ub=-np.eye(2), b_ub=np.zeros(2), A_eq=[[1.0, 1.0]], b_eq=[1.0])
    assert sol.optimal
    np.testing.assert_allclose(sol.x, [1.0, 0.0], atol=1e-7)
    np.testing.assert_allclose(sol.obj, 1.0, atol=1e-7)
    np.testing.assert_allclose(sol.y, [1.0], atol=1e-6)


def test_infeasible_lp_returns_certificate():
    G, h = np.array([[-1.0], [1.0]]), np.array([-1.0, 0.0])
    sol = solve_lp(c=[1.0], A_ub=G, b_ub=h)
    assert sol.status is ConicStatus.PRIMAL_INFEASIBLE
    assert np.all(sol.z >= -1e-9)
    np.testing.assert_allclose(G.T @ sol.z, [0.0], atol=1e-7)
    assert h @ sol.z < 0


def test_unbounded_lp():
    sol = solve_lp(c=[-1.0], A_ub=[[-1.0]], b_ub=[0.0])
    assert sol.status is ConicStatus.DUAL_INFEASIBLE


def test_projection_onto_orthant():
    p_vec = np.array([1.5, -2.0, 0.3, -0.7, 2.2, -0.1])
    pool = VariablePool()
    pool.real('x', (6,))
    pool.real('t')
    pool.freeze()
    x, t = pool.expr('x'), pool.expr('t')
    builder = ProgramBuilder(pool)
    builder.minimize(t)
    builder.add_soc('distance', [t, x - p_vec])
    builder.add_nonneg('orthant', x)
    program = builder.build()
    sol = solve(program)
    assert sol.optimal
    np.testing.assert_allclose(pool.value('x', sol.x), np.maximum(p_vec, 0.0), atol=1e-6)
    np.testing.assert_allclose(sol.obj, np.linalg.norm(np.minimum(p_vec, 0.0)), rtol=1e-6)


def test_hermitian_lmi_dual_is_identity():
    pool = VariablePool()
    pool.hermitian('X', 2)
    pool.freeze()
    X = pool.expr('X')
    builder = ProgramBuilder(pool)
    builder.minimize(X.trace())
    builder.add_lmi('X above I', X - np.eye(2))
    program = builder.build()
    sol = solve(program)
    assert sol.optimal
    np.testing.assert_allclose(sol.obj, 2.0, rtol=1e-7)
    np.testing.assert_allclose(pool.value('X', sol.x), np.eye(2), atol=1e-6)
    np.testing.assert_allclose(group_dual(program, sol, 'X above I'), np.eye(2), atol=1e-6)


def test_hermitian_embedding():
    np.testing.assert_array_equal(hermitian_embed(np.eye(2)), np.eye(4))
    vals = np.linalg.eigvalsh(hermitian_embed(np.array([[0, -1j], [1j, 0]])))
    np.testing.assert_allclose(vals, [-1, -1, 1, 1], atol=1e-12)
    with pytest.raises(ValueError):
        hermitian_embed(np.array([[0, 1], [0, 0]]))


@settings(max_examples=25)
@given(seed=st.integers(0, 2 ** 16), n=st.integers(1, 4))
def test_unembedded_multiplier_pairs_with_hermitian_matrices(seed, n):
    rng = np.random.default_rng(seed)
    Q, M = _hermitian(rng, n), _hermitian(rng, n)
    np.testing.assert_allclose(dual_unembed(hermitian_embed(Q) / 2.0), Q, atol=1e-12)
    Z = rng.standard_normal((2 * n, 2 * n))
    Z = Z + Z.T
    lhs = np.sum(Z * hermitian_embed(M))
    rhs = np.real(np.trace(dual_unembed(Z) @ M))
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


@settings(max_examples=25)
@given(seed=st.integers(0, 2 ** 16), n=st.integers(1, 5))
def test_svec_keeps_inner_products(seed, n):
    rng = np.random.default_rng(seed)
    A, B = rng.standard_normal((2, n, n))
    A, B = A + A.T, B + B.T
    np.testing.assert_allclose(svec(A) @ svec(B), np.sum(A * B), atol=1e-10)
    np.testing.assert_allclose(smat(svec(A)), A, atol=1e-12)


def test_malformed_programs_are_rejected():
    bad = ConeProgram(c=[1.0], G=[[-1.0]], h=[0.0, 1.0], A=np.zeros((0, 1)), b=[],
                      cones=[ConeBlock(ConeKind.NONNEG, 1)])
    with pytest.raises(ValueError):
        solve(bad)
    free_only = ConeProgram(c=[1.0], G=[[1.0]], h=[0.0], A=np.zeros((0, 1)), b=[],
                            cones=[ConeBlock(ConeKind.FREE, 1)])
    with pytest.raises(ValueError):
        solve(free_only)
    with pytest.raises(ValueError):
        ConeBlock(ConeKind.SOC, 0)


def test_tolerance_set():
    with pytest.raises(ValueError):
        ToleranceSet(feastol=0.0)
    tight = ToleranceSet().tighter()
    assert tight.step_fraction <= 0.9
    assert tight.max_iters > ToleranceSet().max_iters


def test_dumped_program_solves_the_same(tmp_path):
    sol = solve_lp(c=[1.0, 2.0], A_ub=-np.eye(2), b_ub=np.zeros(2), A_eq=[[1.0, 1.0]], b_eq=[1.0])
    program = ConeProgram(c=[1.0, 2.0], G=-np.eye(2), h=np.zeros(2), A=[[1.0, 1.0]], b=[1.0],
                          cones=[ConeBlock(ConeKind.NONNEG, 2)])
    path = str(tmp_path / 'lp.json')
    dump_program(program, path)
    again = solve(load_program(path))
    assert again.optimal
    np.testing.assert_allclose(again.obj, sol.obj, atol=1e-9)


def test_hermitian_embedding_doubles_the_spectrum():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(1, 6))
        H = _hermitian(rng, n)
        expected = np.sort(np.repeat(np.linalg.eigvalsh(H), 2))
        np.testing.assert_allclose(np.linalg.eigvalsh(hermitian_embed(H)), expected,
                                   atol=1e-10 * max(1.0, np.abs(expected).max()))


def test_soc_determinant_survives_cancellation():
    np.testing.assert_allclose(soc_det(np.array([1e8, 1e8 - 1.0, 0.0])), 2e8 - 1.0, rtol=1e-12)
    assert soc_det(np.array([1.0, 2.0])) < 0
    assert soc_det(np.array([-1.0, 0.0])) < 0


def _projection_program(p_vec):
    pool = VariablePool()
    pool.real('x', (len(p_vec),))
    pool.real('t')
    pool.freeze()
    x, t = pool.expr('x'), pool.expr('t')
    builder = ProgramBuilder(pool)
    builder.minimize(t)
    builder.add_soc('distance', [t, x - p_vec])
    builder.add_nonneg('orthant', x)
    return pool, builder.build()


def test_projection_is_accurate_without_fallback():
    p_vec = np.array([1.5, -2.0, 0.3, -0.7, 2.2, -0.1])
    pool, program = _projection_program(p_vec)
    sol = solve(program)
    assert sol.optimal and not sol.inaccurate
    np.testing.assert_allclose(pool.value('x', sol.x), np.maximum(p_vec, 0.0), atol=1e-7)
    assert abs(sol.obj - sol.dual_obj) <= 1e-7 * (1.0 + abs(sol.obj))


@pytest.mark.parametrize('case', ['lp', 'soc', 'lmi'])
def test_every_iterate_keeps_weak_duality(case):
    if case == 'lp':
        sol = solve_lp(c=[1.0, 2.0], A_ub=-np.eye(2), b_ub=np.zeros(2), A_eq=[[1.0, 1.0]], b_eq=[1.0])
    elif case == 'soc':
        _, program = _projection_program(np.array([0.4, -1.0, 2.0]))
        sol = solve(program)
    else:
        pool = VariablePool()
        pool.hermitian('X', 3)
        pool.freeze()
        X = pool.expr('X')
        builder = ProgramBuilder(pool)
        builder.minimize(X.trace())
        builder.add_lmi('X above H', X - _hermitian(np.random.default_rng(5), 3))
        sol = solve(builder.build())
    assert sol.optimal
    assert sol.history
    assert all(record['weak_duality'] for record in sol.history)
