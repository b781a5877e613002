import json

import numpy as np
import pytest

from irs_alloc.bench import exhaustive_search
from irs_alloc.chansim import GeometryConfig, gen_scenario
from irs_alloc.conic import ConicStatus
from irs_alloc.gbd import (
    GbdAborted, GbdRecord, GbdStatus, GbdTrace, PerfectCsiAdapter, SubproblemOutcome, assemble_master,
    gbd_perfect_csi, solve_fixed, solve_gbd,
)
from irs_alloc.milp import solve_milp
from irs_alloc.model import Beamformer, PhaseSelection, ScenarioConfig, verify_qos
from irs_alloc.reform import Cut, CutKind


class _StuckAdapter:
    """Every solve ends without a certificate."""
    N, L, power_scale = 2, 2, 1.0

    def initial_selection(self, seed):
        return PhaseSelection((1, 0), 2)

    def primal(self, sel, tol):
        return SubproblemOutcome('primal', ConicStatus.NUMERICAL_LIMIT, sel, np.inf)

    def feasibility(self, sel, tol):
        return SubproblemOutcome('feasibility', ConicStatus.NUMERICAL_LIMIT, sel, np.inf)


class _LooseCutAdapter:
    """Power 1.0 everywhere, reported with a cut that sits 0.5 below it."""
    N, L, power_scale = 2, 2, 1.0

    def initial_selection(self, seed):
        return PhaseSelection((0, 0), 2)

    def primal(self, sel, tol):
        return SubproblemOutcome('primal', ConicStatus.OPTIMAL, sel, 1.0)

    def optimality_cut(self, outcome):
        return Cut(CutKind.OPTIMALITY, 0.5, np.zeros((2, 2)))

    def beamformer(self, outcome):
        return Beamformer(np.ones((1, 1)))


class _UnseparatedAdapter:
    """Single selection, infeasible, whose feasibility cut fails to exclude it."""
    N, L, power_scale = 1, 1, 1.0

    def initial_selection(self, seed):
        return PhaseSelection((0,), 1)

    def primal(self, sel, tol):
        return SubproblemOutcome('primal', ConicStatus.PRIMAL_INFEASIBLE, sel, np.inf)

    def feasibility(self, sel, tol):
        return SubproblemOutcome('feasibility', ConicStatus.OPTIMAL, sel, 0.5)

    def feasibility_cut(self, outcome):
        return Cut(CutKind.FEASIBILITY, 0.0, np.zeros((1, 1)))


class _UncertifiedInfeasibleAdapter(_UnseparatedAdapter):
    """Infeasible primal whose feasibility check never finishes."""

    def feasibility(self, sel, tol):
        return SubproblemOutcome('feasibility', ConicStatus.NUMERICAL_LIMIT, sel, np.inf)

    def feasibility_cut(self, outcome):
        return PerfectCsiAdapter.feasibility_cut(self, outcome)


@pytest.fixture
def medium(make_scenario):
    return make_scenario(M=3, K=2, N=4)


def test_gbd_reaches_the_exhaustive_optimum(medium):
    cfg, ch = medium
    es = exhaustive_search(ch, cfg)
    res = gbd_perfect_csi(ch, cfg, delta=1e-3, seed=0)
    assert res.status is GbdStatus.CONVERGED
    assert res.power >= es.power * (1.0 - 1e-6)
    assert res.power <= es.power * (1.0 + 1e-3)
    assert verify_qos(res.beamformer, res.selection, ch, cfg).ok
    np.testing.assert_allclose(res.beamformer.power, res.power, rtol=1e-6)


def test_trace_bounds_are_monotone(medium):
    cfg, ch = medium
    res = gbd_perfect_csi(ch, cfg, delta=1e-3, seed=3)
    assert res.trace.violations() == []
    assert 1 <= res.iterations <= cfg.L ** cfg.N
    records = res.trace.records
    assert all(r.LB <= r.UB + 1e-9 * abs(r.UB) for r in records if np.isfinite(r.UB))
    assert res.trace.feasible_iterations | res.trace.infeasible_iterations == {r.i for r in records}


def test_trace_rows_are_written_in_watts(small, tmp_path):
    cfg, ch = small
    res = gbd_perfect_csi(ch, cfg)
    path = tmp_path / 'trace.jsonl'
    res.trace.to_jsonl(str(path))
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(rows) == res.iterations
    assert {'i', 'selection', 'UB', 'LB', 'eta', 'master_nodes', 'wall_time'} <= set(rows[0])
    np.testing.assert_allclose(rows[-1]['UB'], res.power, rtol=1e-9)


def test_zero_targets_need_no_power():
    cfg = ScenarioConfig(M=2, K=2, N=2, B_bits=1, gamma=0.0, sigma2=1e-12)
    ch = gen_scenario(cfg, GeometryConfig(), 47)
    res = gbd_perfect_csi(ch, cfg)
    assert res.status is GbdStatus.CONVERGED
    assert res.power == 0.0
    assert res.iterations == 1
    np.testing.assert_array_equal(res.beamformer.W, np.zeros((2, 2)))


def test_infeasible_for_every_selection(unit_channels):
    cfg = ScenarioConfig(M=1, K=2, N=1, B_bits=1, gamma=10.0, sigma2=1.0)
    res = gbd_perfect_csi(unit_channels(1, 2, 1, seed=2), cfg)
    assert res.status is GbdStatus.GLOBALLY_INFEASIBLE
    assert res.selection is None and res.beamformer is None
    assert res.power == float('inf')
    assert res.trace.infeasible_iterations


def test_master_with_a_constant_cut():
    res = solve_milp(assemble_master([Cut(CutKind.OPTIMALITY, 2.5, np.zeros((2, 2)))], 2, 2))
    np.testing.assert_allclose(res.x[-1], 2.5, atol=1e-9)


def test_master_respects_feasibility_cuts():
    feas = Cut(CutKind.FEASIBILITY, 1.0, [[0.0, -1.0], [0.0, -1.0]])
    opt = Cut(CutKind.OPTIMALITY, 0.0, [[0.0, 3.0], [0.0, 1.0]])
    assert feas.rhs(PhaseSelection((0, 0), 2)) > 0
    only_feas = assemble_master([feas], 2, 2)
    assert only_feas.lower[-1] == 0.0
    res = solve_milp(assemble_master([feas, opt], 2, 2))
    body = res.x[:4].reshape(2, 2)
    assert tuple(np.argmax(body, axis=1)) == (0, 1)
    np.testing.assert_allclose(res.x[-1], 1.0, atol=1e-9)


def test_master_input_validation():
    with pytest.raises(ValueError):
        assemble_master([], 2, 2)
    with pytest.raises(ValueError):
        assemble_master([Cut(CutKind.OPTIMALITY, 0.0, np.zeros((3, 2)))], 2, 2)


def test_uncertified_selection_aborts_with_context():
    with pytest.raises(GbdAborted) as err:
        solve_gbd(_StuckAdapter())
    assert err.value.selection.idx == (1, 0)


def test_gbd_argument_checks(small):
    cfg, ch = small
    with pytest.raises(ValueError):
        gbd_perfect_csi(ch, cfg, delta=-1.0)
    with pytest.raises(ValueError):
        gbd_perfect_csi(ch, cfg, max_iter=0)


def test_fixed_selection_power(small):
    cfg, ch = small
    sel = PhaseSelection((1, 0), cfg.L)
    fixed = solve_fixed(PerfectCsiAdapter(ch, cfg), sel)
    assert fixed.feasible
    assert verify_qos(fixed.beamformer, sel, ch, cfg).ok
    np.testing.assert_allclose(fixed.beamformer.power, fixed.power, rtol=1e-6)


def test_loose_cuts_never_report_a_false_convergence(caplog):
    res = solve_gbd(_LooseCutAdapter(), delta=1e-3)
    assert 'misses the solved power' in caplog.text
    last = res.trace.records[-1]
    if res.status is GbdStatus.CONVERGED:
        assert last.UB - last.LB <= 1e-3 * abs(last.UB) + 1e-12
    assert res.trace.violations() == []


def test_repeated_selection_without_a_closed_gap_is_not_converged(caplog):
    res = solve_gbd(_UnseparatedAdapter(), max_iter=5)
    assert res.status is GbdStatus.NOT_CONVERGED
    assert res.selection is None
    assert 'stopping unconverged' in caplog.text


def test_uncertified_infeasible_selection_is_excluded():
    res = solve_gbd(_UncertifiedInfeasibleAdapter())
    assert res.status is GbdStatus.GLOBALLY_INFEASIBLE
    assert res.trace.records[0].obj == float('inf')


def test_violations_flag_a_lower_bound_above_the_upper_bound():
    trace = GbdTrace([GbdRecord(1, True, (0,), 1.0, UB=1.0, LB=2.0, eta=2.0, master_nodes=1, wall_time=0.0)])
    assert any('LB exceeds UB' in issue for issue in trace.violations())
    fine = GbdTrace([GbdRecord(1, True, (0,), 1.0, UB=1.0, LB=1.0 - 1e-12, eta=1.0, master_nodes=1, wall_time=0.0)])
    assert fine.violations() == []


def test_master_objective_is_nonnegative_with_optimality_cuts():
    master = assemble_master([Cut(CutKind.OPTIMALITY, -3.0, np.zeros((2, 2)))], 2, 2)
    assert master.lower[-1] == 0.0
    np.testing.assert_allclose(solve_milp(master).x[-1], 0.0, atol=1e-9)
