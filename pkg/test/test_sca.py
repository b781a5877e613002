import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from irs_alloc.bench import exhaustive_search
from irs_alloc.chansim import GeometryConfig, gen_scenario
from irs_alloc.conic import solve
from irs_alloc.model import PhaseSelection, ScenarioConfig, condition, verify_qos
from irs_alloc.reform import lift_price
from irs_alloc.sca import (
    SCA_LIFT_SHARE, ScaCandidate, ScaConfig, ScaStatus, ScaTrace, best_of_starts, binary_gap, linearized_penalty,
    penalized_objective, penalty, round_selection, sca_subproblem, solve_sca, surrogate_objective,
)

unit_interval = arrays(float, (3, 4), elements=st.floats(0.0, 1.0))


@given(B=unit_interval, B_prev=unit_interval)
def test_linearization_majorizes_the_penalty(B, B_prev):
    assert linearized_penalty(B, B_prev) >= penalty(B) - 1e-12
    np.testing.assert_allclose(linearized_penalty(B_prev, B_prev), penalty(B_prev), atol=1e-12)
    assert surrogate_objective(2.0, B, B_prev, 1e-3, 1e-3) >= penalized_objective(2.0, B, 1e-3, 1e-3) - 1e-9


def test_penalty_vanishes_on_binary_matrices():
    B = PhaseSelection((1, 0, 1), 2).B[:, :3]
    assert penalty(B) == 0.0
    assert binary_gap(B) == 0.0
    np.testing.assert_allclose(penalty(np.full((2, 3), 0.5)), 1.5)
    np.testing.assert_allclose(binary_gap(np.array([[0.9, 0.2], [0.1, 0.8]])), 0.2)


def test_rounding_picks_the_largest_entry():
    assert round_selection(np.array([[0.2, 0.7], [0.8, 0.3]])).idx == (1, 0)


def test_config_validation():
    with pytest.raises(ValueError):
        ScaConfig(mu0=0.0)
    with pytest.raises(ValueError):
        ScaConfig(mu_shrink=1.0)
    with pytest.raises(ValueError):
        ScaConfig(max_inner=0)
    assert ScaConfig.from_dict(None) == ScaConfig()
    assert ScaConfig.from_dict({'mu0': 0.1}).mu0 == 0.1


def test_subproblem_stays_at_a_binary_point(small):
    cfg, ch = small
    ch_int, cfg_int, _ = condition(ch, cfg)
    B_prev = PhaseSelection((1, 0), cfg.L).B
    price = lift_price(np.stack([ch_int.Fhat(k) for k in range(cfg.K)]), SCA_LIFT_SHARE)
    program = sca_subproblem(B_prev, 1e-3, ch_int, cfg_int, price=price)
    assert program.meta['kind'] == 'relaxed' and program.meta['price'] == price
    sol = solve(program)
    assert sol.optimal
    np.testing.assert_allclose(program.layout.value('B', sol.x), B_prev[:, :cfg.N], atol=1e-4)
    with pytest.raises(ValueError):
        sca_subproblem(B_prev, 0.0, ch_int, cfg_int)
    with pytest.raises(ValueError):
        sca_subproblem(B_prev, 1e-3, ch_int, cfg_int, price=-1.0)


def test_sca_returns_a_feasible_binary_design(small):
    cfg, ch = small
    res = solve_sca(ch, cfg, seed=1)
    assert res.status in (ScaStatus.CONVERGED, ScaStatus.NOT_BINARY)
    assert res.selection.N == cfg.N
    assert verify_qos(res.beamformer, res.selection, ch, cfg).ok
    assert res.trace.descent_violations(slack=1e-6) == []
    es = exhaustive_search(ch, cfg)
    assert res.power >= es.power * (1.0 - 1e-6)
    assert res.metadata['beamformer'] == 're-optimized at the rounded selection'


def test_zero_targets_short_circuit():
    cfg = ScenarioConfig(M=2, K=2, N=2, B_bits=1, gamma=0.0, sigma2=1e-12)
    res = solve_sca(gen_scenario(cfg, GeometryConfig(), 5), cfg)
    assert res.status is ScaStatus.CONVERGED
    assert res.power == 0.0
    assert res.iterations == 1


def test_trace_rows_follow_records(small, tmp_path):
    cfg, ch = small
    res = solve_sca(ch, cfg, seed=2)
    rows = res.trace.rows()
    assert len(rows) == len(res.trace.records) == res.iterations
    assert {'stage', 'mu', 'power', 'penalty', 'objective'} <= set(rows[0])
    res.trace.to_jsonl(str(tmp_path / 'sca.jsonl'))
    assert len((tmp_path / 'sca.jsonl').read_text().splitlines()) == len(rows)


def test_default_penalty_weight_is_one_over_mu():
    N, L, mu = 3, 4, ScaConfig().mu0
    centroid = np.full((L, N), 1.0 / L)
    weight = ScaConfig().penalty_scale
    np.testing.assert_allclose(penalized_objective(0.0, centroid, mu, weight), N * (1.0 - 1.0 / L) / mu)
    np.testing.assert_allclose(linearized_penalty(centroid, centroid) * weight / mu, N * (1.0 - 1.0 / L) / mu)


def _candidates(*specs):
    """Scripted starts: (status, power) pairs, power inf for an infeasible rounding."""
    calls = []

    def attempt(i):
        calls.append(i)
        status, power = specs[i]
        sel = None if status is ScaStatus.INFEASIBLE and power == np.inf else PhaseSelection((i,), 4)
        return ScaCandidate(status, sel, power, 0.0, ScaTrace(restarts=i))
    return attempt, calls


def test_restarts_keep_the_cheapest_rounded_design():
    attempt, calls = _candidates((ScaStatus.NOT_BINARY, 3.0), (ScaStatus.INFEASIBLE, np.inf),
                                 (ScaStatus.CONVERGED, 5.0), (ScaStatus.CONVERGED, 1.0))
    best = best_of_starts(attempt, restarts=3)
    assert calls == [0, 1, 2]
    assert best.power == 3.0 and best.trace.restarts == 0


def test_a_converged_first_start_needs_no_restart():
    attempt, calls = _candidates((ScaStatus.CONVERGED, 2.0), (ScaStatus.CONVERGED, 1.0))
    assert best_of_starts(attempt, restarts=1).power == 2.0
    assert calls == [0]


def test_restarts_run_out_on_infeasible_starts():
    attempt, calls = _candidates(*[(ScaStatus.INFEASIBLE, np.inf)] * 3)
    best = best_of_starts(attempt, restarts=2)
    assert calls == [0, 1, 2]
    assert not best.feasible and best.trace.restarts == 2


def test_result_names_the_winning_start(small):
    cfg, ch = small
    res = solve_sca(ch, cfg, sca_cfg=ScaConfig(restarts=2), seed=3)
    assert 0 <= res.metadata['start'] <= 2
    assert res.trace.restarts == res.metadata['start']
