import csv
import json

import numpy as np
import pytest

import irs_alloc.bench as bench
from irs_alloc.bench import (ES_CAP, ExperimentSpec, SearchCapExceeded, SearchStatus, baseline_no_irs,
                             baseline_random, canonical_method, check_search_cap, exhaustive_search, load_defaults,
                             robust_exhaustive_search, run_experiment, solve_method)
from irs_alloc.chansim import GeometryConfig
from irs_alloc.gbd import GbdStatus, gbd_perfect_csi
from irs_alloc.model import ChannelSet, ScenarioConfig, matched_filter_power, selections
from irs_alloc.robust import gbd_robust, solve_robust_sca
from irs_alloc.sca import solve_sca
from irs_alloc.scenario import Scenario


def _spec(tmp_path, **experiment):
    data = {
        'scenario': {'M': 2, 'K': 2, 'N': 2, 'B_bits': 1, 'gamma_db': 0.0, 'sigma2_dbm': -90.0},
        'experiment': {'methods': ['gbd', 'es', 'baseline_no_irs'], 'seeds': [0, 1],
                       'sweep': {'axis': 'gamma_db', 'values': [0.0, 3.0]}, 'output': str(tmp_path / 'res')},
    }
    data['experiment'].update(experiment)
    return ExperimentSpec.from_dict(data, load_defaults())


def test_search_cap_message():
    assert check_search_cap(12, 2) == ES_CAP
    with pytest.raises(SearchCapExceeded) as err:
        check_search_cap(13, 2)
    assert '8192' in str(err.value) and '4096' in str(err.value)


def test_single_element_search(make_scenario):
    cfg, ch = make_scenario(N=1)
    res = exhaustive_search(ch, cfg)
    assert res.status is SearchStatus.OPTIMAL
    assert res.evaluated == 2
    assert res.power == min(res.powers)
    assert res.selection == list(selections(1, 2))[int(np.argmin(res.powers))]


def test_single_user_search_is_the_best_matched_filter(make_scenario):
    cfg, ch = make_scenario(M=3, K=1, N=3)
    res = exhaustive_search(ch, cfg, workers=2)
    closed = [matched_filter_power(sel, ch, cfg) for sel in selections(cfg.N, cfg.L)]
    np.testing.assert_allclose(res.powers, closed, rtol=1e-5)
    np.testing.assert_allclose(res.power, min(closed), rtol=1e-5)


def test_direct_only_baseline():
    cfg = ScenarioConfig(M=2, K=1, N=2, B_bits=1, gamma=3.0, sigma2=0.5)
    d = np.array([[1.0 + 1j, 2.0]])
    ch = ChannelSet(F=np.ones((2, 2)), h=np.ones((1, 2)), d=d)
    res = baseline_no_irs(ch, cfg)
    assert res.feasible
    np.testing.assert_allclose(res.power, 3.0 * 0.5 / 6.0, rtol=1e-5)
    assert res.selection.N == 0


def test_orthogonal_direct_links_decouple():
    cfg = ScenarioConfig(M=2, K=2, N=1, B_bits=1, gamma=[2.0, 4.0], sigma2=1.0)
    d = np.array([[2.0, 0.0], [0.0, 1.0]])
    ch = ChannelSet(F=np.zeros((1, 2)), h=np.zeros((2, 1)), d=d)
    res = baseline_no_irs(ch, cfg)
    np.testing.assert_allclose(res.power, 2.0 / 4.0 + 4.0 / 1.0, rtol=1e-5)


def test_exhaustive_search_dominates(make_scenario):
    cfg, ch = make_scenario(M=3, K=2, N=3)
    es = exhaustive_search(ch, cfg)
    sca = solve_sca(ch, cfg)
    assert es.power <= sca.power * (1 + 1e-6)
    for seed in range(3):
        assert es.power <= baseline_random(ch, cfg, seed).power + 1e-9 * es.power
    assert gbd_perfect_csi(ch, cfg).power <= baseline_no_irs(ch, cfg).power * (1 + 1e-6)


def test_infeasible_search():
    cfg = ScenarioConfig(M=1, K=2, N=1, B_bits=1, gamma=10.0, sigma2=1.0)
    rng = np.random.default_rng(2)
    ch = ChannelSet(F=rng.standard_normal((1, 1)) + 0j, h=rng.standard_normal((2, 1)) + 0j,
                    d=rng.standard_normal((2, 1)) + 0j)
    res = exhaustive_search(ch, cfg)
    assert res.status is SearchStatus.INFEASIBLE
    assert res.power == float('inf') and res.selection is None


def test_method_names():
    assert canonical_method('no-irs') == 'baseline_no_irs'
    assert canonical_method('random') == 'baseline_random'
    with pytest.raises(ValueError):
        canonical_method('annealing')


def test_robust_methods_need_an_estimate(small):
    cfg, ch = small
    with pytest.raises(ValueError):
        solve_method('gbd', Scenario(cfg=cfg, ch=ch), robust=True)
    out = solve_method('gbd_perfect_csi', Scenario(cfg=cfg, ch=ch), robust=True)
    assert out.converged and not out.robust


def test_experiment_merges_defaults(tmp_path):
    spec = _spec(tmp_path)
    assert spec.scenario.M == 2 and spec.scenario.K == 2
    assert spec.sca.restarts == 3
    assert spec.geometry.D == 40.0
    assert spec.axis == 'gamma_db' and spec.values == (0.0, 3.0)
    assert [p[0] for p in spec.points()] == [0.0, 3.0]
    np.testing.assert_allclose(spec.points()[1][1].gamma, 10 ** 0.3)


@pytest.mark.parametrize('experiment', [
    {'methods': []},
    {'methods': ['gbd', 'gbd']},
    {'seeds': []},
    {'sweep': {'axis': 'M', 'values': [2]}},
    {'sweep': {'axis': 'N', 'values': []}},
    {'sweep': {'axis': 'kappa', 'values': [0.1]}},
    {'sweep': {'axis': 'L', 'values': [3]}},
    {'unheard_of': 1},
])
def test_experiment_validation(tmp_path, experiment):
    with pytest.raises(ValueError):
        _spec(tmp_path, **experiment)


def test_experiment_rejects_large_search(tmp_path):
    with pytest.raises(SearchCapExceeded):
        _spec(tmp_path, sweep={'axis': 'N', 'values': [2, 13]})
    with pytest.raises(ValueError):
        ExperimentSpec.from_dict({'scenario': {'M': 2}, 'telemetry': {}})


def test_missing_defaults_file(tmp_path):
    with pytest.raises(ValueError):
        load_defaults(str(tmp_path / 'absent.yaml'))


def test_sweep_writes_results(tmp_path):
    spec = _spec(tmp_path)
    result = run_experiment(spec)
    assert len(result.rows) == 2 * 2 * 3
    assert [(r.value, r.seed, r.method) for r in result.rows[:3]] == [
        (0.0, 0, 'gbd'), (0.0, 0, 'es'), (0.0, 0, 'baseline_no_irs')]
    with open(result.paths['csv']) as f:
        rows = list(csv.DictReader(f))
    assert list(rows[0]) == list(bench.RESULT_COLUMNS)
    with open(result.paths['jsonl']) as f:
        assert len([json.loads(line) for line in f]) == len(result.rows)
    with open(result.paths['aggregate']) as f:
        agg = list(csv.DictReader(f))
    assert len(agg) == 2 * 3
    for row in result.rows:
        assert not row.error and row.converged
        assert row.power_dbm == pytest.approx(10 * np.log10(1000 * row.power_watts), abs=1e-12)
        assert row.min_slack >= -1e-6
    by_key = {(r.value, r.seed, r.method): r.power_watts for r in result.rows}
    for value in spec.values:
        for seed in spec.seeds:
            es = by_key[(value, seed, 'es')]
            assert es <= by_key[(value, seed, 'gbd')] * (1 + 1e-6)
            assert by_key[(value, seed, 'gbd')] <= es * (1 + 1e-3)
            assert es <= by_key[(value, seed, 'baseline_no_irs')] * (1 + 1e-6)


def test_sweep_is_deterministic_across_workers(tmp_path):
    spec = _spec(tmp_path, output=None, methods=['gbd', 'baseline_random'])
    one = run_experiment(spec, workers=1)
    two = run_experiment(spec, workers=2)
    assert [(r.method, r.seed, r.value, r.selection) for r in one.rows] == \
        [(r.method, r.seed, r.value, r.selection) for r in two.rows]
    np.testing.assert_allclose([r.power_watts for r in one.rows], [r.power_watts for r in two.rows], rtol=1e-9)
    assert one.paths == {}


def test_failed_method_becomes_an_error_row(tmp_path, monkeypatch):
    real = bench.solve_method

    def flaky(method, *args, **kwargs):
        if method == 'es':
            raise RuntimeError('solver exploded')
        return real(method, *args, **kwargs)

    monkeypatch.setattr(bench, 'solve_method', flaky)
    result = run_experiment(_spec(tmp_path, seeds=[0], sweep=None))
    rows = {r.method: r for r in result.rows}
    assert rows['es'].status == 'error' and 'exploded' in rows['es'].error
    assert rows['es'].power_watts is None
    assert rows['gbd'].converged
    agg = {a['method']: a for a in result.aggregate()}
    assert agg['es']['feasible'] == 0 and agg['es']['mean_power_dbm'] is None


### ACCEPTANCE

GEO = GeometryConfig()


@pytest.mark.slow
@pytest.mark.parametrize('seed', range(20))
def test_gbd_matches_exhaustive_search(seed):
    scn = Scenario.generate(ScenarioConfig.from_db(M=3, K=2, N=4, B_bits=1, gamma_db=5.0, sigma2_dbm=-90.0),
                            GEO, seed)
    es = exhaustive_search(scn.ch, scn.cfg)
    res = gbd_perfect_csi(scn.ch, scn.cfg, delta=1e-5)
    if es.status is SearchStatus.INFEASIBLE:
        assert res.status is GbdStatus.GLOBALLY_INFEASIBLE
        return
    assert res.status is GbdStatus.CONVERGED
    np.testing.assert_allclose(res.power, es.power, rtol=1e-4)
    assert res.trace.violations() == []
    assert res.iterations <= 2 ** 4
    sca = solve_sca(scn.ch, scn.cfg)
    assert sca.power >= res.power * (1 - 1e-6)
    assert all(r.inner <= 30 for r in sca.trace.records)


@pytest.mark.slow
def test_sca_median_excess_over_gbd_is_within_one_db():
    excess = []
    for seed in range(20):
        scn = Scenario.generate(ScenarioConfig.from_db(M=3, K=2, N=4, B_bits=1, gamma_db=5.0, sigma2_dbm=-90.0),
                                GEO, seed)
        res = gbd_perfect_csi(scn.ch, scn.cfg, delta=1e-5)
        if res.status is not GbdStatus.CONVERGED:
            continue
        sca = solve_sca(scn.ch, scn.cfg)
        excess.append(10.0 * np.log10(sca.power / res.power) if np.isfinite(sca.power) else np.inf)
    assert len(excess) >= 10
    assert np.median(excess) <= 1.0


@pytest.mark.slow
@pytest.mark.parametrize('seed', range(10))
def test_robust_gbd_matches_exhaustive_search(seed):
    scn = Scenario.generate(ScenarioConfig.from_db(M=2, K=2, N=3, B_bits=1, gamma_db=5.0, sigma2_dbm=-90.0),
                            GEO, seed, kappa=0.1)
    es = robust_exhaustive_search(scn.estimate, scn.cfg)
    res = gbd_robust(scn.estimate, scn.cfg)
    if es.status is SearchStatus.INFEASIBLE:
        assert res.status is GbdStatus.GLOBALLY_INFEASIBLE
        return
    np.testing.assert_allclose(res.power, es.power, rtol=1e-3)
    assert max(res.outcome.info['rank_ratios']) <= 1e-6
    out = solve_method('gbd', scn, robust=True)
    check = bench.assess(out, scn, samples=10000)
    assert check.certified
    assert check.min_slack >= -1e-6


@pytest.mark.slow
@pytest.mark.parametrize('seed', range(10))
def test_zero_radius_robust_pipeline_matches_perfect_csi(seed):
    scn = Scenario.generate(ScenarioConfig.from_db(M=2, K=2, N=3, B_bits=1, gamma_db=5.0, sigma2_dbm=-90.0),
                            GEO, seed, kappa=0.0)
    robust = gbd_robust(scn.estimate, scn.cfg)
    perfect = gbd_perfect_csi(scn.ch, scn.cfg)
    np.testing.assert_allclose(robust.power, perfect.power, rtol=1e-3)


@pytest.mark.slow
@pytest.mark.parametrize('seed', range(50))
def test_finer_phases_never_cost_power(seed):
    cfg = ScenarioConfig.from_db(M=2, K=2, N=3, B_bits=1, gamma_db=5.0, sigma2_dbm=-90.0)
    ch = Scenario.generate(cfg, GEO, seed).ch
    one_bit = gbd_perfect_csi(ch, cfg, delta=1e-5).power
    two_bit = gbd_perfect_csi(ch, cfg.with_changes(B_bits=2), delta=1e-5).power
    assert two_bit <= one_bit * (1 + 1e-4)


@pytest.mark.slow
def test_mean_power_falls_with_more_elements():
    means = []
    for N in (2, 3, 4):
        cfg = ScenarioConfig.from_db(M=2, K=2, N=N, B_bits=1, gamma_db=5.0, sigma2_dbm=-90.0)
        powers = [gbd_perfect_csi(Scenario.generate(cfg, GEO, seed).ch, cfg).power for seed in range(50)]
        means.append(np.mean(powers))
    assert means[0] >= means[1] >= means[2]


@pytest.mark.slow
@pytest.mark.parametrize('seed', range(50))
def test_robust_power_grows_with_the_error_level(seed):
    cfg = ScenarioConfig.from_db(M=2, K=2, N=3, B_bits=1, gamma_db=5.0, sigma2_dbm=-90.0)
    scn = Scenario.generate(cfg, GEO, seed, kappa=0.1)
    full = scn.estimate
    powers = [solve_robust_sca(full.with_radii(full.eps_E * f, full.eps_d * f), cfg).power for f in (0.0, 0.5, 1.0)]
    assert powers[0] <= powers[1] * (1 + 1e-6)
    assert powers[1] <= powers[2] * (1 + 1e-6)
