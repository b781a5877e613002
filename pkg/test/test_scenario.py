import json

import numpy as np
import pytest

from irs_alloc.chansim import GeometryConfig
from irs_alloc.model import Beamformer, PhaseSelection, ScenarioConfig
from irs_alloc.scenario import Scenario, Solution, decode_complex, encode_complex, fingerprint


@pytest.fixture
def cfg():
    return ScenarioConfig.from_db(M=2, K=2, N=3, B_bits=1, gamma_db=5.0, sigma2_dbm=-90.0)


@pytest.mark.parametrize('kappa', [None, 0.1])
def test_scenario_file_keeps_channels_and_fingerprint(tmp_path, cfg, kappa):
    scn = Scenario.generate(cfg, GeometryConfig(), seed=11, kappa=kappa, estimate_seed=4)
    path = str(tmp_path / 'scn.json')
    scn.save(path)
    back = Scenario.load(path)
    assert back.md5 == scn.md5
    assert back.seed == 11
    np.testing.assert_array_equal(back.ch.F, scn.ch.F)
    np.testing.assert_array_equal(back.ch.h, scn.ch.h)
    np.testing.assert_array_equal(back.ch.d, scn.ch.d)
    if kappa is None:
        assert back.estimate is None
    else:
        assert back.estimate_seed == 4
        np.testing.assert_array_equal(back.estimate.Ebar, scn.estimate.Ebar)
        np.testing.assert_array_equal(back.estimate.eps_d, scn.estimate.eps_d)


def test_regenerating_reproduces_the_fingerprint(cfg):
    first = Scenario.generate(cfg, GeometryConfig(), seed=3)
    assert Scenario.generate(cfg, GeometryConfig(), seed=3).md5 == first.md5
    assert Scenario.generate(cfg, GeometryConfig(), seed=4).md5 != first.md5


def test_fingerprint_ignores_key_order():
    assert fingerprint({'a': 1, 'b': [1, 2]}) == fingerprint({'b': [1, 2], 'a': 1})


def test_scenario_format_is_checked(cfg):
    doc = Scenario.generate(cfg, GeometryConfig(), seed=0).to_dict()
    doc['format'] = 'something-else/9'
    with pytest.raises(ValueError):
        Scenario.from_dict(doc)


def test_complex_encoding():
    arr = np.array([[1 + 2j, -0.5j], [3.0, 0]])
    doc = json.loads(json.dumps(encode_complex(arr)))
    assert doc[0][0] == [1.0, 2.0]
    np.testing.assert_array_equal(decode_complex(doc, (2, 2)), arr)
    assert decode_complex([], (2, 0, 3)).shape == (2, 0, 3)
    with pytest.raises(ValueError):
        decode_complex(doc, (4,))
    with pytest.raises(ValueError):
        decode_complex([[1.0, 2.0, 3.0]])


def test_solution_file(tmp_path):
    W = Beamformer(np.array([[1e-3 + 1e-4j, 0], [0, 2e-3]]))
    sol = Solution(method='gbd', status='converged', selection=PhaseSelection((1, 0, 1), 2), beamformer=W,
                   power_watts=W.power, scenario_md5='abc', iterations=5, info={'gap': np.float64(1e-4)})
    path = str(tmp_path / 'sol.json')
    sol.save(path)
    back = Solution.load(path)
    assert back.selection == sol.selection
    np.testing.assert_array_equal(back.beamformer.W, W.W)
    assert back.power_watts == pytest.approx(W.power)
    assert back.iterations == 5 and back.scenario_md5 == 'abc'
    doc = json.loads(open(path).read())
    assert doc['power_dbm'] == pytest.approx(10 * np.log10(1000 * W.power))


def test_infeasible_solution_has_no_power(tmp_path):
    sol = Solution(method='es', status='infeasible', selection=None, beamformer=None, power_watts=float('inf'))
    doc = sol.to_dict()
    assert doc['power_watts'] is None and doc['power_dbm'] is None
    path = str(tmp_path / 'sol.json')
    sol.save(path)
    assert Solution.load(path).power_watts == float('inf')
    doc['format'] = 'irs-alloc-solution/0'
    with pytest.raises(ValueError):
        Solution.from_dict(doc)
