import json

import numpy as np
import pytest

from irs_alloc.cli import EXIT_INFEASIBLE, EXIT_INPUT_ERROR, EXIT_OK, main


def _gen(tmp_path, name='scn.json', *extra):
    path = str(tmp_path / name)
    argv = ['gen', '--M', '2', '--K', '2', '--N', '2', '--bits', '1', '--gamma-db', '3', '--seed', '5', '-o', path]
    assert main(argv + list(extra)) == EXIT_OK
    return path


def test_gen_solve_verify(tmp_path, capsys):
    scn = _gen(tmp_path)
    sol, trace = str(tmp_path / 'sol.json'), str(tmp_path / 'trace.jsonl')
    assert main(['solve', '--scenario', scn, '--method', 'gbd', '-o', sol, '--trace', trace]) == EXIT_OK
    capsys.readouterr()
    with open(trace) as f:
        rows = [json.loads(line) for line in f]
    assert rows and all('UB' in row for row in rows)
    assert main(['verify', '--scenario', scn, '--solution', sol]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report['ok'] and report['checks'] == {'qos': True, 'power': True}


def test_baseline_aliases(tmp_path, capsys):
    scn = _gen(tmp_path)
    capsys.readouterr()
    assert main(['solve', '--scenario', scn, '--method', 'no-irs']) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc['method'] == 'baseline_no_irs' and doc['selection'] == []
    assert doc['power_dbm'] == pytest.approx(10 * np.log10(1000 * doc['power_watts']))


def test_tampered_solution_fails_verification(tmp_path, capsys):
    scn = _gen(tmp_path)
    sol = str(tmp_path / 'sol.json')
    assert main(['solve', '--scenario', scn, '--method', 'es', '-o', sol]) == EXIT_OK
    with open(sol) as f:
        doc = json.load(f)
    doc['W'] = (0.5 * np.asarray(doc['W'])).tolist()
    with open(sol, 'w') as f:
        json.dump(doc, f)
    capsys.readouterr()
    assert main(['verify', '--scenario', scn, '--solution', sol]) == EXIT_INFEASIBLE
    report = json.loads(capsys.readouterr().out)
    assert not report['checks']['qos'] and not report['checks']['power']


def test_verify_rejects_another_scenario(tmp_path):
    scn = _gen(tmp_path)
    other = _gen(tmp_path, 'other.json', '--gamma-db', '4')
    sol = str(tmp_path / 'sol.json')
    assert main(['solve', '--scenario', scn, '-o', sol]) == EXIT_OK
    assert main(['verify', '--scenario', other, '--solution', sol]) == EXIT_INPUT_ERROR


def test_robust_solve_and_verify(tmp_path, capsys):
    scn = _gen(tmp_path, 'scn.json', '--kappa', '0.05')
    sol = str(tmp_path / 'sol.json')
    assert main(['solve', '--scenario', scn, '--method', 'gbd', '--robust', '--samples', '200', '-o', sol]) == EXIT_OK
    capsys.readouterr()
    main(['verify', '--scenario', scn, '--solution', sol, '--samples', '200'])
    checks = json.loads(capsys.readouterr().out)['checks']
    assert checks['qos'] and checks['power'] and checks['certified']


def test_infeasible_targets(tmp_path):
    path = str(tmp_path / 'scn.json')
    assert main(['gen', '--M', '1', '--K', '2', '--N', '1', '--bits', '1', '--gamma-db', '10', '-o', path]) == EXIT_OK
    assert main(['solve', '--scenario', path, '--method', 'gbd']) == EXIT_INFEASIBLE


def test_input_errors(tmp_path):
    big = str(tmp_path / 'big.json')
    assert main(['gen', '--M', '2', '--K', '2', '--N', '13', '--bits', '1', '--gamma-db', '3', '-o', big]) == EXIT_OK
    assert main(['solve', '--scenario', big, '--method', 'es']) == EXIT_INPUT_ERROR
    assert main(['solve', '--scenario', str(tmp_path / 'absent.json')]) == EXIT_INPUT_ERROR
    scn = _gen(tmp_path)
    assert main(['solve', '--scenario', scn, '--robust']) == EXIT_INPUT_ERROR
    assert main(['--defaults', str(tmp_path / 'absent.yaml'), 'gen', '-o', str(tmp_path / 'x.json')]) \
        == EXIT_INPUT_ERROR


def test_usage_errors_exit_with_input_code(tmp_path):
    with pytest.raises(SystemExit) as err:
        main(['solve', '--scenario', str(tmp_path / 'scn.json'), '--method', 'annealing'])
    assert err.value.code == EXIT_INPUT_ERROR
    with pytest.raises(SystemExit) as err:
        main([])
    assert err.value.code == EXIT_INPUT_ERROR


def test_sweep(tmp_path, capsys):
    spec = tmp_path / 'sweep.yaml'
    spec.write_text(
        "scenario: {M: 2, K: 2, N: 2, B_bits: 1, gamma_db: 0.0, sigma2_dbm: -90.0}\n"
        "experiment:\n"
        "  methods: [gbd, baseline_random]\n"
        "  seeds: [0]\n"
        "  sweep: {axis: N, values: [1, 2]}\n"
    )
    assert main(['sweep', '--spec', str(spec)]) == EXIT_INPUT_ERROR
    prefix = str(tmp_path / 'out' / 'run')
    capsys.readouterr()
    assert main(['sweep', '--spec', str(spec), '--output', prefix, '--workers', '2']) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary['rows'] == 4 and summary['errors'] == 0
    assert (tmp_path / 'out' / 'run_mean_dbm.csv').exists()
