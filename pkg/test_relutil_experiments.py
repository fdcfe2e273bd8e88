#!/usr/bin/env python3
"""
Tests for the experiment harness and the relutil command line
"""

import json
import os

import numpy as np
import pandas as pd
import pytest

import relutil
from data_manager import ReturnsMatrix, save_returns
from market_simulator import MarketSpec
from relutil_experiments import (FAST_PRESET, FULL_SCALE_DEFAULTS, DatasetMissingError, ExperimentSpec,
                                 ResultTable, experiment_stream, histogram_frame, run_experiment)

QUICK_GDSEG = {'n_attempts': 300}


def synthetic_dataset(tmp_path, n=252, d=3, seed=0):
    rng = np.random.default_rng(seed)
    R = ReturnsMatrix(rng.lognormal(0.0004, 0.015, size=(n, d)), [f's{i}' for i in range(d)])
    path = str(tmp_path / 'synthetic.txt')
    save_returns(R, path)
    return path


def market_file(tmp_path):
    spec = MarketSpec.multi_asset([0.0004, 0.0002, 0.0006], np.diag([2e-4, 1e-4, 4e-4]), ['a', 'b', 'c'])
    path = tmp_path / 'market.json'
    path.write_text(json.dumps(spec.to_dict()))
    return str(path)


def read_outputs(out_dir):
    return {name: (out_dir / name).read_bytes() for name in sorted(os.listdir(out_dir))}


def test_resolve_precedence(tmp_path):
    spec = ExperimentSpec.resolve('table1')
    assert spec.params['realizations'] == FULL_SCALE_DEFAULTS['table1']['realizations']
    assert ExperimentSpec.resolve('table1', fast=True).params['realizations'] == FAST_PRESET['realizations']

    spec_file = tmp_path / 'spec.json'
    spec_file.write_text(json.dumps({'experiment': 'table1', 'seed': 5, 'params': {'realizations': 7, 'n': 100}}))
    spec = ExperimentSpec.resolve('table1', str(spec_file), True, {'n': 50})
    assert spec.params['realizations'] == 7
    assert spec.params['n'] == 50
    assert spec.seed == 5
    assert ExperimentSpec.resolve('table1', str(spec_file), seed=9).seed == 9


def test_resolve_rejects_mismatched_spec_file(tmp_path):
    spec_file = tmp_path / 'spec.json'
    spec_file.write_text(json.dumps({'experiment': 'fig1'}))
    with pytest.raises(ValueError):
        ExperimentSpec.resolve('table1', str(spec_file))


def test_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec('table9')
    with pytest.raises(ValueError):
        ExperimentSpec('table1', {'realizations': 0})
    with pytest.raises(ValueError):
        ExperimentSpec('table1', {'alphas': [0.5, 1.5]})
    with pytest.raises(ValueError):
        ExperimentSpec('fig1', {'alpha': 0.0})
    with pytest.raises(ValueError):
        ExperimentSpec('table1', workers=0)


def test_spec_hash_ignores_workers_and_paths():
    a = ExperimentSpec.resolve('table1', fast=True, workers=4, data_dir='x')
    b = ExperimentSpec.resolve('table1', fast=True)
    assert a.spec_hash() == b.spec_hash()
    assert a.spec_hash() != ExperimentSpec.resolve('table1', fast=True, seed=1).spec_hash()
    assert experiment_stream('table1') == experiment_stream('table1') != experiment_stream('fig1')


def test_histogram_frame():
    frame = histogram_frame({'x': np.arange(10.0)}, 5)
    assert list(frame.columns) == ['sample', 'bin_left', 'bin_right', 'count']
    assert frame['count'].sum() == 10
    assert len(frame) == 5


def test_table1_small_run(tmp_path):
    spec = ExperimentSpec.resolve('table1', params={'alphas': [0.2, 0.5], 'realizations': 3, 'n': 2520},
                                  out_dir=str(tmp_path))
    result = run_experiment(spec)
    assert list(result.frame['objective']) == ['ordinary', 'relative']
    assert list(result.frame.columns) == ['objective', '0.2', '0.5']
    assert len(result.records) == 6
    weights = result.frame[['0.2', '0.5']].to_numpy()
    assert np.all((weights >= 0) & (weights <= 1))
    assert result.summary['relative_le_ordinary']


def test_table1_desk_scale_weights():
    spec = ExperimentSpec.resolve('table1', params={'alphas': [0.2, 0.5], 'realizations': 100, 'n': 252_000},
                                  workers=4)
    frame = run_experiment(spec).frame.set_index('objective')
    assert frame.loc['ordinary', '0.2'] == pytest.approx(0.9118, abs=0.02)
    assert frame.loc['ordinary', '0.5'] == pytest.approx(1.0, abs=0.02)
    assert frame.loc['relative', '0.2'] == pytest.approx(0.7961, abs=0.02)
    assert frame.loc['relative', '0.5'] == pytest.approx(0.9245, abs=0.02)


def test_fig1_reference_optimum_at_reduced_scale():
    params = {'n_list': [2520], 'realizations': 200, 'N_true': 10 ** 5}
    result = run_experiment(ExperimentSpec.resolve('fig1', params=params, workers=2))
    assert result.summary['nu_star'] == pytest.approx(0.81, abs=0.03)
    assert result.summary['transformed_optimum'] == pytest.approx(0.42, abs=0.05)
    assert result.frame.loc[0, 'share_at_extremes'] >= 0.5


def test_fig1_reference_optimum_does_not_depend_on_sample_size():
    params = {'n_list': [252], 'realizations': 2}
    small = run_experiment(ExperimentSpec.resolve('fig1', params={**params, 'N_true': 1000})).summary
    large = run_experiment(ExperimentSpec.resolve('fig1', params={**params, 'N_true': 50_000})).summary
    assert small['nu_star'] == large['nu_star']
    assert small['transformed_optimum'] == large['transformed_optimum']


def test_outputs_are_byte_identical_across_runs_and_workers(tmp_path):
    params = {'n_list': [252, 2520], 'realizations': 4, 'N_true': 20_000, 'bins': 5}
    first, second = tmp_path / 'first', tmp_path / 'second'
    run_experiment(ExperimentSpec.resolve('fig1', params=params)).write(str(first))
    run_experiment(ExperimentSpec.resolve('fig1', params=params, workers=2)).write(str(second))
    assert read_outputs(first) == read_outputs(second)
    assert set(os.listdir(first)) == {'fig1.csv', 'fig1_hist.csv', 'fig1.jsonl', 'fig1.meta.json'}


def test_fig1_records(tmp_path):
    params = {'n_list': [252], 'realizations': 3, 'N_true': 10_000, 'bins': 4}
    result = run_experiment(ExperimentSpec.resolve('fig1', params=params))
    assert len(result.records) == 3
    assert 0.0 <= result.summary['nu_star'] <= 1.0
    for record in result.records:
        assert record['optimism'] == pytest.approx(record['empirical_utility'] - record['true_utility'])
    assert set(result.extras['hist']['sample']) == {'nu2_n252', 'transformed_n252'}


def test_bound_report_experiment():
    result = run_experiment(ExperimentSpec.resolve('bound-report'))
    assert result.summary['estimation_error_bound'] == pytest.approx(0.10101, abs=1e-4)
    assert result.summary['seg_bound'] is None


def test_simulate_writes_loadable_returns(tmp_path):
    spec = ExperimentSpec.resolve('simulate', params={'n': 300}, seed=3)
    written = run_experiment(spec).write(str(tmp_path))
    returns_path = str(tmp_path / 'simulate_returns.txt')
    assert returns_path in written
    values = np.loadtxt(returns_path)
    assert values.shape == (300, 2)
    assert np.all(values[:, 0] == 1.0)


def test_dataset_runners_skip_without_data(tmp_path):
    for experiment in ('nyse-log', 'table4', 'optimize'):
        with pytest.raises(DatasetMissingError):
            run_experiment(ExperimentSpec.resolve(experiment, data_dir=str(tmp_path)))
    with pytest.raises(DatasetMissingError):
        run_experiment(ExperimentSpec.resolve('table5', params={'paths': 10}, data_dir=str(tmp_path)))


def test_nyse_log_and_optimize_on_synthetic_data(tmp_path):
    path = synthetic_dataset(tmp_path)
    result = run_experiment(ExperimentSpec.resolve('nyse-log', params={'dataset': path, 'runs': 2,
                                                                       'gdseg': QUICK_GDSEG}))
    assert len(result.records) == 2
    assert np.all(result.frame['min'] <= result.frame['max'])

    result = run_experiment(ExperimentSpec.resolve('optimize', params={'dataset': path, 'gdseg': QUICK_GDSEG}))
    assert result.frame['weight'].sum() == pytest.approx(1.0)
    assert 'trace' in result.extras
    assert result.summary['relative'] is False


def test_table4_feeds_table5(tmp_path):
    path = synthetic_dataset(tmp_path)
    table4 = run_experiment(ExperimentSpec.resolve('table4', params={'dataset': path, 'alphas': [0.5], 'k': 1,
                                                                     'gdseg': QUICK_GDSEG}))
    assert list(table4.frame['objective']) == ['ordinary', 'relative']
    table4.write(str(tmp_path / 'out'))

    params = {'dataset': path, 'paths': 2000, 'portfolios_from': str(tmp_path / 'out' / 'table4.jsonl'),
              'portfolios': {'s0 only': {'s0': 1.0}}}
    table5 = run_experiment(ExperimentSpec.resolve('table5', params=params))
    assert list(table5.frame['portfolio']) == ['uniform', 'alpha=0.5 ordinary', 'alpha=0.5 relative', 's0 only']
    assert np.all((table5.frame['loss_probability'] >= 0) & (table5.frame['loss_probability'] <= 1))
    assert np.all(table5.frame['p5'] <= table5.frame['p95'])


def test_table5_and_fig2_from_cached_moments(tmp_path):
    moments = market_file(tmp_path)
    table5 = run_experiment(ExperimentSpec.resolve('table5', params={'moments': moments, 'paths': 1000}))
    assert list(table5.frame['portfolio']) == ['uniform']

    params = {'moments': moments, 'realizations': 2, 'n': 100, 'k': 1, 'N_true': 10_000, 'bins': 4,
              'gdseg': QUICK_GDSEG}
    fig2 = run_experiment(ExperimentSpec.resolve('fig2', params=params))
    assert list(fig2.frame['stock']) == ['a', 'b', 'c']
    assert fig2.frame['average_weight'].sum() == pytest.approx(1.0)
    assert sorted(fig2.frame['rank']) == [1, 2, 3]
    assert len(fig2.records) == 2


def test_compare_on_synthetic_cash_and_stock():
    params = {'n': 252, 'm': 500, 'gdseg': QUICK_GDSEG}
    frame = run_experiment(ExperimentSpec.resolve('compare', params=params)).frame
    assert list(frame['solver']) == ['seg', 'gdseg', 'grid', 'bisection']
    scores = frame.set_index('solver')['empirical_utility']
    assert scores['bisection'] >= scores['grid'] - 1e-6


def test_result_table_xlsx(tmp_path):
    table = ResultTable('demo', pd.DataFrame({'a': [1.0, 2.0]}), {'seed': 0}, [], {'x': 1.5})
    written = table.write(str(tmp_path), xlsx=True)
    assert str(tmp_path / 'demo.xlsx') in written
    assert pd.read_excel(tmp_path / 'demo.xlsx', engine='openpyxl')['a'].tolist() == [1.0, 2.0]


def test_cli_usage_errors(tmp_path):
    assert relutil.main(['nosuch']) == relutil.EXIT_USAGE
    assert relutil.main(['bound-report', '--alpha', '1.5', '--out', str(tmp_path)]) == relutil.EXIT_USAGE
    assert relutil.main(['table1', '--realizations', '0', '--out', str(tmp_path)]) == relutil.EXIT_USAGE


def test_cli_missing_dataset_is_skipped(tmp_path, capsys):
    code = relutil.main(['nyse-log', '--data', str(tmp_path), '--out', str(tmp_path / 'out')])
    assert code == relutil.EXIT_SKIPPED
    assert 'skipped: dataset absent' in capsys.readouterr().out


def test_cli_other_missing_file_is_an_error(tmp_path, monkeypatch, capsys):
    def missing_output_dir(spec):
        raise FileNotFoundError('results directory vanished')

    monkeypatch.setattr(relutil, 'run_experiment', missing_output_dir)
    code = relutil.main(['bound-report', '--out', str(tmp_path)])
    assert code == relutil.EXIT_ERROR
    assert 'skipped' not in capsys.readouterr().out


def test_cli_bound_report_json(tmp_path, capsys):
    code = relutil.main(['bound-report', '--n', '10000', '--L-n', '1', '--m', '1000000',
                         '--out', str(tmp_path), '--json'])
    assert code == relutil.EXIT_OK
    out = capsys.readouterr().out
    payload = json.loads(out[:out.rindex('}') + 1])
    assert payload['summary']['seg_bound'] == pytest.approx(0.06194, abs=2e-5)
    assert (tmp_path / 'bound_report.csv').exists()
