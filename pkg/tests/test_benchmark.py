import numpy as np
import pandas as pd
import pytest

import benchmark
from benchmark import BenchmarkConfig, aggregate, benchmark_seed, ordering_count, run_benchmark
from gem import FitConfig, FitError
from gibbs import EStepConfig
from model import ConfigError


def _table(losses):
    rows = []
    for seed, values in losses.items():
        for method, loss in values.items():
            rows.append({'seed': str(seed), 'method': method, 'status': 'ok', 'error': '',
                         'l1_profile': loss})
    table = pd.DataFrame(rows)
    for metric in benchmark.METRICS:
        if metric not in table:
            table[metric] = np.nan
    return table


def test_ordering_count():
    table = _table({
        1: {'naive': 0.9, 'sc-only': 0.5, 'joint': 0.3},
        2: {'naive': 0.9, 'sc-only': 0.2, 'joint': 0.3},
        3: {'naive': 0.8, 'sc-only': 0.6, 'joint': 0.1},
    })
    assert ordering_count(table) == (2, 3)
    assert ordering_count(_table({1: {'naive': 0.9}})) == (0, 0)


def test_aggregate_means_and_sd():
    table = _table({1: {'naive': 0.4}, 2: {'naive': 0.6}})
    summary = aggregate(table)
    row = summary[summary['method'] == 'naive'].iloc[0]
    assert row['seed'] == 'aggregate'
    assert row['l1_profile'] == pytest.approx(0.5)
    assert row['l1_profile_sd'] == pytest.approx(np.sqrt(0.02))


def test_benchmark_config_validation():
    with pytest.raises(ConfigError):
        BenchmarkConfig(seeds=())
    with pytest.raises(ConfigError):
        BenchmarkConfig(methods=('naive', 'cibersort'))


def test_failed_method_is_marked(monkeypatch, small_config):
    def broken(data, config):
        raise FitError("ELBO no finito")

    monkeypatch.setitem(benchmark.FITTERS, 'joint', broken)
    config = BenchmarkConfig(seeds=(1,), methods=('naive', 'joint'), nmf_rank=2, nmf_iterations=20)
    fit_config = FitConfig(estep=EStepConfig(n_sweeps=4), max_em_iterations=1)
    rows = benchmark_seed(1, small_config, fit_config, config)
    status = {row['method']: row['status'] for row in rows}
    assert status == {'naive': 'ok', 'joint': 'failed', 'nmf': 'ok'}

    result = run_benchmark(small_config, fit_config, config)
    assert result.partial
    assert len(result.errors) == 1 and 'joint' in result.errors[0]


@pytest.fixture(scope='module')
def full_scale_table():
    from simulation import SimConfig
    result = run_benchmark(SimConfig(), FitConfig(), BenchmarkConfig(seeds=(1, 2, 3)))
    assert not result.partial
    return result.table[result.table['seed'] != 'aggregate']


def _by_method(table, method, metric):
    return table[table['method'] == method].set_index('seed')[metric]


@pytest.mark.slow
@pytest.mark.parametrize('method, low, high', [
    ('naive', 0.55, 1.05),
    ('sc-only', 0.15, 0.45),
    ('joint', 0.08, 0.34),
])
def test_profile_losses_within_expected_ranges(full_scale_table, method, low, high):
    assert low <= _by_method(full_scale_table, method, 'l1_profile').median() <= high


@pytest.mark.slow
def test_joint_beats_single_cell_beats_naive(full_scale_table):
    ordered, evaluated = ordering_count(full_scale_table)
    assert evaluated == 3
    assert ordered >= 2


@pytest.mark.slow
def test_dropout_calls_beat_nmf_scores(full_scale_table):
    joint = _by_method(full_scale_table, 'joint', 'auc')
    nmf = _by_method(full_scale_table, 'nmf', 'auc')
    assert (joint > 0.75).all()
    assert int((joint > nmf.reindex(joint.index)).sum()) >= 2
