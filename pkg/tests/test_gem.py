from dataclasses import replace

import numpy as np
import pytest

from baselines import divergence_weight_update
from gem import (FitConfig, FitError, convergence_check, fit, fit_gem, fit_map_fast,
                 fit_single_cell_only, init_params, map_w_update, plug_in_bulk_stats)
from gibbs import EStepConfig, run_estep
from model import ConfigError, Dataset, Dimensions, LabelError, validate_dataset
from utils import normalize_columns


def test_init_params_starting_values(rng):
    n = 200
    y = rng.integers(0, 5, size=(n, 6))
    y[0] += 1
    data = validate_dataset(None, y, [1, 1, 2, 2, 3, 3])
    params = init_params(data)
    assert params.mu_kappa == pytest.approx(-0.4055, abs=1e-4)
    assert params.mu_tau == pytest.approx(250.56, abs=0.01)
    assert params.sigma2_kappa == pytest.approx(0.5)
    assert params.sigma2_tau == pytest.approx((0.1 * params.mu_tau) ** 2)
    assert np.array_equal(params.alpha, np.ones(3))
    params.validate(1.0 / (100 * n))


def test_init_params_prior_proportions(small_data):
    data, _ = small_data
    params = init_params(data, prior_proportions=[1.0, 3.0])
    assert np.allclose(params.alpha, [0.5, 1.5])
    with pytest.raises(ConfigError):
        init_params(data, prior_proportions=[1.0, 0.0])


def test_init_params_rejects_empty_cell_type():
    data = validate_dataset(None, np.array([[1, 2], [3, 1], [0, 1]]), [1, 1], None)
    data = Dataset(data.single_cell, None, Dimensions(3, 2, 2, 0))
    with pytest.raises(LabelError):
        init_params(data)


def test_convergence_check():
    assert convergence_check([-100.0] * 4)
    assert not convergence_check([-100.0] * 3)
    assert not convergence_check([-100.0, -90.0, -80.0, -70.0])
    assert convergence_check([-1000.0, -999.99, -999.985, -999.98], tolerance=1e-4, patience=3)
    assert not convergence_check([-1000.0, -999.0, -999.0, -999.0, -998.0])
    assert convergence_check([0.0, 0.0, 0.0, 0.0])


def test_map_w_update_examples():
    x = np.array([[3.0], [1.0]])
    w = np.array([[0.5], [0.5]])
    updated = map_w_update(w, x, np.eye(2), np.ones(2))
    assert np.allclose(updated[:, 0], [0.75, 0.25])
    single = map_w_update(np.ones((1, 3)), np.ones((4, 3)), np.full((4, 1), 0.25), np.ones(1))
    assert np.all(single == 1.0)


def test_map_update_equals_nmf_weight_update(rng):
    for _ in range(10):
        n, k, m = 6, 3, 4
        profile = rng.multinomial(64, np.ones(n) / n, size=k).T / 64.0
        x = rng.integers(1, 30, size=(n, m)).astype(float)
        w = normalize_columns(rng.uniform(0.1, 1.0, size=(k, m)))
        map_step = map_w_update(w, x, profile, np.ones(k))
        nmf_step = normalize_columns(divergence_weight_update(profile, x, w))
        assert np.array_equal(map_step, nmf_step)


def test_plug_in_bulk_stats(small_data):
    data, _ = small_data
    params = init_params(data)
    stats = run_estep(data, params, EStepConfig(n_sweeps=3), seed=1, include_bulk=False)
    w = normalize_columns(np.ones((2, data.dims.n_bulk)))
    x = data.bulk.counts.astype(float)
    plugged = plug_in_bulk_stats(stats, w, x, params.profile)
    assert np.allclose(plugged.ztilde.sum(axis=2), x)
    assert np.allclose(plugged.log_w, np.log(w))
    plugged.check(data)


def test_single_em_iteration(small_data):
    data, _ = small_data
    config = FitConfig(estep=EStepConfig(n_sweeps=6), max_em_iterations=1, seed=2)
    result = fit_gem(data, config)
    assert result.n_iterations == 1
    assert not result.converged
    assert result.status == 'max_iterations'
    assert np.isfinite(result.elbo_trace[0])


def test_fit_is_deterministic(small_data, quick_fit_config):
    data, _ = small_data
    first = fit_gem(data, quick_fit_config)
    second = fit_gem(data, quick_fit_config)
    assert first.elbo_trace == second.elbo_trace
    assert np.array_equal(first.params.profile, second.params.profile)
    assert np.array_equal(first.stats.w, second.stats.w)


@pytest.mark.parametrize('mode', ['joint', 'sc-only', 'map-fast'])
def test_fit_modes_return_valid_params(small_data, quick_fit_config, mode):
    data, _ = small_data
    result = fit(data, replace(quick_fit_config, mode=mode))
    assert result.mode == mode
    result.params.validate(quick_fit_config.mstep.resolve_eps_a(data.dims.n_genes))
    assert result.n_iterations == 2
    if mode == 'map-fast':
        assert np.allclose(result.map_w.sum(axis=0), 1.0)
    if mode == 'sc-only':
        assert np.array_equal(result.params.alpha, np.ones(2))


class _UnreadableBulk:
    def __getattr__(self, name):
        raise AssertionError(f"el submodelo de células leyó bulk.{name}")


def test_single_cell_fit_never_reads_bulk(small_data, quick_fit_config):
    data, _ = small_data
    guarded = Dataset(data.single_cell, _UnreadableBulk(), data.dims)
    result = fit_single_cell_only(guarded, quick_fit_config)
    assert result.mode == 'sc-only'


def test_fit_without_bulk_falls_back_to_single_cell(small_data, quick_fit_config):
    data, _ = small_data
    result = fit(data.without_bulk(), quick_fit_config)
    assert result.mode == 'sc-only'
    with pytest.raises(FitError):
        fit_gem(data.without_bulk(), quick_fit_config)
    with pytest.raises(FitError):
        fit_map_fast(data.without_bulk(), quick_fit_config)


def test_fit_config_rejects_unknown_mode():
    with pytest.raises(ConfigError):
        FitConfig(mode='variational')


@pytest.mark.slow
def test_joint_fit_recovers_profile_better_than_naive():
    from baselines import l1_loss, naive_profile
    from simulation import SimConfig, simulated_dataset
    data, truth = simulated_dataset(SimConfig(seed=1))
    result = fit_gem(data, FitConfig(max_em_iterations=50, seed=1))
    k = data.dims.n_cell_types
    naive = naive_profile(data.single_cell.counts, data.single_cell.labels, k)
    assert l1_loss(result.params.profile, truth.profile[:, :k]) < l1_loss(naive, truth.profile[:, :k])


@pytest.mark.slow
def test_joint_elbo_has_no_persistent_decrease():
    from simulation import SimConfig, simulated_dataset
    data, _ = simulated_dataset(SimConfig(seed=2))
    result = fit_gem(data, FitConfig(max_em_iterations=30, seed=2))
    steps = np.diff(result.elbo_trace)
    for start in range(steps.size - 4):
        assert np.any(steps[start:start + 5] >= 0), f"ELBO decrece desde la iteración {start + 1}"
