import itertools

import numpy as np
import pytest
from scipy.special import gammaln

from model import ModelParams, ProfileError, SufficientStats, validate_dataset
from mstep import (MStepConfig, ProfileTerms, _BlockSteps, backtracking_ascent, elbo, grad_a,
                   grad_alpha, m_step, project_capped_simplex, update_dropout_params)


def random_problem(rng, n=5, k=2, cells=4, m=3):
    """Datos y estadísticos suficientes sintéticos coherentes entre sí"""
    labels = np.arange(cells) % k + 1
    y = rng.integers(0, 6, size=(n, cells))
    y[0] += 1
    x = rng.integers(1, 20, size=(n, m))
    data = validate_dataset(x, y, labels)
    s = np.where(y > 0, 1.0, rng.uniform(0.1, 0.9, size=y.shape))
    split = rng.dirichlet(np.ones(k), size=(n, m))
    w = rng.dirichlet(np.ones(k), size=m).T
    tau = rng.normal(20.0, 2.0, size=cells)
    kappa = rng.normal(-1.0, 0.5, size=cells)
    omega = rng.uniform(0.05, 0.3, size=(n, cells))
    stats = SufficientStats(
        ztilde=x[:, :, None] * split, s=s, log_w=np.log(w) - 0.1, w=w,
        kappa=kappa, tau=tau, kappa2=kappa ** 2 + 0.1, tau2=tau ** 2 + 1.0,
        omega_tau2=omega * tau ** 2, omega_tau_kappa=omega * tau * kappa,
        s_tau=(s - 0.5) * tau, n_samples=10)
    profile = rng.uniform(0.5, 1.5, size=(n, k))
    profile /= profile.sum(axis=0)
    params = ModelParams(profile, rng.uniform(0.5, 3.0, size=k), -1.0, 0.3, 20.0, 4.0)
    return data, stats, params


def brute_force_projection(v, eps):
    """Proyección probando todos los conjuntos de coordenadas recortadas en eps"""
    n = v.size
    best, best_dist = None, np.inf
    for clamped in itertools.product((False, True), repeat=n):
        clamped = np.array(clamped)
        if clamped.all():
            continue
        free = ~clamped
        u = np.where(clamped, eps, 0.0)
        shift = (1.0 - eps * clamped.sum() - v[free].sum()) / free.sum()
        u[free] = v[free] + shift
        if np.all(u >= eps - 1e-12):
            dist = np.sum((u - v) ** 2)
            if dist < best_dist:
                best, best_dist = u, dist
    return best


def test_update_dropout_params_example():
    cells = 4
    stats = SufficientStats(
        ztilde=np.zeros((1, 0, 1)), s=np.ones((1, cells)), log_w=np.zeros((1, 0)),
        w=np.zeros((1, 0)), kappa=np.full(cells, -1.0), tau=np.full(cells, 3.0),
        kappa2=np.full(cells, 1.25), tau2=np.full(cells, 9.0),
        omega_tau2=np.zeros((1, cells)), omega_tau_kappa=np.zeros((1, cells)),
        s_tau=np.zeros((1, cells)), n_samples=5)
    mu_kappa, sigma2_kappa, mu_tau, sigma2_tau = update_dropout_params(stats)
    assert mu_kappa == pytest.approx(-1.0)
    assert sigma2_kappa == pytest.approx(0.25)
    assert mu_tau == pytest.approx(3.0)
    assert sigma2_tau == pytest.approx(1e-6)


def test_projection_example():
    assert np.allclose(project_capped_simplex([2.0, 0.0], 0.1), [0.9, 0.1])
    assert np.allclose(project_capped_simplex([0.5, 0.5], 0.0), [0.5, 0.5])


def test_projection_is_idempotent(rng):
    v = rng.normal(size=8)
    once = project_capped_simplex(v, 0.01)
    assert np.allclose(project_capped_simplex(once, 0.01), once, atol=1e-14)


def test_projection_empty_set():
    with pytest.raises(ProfileError):
        project_capped_simplex(np.zeros(4), 0.3)


def test_projection_matches_brute_force(rng):
    for _ in range(1000):
        n = int(rng.integers(2, 7))
        eps = float(rng.uniform(0.0, 1.0 / n))
        v = rng.normal(scale=rng.choice([0.1, 1.0, 5.0]), size=n)
        projected = project_capped_simplex(v, eps)
        assert projected.sum() == pytest.approx(1.0, abs=1e-12)
        assert projected.min() >= eps - 1e-15
        assert np.allclose(projected, brute_force_projection(v, eps), atol=1e-9)


def test_elbo_matches_direct_sum(rng):
    data, stats, params = random_problem(rng, n=4, k=1, cells=3, m=2)
    a = params.profile[:, 0]
    y = data.single_cell.counts
    value = 0.0
    for i in range(4):
        value += stats.ztilde[i, :, 0].sum() * np.log(a[i])
        for l in range(3):
            value += stats.s[i, l] * y[i, l] * np.log(a[i])
            value += stats.s_tau[i, l] * a[i] - stats.omega_tau_kappa[i, l] * a[i]
            value -= 0.5 * stats.omega_tau2[i, l] * a[i] ** 2
    for l in range(3):
        value -= data.single_cell.depths[l] * np.log(a @ stats.s[:, l])
    alpha = params.alpha[0]
    value += 2 * gammaln(alpha) - 2 * gammaln(alpha) + (alpha - 1) * stats.log_w.sum()
    for mu, var, mean, second in ((params.mu_kappa, params.sigma2_kappa, stats.kappa, stats.kappa2),
                                  (params.mu_tau, params.sigma2_tau, stats.tau, stats.tau2)):
        value += np.sum(-0.5 * np.log(var) - (second - 2 * mu * mean + mu ** 2) / (2 * var))
    assert elbo(params, stats, data) == pytest.approx(value, rel=1e-12)


def test_zero_bulk_allocations_remove_bulk_term(rng):
    data, stats, params = random_problem(rng)
    empty = SufficientStats(**{**stats.__dict__, 'ztilde': np.zeros_like(stats.ztilde)})
    difference = elbo(params, stats, data) - elbo(params, empty, data)
    expected = np.sum(stats.ztilde.sum(axis=1) * np.log(params.profile))
    assert difference == pytest.approx(expected, rel=1e-10)


def _relative_error(analytic, numeric):
    return np.max(np.abs(analytic - numeric) / np.maximum(np.abs(analytic), 1.0))


def test_gradients_match_finite_differences(rng):
    h = 1e-6
    for _ in range(20):
        data, stats, params = random_problem(rng)
        terms = ProfileTerms.build(stats, data)
        analytic = grad_a(params, stats, data, terms)
        numeric = np.zeros_like(analytic)
        for i, k in np.ndindex(*analytic.shape):
            up, down = params.copy(), params.copy()
            up.profile[i, k] += h
            down.profile[i, k] -= h
            numeric[i, k] = (elbo(up, stats, data, terms) - elbo(down, stats, data, terms)) / (2 * h)
        assert _relative_error(analytic, numeric) < 1e-5

        analytic = grad_alpha(params, stats)
        numeric = np.zeros_like(analytic)
        for k in range(analytic.size):
            up, down = params.copy(), params.copy()
            up.alpha[k] += h
            down.alpha[k] -= h
            numeric[k] = (elbo(up, stats, data, terms) - elbo(down, stats, data, terms)) / (2 * h)
        assert _relative_error(analytic, numeric) < 1e-5


def test_grad_alpha_without_bulk_is_zero(rng):
    data, stats, params = random_problem(rng)
    sc_stats = SufficientStats(**{**stats.__dict__, 'log_w': np.zeros((2, 0)), 'w': np.zeros((2, 0))})
    assert np.all(grad_alpha(params, sc_stats) == 0.0)


def test_m_step_never_decreases_elbo(rng):
    config = MStepConfig(max_iterations=20)
    for _ in range(100):
        data, stats, params = random_problem(rng)
        params.profile = np.maximum(params.profile, config.resolve_eps_a(5))
        params.profile /= params.profile.sum(axis=0)
        before = elbo(params, stats, data)
        profile, alpha = backtracking_ascent(params, stats, data, config)
        after = ModelParams(profile, alpha, params.mu_kappa, params.sigma2_kappa,
                            params.mu_tau, params.sigma2_tau)
        assert elbo(after, stats, data) >= before - 1e-9
        updated = m_step(params, stats, data, config)
        assert elbo(updated, stats, data) >= elbo(params, stats, data) - 1e-9


def test_alpha_is_clamped_at_floor(rng):
    data, stats, params = random_problem(rng)
    stats.log_w[0, :] = -5000.0
    config = MStepConfig(max_iterations=50)
    _, alpha = backtracking_ascent(params, stats, data, config)
    assert alpha[0] == pytest.approx(config.eps_alpha)
    assert np.all(alpha >= config.eps_alpha)


def test_m_step_without_alpha_update(rng):
    data, stats, params = random_problem(rng)
    updated = m_step(params, stats, data, MStepConfig(max_iterations=5), update_alpha=False)
    assert np.array_equal(updated.alpha, params.alpha)
    assert np.allclose(updated.profile.sum(axis=0), 1.0)


def test_exhausted_search_continues_from_reduced_step():
    steps = _BlockSteps(1, MStepConfig(max_halvings=4))
    x = np.array([0.5, 0.5])
    direction = np.array([1.0, -1.0])

    def objective(a):
        return 1.0 if np.max(np.abs(a - x)) <= 1e-3 else -np.inf

    outcomes = [steps.search(0, x, 0.0, direction, direction, objective, lambda a: a)
                for _ in range(3)]
    assert [failed for _, failed in outcomes] == [True, True, False]
    assert outcomes[0][0] is None and outcomes[1][0] is None
    assert np.max(np.abs(outcomes[2][0] - x)) <= 1e-3
    assert steps.exhausted == 2


def test_ascent_reaches_optimum_with_large_counts(rng):
    data, stats, params = random_problem(rng)
    targets = np.array([[0.4, 0.05], [0.3, 0.1], [0.15, 0.15], [0.1, 0.3], [0.05, 0.4]])
    stats.ztilde = 1e10 * np.repeat(targets[:, None, :], 3, axis=1) / 3
    before = params.profile.copy()
    profile, _ = backtracking_ascent(params, stats, data, MStepConfig())
    assert np.all(np.abs(profile - before).sum(axis=0) > 0.1)
    assert np.allclose(profile, targets, atol=1e-4)


def test_unscaled_ascent_still_moves_every_column(rng):
    data, stats, params = random_problem(rng)
    stats.ztilde = stats.ztilde * 1e8
    config = MStepConfig(scaled_direction=False)
    profile, alpha = backtracking_ascent(params, stats, data, config)
    assert np.all(np.abs(profile - params.profile).sum(axis=0) > 0.0)
    after = ModelParams(profile, alpha, params.mu_kappa, params.sigma2_kappa,
                        params.mu_tau, params.sigma2_tau)
    assert elbo(after, stats, data) >= elbo(params, stats, data) - 1e-9


@pytest.mark.slow
def test_ascent_moves_every_column_on_simulated_data():
    from gem import init_params
    from gibbs import EStepConfig, run_estep
    from simulation import SimConfig, simulated_dataset
    data, _ = simulated_dataset(SimConfig(seed=1))
    params = init_params(data)
    stats = run_estep(data, params, EStepConfig(n_sweeps=50), seed=1)
    profile, alpha = backtracking_ascent(params, stats, data, MStepConfig())
    assert np.all(np.abs(profile - params.profile).sum(axis=0) > 1e-3)
    after = ModelParams(profile, alpha, params.mu_kappa, params.sigma2_kappa,
                        params.mu_tau, params.sigma2_tau)
    assert elbo(after, stats, data) >= elbo(params, stats, data) - 1e-9
