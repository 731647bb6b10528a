import numpy as np
import pytest

from samplers import (RngStream, SamplerError, bernoulli_draw, dirichlet_draw, multinomial_draw,
                      mvn2_draw, pg_draw, pg_draw_truncated, pg_mean, pg_variance)


def test_stream_is_reproducible():
    stream = RngStream(42, 'omega', 3, sweep=5, epoch=1)
    first = stream.generator().random(5)
    second = RngStream(42, 'omega', 3, sweep=5, epoch=1).generator().random(5)
    assert np.array_equal(first, second)


def test_streams_differ_by_unit_sweep_and_epoch():
    base = RngStream(42)
    draws = {
        'base': base.generator().random(),
        'unit': base.unit('s', 1).generator().random(),
        'index': base.unit('s', 2).generator().random(),
        'sweep': base.at(sweep=1).generator().random(),
        'epoch': base.at(epoch=1).generator().random(),
    }
    assert len(set(draws.values())) == len(draws)


def test_unknown_unit_kind():
    with pytest.raises(SamplerError):
        RngStream(1, 'cell')


def test_pg_mean_and_variance_closed_forms():
    assert pg_mean(0.0) == pytest.approx(0.25)
    assert pg_mean(2.0) == pytest.approx(np.tanh(1.0) / 4.0)
    assert pg_mean(-2.0) == pytest.approx(pg_mean(2.0))
    assert pg_variance(0.0) == pytest.approx(1.0 / 24.0)
    # continuidad alrededor del corte de la expansión en serie
    assert pg_variance(1.1e-3) == pytest.approx(pg_variance(0.9e-3), rel=1e-4)


def test_pg_draw_shape_and_support():
    draws = pg_draw(RngStream(3, 'test'), np.array([[0.0, 1.0], [5.0, -20.0]]))
    assert draws.shape == (2, 2)
    assert np.all(draws > 0)
    again = pg_draw(RngStream(3, 'test'), np.array([[0.0, 1.0], [5.0, -20.0]]))
    assert np.array_equal(draws, again)


def test_pg_draw_rejects_non_finite():
    with pytest.raises(SamplerError):
        pg_draw(RngStream(1, 'test'), [1.0, np.inf])


def _assert_moments(draws, c, check_variance):
    n = draws.size
    mean, var = pg_mean(c), pg_variance(c)
    assert abs(draws.mean() - mean) < 4.0 * np.sqrt(var / n)
    if check_variance:
        centered = draws - draws.mean()
        se_var = np.sqrt(np.mean(centered ** 4) - np.mean(centered ** 2) ** 2) / np.sqrt(n)
        assert abs(centered.var() - var) < 4.0 * se_var


@pytest.mark.parametrize('c', [0.0, 1.0, 5.0])
def test_pg_draw_mean(c):
    draws = pg_draw(RngStream(11, 'test', int(c)), np.full(20_000, c))
    _assert_moments(draws, c, check_variance=False)


@pytest.mark.slow
@pytest.mark.parametrize('c', [0.0, 0.5, 1.0, 2.0, 5.0])
def test_pg_draw_moments_many_samples(c):
    draws = pg_draw(RngStream(23, 'test', int(10 * c)), np.full(100_000, c))
    _assert_moments(draws, c, check_variance=True)


@pytest.mark.parametrize('c', [1600.0, 2000.0, -3000.0])
def test_pg_draw_mean_for_large_parameter(c):
    draws = pg_draw(RngStream(31, 'test', int(abs(c))), np.full(20_000, c))
    assert np.all(np.isfinite(draws))
    assert draws.max() < 0.01
    _assert_moments(draws, c, check_variance=False)


def test_pg_variance_is_finite_for_large_parameter():
    assert pg_variance(3000.0) == pytest.approx(2.0 / (4 * 3000.0 ** 3), rel=1e-6)
    assert np.all(np.isfinite(pg_variance(np.array([700.0, 1500.0, 1e5]))))


def test_pg_draw_truncated_mean():
    draws = pg_draw_truncated(RngStream(5, 'test'), np.full(20_000, 2.0))
    _assert_moments(draws, 2.0, check_variance=False)


def test_mvn2_draw_covariance():
    precision = np.array([[2.0, 1.0], [1.0, 2.0]])
    mean = np.array([1.0 / 6.0, 1.0 / 6.0])
    gen = np.random.default_rng(0)
    draws = np.array([mvn2_draw(gen, mean, precision) for _ in range(20_000)])
    assert np.allclose(draws.mean(axis=0), mean, atol=0.03)
    assert np.allclose(np.cov(draws.T), np.linalg.inv(precision), atol=0.03)


def test_mvn2_draw_rejects_indefinite_precision():
    with pytest.raises(SamplerError):
        mvn2_draw(np.random.default_rng(0), [0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])


def test_dirichlet_and_multinomial():
    w = dirichlet_draw(RngStream(2, 'test'), [1.0, 2.0, 3.0])
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    counts = multinomial_draw(RngStream(2, 'test'), 17, w)
    assert counts.sum() == 17
    rows = multinomial_draw(RngStream(2, 'test'), [3, 4], np.array([[0.5, 0.5], [0.1, 0.9]]))
    assert rows.sum(axis=1).tolist() == [3, 4]
    with pytest.raises(SamplerError):
        dirichlet_draw(RngStream(2, 'test'), [1.0, 0.0])
    with pytest.raises(SamplerError):
        multinomial_draw(RngStream(2, 'test'), 3, [0.5, 0.6])


def test_bernoulli_draw():
    draws = bernoulli_draw(RngStream(9, 'test'), np.array([0.0, 1.0, 1.0, 0.0]))
    assert draws.tolist() == [0, 1, 1, 0]
    with pytest.raises(SamplerError):
        bernoulli_draw(RngStream(9, 'test'), [1.5])
