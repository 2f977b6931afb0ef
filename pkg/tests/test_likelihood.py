import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from spinbath.likelihood import (LikelihoodConfig, ObservedSignal, literal_mixed_likelihood,
                                 log_likelihood, log_likelihood_gaussian, normalize_signal,
                                 w2_squared, w2_squared_discrete)

# frozen from the transport LP in tests/oracles.py
W2_THREE_POINT = 1.0  # support {1,2,3}, (.5,.5,0) against (0,.5,.5)
W2_RESIDUAL_EXAMPLE = 0.05555555555555547  # data (1,1,0), model data - (0.1,-0.2,0.3)

CFG = LikelihoodConfig()


def obs(values, tau=None):
    values = np.asarray(values, dtype=float)
    tau = np.arange(1, values.size + 1, dtype=float) if tau is None else tau
    return ObservedSignal(tau, values)


def test_gaussian_examples():
    d = obs([0.3, 0.1, -0.4])
    assert log_likelihood_gaussian(d, d.values, CFG) == 0.0
    assert log_likelihood_gaussian(obs([0.7]), [0.5], CFG) == pytest.approx(-5 * 0.2 ** 2)
    model = d.values - np.array([0.1, -0.2, 0.3])
    assert log_likelihood_gaussian(d, model, CFG) == pytest.approx(-0.7, rel=1e-12)


def test_gaussian_length_mismatch():
    with pytest.raises(ValueError):
        log_likelihood_gaussian(obs([1.0, 2.0]), [1.0], CFG)


@pytest.mark.parametrize("bad", [dict(sigma2=0.0), dict(zeta=-0.1), dict(zeta=1.5), dict(mode="poisson")])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        LikelihoodConfig(**bad)


def test_observed_signal_validation():
    with pytest.raises(ValueError):
        ObservedSignal([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        ObservedSignal([2.0, 1.0], [1.0, 1.0])


def test_w2_examples():
    d = obs([0.2, 0.9, 0.4])
    assert w2_squared(d, d.values) == 0.0
    assert w2_squared_discrete([1.0, 2.0, 3.0], [0.5, 0.5, 0], [0, 0.5, 0.5]) == pytest.approx(W2_THREE_POINT, abs=1e-12)
    # point masses at a and b
    assert w2_squared_discrete([0.5, 2.0, 4.5], [1, 0, 0], [0, 0, 1]) == pytest.approx(16.0)


def test_flat_signal_normalizes_to_uniform():
    assert np.allclose(normalize_signal([0.7, 0.7, 0.7, 0.7]), 0.25)
    assert w2_squared(obs([1.0, 1.0, 1.0]), [2.0, 2.0, 2.0]) == 0.0


def test_mixed_composition_example():
    d = obs([1.0, 1.0, 0.0])
    model = d.values - np.array([0.1, -0.2, 0.3])
    cfg = LikelihoodConfig(zeta=0.5, mode="wasserstein_mixed")
    expected = 0.5 * (-0.7) - 0.5 * W2_RESIDUAL_EXAMPLE
    assert log_likelihood(d, model, cfg) == pytest.approx(expected, rel=1e-12)
    one = LikelihoodConfig(zeta=1.0, mode="wasserstein_mixed")
    assert log_likelihood(d, d.values, one) == 0.0


def test_literal_form_is_reported_in_probability_space():
    d = obs([1.0, 1.0, 0.0])
    model = d.values - np.array([0.1, -0.2, 0.3])
    cfg = LikelihoodConfig(zeta=0.5, mode="wasserstein_mixed")
    assert literal_mixed_likelihood(d, model, cfg) == pytest.approx(
        0.5 * np.exp(-0.7) - 0.5 * W2_RESIDUAL_EXAMPLE, rel=1e-12)


# values on a 0.01 grid, so a nonzero residual never underflows when squared
grid = st.integers(-200, 200).map(lambda x: x / 100)
vectors = st.integers(1, 12).flatmap(
    lambda n: st.tuples(st.lists(grid, min_size=n, max_size=n),
                        st.lists(grid, min_size=n, max_size=n)))


@settings(max_examples=150, deadline=None)
@given(vectors, st.floats(1e-3, 10), st.floats(0, 1))
def test_scores_finite_and_structured(pair, sigma2, zeta):
    d, f = (np.array(v) for v in pair)
    data = obs(d)
    cfg = LikelihoodConfig(sigma2=sigma2)
    g = log_likelihood_gaussian(data, f, cfg)
    assert np.isfinite(g) and g <= 0
    assert (g == 0) == np.array_equal(d, f)
    perm = np.random.default_rng(0).permutation(d.size)
    assert log_likelihood_gaussian(obs(d[perm]), f[perm], cfg) == pytest.approx(g, rel=1e-12, abs=1e-300)
    assert log_likelihood_gaussian(data, f, LikelihoodConfig(sigma2=2 * sigma2)) == pytest.approx(g / 2, rel=1e-12, abs=1e-300)
    w = w2_squared(data, f)
    assert np.isfinite(w) and w >= 0
    assert w == pytest.approx(w2_squared(obs(f), d), abs=1e-12)
    mixed = log_likelihood(data, f, LikelihoodConfig(sigma2=sigma2, zeta=zeta, mode="wasserstein_mixed"))
    assert np.isfinite(mixed)


def test_zeta_zero_is_bitwise_gaussian(rng):
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        d, f = rng.normal(size=n), rng.normal(size=n)
        data = obs(d)
        g = log_likelihood(data, f, LikelihoodConfig(sigma2=0.1))
        m = log_likelihood(data, f, LikelihoodConfig(sigma2=0.1, zeta=0.0, mode="wasserstein_mixed"))
        assert m == g


def test_w2_matches_transport_lp(rng):
    for _ in range(100):
        x = np.sort(rng.uniform(0, 0.008, 5))
        p, q = rng.random(5), rng.random(5)
        p[rng.random(5) < 0.2] = 0
        p, q = p / p.sum() if p.sum() else np.full(5, 0.2), q / q.sum()
        assert w2_squared_discrete(x, p, q) == pytest.approx(oracles.w2_squared_lp(x, p, q), abs=1e-9)
