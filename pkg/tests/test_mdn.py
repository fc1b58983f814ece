import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from protoreplay.errors import DimensionError
from protoreplay.mdn import (
    MdnConfig,
    MdnParams,
    MixtureOutput,
    OptimizerState,
    forward,
    grad_step,
    init_params,
    mixture_mean,
    nll_loss,
    predict_mean,
)

from oracles import max_fd_error, normal_pdf

SMALL = MdnConfig(components=2, hidden_dim=8)


def mixture(pi, mu, sigma):
    return MixtureOutput(np.log(np.asarray(pi, float)), np.asarray(mu, float), np.asarray(sigma, float))


def scramble(params, rng, scale=0.5):
    for a in params.arrays():
        a[...] = rng.normal(0.0, scale, size=a.shape)
    return params


class TestNll:
    def test_standard_normal_mode(self):
        assert nll_loss(mixture([1.0], [0.3], [1.0]), 0.3) == pytest.approx(0.918939, abs=1e-6)

    def test_two_component_oracle(self):
        out = mixture([0.5, 0.5], [0.0, 2.0], [1.0, 1.0])
        expected = -math.log(0.5 * normal_pdf(0, 0, 1) + 0.5 * normal_pdf(0, 2, 1))
        assert nll_loss(out, 0.0) == pytest.approx(expected, abs=1e-12)
        assert nll_loss(out, 0.0) == pytest.approx(1.485158, abs=1e-6)

    def test_far_tail_is_finite(self):
        out = mixture([0.5, 0.5], [0.0, 1.0], [1e-6, 1e-6])
        assert math.isfinite(nll_loss(out, 1e3))

    def test_logit_shift_invariance(self):
        params = scramble(init_params(SMALL, 2, 0), np.random.default_rng(1))
        X = np.random.default_rng(2).normal(size=(5, 2))
        before = nll_loss(forward(params, X), np.arange(5.0))
        params.pi_net.biases[-1] += 7.5
        after = nll_loss(forward(params, X), np.arange(5.0))
        np.testing.assert_allclose(before, after, rtol=1e-12)


class TestForward:
    def test_zero_weights_uniform(self):
        params = init_params(MdnConfig(), 3, 0)
        for a in params.arrays():
            a[...] = 0.0
        out = forward(params, [0.1, -2.0, 5.0])
        np.testing.assert_allclose(out.pi, 0.2, atol=1e-15)
        np.testing.assert_allclose(out.log_pi, math.log(0.2), atol=1e-15)

    def test_dimension_check(self):
        with pytest.raises(DimensionError):
            forward(init_params(SMALL, 2, 0), [1.0, 2.0, 3.0])

    def test_sigma_clamped(self):
        params = init_params(SMALL, 1, 0)
        params.comp_net.biases[-1][2:] = -500.0
        assert np.all(forward(params, [0.0]).sigma >= 1e-6)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 30.0))
    def test_simplex_and_floor(self, seed, scale):
        rng = np.random.default_rng(seed)
        params = scramble(init_params(SMALL, 3, seed), rng, scale)
        out = forward(params, rng.normal(0, 3, size=(8, 3)))
        np.testing.assert_allclose(out.pi.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(out.sigma >= 1e-6)


class TestPredictMean:
    def test_single_component(self):
        assert mixture_mean(mixture([1.0], [3.25], [2.0])) == 3.25

    def test_weighted(self):
        assert mixture_mean(mixture([0.25, 0.75], [0.0, 4.0], [1.0, 1.0])) == pytest.approx(3.0)

    def test_monte_carlo(self):
        rng = np.random.default_rng(0)
        pi, mu, sigma = np.array([0.2, 0.5, 0.3]), np.array([-1.0, 2.0, 5.0]), np.array([0.5, 1.0, 2.0])
        k = rng.choice(3, size=10**6, p=pi)
        draws = rng.normal(mu[k], sigma[k])
        se = draws.std() / math.sqrt(draws.size)
        assert abs(mixture_mean(mixture(pi, mu, sigma)) - draws.mean()) < 3 * se

    def test_component_permutation(self):
        rng = np.random.default_rng(5)
        pi = rng.dirichlet(np.ones(4))
        mu, sigma = rng.normal(size=4), rng.uniform(0.5, 2, 4)
        perm = rng.permutation(4)
        assert mixture_mean(mixture(pi, mu, sigma)) == pytest.approx(
            mixture_mean(mixture(pi[perm], mu[perm], sigma[perm])), rel=1e-12)

    def test_matches_forward_composition(self):
        params = scramble(init_params(SMALL, 2, 3), np.random.default_rng(3))
        X = np.random.default_rng(4).normal(size=(6, 2))
        out = forward(params, X)
        np.testing.assert_allclose(predict_mean(params, X), (out.pi * out.mu).sum(axis=1), rtol=1e-12)


class TestTraining:
    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(11)
        params = scramble(init_params(SMALL, 2, 11), rng)
        X, y = rng.normal(size=(6, 2)), rng.normal(size=6)
        assert max_fd_error(params, X, y) < 1e-4

    def test_loss_decreases(self):
        rng = np.random.default_rng(0)
        params = init_params(MdnConfig(hidden_dim=32), 2, 0)
        opt = OptimizerState.for_params(params)
        X = rng.normal(size=(16, 2))
        y = X[:, 0] - 2 * X[:, 1]
        first = grad_step(params, opt, X, y, 0.0005)
        for _ in range(199):
            last = grad_step(params, opt, X, y, 0.0005)
        assert last < first

    def test_zero_lr_is_null_step(self):
        params = init_params(SMALL, 2, 0)
        before = params.copy()
        grad_step(params, OptimizerState.for_params(params), np.ones((4, 2)), np.zeros(4), 0.0)
        for a, b in zip(before.arrays(), params.arrays()):
            np.testing.assert_array_equal(a, b)

    def test_serialization_roundtrip(self):
        params = scramble(init_params(SMALL, 3, 2), np.random.default_rng(2))
        back = MdnParams.from_dict(params.to_dict())
        for a, b in zip(params.arrays(), back.arrays()):
            np.testing.assert_array_equal(a, b)

    def test_same_seed_same_init(self):
        a, b = init_params(MdnConfig(), 4, 9), init_params(MdnConfig(), 4, 9)
        for x, y in zip(a.arrays(), b.arrays()):
            np.testing.assert_array_equal(x, y)
