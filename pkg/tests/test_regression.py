from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mg_equilib.regression import (CovarianceAccumulator, bonus, clip_q, fit_constrained_ls, fit_from_moments,
                                   squared_loss)
from mg_equilib.suites import ball_probes, closed_form_examples


@st.composite
def problems(draw):
    seed = draw(st.integers(0, 10**6))
    g = np.random.default_rng(seed)
    d = draw(st.integers(1, 8))
    n = draw(st.integers(0, 50))
    X = g.standard_normal((n, d)) / math.sqrt(d)
    if n and draw(st.booleans()):
        X[:, 0] = 0.0  # rank deficient
    y = g.standard_normal(n) * 3
    W = draw(st.floats(0.01, 5.0))
    return X, y, W, g


class TestFit:
    @pytest.mark.parametrize("name,ok", closed_form_examples())
    def test_closed_forms_exact(self, name, ok):
        assert ok, name

    def test_closed_form_values(self):
        e1 = np.array([[1.0, 0.0]])
        assert fit_constrained_ls(e1, [1.0], 10.0).theta.tolist() == [1.0, 0.0]
        assert fit_constrained_ls(e1, [1.0], 0.5).theta.tolist() == [0.5, 0.0]
        assert fit_constrained_ls([[1.0], [1.0]], [0.0, 1.0], 10.0).theta.tolist() == [0.5]

    def test_empty(self):
        assert fit_constrained_ls(np.zeros((0, 3)), np.zeros(0), 1.0).theta.tolist() == [0.0, 0.0, 0.0]

    def test_non_finite(self):
        with pytest.raises(ValueError):
            fit_constrained_ls([[np.inf]], [1.0], 1.0)
        with pytest.raises(ValueError):
            fit_constrained_ls([[1.0]], [np.nan], 1.0)

    @given(problems())
    def test_feasible_and_beats_probes(self, prob):
        X, y, W, g = prob
        fit = fit_constrained_ls(X, y, W)
        assert np.linalg.norm(fit.theta) <= W + 1e-9
        loss = squared_loss(X, y, fit.theta)
        P = ball_probes(X.shape[1], W, 2000, g)
        probe = np.sum((P @ X.T - y) ** 2, axis=1).min() if X.shape[0] else 0.0
        assert loss <= probe + 1e-9 * max(1.0, abs(probe))

    @given(problems())
    def test_kkt(self, prob):
        X, y, W, _ = prob
        fit = fit_constrained_ls(X, y, W)
        grad = X.T @ (X @ fit.theta - y)
        if fit.multiplier > 0:
            assert abs(np.linalg.norm(fit.theta) - W) <= 1e-9 * max(1.0, W)
            # stationarity: grad + mu theta = 0
            assert np.linalg.norm(grad + fit.multiplier * fit.theta) <= 1e-6 * max(1.0, np.linalg.norm(X.T @ y))
        else:
            assert np.linalg.norm(grad) <= 1e-6 * max(1.0, np.linalg.norm(X.T @ y))

    def test_moments_match(self):
        g = np.random.default_rng(1)
        X, y = g.standard_normal((20, 4)), g.standard_normal(20)
        a = fit_constrained_ls(X, y, 0.3).theta
        b = fit_from_moments(X.T @ X, X.T @ y, 0.3).theta
        assert np.array_equal(a, b)

    def test_min_norm_on_rank_deficiency(self):
        X = np.array([[1.0, 1.0], [2.0, 2.0]])
        theta = fit_constrained_ls(X, [1.0, 2.0], 10.0).theta
        assert np.allclose(theta, [0.5, 0.5], atol=1e-12, rtol=0)


class TestCovariance:
    def test_bonus_examples(self):
        acc = CovarianceAccumulator(2, 2.0)
        assert abs(bonus(acc, [1.0, 0.0]) - 1 / math.sqrt(2)) <= 1e-15
        assert bonus(acc, [0.0, 0.0]) == 0.0
        acc = CovarianceAccumulator(2, 1.0)
        for _ in range(10):
            acc.add([1.0, 0.0])
        assert abs(acc.bonus([1.0, 0.0]) - 1 / math.sqrt(11)) <= 1e-15

    def test_rejects_bad_lambda(self):
        with pytest.raises(ValueError):
            CovarianceAccumulator(2, 0.0)

    def test_long_stream_drift(self):
        g = np.random.default_rng(0)
        acc = CovarianceAccumulator(5, 1.0)
        for k in range(10_000):
            if k % 100 == 0:
                acc.add_batch(g.standard_normal((3, 5)))
            else:
                acc.add(g.standard_normal(5) / 3)
        direct = np.linalg.inv(acc.sigma)
        assert np.abs(acc.inv - direct).max() <= 1e-8
        assert np.abs(acc.sigma @ acc.inv - np.eye(5)).max() <= 1e-8
        assert np.array_equal(acc.sigma, acc.sigma.T)

    @given(st.integers(0, 10**6), st.integers(1, 5), st.integers(1, 40))
    def test_bonus_monotone(self, seed, d, n):
        g = np.random.default_rng(seed)
        acc = CovarianceAccumulator(d, float(g.uniform(0.1, 2)))
        phi = g.standard_normal(d)
        prev = acc.bonus(phi)
        for _ in range(n):
            acc.add(g.standard_normal(d))
            cur = acc.bonus(phi)
            assert cur <= prev + 1e-12
            prev = cur

    def test_batch_bonuses(self):
        g = np.random.default_rng(2)
        acc = CovarianceAccumulator(3, 1.0)
        acc.add_batch(g.standard_normal((10, 3)))
        X = g.standard_normal((4, 3))
        assert np.allclose(acc.bonuses(X), [acc.bonus(x) for x in X], atol=1e-14, rtol=0)


class TestClip:
    def test_examples(self):
        assert clip_q(5.2, 1, 3) == 3
        assert clip_q(-0.1, 2, 3) == 0
        assert clip_q(1.0, 3, 3) == 1.0

    def test_range(self):
        with pytest.raises(ValueError):
            clip_q(0.5, 5, 3)
