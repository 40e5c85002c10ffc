from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import reference as ref
from mg_equilib.oracles import (Mode, RegretLearner, bandit_regret_bound, external_regret, full_regret_bound,
                                ix_estimate, stationary_distribution, swap_regret)
from mg_equilib.suites import alternating_losses, decomposition_check, play_full

loss_vectors = st.lists(st.floats(0.0, 1.0), min_size=2, max_size=6)


class TestInit:
    def test_uniform_start(self):
        assert RegretLearner(4).p.tolist() == [0.25] * 4

    def test_single_arm(self):
        lr = RegretLearner(1, Mode.FULL_SWAP, horizon=10)
        for _ in range(5):
            lr.full_update([0.7])
        assert lr.p.tolist() == [1.0]

    def test_swap_initial_experts(self):
        lr = RegretLearner(2, Mode.FULL_SWAP, horizon=10)
        assert np.array_equal(lr.expert_matrix(), np.full((2, 2), 0.5))
        assert lr.p.tolist() == [0.5, 0.5]

    def test_zero_arms(self):
        with pytest.raises(ValueError):
            RegretLearner(0)


class TestFullUpdate:
    def test_symmetric_losses(self):
        lr = RegretLearner(2, horizon=100)
        lr.full_update([0.3, 0.3])
        assert lr.p.tolist() == [0.5, 0.5]

    def test_closed_form_step(self):
        lr = RegretLearner(2, lr=0.5)
        lr.full_update([0.0, 1.0])
        expected = np.array([1.0, math.exp(-0.5)]) / (1.0 + math.exp(-0.5))
        assert np.allclose(lr.p, expected, atol=1e-15, rtol=0)
        assert abs(lr.p[0] - 0.6225) < 1e-4

    def test_absorbing_stationary(self):
        assert np.array_equal(stationary_distribution(np.array([[1.0, 0.0], [1.0, 0.0]])), [1.0, 0.0])

    def test_clipping_counter(self):
        lr = RegretLearner(2, horizon=10)
        lr.full_update([1.5, -0.2])
        assert lr.clipped == 1

    def test_errors(self):
        with pytest.raises(ValueError):
            RegretLearner(2, Mode.BANDIT_EXTERNAL).full_update([0.1, 0.2])
        with pytest.raises(ValueError):
            RegretLearner(2, horizon=10).full_update([np.nan, 0.2])

    @given(st.lists(loss_vectors, min_size=1, max_size=30), st.booleans(), st.booleans())
    def test_distribution_invariants(self, seq, swap, anytime):
        B = len(seq[0])
        lr = RegretLearner(B, Mode.FULL_SWAP if swap else Mode.FULL_EXTERNAL, horizon=None if anytime else 30)
        for loss in seq:
            lr.full_update((loss + [0.5] * B)[:B])
            assert lr.p.min() >= 0 and abs(lr.p.sum() - 1.0) <= 1e-12
            if swap:
                Q = lr.expert_matrix()
                assert np.abs(lr.p @ Q - lr.p).max() <= 1e-9

    def test_hedge_alternating_bound(self):
        T = 10_000
        L = alternating_losses(2, T)
        r = external_regret(play_full(RegretLearner(2, horizon=T), L), L)
        assert r <= 2 * math.sqrt(T * math.log(2))

    def test_doubling_restarts(self):
        lr = RegretLearner(3)
        for _ in range(9):
            lr.full_update([0.0, 1.0, 1.0])
        assert lr._epoch_len == 8  # epochs of length 1, 2, 4 then 8 starting at t=7
        assert lr.p[0] > lr.p[1]


class TestBanditUpdate:
    def test_ix_formula(self):
        assert abs(ix_estimate(0.5, 0.1, 1.0) - 1.0 / 0.6) <= 1e-15

    def test_zero_loss_unchanged_weights(self):
        lr = RegretLearner(3, Mode.BANDIT_EXTERNAL)
        lr.bandit_update(1, 0.0)
        assert np.array_equal(lr.cum_loss, np.zeros((1, 3)))
        assert np.allclose(lr.p, 1 / 3, atol=1e-15, rtol=0)

    def test_estimate_lands_on_arm(self):
        lr = RegretLearner(3, Mode.BANDIT_EXTERNAL, gamma=0.1)
        lr.bandit_update(2, 1.0)
        assert lr.cum_loss[0].tolist() == [0.0, 0.0, 1.0 / (1 / 3 + 0.1)]

    def test_errors(self):
        lr = RegretLearner(2, Mode.BANDIT_EXTERNAL)
        with pytest.raises(ValueError):
            lr.bandit_update(2, 0.5)
        with pytest.raises(ValueError):
            lr.bandit_update(0, 1.5)
        with pytest.raises(ValueError):
            RegretLearner(2).bandit_update(0, 0.5)

    @pytest.mark.parametrize("mode", [Mode.BANDIT_EXTERNAL, Mode.BANDIT_SWAP])
    def test_extreme_losses_stay_finite(self, mode):
        lr = RegretLearner(4, mode)
        g = np.random.default_rng(0)
        arms = g.integers(0, 4, size=200_000)
        for t, b in enumerate(arms):
            lr.bandit_update(int(b), float(t % 2))
        assert np.all(np.isfinite(lr.p)) and lr.p.min() >= 0 and abs(lr.p.sum() - 1) <= 1e-12

    def test_fixed_arm_regret(self):
        T, B = 10_000, 2
        bound = 2 * math.sqrt(B * T * math.log(B * T))
        hits = 0
        for seed in range(50):
            lr = RegretLearner(B, Mode.BANDIT_EXTERNAL)
            u = np.random.default_rng(seed).random(T)
            total = 0.0
            for t in range(T):
                b = lr.sample(u[t])
                total += float(b)
                lr.bandit_update(b, float(b))
            hits += total <= bound
        assert hits / 50 >= 0.95


class TestRegretMeasures:
    @given(st.integers(0, 10**6), st.integers(2, 3), st.integers(1, 20))
    def test_decomposition_matches_enumeration(self, seed, B, T):
        g = np.random.default_rng(seed)
        ps = g.dirichlet(np.ones(B), size=T)
        L = g.random((T, B))
        assert abs(swap_regret(ps, L) - ref.swap_regret_by_enumeration(ps, L)) <= 1e-12

    @pytest.mark.parametrize("seed", range(20))
    def test_decomposition_exact_b3_t20(self, seed):
        fast, brute = decomposition_check(3, 20, seed)
        assert fast == brute

    def test_constant_losses(self):
        ps = np.random.default_rng(0).dirichlet(np.ones(3), size=10)
        L = np.full((10, 3), 0.4)
        assert external_regret(ps, L) <= 1e-12 and swap_regret(ps, L) <= 1e-12

    def test_single_arm(self):
        assert external_regret(np.ones((5, 1)), np.random.default_rng(0).random((5, 1))) == 0.0

    @given(st.integers(0, 10**6))
    def test_swap_dominates_external(self, seed):
        g = np.random.default_rng(seed)
        ps = g.dirichlet(np.ones(3), size=15)
        L = g.random((15, 3))
        assert swap_regret(ps, L) >= external_regret(ps, L) - 1e-12

    def test_bounds(self):
        assert full_regret_bound(100, 2) == 2 * math.sqrt(100 * math.log(2))
        assert full_regret_bound(100, 2, swap=True) == 3 * math.sqrt(200 * math.log(2))
        assert bandit_regret_bound(100, 2, 0.1) == 2 * math.sqrt(200) * math.log(2000)
        assert bandit_regret_bound(100, 2, 0.1, swap=True) == 6 * 10 * math.log(2000)
        assert full_regret_bound(100, 1) == 0.0
        assert bandit_regret_bound(100, 1, 0.1) == 0.0
