from __future__ import annotations

import math

import numpy as np
import pytest

from mg_equilib import game as gm
from mg_equilib.envs import linear_bandit, matching_pennies, random_game
from mg_equilib.evaluation import best_response_value, ce_gap, cce_gap, evaluate_value
from mg_equilib.prebo import PreboParams, default_prebo_params, run_prebo


class TestParams:
    def test_k_max_second_path(self):
        g = random_game(0, 3, (2, 2), 2)
        p = default_prebo_params(0.25, 0.1, g, N_max=1000)
        assert p.K_max == 374
        assert p.K_max == math.ceil(54 * np.log(1000.0))

    def test_trigger_positive(self):
        g = random_game(0, 3, (2, 2), 2)
        for delta in (1e-6, 0.1, 0.5, 0.999):
            assert default_prebo_params(0.25, delta, g).T_trig > 0

    def test_bonus_floor_and_monotone(self):
        p = default_prebo_params(0.25, 0.1, random_game(0, 3, (2, 2), 2))
        floor = math.floor(p.T_trig)
        assert p.beta(0) == p.beta(floor) == p.beta(p.T_trig)
        vals = [p.beta(n) for n in range(0, 5 * floor)]
        assert all(b <= a for a, b in zip(vals, vals[1:]))

    def test_ce_budget_scales_with_actions(self):
        g = random_game(0, 1, (2, 2), 2)
        assert default_prebo_params(0.25, 0.1, g, mode="ce").N_max == math.ceil(16 * 4 / 0.0625)
        assert default_prebo_params(0.25, 0.1, g).N_max == math.ceil(16 * 2 / 0.0625)

    def test_validation(self):
        with pytest.raises(ValueError):
            PreboParams(0.1, 0.1, 1.0, 1, 1, 1, 1, 1, mode="nash")
        with pytest.raises(ValueError):
            run_prebo(random_game(0, 2, (2,), 2), default_prebo_params(0.2, 0.1, random_game(0, 3, (2,), 2)), 0)


class TestExamples:
    def test_pennies(self):
        g = matching_pennies()
        p = default_prebo_params(0.2, 0.1, g, N_mult=4)
        assert cce_gap(g, run_prebo(g, p, 0).policy).max <= 0.2

    def test_two_armed_bandit(self):
        g = linear_bandit([0.9, 0.1])
        p = default_prebo_params(0.2, 0.1, g, N_mult=4)
        subs = [0.9 - evaluate_value(g, run_prebo(g, p, seed).policy)[0, 0, 0] for seed in range(20)]
        assert np.mean(np.array(subs) <= 0.2) >= 0.9

    def test_ce_soundness(self):
        g = random_game(5, 2, (2, 2), 2)
        p = default_prebo_params(0.2, 0.1, g, mode="ce")
        ok = 0
        for seed in range(10):
            r = run_prebo(g, p, seed)
            ok += ce_gap(g, r.policy).max <= r.certified_bound + 0.05
        assert ok / 10 >= 0.9

    def test_certified_exit(self):
        # a single-arm game certifies once the bonus falls under epsilon
        g = linear_bandit([0.5])
        p = default_prebo_params(0.2, 0.1, g, N_mult=4, beta_scale=0.01)
        r = run_prebo(g, p, 0)
        assert r.stopped_by == "certified" and r.certified_bound <= 0.2
        assert r.output_episode == len(r.episodes)


class TestProperties:
    @pytest.mark.parametrize("mode", ["cce", "ce"])
    def test_optimism_pessimism(self, mode):
        opt = pes = total = 0
        for seed in range(5):
            g = random_game(100 + seed, 2, (2, 2), 2)
            r = run_prebo(g, default_prebo_params(0.25, 0.1, g, mode=mode), seed)
            for ep in r.episodes:
                V = evaluate_value(g, ep.policy)[0, 0]
                for i in range(2):
                    opt += best_response_value(g, ep.policy, i).values[0, 0] <= ep.v_hi[0, 0, i] + 1e-6
                    pes += ep.v_lo[0, 0, i] <= V[i] + 1e-6
                    total += 1
        assert opt / total >= 0.9 and pes / total >= 0.9

    def test_value_ranges(self):
        g = random_game(3, 3, (2, 2), 2)
        r = run_prebo(g, default_prebo_params(0.25, 0.1, g), 0)
        caps = (g.horizon - np.arange(g.horizon + 1))[:, None, None]
        for ep in r.episodes:
            assert np.all(ep.v_lo >= 0) and np.all(ep.v_hi <= caps) and np.all(ep.v_lo <= ep.v_hi)

    def test_accounting(self):
        g = random_game(4, 3, (2, 2), 2)
        p = default_prebo_params(0.25, 0.1, g)
        before = gm.trajectory_count()
        r = run_prebo(g, p, 1)
        assert gm.trajectory_count() - before == r.trajectories
        assert r.trajectories <= p.N_max * p.K_max * p.horizon
        assert len(r.episodes) <= p.K_max
        assert sum(r.extra["cover_counts"]) <= p.N_max

    def test_reproducible(self):
        g = random_game(4, 3, (2, 2), 2)
        p = default_prebo_params(0.25, 0.1, g)
        a, b = run_prebo(g, p, 2), run_prebo(g, p, 2)
        assert a.records == b.records
        assert a.policy.to_dict() == b.policy.to_dict()

    def test_policy_is_total(self):
        g = random_game(7, 3, (2, 2), 2)
        r = run_prebo(g, default_prebo_params(0.25, 0.1, g), 0)
        for h in range(g.horizon):
            for s in range(g.num_states):
                assert abs(r.policy.joint(h, s).sum() - 1.0) <= 1e-12
