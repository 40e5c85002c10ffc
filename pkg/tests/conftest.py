from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from mg_equilib.envs import Environment, random_game, tabular_features
from mg_equilib.game import MixtureMarkovPolicy, TabularMarkovGame

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# Desk-scale overrides for the linear learners: the theory constants clip every
# optimistic value to the cap.  beta / sqrt(lam) >= 1.5 keeps the empty-cover first
# episode optimistic on horizon-2 instances.
DESK_LINEAR = {"lam": 1.0, "beta": 1.5, "T_trig": 4.0}


def tabular_env(game: TabularMarkovGame, potential: bool = False) -> Environment:
    return Environment(game, tabular_features(game), potential=potential)


def clear_gap_env() -> Environment:
    """Two states, two actions, horizon 2; action 0 pays 0.9 and action 1 pays 0.1 everywhere."""
    P = np.full((2, 2, 2, 2), 0.5)
    R = np.zeros((2, 2, 2, 1))
    R[:, :, 0, 0] = 0.9
    R[:, :, 1, 0] = 0.1
    return tabular_env(TabularMarkovGame(P, R, (2,)))


def dominant_cooperative_env() -> Environment:
    """Shared reward (a_1 + a_2) / 2: the joint action (1, 1) pays 1, (0, 0) pays 0."""
    R = np.array([0.0, 0.5, 0.5, 1.0]).reshape(1, 1, 4, 1).repeat(2, axis=-1)
    return tabular_env(TabularMarkovGame(np.ones((1, 1, 4, 1)), R, (2, 2)), potential=True)


def random_mixture(game, seed: int, components: int = 3) -> MixtureMarkovPolicy:
    """Random correlated policy: ``components`` random product layers per (h, s)."""
    g = np.random.default_rng(seed)
    H, S = game.horizon, game.num_states
    weights = [[g.dirichlet(np.ones(components)) for _ in range(S)] for _ in range(H)]
    factors = [[np.concatenate([g.dirichlet(np.ones(a), size=components) for a in game.action_counts], axis=1)
                for _ in range(S)] for _ in range(H)]
    for row in weights:
        for w in row:
            w /= w.sum()
    return MixtureMarkovPolicy(game.action_counts, weights, factors)


@st.composite
def small_games(draw, max_states=3, max_actions=2, max_horizon=2, players=(1, 2)):
    seed = draw(st.integers(0, 10**6))
    S = draw(st.integers(1, max_states))
    H = draw(st.integers(1, max_horizon))
    m = draw(st.sampled_from(players))
    counts = [draw(st.integers(1, max_actions)) for _ in range(m)]
    kind = "general"
    return random_game(seed, S, counts, H, kind=kind)


@st.composite
def game_and_policy(draw, **kw):
    game = draw(small_games(**kw))
    seed = draw(st.integers(0, 10**6))
    comps = draw(st.integers(1, 3))
    return game, random_mixture(game, seed, comps)


@pytest.fixture
def pennies():
    from mg_equilib.envs import matching_pennies
    return matching_pennies()
