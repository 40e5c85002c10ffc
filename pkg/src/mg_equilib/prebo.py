"""Policy replay with adversarial-bandit oracles for tabular Markov games.

Each episode retrains the policy backward in ``h``: replayed prefixes from the
cover reach step ``h``, where every player acts with the bandit instance of the
visited state and feeds it ``1 - (r + Vbar_{h+1}(s')) / H``.  The episode
policy at ``(h, s)`` is the mixture of the product layers that were in force at
the visits of ``s``.  The cover grows whenever some state's replay visit count
is matched (doubling), so episodes stay few.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import game as gm
from . import rng
from .oracles import Mode, RegretLearner, bandit_regret_bound
from .replay import (TAG_COVER, TAG_REPLAY, Episode, LearnerResult, PolicyCover, argmin_certificate, episode_gap,
                     episode_record)

MODES = ("cce", "ce")
TAG_STEP = 21


@dataclass
class PreboParams:
    epsilon: float
    delta: float
    T_trig: float
    K_max: int
    N_max: int
    num_players: int
    num_states: int
    horizon: int
    mode: str = "cce"
    beta_scale: float = 1.0
    regret_const: float | None = None
    chunk: int = 256

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not (self.epsilon > 0 and self.delta > 0 and self.T_trig > 0 and self.beta_scale >= 0):
            raise ValueError("epsilon, delta and T_trig must be positive")
        if self.K_max < 1 or self.N_max < 1:
            raise ValueError("K_max and N_max must be at least 1")

    @property
    def oracle_mode(self) -> Mode:
        return Mode.BANDIT_EXTERNAL if self.mode == "cce" else Mode.BANDIT_SWAP

    def beta(self, n: int) -> float:
        """``sqrt(8 H^2 T_trig ln(2 m K_max H S / delta) / max(n, T_trig))``, nonincreasing in ``n``."""
        H, m, S = self.horizon, self.num_players, self.num_states
        log_term = math.log(2 * m * self.K_max * H * S / self.delta)
        return self.beta_scale * math.sqrt(8 * H**2 * self.T_trig * log_term / max(n, self.T_trig))

    def to_dict(self) -> dict:
        return asdict(self)


def default_prebo_params(epsilon: float, delta: float, game: gm.TabularMarkovGame, mode: str = "cce",
                         N_mult: float = 1.0, **overrides) -> PreboParams:
    """Parameters from the theory formulas with the hidden constant of ``N_max`` set to ``N_mult``."""
    if not (0 < epsilon < 1 and 0 < delta < 1):
        raise ValueError("epsilon and delta must lie in (0, 1)")
    H, S, m, A = game.horizon, game.num_states, game.num_players, max(game.action_counts)
    ov = dict(overrides)

    def pick(name, value):
        return ov.pop(name) if name in ov else value

    N_max = pick("N_max", max(1, math.ceil(N_mult * H**4 * S * (A * A if mode == "ce" else A) / epsilon**2)))
    K_max = pick("K_max", max(1, math.ceil(9 * H * S * math.log(max(N_max, 2)))))
    T_trig = pick("T_trig", 12 * math.log(8 * K_max * H * S / delta))
    params = PreboParams(epsilon=epsilon, delta=delta, T_trig=T_trig, K_max=int(K_max), N_max=int(N_max),
                         num_players=m, num_states=S, horizon=H, mode=mode)
    if ov:
        params = replace(params, **ov)
    return params


def _categorical(row: np.ndarray, u: float) -> int:
    return rng.categorical(row, u)


def _retrain(game: gm.TabularMarkovGame, params: PreboParams, cover: PolicyCover, k: int, seed: int):
    """One backward pass; returns the episode policy, value tables and visit counts."""
    H, S, m = game.horizon, game.num_states, game.num_players
    A = game.action_counts
    aoff = gm._aoff(A)
    width = sum(A)
    bern = game.noise == "bernoulli"
    strides = np.array([int(np.prod(A[i + 1:])) for i in range(m)], dtype=np.int64)
    v_hi = np.zeros((H + 1, S, m))
    v_lo = np.zeros((H + 1, S, m))
    visits = np.zeros((H, S), dtype=np.int64)
    weights, factors = [None] * H, [None] * H
    n = cover.n_tot
    uniform_layer = np.concatenate([np.full(a, 1.0 / a) for a in A])
    for h in reversed(range(H)):
        learners: dict[tuple[int, int], RegretLearner] = {}
        layers: list[list[np.ndarray]] = [[] for _ in range(S)]
        if n:
            prefix = gm.rollouts(game, cover.packed(), rng.stream_key(seed, TAG_REPLAY, k, h), n, h,
                                 cover_weights=cover.weights())
            start_states = prefix.states[:, h]
        else:
            start_states = np.zeros(0, dtype=np.int64)
        step_key = rng.stream_key(seed, TAG_STEP, k, h)
        cap = H - h
        for t in range(n):
            s = int(start_states[t])
            state = rng.rollout_state(step_key, t)
            draw = 0
            layer = np.empty(width)
            acts = []
            for i in range(m):
                lr = learners.get((i, s))
                if lr is None:
                    lr = learners[(i, s)] = RegretLearner(A[i], params.oracle_mode)
                layer[aoff[i]:aoff[i] + A[i]] = lr.p
                acts.append(lr.sample(rng.uniform(state, draw)))
                draw += 1
            layers[s].append(layer)
            j = int(np.dot(acts, strides))
            mean = game.mean_reward[h, s, j]
            if bern:
                r = np.empty(m)
                for i in range(m):
                    r[i] = 1.0 if rng.uniform(state, draw) < mean[i] else 0.0
                    draw += 1
            else:
                r = mean
            s2 = _categorical(game.transition[h, s, j], rng.uniform(state, draw))
            visits[h, s] += 1
            c = visits[h, s]
            for i in range(m):
                target_hi = r[i] + v_hi[h + 1, s2, i]
                learners[(i, s)].bandit_update(acts[i], min(max(1.0 - target_hi / H, 0.0), 1.0))
                v_hi[h, s, i] += (target_hi - v_hi[h, s, i]) / c
                v_lo[h, s, i] += (r[i] + v_lo[h + 1, s2, i] - v_lo[h, s, i]) / c
        for s in range(S):
            c = int(visits[h, s])
            if c == 0:
                # no data: full optimism, full pessimism
                v_hi[h, s] = cap
                v_lo[h, s] = 0.0
                continue
            b = params.beta(c)
            for i in range(m):
                adj = H / c * bandit_regret_bound(c, A[i], params.delta, swap=params.mode == "ce",
                                                  const=params.regret_const)
                v_hi[h, s, i] = min(max(v_hi[h, s, i] + adj + b, 0.0), cap)
                v_lo[h, s, i] = min(max(v_lo[h, s, i] - b, 0.0), cap)
        weights[h] = [np.full(max(len(L), 1), 1.0 / max(len(L), 1)) for L in layers]
        factors[h] = [np.stack(L) if L else uniform_layer[None, :].copy() for L in layers]
    policy = gm.MixtureMarkovPolicy(A, weights, factors, validate=False)
    return policy, v_hi, v_lo, visits


def _cover_phase(game: gm.TabularMarkovGame, policy: gm.MixtureMarkovPolicy, visits: np.ndarray, trigger: float,
                 remaining: int, key: int, chunk: int) -> int:
    """Roll ``policy`` until some visited ``T_h(s_h) >= max(n_h(s_h), trigger)`` or the budget runs out."""
    H, S = game.horizon, game.num_states
    thresh = np.maximum(visits, trigger)
    totals = np.zeros((H, S))
    used = 0
    packed = policy.pack()
    hs = np.arange(H)
    while used < remaining:
        n = min(chunk, remaining - used)
        batch = gm.rollouts(game, packed, key, n, H, start=used, account=False)
        incr = np.zeros((n, H, S))
        incr[np.arange(n)[:, None], hs[None, :], batch.states[:, :H]] = 1.0
        running = totals + np.cumsum(incr, axis=0)
        # a counter can only cross its threshold on the rollout that increments it
        hit = np.flatnonzero((running >= thresh).any(axis=(1, 2)))
        take = int(hit[0]) + 1 if hit.size else n
        totals = running[take - 1]
        used += take
        if hit.size:
            break
    gm.record_trajectories(used)
    return used


def run_prebo(game: gm.TabularMarkovGame, params: PreboParams, seed: int) -> LearnerResult:
    """Run until the optimistic/pessimistic gap at ``s_1`` is at most ``epsilon`` or ``N_max`` is spent.

    Budget exhaustion returns the episode with the smallest certified gap and
    ``stopped_by = "budget"``.
    """
    if (params.horizon, params.num_states, params.num_players) != (game.horizon, game.num_states, game.num_players):
        raise ValueError("parameters were built for a different game shape")
    s1 = game.initial_state
    cover = PolicyCover()
    episodes: list[Episode] = []
    records = []
    used = 0
    stopped_by = "k_max"
    for k in range(1, params.K_max + 1):
        policy, v_hi, v_lo, visits = _retrain(game, params, cover, k, seed)
        used += game.horizon * cover.n_tot
        ep = Episode(k, policy, v_hi, v_lo)
        episodes.append(ep)
        if episode_gap(v_hi, v_lo, s1) <= params.epsilon:
            stopped_by = "certified"
            records.append(episode_record("prebo", ep, cover.n_tot, used, s1))
            break
        if cover.n_tot >= params.N_max:
            stopped_by = "budget"
            records.append(episode_record("prebo", ep, cover.n_tot, used, s1))
            break
        n_k = _cover_phase(game, policy, visits, params.T_trig, params.N_max - cover.n_tot,
                           rng.stream_key(seed, TAG_COVER, k), params.chunk)
        used += n_k
        ep.repeats = n_k
        cover.append(policy, n_k)
        records.append(episode_record("prebo", ep, cover.n_tot, used, s1))
    assert len(episodes) <= params.K_max
    gaps = [episode_gap(e.v_hi, e.v_lo, s1) for e in episodes]
    best = len(episodes) - 1 if stopped_by == "certified" else argmin_certificate(gaps)
    return LearnerResult(episodes[best].policy, best + 1, gaps[best], episodes, records, used, stopped_by,
                         {"cover_counts": list(cover.counts)})
