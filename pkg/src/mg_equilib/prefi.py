"""Policy replay with full-information no-regret oracles (linear Markov games).

Two cover schedules are provided:

* ``lazy``: the episode policy is replayed until the accumulated elliptical
  information gain of some ``(h, i)`` reaches ``T_trig``; the run ends when the
  replay budget ``N`` is spent and returns the episode policy with the smallest
  optimistic-minus-pessimistic gap at ``s_1``.
* ``agile``: every episode policy joins the cover once, ``K`` episodes are
  run, and the output is a uniformly sampled episode policy.  No messages are
  exchanged between players in this schedule.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import game as gm
from . import rng
from .envs import Environment
from .oracles import Mode, RegretLearner, full_regret_bound
from .replay import (TAG_COVER, TAG_REPLAY, Episode, LearnerResult, PolicyCover, argmin_certificate, clog,
                     cover_scan, episode_gap, episode_record, fit_step, mixture_from_rounds, output_index)

MODES = ("cce", "ce")
COVERS = ("lazy", "agile")


@dataclass(frozen=True)
class EnvDims:
    horizon: int
    num_players: int
    d_max: int
    a_max: int

    @classmethod
    def of(cls, env: Environment) -> "EnvDims":
        return cls(env.game.horizon, env.game.num_players, env.features.d_max, max(env.game.action_counts))


@dataclass
class PrefiParams:
    epsilon: float
    delta: float
    lam: float
    W: float
    beta: float
    T_trig: float
    K_max: int
    T: int
    N: int
    mode: str = "cce"
    cover: str = "lazy"
    K: int = 0  # episode count of the agile schedule
    regret_const: float | None = None  # overrides the oracle module's constant in the value adjustment
    chunk: int = 256

    def __post_init__(self):
        if self.mode not in MODES or self.cover not in COVERS:
            raise ValueError(f"mode must be one of {MODES} and cover one of {COVERS}")
        for name in ("epsilon", "delta", "lam", "W", "T_trig"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.K_max < 1 or self.T < 1 or self.N < 1:
            raise ValueError("K_max, T and N must be at least 1")
        if self.cover == "agile" and self.K < 1:
            raise ValueError("the agile schedule needs K >= 1")

    @property
    def oracle_mode(self) -> Mode:
        return Mode.FULL_EXTERNAL if self.mode == "cce" else Mode.FULL_SWAP

    def to_dict(self) -> dict:
        return asdict(self)


def default_params(epsilon: float, delta: float, dims: EnvDims | Environment, *, mode: str = "cce",
                   cover: str = "lazy", T_mult: float = 1.0, N_mult: float = 1.0, **overrides) -> PrefiParams:
    """Parameters from the theory formulas with the hidden constants set to 1.

    ``T_mult`` and ``N_mult`` (and ``K_mult`` for the agile schedule) scale the
    round and budget counts.  Any field can be overridden by keyword; later
    formulas then use the overridden value.
    """
    if not (0 < epsilon < 1 and 0 < delta < 1):
        raise ValueError("epsilon and delta must lie in (0, 1)")
    ov = dict(overrides)
    if isinstance(dims, Environment):
        if dims.constraint_radius is not None:
            ov.setdefault("W", dims.constraint_radius)
        dims = EnvDims.of(dims)
    H, m, d, A = dims.horizon, dims.num_players, dims.d_max, dims.a_max
    K_mult = ov.pop("K_mult", 1.0)

    def pick(name, value):
        return ov.pop(name) if name in ov else value

    log_a = math.log(A) if A > 1 else 1.0
    T = pick("T", max(1, math.ceil(T_mult * H**4 * (A if mode == "ce" else 1) * log_a / epsilon**2)))
    N = pick("N", max(1, math.ceil(N_mult * m**2 * H**4 * d**2 / epsilon**2)))
    K = pick("K", max(1, math.ceil(K_mult * m**2 * H**4 * d**2 / epsilon**2)) if cover == "agile" else 0)
    # the agile schedule uses its episode count wherever the lazy one uses N
    budget = K if cover == "agile" else N
    lam = pick("lam", 2.0 * math.log(16 * d * m * budget * H * T / delta) / math.log(36 / 35))
    W = pick("W", H * math.sqrt(d))
    T_trig = pick("T_trig", 64.0 * math.log(8 * m * H * budget**2 / delta))
    if cover == "agile":
        K_max = pick("K_max", K)
    else:
        K_max = pick("K_max", max(1, min(math.ceil(2 * H * m * d * clog(N + lam) / math.log(1 + T_trig / 4)), N)))
    beta = pick("beta", 16 * (W + H) * math.sqrt(
        lam + d * clog(32 * W * budget * (W + H)) + 4 * clog(8 * m * K_max * H * T / delta)))
    params = PrefiParams(epsilon=epsilon, delta=delta, lam=lam, W=W, beta=beta, T_trig=T_trig, K_max=int(K_max),
                         T=int(T), N=int(N), mode=mode, cover=cover, K=int(K))
    if ov:
        params = replace(params, **ov)
    return params


class _Replay:
    """One retraining pass of the policy-replay loop against a fixed cover."""

    def __init__(self, env: Environment, params: PrefiParams, seed: int, threads: int):
        self.game = env.game
        self.phis = env.features.phi
        self.params = params
        self.seed = seed
        self.threads = max(1, int(threads))

    def _player_fit(self, k, h, t, i, cover: PolicyCover, cycle: bool, override, v_hi, v_lo):
        g, p = self.game, self.params
        count = len(cover) if cycle else cover.n_tot
        others = [j for j in range(g.num_players) if j != i]
        if count:
            batch = gm.rollouts(g, cover.packed(), rng.stream_key(self.seed, TAG_REPLAY, k, h, t, i), count, h + 1,
                                cover_weights=None if cycle else cover.weights(), cycle=cycle,
                                override=override, override_players=others)
            s, a = batch.states[:, h], batch.actions[:, h, i]
            r, s2 = batch.rewards[:, h, i], batch.states[:, h + 1]
        else:
            s = a = s2 = np.zeros(0, dtype=np.int64)
            r = np.zeros(0)
        return fit_step(self.phis[i], s, a, r, s2, v_hi[h + 1, :, i], v_lo[h + 1, :, i],
                        p.lam, p.W, p.beta, g.horizon - h)

    def run_episode(self, k: int, cover: PolicyCover, cycle: bool, pool):
        g, p = self.game, self.params
        H, S, m = g.horizon, g.num_states, g.num_players
        A = g.action_counts
        width = sum(A)
        aoff = gm._aoff(A)
        v_hi = np.zeros((H + 1, S, m))
        v_lo = np.zeros((H + 1, S, m))
        layers = [None] * H
        first_inv = [[None] * m for _ in range(H)]
        for h in reversed(range(H)):
            learners = [[RegretLearner(A[i], p.oracle_mode, horizon=p.T) for _ in range(S)] for i in range(m)]
            rounds = np.empty((S, p.T, width))
            for t in range(p.T):
                # snapshot of every player's round-t layer; all fits read it, none write it
                override = np.concatenate(
                    [np.stack([learners[i][s].p for s in range(S)]) for i in range(m)], axis=1)
                rounds[:, t, :] = override
                args = [(k, h, t, i, cover, cycle, override, v_hi, v_lo) for i in range(m)]
                if pool is not None and m > 1:
                    fits = list(pool.map(lambda a: self._player_fit(*a), args))
                else:
                    fits = [self._player_fit(*a) for a in args]
                for i, fit in enumerate(fits):
                    probs = override[:, aoff[i]:aoff[i] + A[i]]
                    w = 1.0 / (t + 1)
                    v_hi[h, :, i] = (1 - w) * v_hi[h, :, i] + w * np.einsum("sa,sa->s", probs, fit.q_hi)
                    v_lo[h, :, i] = (1 - w) * v_lo[h, :, i] + w * np.einsum("sa,sa->s", probs, fit.q_lo)
                    for s in range(S):
                        learners[i][s].full_update(1.0 - fit.q_hi[s] / H)
                    if t == 0:
                        first_inv[h][i] = fit.sigma_inv
            for i in range(m):
                bonus = H / p.T * full_regret_bound(p.T, A[i], swap=p.mode == "ce", const=p.regret_const)
                v_hi[h, :, i] = np.clip(v_hi[h, :, i] + bonus, 0.0, H - h)
                v_lo[h, :, i] = np.clip(v_lo[h, :, i], 0.0, H - h)
            layers[h] = [np.ascontiguousarray(rounds[s]) for s in range(S)]
        policy = mixture_from_rounds(A, layers)
        return policy, v_hi, v_lo, first_inv


def run_prefi(env: Environment, params: PrefiParams, seed: int, threads: int = 1) -> LearnerResult:
    """Lazy-cover policy replay; returns the certified episode policy."""
    if params.cover == "agile":
        return run_prefi_agile(env, params, seed, threads)
    env.features.check_compatible(env.game)
    g = env.game
    s1 = g.initial_state
    replay = _Replay(env, params, seed, threads)
    cover = PolicyCover()
    episodes: list[Episode] = []
    records = []
    used = 0
    stopped_by = "k_max"
    pool = ThreadPoolExecutor(replay.threads) if replay.threads > 1 else None
    try:
        for k in range(1, params.K_max + 1):
            n_prev = cover.n_tot
            policy, v_hi, v_lo, first_inv = replay.run_episode(k, cover, False, pool)
            used += g.num_players * params.T * n_prev * g.horizon
            ep = Episode(k, policy, v_hi, v_lo)
            episodes.append(ep)
            if cover.n_tot >= params.N:
                stopped_by = "budget"
                records.append(episode_record("prefi", ep, cover.n_tot, used, s1))
                break
            invs = [[first_inv[h][i] for i in range(g.num_players)] for h in range(g.horizon)]
            n_k, _ = cover_scan(g, policy, list(range(g.num_players)), env.features.phi, invs, params.T_trig,
                                params.N - cover.n_tot, rng.stream_key(seed, TAG_COVER, k), params.chunk)
            used += n_k
            ep.repeats = n_k
            cover.append(policy, n_k)
            records.append(episode_record("prefi", ep, cover.n_tot, used, s1))
    finally:
        if pool is not None:
            pool.shutdown()
    gaps = [episode_gap(e.v_hi, e.v_lo, s1) for e in episodes]
    best = argmin_certificate(gaps)
    return LearnerResult(episodes[best].policy, best + 1, gaps[best], episodes, records, used, stopped_by,
                         {"cover_counts": list(cover.counts)})


def run_prefi_agile(env: Environment, params: PrefiParams, seed: int, threads: int = 1) -> LearnerResult:
    """Agile-cover schedule: ``K`` episodes, each policy replayed once, uniform output."""
    env.features.check_compatible(env.game)
    g = env.game
    s1 = g.initial_state
    replay = _Replay(env, params, seed, threads)
    cover = PolicyCover()
    episodes: list[Episode] = []
    records = []
    used = 0
    pool = ThreadPoolExecutor(replay.threads) if replay.threads > 1 else None
    try:
        for k in range(1, params.K + 1):
            policy, v_hi, v_lo, _ = replay.run_episode(k, cover, True, pool)
            used += g.num_players * params.T * len(cover) * g.horizon
            ep = Episode(k, policy, v_hi, v_lo, repeats=1)
            episodes.append(ep)
            cover.append(policy, 1)
            records.append(episode_record("prefi-agile", ep, cover.n_tot, used, s1))
    finally:
        if pool is not None:
            pool.shutdown()
    pick = output_index(seed, len(episodes))
    chosen = episodes[pick]
    return LearnerResult(chosen.policy, pick + 1, episode_gap(chosen.v_hi, chosen.v_lo, s1), episodes, records,
                         used, "episodes")
