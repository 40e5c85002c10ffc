"""Nash coordinate ascent for linear Markov potential games.

Each outer episode freezes the opponents, asks every player's linear-MDP
solver for an improved pure policy, and switches the single player with the
largest estimated improvement if it exceeds ``epsilon / 2``.  The solver is the
single-agent form of policy replay: greedy in the optimistic ``Q``, with a
pessimistic estimate evaluated at the greedy action and a lazy cover.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import game as gm
from . import rng
from .envs import Environment, rosenthal_potential
from .evaluation import evaluate_value
from .replay import (TAG_COVER, TAG_MC, TAG_REPLAY, TAG_SOLVER, PolicyCover, argmin_certificate, clog, cover_scan,
                     fit_step)


# -- induced single-agent view ----------------------------------------------

@dataclass
class InducedMdp:
    """Player ``player``'s MDP when the others follow ``policy`` (their joint marginal)."""

    game: gm.TabularMarkovGame
    policy: gm.MixtureMarkovPolicy
    player: int
    transition: np.ndarray = field(init=False)  # (H, S, A_i, S)
    reward: np.ndarray = field(init=False)  # (H, S, A_i)

    def __post_init__(self):
        g, i = self.game, self.player
        self.policy.check_compatible(g)
        H, S, A = g.horizon, g.num_states, g.action_counts
        P = np.zeros((H, S, A[i], S))
        R = np.zeros((H, S, A[i]))
        for h in range(H):
            for s in range(S):
                joint = self.policy.joint(h, s).reshape(A)
                opp = np.moveaxis(joint, i, 0).sum(axis=0).reshape(-1)  # pi_{-i}(a_{-i} | s)
                Ps = np.moveaxis(g.transition[h, s].reshape(*A, S), i, 0).reshape(A[i], -1, S)
                Rs = np.moveaxis(g.mean_reward[h, s, :, i].reshape(A), i, 0).reshape(A[i], -1)
                P[h, s] = np.einsum("ajt,j->at", Ps, opp)
                R[h, s] = Rs @ opp
        self.transition = P
        self.reward = R

    def as_game(self) -> gm.TabularMarkovGame:
        return gm.TabularMarkovGame(self.transition, self.reward[..., None], (self.game.action_counts[self.player],),
                                    noise=self.game.noise, initial_state=self.game.initial_state)

    def value(self, actions: np.ndarray) -> np.ndarray:
        """Exact ``(H + 1, S)`` value of a deterministic ``(H, S)`` action table."""
        H, S = actions.shape
        V = np.zeros((H + 1, S))
        idx = np.arange(S)
        for h in reversed(range(H)):
            a = actions[h]
            V[h] = self.reward[h, idx, a] + self.transition[h, idx, a] @ V[h + 1]
        return V

    def optimal_value(self) -> tuple[np.ndarray, np.ndarray]:
        H, S = self.reward.shape[:2]
        V = np.zeros((H + 1, S))
        act = np.zeros((H, S), dtype=np.int64)
        for h in reversed(range(H)):
            Q = self.reward[h] + self.transition[h] @ V[h + 1]
            act[h] = np.argmax(Q, axis=1)
            V[h] = Q.max(axis=1)
        return V, act


# -- linear MDP solver --------------------------------------------------------

@dataclass
class SolverParams:
    epsilon: float
    delta: float
    lam: float
    W: float
    beta: float
    T_trig: float
    K_max: int
    N: int
    stop_on_certificate: bool = False
    chunk: int = 256

    def __post_init__(self):
        for name in ("epsilon", "delta", "lam", "W", "T_trig"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.beta < 0 or self.K_max < 1 or self.N < 1:
            raise ValueError("need beta >= 0, K_max >= 1 and N >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def default_solver_params(epsilon: float, delta: float, horizon: int, dim: int, N_mult: float = 1.0,
                          **overrides) -> SolverParams:
    """Single-agent parameter set; later formulas use any overridden earlier value."""
    H, d = horizon, dim
    ov = dict(overrides)

    def pick(name, value):
        return ov.pop(name) if name in ov else value

    N = pick("N", max(1, math.ceil(N_mult * H**4 * d**2 / epsilon**2)))
    lam = pick("lam", 2 * math.log(16 * d * N * H / delta) / math.log(36 / 35))
    W = pick("W", H * math.sqrt(d))
    T_trig = pick("T_trig", 64 * math.log(8 * H * N**2 / delta))
    K_max = pick("K_max", max(1, min(math.ceil(2 * H * d * clog(N + lam) / math.log(1 + T_trig / 4)), N)))
    beta = pick("beta", 16 * (W + H) * math.sqrt(lam + d * clog(32 * W * (W + H)) + 4 * clog(8 * K_max * H / delta)))
    params = SolverParams(epsilon=epsilon, delta=delta, lam=lam, W=W, beta=beta, T_trig=T_trig, K_max=int(K_max),
                          N=int(N))
    if ov:
        params = replace(params, **ov)
    return params


@dataclass
class SolverResult:
    actions: np.ndarray  # (H, S) greedy action table of the output episode
    certified_gap: float
    output_episode: int
    episodes: int
    trajectories: int
    gaps: list


def solve_linear_mdp(game: gm.TabularMarkovGame, phi: np.ndarray, player: int, opponents: gm.MixtureMarkovPolicy,
                     params: SolverParams, seed: int) -> SolverResult:
    """Policy-replay solver for player ``player`` while the others follow ``opponents``.

    ``phi`` is the player's ``(S, A_i, d)`` feature tensor.  Samples come from
    the full game; the player's own factor of ``opponents`` is ignored.
    """
    H, S = game.horizon, game.num_states
    A = game.action_counts[player]
    if phi.shape[:2] != (S, A):
        raise ValueError(f"feature tensor {phi.shape} does not match (S, A_i) = {(S, A)}")
    opponents.check_compatible(game)
    s1 = game.initial_state
    cover = PolicyCover()
    tables, gaps = [], []
    used = 0
    for k in range(1, params.K_max + 1):
        v_hi = np.zeros((H + 1, S))
        v_lo = np.zeros((H + 1, S))
        greedy = np.zeros((H, S), dtype=np.int64)
        invs = [None] * H
        n = cover.n_tot
        for h in reversed(range(H)):
            if n:
                batch = gm.rollouts(game, cover.packed(), rng.stream_key(seed, TAG_REPLAY, k, h), n, h + 1,
                                    cover_weights=cover.weights())
                s, a = batch.states[:, h], batch.actions[:, h, player]
                r, s2 = batch.rewards[:, h, player], batch.states[:, h + 1]
                used += n
            else:
                s = a = s2 = np.zeros(0, dtype=np.int64)
                r = np.zeros(0)
            fit = fit_step(phi, s, a, r, s2, v_hi[h + 1], v_lo[h + 1], params.lam, params.W, params.beta, H - h)
            greedy[h] = np.argmax(fit.q_hi, axis=1)
            v_hi[h] = fit.q_hi.max(axis=1)
            v_lo[h] = fit.q_lo[np.arange(S), greedy[h]]
            invs[h] = [fit.sigma_inv]
        tables.append(greedy)
        gaps.append(float(v_hi[0, s1] - v_lo[0, s1]))
        if n >= params.N or (params.stop_on_certificate and gaps[-1] <= params.epsilon):
            break
        policy = opponents.with_player(player, greedy)
        n_k, _ = cover_scan(game, policy, [player], [phi], invs, params.T_trig, params.N - n,
                            rng.stream_key(seed, TAG_COVER, k), params.chunk)
        used += n_k
        cover.append(policy, n_k)
    best = argmin_certificate(gaps)
    return SolverResult(tables[best], gaps[best], best + 1, len(tables), used, gaps)


# -- Monte-Carlo evaluation --------------------------------------------------

def estimate_values_mc(game: gm.TabularMarkovGame, policy: gm.MixtureMarkovPolicy, episodes: int,
                       seed: int) -> np.ndarray:
    """Per-player mean total reward over ``episodes`` full rollouts."""
    if episodes < 1:
        raise ValueError("need at least one episode")
    batch = gm.rollouts(game, policy.pack(), rng.stream_key(seed, TAG_MC), episodes, game.horizon)
    return batch.rewards.sum(axis=1).mean(axis=0)


def estimate_value_mc(game: gm.TabularMarkovGame, policy: gm.MixtureMarkovPolicy, player: int, episodes: int,
                      seed: int) -> float:
    return float(estimate_values_mc(game, policy, episodes, seed)[player])


# -- coordinate ascent ---------------------------------------------------------

@dataclass
class NashCaParams:
    epsilon: float
    delta: float
    K: int
    mc_episodes: int
    solver_N_mult: float = 1.0
    solver_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.epsilon > 0 and self.delta > 0) or self.K < 1 or self.mc_episodes < 1:
            raise ValueError("need epsilon, delta > 0, K >= 1 and mc_episodes >= 1")

    def solver_params(self, horizon: int, dim: int, num_players: int) -> SolverParams:
        return default_solver_params(self.epsilon / 8, self.delta / (2 * num_players * self.K), horizon, dim,
                                     N_mult=self.solver_N_mult, **self.solver_overrides)

    def to_dict(self) -> dict:
        return asdict(self)


def default_nash_params(epsilon: float, delta: float, horizon: int, num_players: int, mc_mult: float = 1.0,
                        solver_N_mult: float = 1.0, **solver_overrides) -> NashCaParams:
    """``K = ceil(5 m H / eps)``; Monte-Carlo budget ``ceil(2 H^2 ln(4 m K / delta) / eps^2)``."""
    if not (0 < epsilon < 1 and 0 < delta < 1):
        raise ValueError("epsilon and delta must lie in (0, 1)")
    H, m = horizon, num_players
    K = math.ceil(5 * m * H / epsilon)
    mc = max(1, math.ceil(mc_mult * 2 * H**2 * math.log(4 * m * K / delta) / epsilon**2))
    return NashCaParams(epsilon, delta, K, mc, solver_N_mult, dict(solver_overrides))


@dataclass
class NashResult:
    actions: np.ndarray  # (H, S, m) pure profile
    policy: gm.MixtureMarkovPolicy
    certified: bool
    episodes: int
    records: list
    trajectories: int
    potentials: list


def _potential(env: Environment, actions: np.ndarray) -> float | None:
    g = env.game
    if env.congestion is not None:
        return rosenthal_potential(env.congestion, actions[0, g.initial_state])
    if env.potential and g.num_players > 1 and np.allclose(g.mean_reward, g.mean_reward[..., :1]):
        # identical-interest game: the shared value is an exact potential
        pol = gm.MixtureMarkovPolicy.deterministic(actions, g.action_counts)
        return float(evaluate_value(g, pol)[0, g.initial_state, 0])
    return None


def run_nash_ca(env: Environment, params: NashCaParams, seed: int, threads: int = 1) -> NashResult:
    """Coordinate ascent from the all-zeros pure profile."""
    if not env.potential:
        raise ValueError("Nash coordinate ascent needs an environment declared as a potential game")
    g = env.game
    H, S, m = g.horizon, g.num_states, g.num_players
    solver = [params.solver_params(H, env.features.dims[i], m) for i in range(m)]
    if env.constraint_radius is not None and "W" not in params.solver_overrides:
        solver = [replace(sp, W=env.constraint_radius) for sp in solver]
    actions = np.zeros((H, S, m), dtype=np.int64)
    records, potentials = [], []
    used = 0
    certified = False
    pool = ThreadPoolExecutor(threads) if threads > 1 and m > 1 else None

    def improve(k: int, i: int, policy: gm.MixtureMarkovPolicy):
        sol = solve_linear_mdp(g, env.features.phi[i], i, policy, solver[i], rng.stream_key(seed, TAG_SOLVER, k, i))
        cand = actions.copy()
        cand[:, :, i] = sol.actions
        cand_pol = gm.MixtureMarkovPolicy.deterministic(cand, g.action_counts)
        v = estimate_value_mc(g, cand_pol, i, params.mc_episodes, rng.stream_key(seed, TAG_MC, k, i + 1))
        return sol, cand, v

    try:
        k = 0
        for k in range(1, params.K + 1):
            policy = gm.MixtureMarkovPolicy.deterministic(actions, g.action_counts)
            base = estimate_values_mc(g, policy, params.mc_episodes, rng.stream_key(seed, TAG_MC, k, 0))
            used += params.mc_episodes
            if pool is not None:
                outs = list(pool.map(lambda i: improve(k, i, policy), range(m)))
            else:
                outs = [improve(k, i, policy) for i in range(m)]
            deltas = np.array([v - base[i] for i, (_, _, v) in enumerate(outs)])
            used += sum(sol.trajectories for sol, _, _ in outs) + m * params.mc_episodes
            pot = _potential(env, actions)
            potentials.append(pot)
            j = int(np.argmax(deltas))
            switch = bool(deltas[j] > params.epsilon / 2)
            records.append({
                "algorithm": "nash-ca",
                "episode": k,
                "profile": actions[0, g.initial_state].tolist(),
                "actions": actions.tolist(),
                "value_estimate": base.tolist(),
                "deltas": deltas.tolist(),
                "solver_gaps": [sol.certified_gap for sol, _, _ in outs],
                "potential": pot,
                "switch": j if switch else None,
                "trajectories": used,
            })
            if not switch:
                certified = True
                break
            actions = outs[j][1]
        else:
            potentials.append(_potential(env, actions))
    finally:
        if pool is not None:
            pool.shutdown()
    assert k <= params.K
    policy = gm.MixtureMarkovPolicy.deterministic(actions, g.action_counts)
    return NashResult(actions, policy, certified, k, records, used, potentials)
