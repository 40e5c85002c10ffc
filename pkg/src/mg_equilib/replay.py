"""Building blocks shared by the policy-replay learners.

A policy cover is an ordered list of ``(policy, n)`` pairs; replaying it means
drawing a member with probability proportional to ``n`` and following it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import game as gm
from . import rng
from .regression import fit_from_moments

# stream tags keep the random draws of different phases disjoint
TAG_REPLAY = 11
TAG_COVER = 12
TAG_OUTPUT = 13
TAG_MC = 14
TAG_SOLVER = 15


@dataclass
class PolicyCover:
    policies: list = field(default_factory=list)
    counts: list = field(default_factory=list)
    _packed: gm.PackedPolicies | None = None

    def __len__(self) -> int:
        return len(self.policies)

    @property
    def n_tot(self) -> int:
        return int(sum(self.counts))

    def append(self, policy: gm.MixtureMarkovPolicy, n: int) -> None:
        if n < 1:
            raise ValueError("cover members need a positive repeat count")
        self.policies.append(policy)
        self.counts.append(int(n))
        self._packed = None

    def packed(self) -> gm.PackedPolicies:
        if self._packed is None:
            self._packed = gm.pack_policies(self.policies)
        return self._packed

    def weights(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.float64)


@dataclass
class StepFit:
    """Optimistic and pessimistic Q tables of one player at one step."""

    q_hi: np.ndarray  # (S, A_i)
    q_lo: np.ndarray  # (S, A_i)
    sigma_inv: np.ndarray  # (d, d)
    samples: int


@dataclass
class Episode:
    index: int  # 1-based episode number
    policy: gm.MixtureMarkovPolicy
    v_hi: np.ndarray  # (H + 1, S, m)
    v_lo: np.ndarray
    repeats: int = 0  # n^k


@dataclass
class LearnerResult:
    policy: gm.MixtureMarkovPolicy
    output_episode: int  # 1-based
    certified_bound: float
    episodes: list
    records: list
    trajectories: int
    stopped_by: str
    extra: dict = field(default_factory=dict)


def episode_gap(v_hi: np.ndarray, v_lo: np.ndarray, s1: int) -> float:
    return float(np.max(v_hi[0, s1] - v_lo[0, s1]))


def episode_record(algorithm: str, ep: Episode, n_tot: int, trajectories: int, s1: int) -> dict:
    """Per-episode diagnostic row (wall time is kept out so the stream is reproducible)."""
    return {
        "algorithm": algorithm,
        "episode": ep.index,
        "n_k": ep.repeats,
        "n_tot": n_tot,
        "v_hi": ep.v_hi[0, s1].tolist(),
        "v_lo": ep.v_lo[0, s1].tolist(),
        "gap_estimate": episode_gap(ep.v_hi, ep.v_lo, s1),
        "trajectories": trajectories,
    }


def fit_step(phi: np.ndarray, states: np.ndarray, actions: np.ndarray, rewards: np.ndarray,
             next_states: np.ndarray, v_hi_next: np.ndarray, v_lo_next: np.ndarray,
             lam: float, radius: float, beta: float, cap: float) -> StepFit:
    """Regress ``r + V(s')`` on ``phi(s, a)`` under the norm ball and add/subtract the bonus.

    ``phi`` is the ``(S, A_i, d)`` feature tensor and ``cap = H + 1 - h``.
    """
    S, A, d = phi.shape
    X = phi[states, actions]
    gram = X.T @ X
    sigma = lam * np.eye(d) + gram
    inv = np.linalg.inv(sigma)
    inv = 0.5 * (inv + inv.T)
    th_hi = fit_from_moments(gram, X.T @ (rewards + v_hi_next[next_states]), radius).theta
    th_lo = fit_from_moments(gram, X.T @ (rewards + v_lo_next[next_states]), radius).theta
    flat = phi.reshape(S * A, d)
    bon = np.sqrt(np.maximum(np.einsum("nd,de,ne->n", flat, inv, flat), 0.0))
    q_hi = np.clip(flat @ th_hi + beta * bon, 0.0, cap).reshape(S, A)
    q_lo = np.clip(flat @ th_lo - beta * bon, 0.0, cap).reshape(S, A)
    return StepFit(q_hi, q_lo, inv, X.shape[0])


def cover_scan(game: gm.TabularMarkovGame, policy: gm.MixtureMarkovPolicy, players, phis, invs,
               trigger: float, remaining: int, key: int, chunk: int = 256) -> tuple[int, np.ndarray]:
    """Roll ``policy`` until some ``T_{h,i} = sum ||phi_i||^2_{Sigma^-1} >= trigger`` or ``remaining`` runs out.

    ``invs[h][j]`` is the inverse covariance of ``players[j]`` at step ``h``.
    Returns the number of rollouts consumed and the final counters ``(H, len(players))``.
    Rollouts are drawn in chunks but only consumed ones are counted.
    """
    H = game.horizon
    totals = np.zeros((H, len(players)))
    used = 0
    packed = policy.pack()
    while used < remaining:
        n = min(chunk, remaining - used)
        batch = gm.rollouts(game, packed, key, n, H, start=used, account=False)
        incr = np.empty((n, H, len(players)))
        for h in range(H):
            s = batch.states[:, h]
            for j, i in enumerate(players):
                x = phis[j][s, batch.actions[:, h, i]]
                incr[:, h, j] = np.einsum("nd,de,ne->n", x, invs[h][j], x)
        running = totals + np.cumsum(incr, axis=0)
        hit = np.flatnonzero((running >= trigger).any(axis=(1, 2)))
        take = int(hit[0]) + 1 if hit.size else n
        totals = running[take - 1]
        used += take
        if hit.size:
            break
    gm.record_trajectories(used)
    return used, totals


def mixture_from_rounds(action_counts, layers) -> gm.MixtureMarkovPolicy:
    """Uniform mixture over rounds: ``layers[h][s]`` is a ``(T, sum A_i)`` factor matrix."""
    weights = [[np.full(f.shape[0], 1.0 / f.shape[0]) for f in row] for row in layers]
    return gm.MixtureMarkovPolicy(action_counts, weights, layers, validate=False)


def argmin_certificate(gaps) -> int:
    """Index of the smallest certified gap; ties go to the latest episode (it saw the most data)."""
    g = np.asarray(gaps)
    return int(np.flatnonzero(g == g.min())[-1])


def clog(x: float) -> float:
    return math.log(max(x, 1.0 + 1e-12))


def output_index(seed: int, count: int) -> int:
    """Uniform draw from ``range(count)`` on the output stream of ``seed``."""
    u = rng.Stream(rng.stream_key(seed, TAG_OUTPUT)).next()
    return min(int(u * count), count - 1)
