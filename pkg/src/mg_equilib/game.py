"""Finite-horizon Markov games, Markov joint policies and trajectory sampling.

Conventions used throughout the package: steps are 0-based (``h = 0`` is the
first step), joint actions are flattened in C order with the last player
varying fastest, and value tables have shape ``(H + 1, S, m)`` with the
terminal row identically zero.

Only a fixed initial state is modelled.  A random initial state can be reduced
to this case by prepending a dummy state whose transition, independent of the
joint action, is the initial distribution (and whose rewards are zero).
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels, rng

NOISE_MODES = ("bernoulli", "deterministic")

# stream ids for the counter-based RNG; one per sampling entry point
STREAM_SAMPLE = 1
STREAM_CONCAT = 2

_counter_lock = threading.Lock()
_trajectory_count = 0


def trajectory_count() -> int:
    """Total rollouts drawn through :func:`rollouts` in this process."""
    return _trajectory_count


def record_trajectories(n: int) -> None:
    """Add ``n`` consumed rollouts to the process-wide counter."""
    global _trajectory_count
    with _counter_lock:
        _trajectory_count += n


class CapExceeded(ValueError):
    """Raised when an exact enumeration would exceed its configured cap."""


@dataclass(frozen=True, eq=False)
class TabularMarkovGame:
    """Multi-player finite-horizon Markov game with a fixed initial state.

    ``transition`` has shape ``(H, S, J, S)`` and ``mean_reward`` has shape
    ``(H, S, J, m)`` where ``J`` is the product of ``action_counts``.
    """

    transition: np.ndarray
    mean_reward: np.ndarray
    action_counts: tuple[int, ...]
    noise: str = "bernoulli"
    initial_state: int = 0

    def __post_init__(self):
        P = np.ascontiguousarray(self.transition, dtype=np.float64)
        R = np.ascontiguousarray(self.mean_reward, dtype=np.float64)
        counts = tuple(int(a) for a in self.action_counts)
        if not counts or any(a < 1 for a in counts):
            raise ValueError("action_counts must be a nonempty list of positive integers")
        if P.ndim != 4 or R.ndim != 4:
            raise ValueError("transition must be (H,S,J,S) and mean_reward (H,S,J,m)")
        H, S, J, S2 = P.shape
        if H < 1 or S < 1 or S2 != S:
            raise ValueError(f"bad transition shape {P.shape}")
        if J != math.prod(counts):
            raise ValueError(f"joint action axis {J} != prod(action_counts) {math.prod(counts)}")
        if R.shape != (H, S, J, len(counts)):
            raise ValueError(f"mean_reward shape {R.shape} != {(H, S, J, len(counts))}")
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(R))):
            raise ValueError("non-finite entries in game tensors")
        if P.min() < 0.0 or np.abs(P.sum(axis=-1) - 1.0).max() > 1e-12:
            raise ValueError("transition rows must be nonnegative and sum to 1")
        if R.min() < 0.0 or R.max() > 1.0:
            raise ValueError("mean rewards must lie in [0, 1]")
        if self.noise not in NOISE_MODES:
            raise ValueError(f"noise must be one of {NOISE_MODES}")
        if not 0 <= self.initial_state < S:
            raise ValueError("initial_state out of range")
        P.setflags(write=False)
        R.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "mean_reward", R)
        object.__setattr__(self, "action_counts", counts)

    @property
    def horizon(self) -> int:
        return self.transition.shape[0]

    @property
    def num_states(self) -> int:
        return self.transition.shape[1]

    @property
    def num_players(self) -> int:
        return len(self.action_counts)

    @property
    def num_joint_actions(self) -> int:
        return self.transition.shape[2]

    def joint_index(self, actions: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(int(a) for a in actions), self.action_counts))

    def joint_actions(self) -> np.ndarray:
        """``(J, m)`` table of unravelled joint actions."""
        return np.stack(np.unravel_index(np.arange(self.num_joint_actions), self.action_counts), axis=1)

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "players": self.num_players,
            "states": self.num_states,
            "action_counts": list(self.action_counts),
            "transition": _tensor_doc(self.transition),
            "mean_reward": _tensor_doc(self.mean_reward),
            "noise": self.noise,
            "initial_state": self.initial_state,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TabularMarkovGame":
        try:
            game = cls(
                transition=_tensor_from_doc(doc["transition"]),
                mean_reward=_tensor_from_doc(doc["mean_reward"]),
                action_counts=tuple(doc["action_counts"]),
                noise=doc.get("noise", "bernoulli"),
                initial_state=int(doc.get("initial_state", 0)),
            )
        except KeyError as exc:
            raise ValueError(f"game document missing field {exc}") from None
        declared = (doc.get("horizon"), doc.get("players"), doc.get("states"))
        actual = (game.horizon, game.num_players, game.num_states)
        if any(d is not None and d != a for d, a in zip(declared, actual)):
            raise ValueError(f"declared (horizon, players, states) {declared} != tensor shapes {actual}")
        return game

    def dumps(self) -> str:
        return json.dumps(self.to_dict())


def _tensor_doc(x: np.ndarray) -> dict:
    return {"shape": list(x.shape), "data": x.ravel().tolist()}


def _tensor_from_doc(doc) -> np.ndarray:
    if isinstance(doc, dict):
        data = np.asarray(doc["data"], dtype=np.float64)
        shape = tuple(doc["shape"])
        if data.size != math.prod(shape):
            raise ValueError(f"tensor data has {data.size} entries, shape {shape} needs {math.prod(shape)}")
        return data.reshape(shape)
    return np.asarray(doc, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class ProductPolicyLayer:
    """One independent action distribution per player (at a single state)."""

    probs: tuple[np.ndarray, ...]

    def __post_init__(self):
        probs = tuple(np.asarray(p, dtype=np.float64) for p in self.probs)
        for p in probs:
            if p.ndim != 1 or p.min() < 0.0 or abs(p.sum() - 1.0) > 1e-12:
                raise ValueError("each player's layer must be a probability vector")
        object.__setattr__(self, "probs", probs)

    @classmethod
    def uniform(cls, action_counts: Sequence[int]) -> "ProductPolicyLayer":
        return cls(tuple(np.full(a, 1.0 / a) for a in action_counts))

    def joint(self) -> np.ndarray:
        out = np.ones(1)
        for p in self.probs:
            out = np.multiply.outer(out, p).ravel()
        return out


def _aoff(action_counts: Sequence[int]) -> np.ndarray:
    return np.concatenate([[0], np.cumsum(action_counts)[:-1]]).astype(np.int64)


@dataclass
class PackedPolicies:
    """Flat array form of one or more mixture policies, as consumed by the kernel."""

    start: np.ndarray  # (L, H, S) int64 offsets into the component arrays
    count: np.ndarray  # (L, H, S) int64
    weights: np.ndarray  # (C,)
    factors: np.ndarray  # (C, sum A_i)


class MixtureMarkovPolicy:
    """Markov joint policy stored per ``(h, s)`` as a weighted mixture of product layers.

    ``weights[h][s]`` is a ``(C,)`` vector and ``factors[h][s]`` a ``(C, sum_i A_i)``
    matrix whose column block ``i`` holds player ``i``'s distribution in each
    component.  The joint distribution is never stored; :meth:`joint` rebuilds it
    on demand.
    """

    def __init__(self, action_counts: Sequence[int], weights, factors, validate: bool = True):
        self.action_counts = tuple(int(a) for a in action_counts)
        self.aoff = _aoff(self.action_counts)
        self.weights = [[np.ascontiguousarray(w, dtype=np.float64) for w in row] for row in weights]
        self.factors = [[np.ascontiguousarray(f, dtype=np.float64) for f in row] for row in factors]
        self.horizon = len(self.weights)
        self.num_states = len(self.weights[0]) if self.horizon else 0
        self._packed: PackedPolicies | None = None
        if validate:
            self.validate()

    def validate(self) -> None:
        width = sum(self.action_counts)
        if self.horizon < 1 or len(self.factors) != self.horizon:
            raise ValueError("policy must cover every step")
        for h in range(self.horizon):
            if len(self.weights[h]) != self.num_states or len(self.factors[h]) != self.num_states:
                raise ValueError("policy must cover every state at every step")
            for s in range(self.num_states):
                w, f = self.weights[h][s], self.factors[h][s]
                if w.ndim != 1 or w.size < 1 or f.shape != (w.size, width):
                    raise ValueError(f"bad component shapes at (h={h}, s={s})")
                if w.min() < 0.0 or abs(w.sum() - 1.0) > 1e-12:
                    raise ValueError(f"mixture weights at (h={h}, s={s}) must sum to 1")
                if f.min() < 0.0:
                    raise ValueError(f"negative probability at (h={h}, s={s})")
                for i, a in enumerate(self.action_counts):
                    sums = f[:, self.aoff[i]:self.aoff[i] + a].sum(axis=1)
                    if np.abs(sums - 1.0).max() > 1e-12:
                        raise ValueError(f"player {i} factor at (h={h}, s={s}) does not sum to 1")

    # -- constructors --------------------------------------------------
    @classmethod
    def from_product(cls, tables: Sequence[np.ndarray]) -> "MixtureMarkovPolicy":
        """Product policy from per-player ``(H, S, A_i)`` probability tables."""
        tables = [np.asarray(t, dtype=np.float64) for t in tables]
        H, S = tables[0].shape[:2]
        counts = [t.shape[2] for t in tables]
        stacked = np.concatenate(tables, axis=2)
        weights = [[np.ones(1) for _ in range(S)] for _ in range(H)]
        factors = [[stacked[h, s][None, :] for s in range(S)] for h in range(H)]
        return cls(counts, weights, factors)

    @classmethod
    def uniform(cls, horizon: int, num_states: int, action_counts: Sequence[int]) -> "MixtureMarkovPolicy":
        return cls.from_product([np.full((horizon, num_states, a), 1.0 / a) for a in action_counts])

    @classmethod
    def deterministic(cls, actions: np.ndarray, action_counts: Sequence[int]) -> "MixtureMarkovPolicy":
        """Pure product policy from an ``(H, S, m)`` integer action table."""
        actions = np.asarray(actions, dtype=np.int64)
        tables = [np.eye(a)[actions[..., i]] for i, a in enumerate(action_counts)]
        return cls.from_product(tables)

    @classmethod
    def from_layers(cls, layers, action_counts: Sequence[int]) -> "MixtureMarkovPolicy":
        """Build from ``layers[h][s] = [(weight, ProductPolicyLayer), ...]``."""
        weights, factors = [], []
        for row in layers:
            wr, fr = [], []
            for comps in row:
                wr.append(np.array([w for w, _ in comps]))
                fr.append(np.array([np.concatenate(layer.probs) for _, layer in comps]))
            weights.append(wr)
            factors.append(fr)
        return cls(action_counts, weights, factors)

    # -- queries -------------------------------------------------------
    @property
    def num_players(self) -> int:
        return len(self.action_counts)

    def player_factors(self, h: int, s: int, i: int) -> np.ndarray:
        lo = self.aoff[i]
        return self.factors[h][s][:, lo:lo + self.action_counts[i]]

    def components(self, h: int, s: int) -> list[tuple[float, ProductPolicyLayer]]:
        w = self.weights[h][s]
        return [
            (float(w[c]), ProductPolicyLayer(tuple(self.player_factors(h, s, i)[c] for i in range(self.num_players))))
            for c in range(w.size)
        ]

    def joint(self, h: int, s: int) -> np.ndarray:
        """Dense joint distribution over the ``J`` joint actions at ``(h, s)``."""
        w = self.weights[h][s]
        x = np.ones((w.size, 1))
        for i in range(self.num_players):
            f = self.player_factors(h, s, i)
            x = (x[:, :, None] * f[:, None, :]).reshape(w.size, -1)
        return w @ x

    def marginal(self, h: int, s: int, i: int) -> np.ndarray:
        return self.weights[h][s] @ self.player_factors(h, s, i)

    def is_product(self) -> bool:
        return all(w.size == 1 for row in self.weights for w in row)

    def pure_actions(self) -> np.ndarray | None:
        """``(H, S, m)`` action table when the policy is a deterministic product, else None."""
        out = np.zeros((self.horizon, self.num_states, self.num_players), dtype=np.int64)
        for h in range(self.horizon):
            for s in range(self.num_states):
                if self.weights[h][s].size != 1:
                    return None
                for i in range(self.num_players):
                    f = self.player_factors(h, s, i)[0]
                    a = int(np.argmax(f))
                    if f[a] != 1.0:
                        return None
                    out[h, s, i] = a
        return out

    def with_player(self, i: int, table: np.ndarray) -> "MixtureMarkovPolicy":
        """Replace player ``i``'s factor in every component by ``table[h, s]``.

        ``table`` is ``(H, S, A_i)`` probabilities or an ``(H, S)`` integer
        action table.  The other players keep their joint (correlated) mixture,
        so the result is ``(table, pi_{-i})``.
        """
        table = np.asarray(table)
        if table.ndim == 2:
            table = np.eye(self.action_counts[i])[table.astype(np.int64)]
        lo, a = self.aoff[i], self.action_counts[i]
        factors = []
        for h in range(self.horizon):
            row = []
            for s in range(self.num_states):
                f = self.factors[h][s].copy()
                f[:, lo:lo + a] = table[h, s]
                row.append(f)
            factors.append(row)
        return MixtureMarkovPolicy(self.action_counts, self.weights, factors, validate=False)

    def pack(self) -> PackedPolicies:
        if self._packed is None:
            self._packed = pack_policies([self])
        return self._packed

    def check_compatible(self, game: TabularMarkovGame) -> None:
        if (self.horizon, self.num_states, self.action_counts) != (game.horizon, game.num_states, game.action_counts):
            raise ValueError(
                f"policy shape (H={self.horizon}, S={self.num_states}, A={self.action_counts}) does not match "
                f"game (H={game.horizon}, S={game.num_states}, A={game.action_counts})"
            )

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "states": self.num_states,
            "action_counts": list(self.action_counts),
            "layers": [
                [{"weights": self.weights[h][s].tolist(), "factors": self.factors[h][s].tolist()}
                 for s in range(self.num_states)]
                for h in range(self.horizon)
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MixtureMarkovPolicy":
        layers = doc["layers"]
        weights = [[np.asarray(cell["weights"], dtype=np.float64) for cell in row] for row in layers]
        factors = [[np.asarray(cell["factors"], dtype=np.float64).reshape(len(cell["weights"]), -1)
                    for cell in row] for row in layers]
        pol = cls(doc["action_counts"], weights, factors)
        if pol.horizon != doc.get("horizon", pol.horizon) or pol.num_states != doc.get("states", pol.num_states):
            raise ValueError("declared policy shape does not match its layers")
        return pol

    def dumps(self) -> str:
        return json.dumps(self.to_dict())


def pack_policies(policies: Sequence[MixtureMarkovPolicy]) -> PackedPolicies:
    H, S = policies[0].horizon, policies[0].num_states
    L = len(policies)
    start = np.zeros((L, H, S), dtype=np.int64)
    count = np.zeros((L, H, S), dtype=np.int64)
    ws, fs = [], []
    offset = 0
    for ell, pol in enumerate(policies):
        for h in range(H):
            for s in range(S):
                w = pol.weights[h][s]
                start[ell, h, s] = offset
                count[ell, h, s] = w.size
                offset += w.size
                ws.append(w)
                fs.append(pol.factors[h][s])
    return PackedPolicies(start, count, np.ascontiguousarray(np.concatenate(ws)),
                          np.ascontiguousarray(np.concatenate(fs, axis=0)))


@dataclass(frozen=True)
class StrategyModification:
    """Deterministic per-``(h, s, a_i)`` action remapping for one player."""

    player: int
    table: np.ndarray  # (H, S, A_i) int

    def __post_init__(self):
        t = np.asarray(self.table, dtype=np.int64)
        if t.ndim != 3 or t.min() < 0 or t.max() >= t.shape[2]:
            raise ValueError("modification table entries must be valid actions")
        object.__setattr__(self, "table", t)

    @classmethod
    def identity(cls, player: int, horizon: int, num_states: int, num_actions: int) -> "StrategyModification":
        return cls(player, np.broadcast_to(np.arange(num_actions), (horizon, num_states, num_actions)).copy())

    def apply(self, policy: MixtureMarkovPolicy) -> MixtureMarkovPolicy:
        """The modified joint policy: mass on ``a_i`` is moved to ``table[h, s, a_i]``."""
        i = self.player
        lo, a = policy.aoff[i], policy.action_counts[i]
        factors = []
        for h in range(policy.horizon):
            row = []
            for s in range(policy.num_states):
                f = policy.factors[h][s].copy()
                old = f[:, lo:lo + a].copy()
                new = np.zeros_like(old)
                for b in range(a):
                    new[:, self.table[h, s, b]] += old[:, b]
                f[:, lo:lo + a] = new
                row.append(f)
            factors.append(row)
        return MixtureMarkovPolicy(policy.action_counts, policy.weights, factors, validate=False)


@dataclass
class Trajectory:
    """``states`` has ``L + 1`` entries, ``actions`` and ``rewards`` are ``(L, m)``."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def __len__(self) -> int:
        return self.actions.shape[0]

    def tuples(self):
        for h in range(len(self)):
            acts = tuple(int(a) for a in self.actions[h])
            yield int(self.states[h]), acts, self.rewards[h].copy(), int(self.states[h + 1])


@dataclass
class RolloutBatch:
    states: np.ndarray  # (n, stop + 1)
    actions: np.ndarray  # (n, stop, m)
    rewards: np.ndarray  # (n, stop, m)
    picks: np.ndarray = field(default=None)  # (n,) index of the cover policy used

    def __len__(self) -> int:
        return self.states.shape[0]

    def trajectory(self, j: int) -> Trajectory:
        return Trajectory(self.states[j].copy(), self.actions[j].copy(), self.rewards[j].copy())


def rollouts(game: TabularMarkovGame, packed: PackedPolicies, key: int, count: int, stop: int, *,
             start: int = 0, cover_weights=None, cycle: bool = False,
             override: np.ndarray | None = None, override_players=None, backend=None,
             account: bool = True) -> RolloutBatch:
    """Draw ``count`` rollouts of ``stop`` steps from a packed policy cover.

    Rollout ``j`` first picks cover member ``l`` (with probability proportional
    to ``cover_weights``, or ``l = j mod L`` when ``cycle``), then follows it.  At
    the last step the players in ``override_players`` instead sample from
    ``override[s]`` (a ``(S, sum A_i)`` table of per-player distributions).
    Randomness of rollout ``j`` depends only on ``(key, start + j)``.  With
    ``account=False`` the caller records how many rollouts it actually used.
    """
    if not 0 <= stop <= game.horizon:
        raise ValueError(f"stop step {stop} outside [0, {game.horizon}]")
    m = game.num_players
    L = packed.start.shape[0]
    if cover_weights is None:
        cover_p = np.full(L, 1.0 / L)
    else:
        cw = np.asarray(cover_weights, dtype=np.float64)
        cover_p = cw / cw.sum()
    mask = np.zeros(m, dtype=np.int8)
    if override is None:
        override = np.zeros((game.num_states, sum(game.action_counts)))
    else:
        override = np.ascontiguousarray(override, dtype=np.float64)
        players = range(m) if override_players is None else override_players
        for p in players:
            mask[p] = 1
    fn = backend or kernels.rollout_batch
    states, actions, rewards, picks = fn(
        game.transition, game.mean_reward, game.noise == "bernoulli", int(game.initial_state),
        np.asarray(game.action_counts, dtype=np.int64), packed.start, packed.count, packed.weights,
        packed.factors, _aoff(game.action_counts), np.ascontiguousarray(cover_p), bool(cycle), override, mask,
        int(key) & rng.MASK64, int(start), int(count), int(stop),
    )
    if account:
        record_trajectories(count)
    return RolloutBatch(states, actions, rewards, picks)


def sample_trajectory(game: TabularMarkovGame, policy: MixtureMarkovPolicy, stop_step: int,
                      rng_seed: int) -> Trajectory:
    """One trajectory of ``stop_step`` steps following ``policy`` from the initial state."""
    if not 1 <= stop_step <= game.horizon:
        raise ValueError(f"stop_step must lie in [1, {game.horizon}]")
    policy.check_compatible(game)
    batch = rollouts(game, policy.pack(), rng.stream_key(rng_seed, STREAM_SAMPLE), 1, stop_step)
    return batch.trajectory(0)


def sample_trajectories(game: TabularMarkovGame, policy: MixtureMarkovPolicy, stop_step: int, rng_seed: int,
                        count: int) -> RolloutBatch:
    """Batch form of :func:`sample_trajectory`; trajectory 0 equals ``sample_trajectory`` with the same seed."""
    if not 1 <= stop_step <= game.horizon:
        raise ValueError(f"stop_step must lie in [1, {game.horizon}]")
    policy.check_compatible(game)
    return rollouts(game, policy.pack(), rng.stream_key(rng_seed, STREAM_SAMPLE), count, stop_step)


def layer_table(game: TabularMarkovGame, switch) -> np.ndarray:
    """Normalise a step-``h`` switch specification into an ``(S, sum A_i)`` table.

    ``switch`` is a :class:`ProductPolicyLayer` (same layer at every state) or a
    per-player sequence of ``(S, A_i)`` / ``(A_i,)`` arrays.
    """
    if isinstance(switch, ProductPolicyLayer):
        switch = switch.probs
    cols = []
    for i, a in enumerate(game.action_counts):
        t = np.asarray(switch[i], dtype=np.float64)
        if t.ndim == 1:
            t = np.broadcast_to(t, (game.num_states, a))
        if t.shape != (game.num_states, a):
            raise ValueError(f"switch layer for player {i} has shape {t.shape}")
        cols.append(t)
    return np.ascontiguousarray(np.concatenate(cols, axis=1))


def concat_rollout(game: TabularMarkovGame, cover_policy: MixtureMarkovPolicy, switch, h: int, rng_seed: int,
                   switch_players=None) -> Trajectory:
    """Follow ``cover_policy`` for steps ``1..h-1`` then play ``switch`` at step ``h`` (1-based).

    Players not listed in ``switch_players`` (default: all players switch) keep
    playing their own factor of the cover policy's component at step ``h``.
    """
    if not 1 <= h <= game.horizon:
        raise ValueError(f"h must lie in [1, {game.horizon}]")
    cover_policy.check_compatible(game)
    batch = rollouts(game, cover_policy.pack(), rng.stream_key(rng_seed, STREAM_CONCAT), 1, h,
                     override=layer_table(game, switch), override_players=switch_players)
    return batch.trajectory(0)
