"""Game families and per-player feature maps."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .game import CapExceeded, TabularMarkovGame

NORM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Per-player features ``phi[i][s, a_i] in R^{d_i}`` with ``||phi|| <= 1``.

    ``scale`` records any constant factor applied to the natural features
    (congestion incidence vectors are divided by ``sqrt(F)``).
    """

    phi: tuple[np.ndarray, ...]
    scale: float = 1.0

    def __post_init__(self):
        phi = tuple(np.ascontiguousarray(p, dtype=np.float64) for p in self.phi)
        for i, p in enumerate(phi):
            if p.ndim != 3:
                raise ValueError(f"features of player {i} must be (S, A_i, d_i)")
            if np.linalg.norm(p, axis=-1).max() > 1.0 + NORM_TOL:
                raise ValueError(f"features of player {i} violate the unit-norm bound")
        object.__setattr__(self, "phi", phi)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(p.shape[2] for p in self.phi)

    @property
    def d_max(self) -> int:
        return max(self.dims)

    def __call__(self, i: int, s: int, a: int) -> np.ndarray:
        return self.phi[i][s, a]

    def check_compatible(self, game: TabularMarkovGame) -> None:
        if len(self.phi) != game.num_players:
            raise ValueError("feature map and game disagree on the number of players")
        for i, p in enumerate(self.phi):
            if p.shape[:2] != (game.num_states, game.action_counts[i]):
                raise ValueError(f"features of player {i} have shape {p.shape[:2]}, game needs "
                                 f"{(game.num_states, game.action_counts[i])}")


@dataclass
class Environment:
    """A game together with the features the learners use."""

    game: TabularMarkovGame
    features: FeatureMap
    name: str = "custom"
    potential: bool = False  # declared Markov potential game (congestion or cooperative)
    congestion: "CongestionGame | None" = None
    constraint_radius: float | None = None  # overrides the default H * sqrt(d_max)
    info: dict = field(default_factory=dict)


def tabular_features(game: TabularMarkovGame) -> FeatureMap:
    """One-hot features ``e_(s, a_i)``; index ``s * A_i + a_i``."""
    phi = []
    for a in game.action_counts:
        d = game.num_states * a
        phi.append(np.eye(d).reshape(game.num_states, a, d))
    return FeatureMap(tuple(phi))


# -- congestion games ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CongestionGame:
    """Facilities ``0..F-1``; ``facility_reward[f, n - 1]`` is the mean reward of ``f`` with load ``n``."""

    num_facilities: int
    actions: tuple[tuple[tuple[int, ...], ...], ...]  # actions[i][k] = facility subset
    facility_reward: np.ndarray  # (F, m)
    noise: str = "bernoulli"

    def __post_init__(self):
        F = int(self.num_facilities)
        acts = tuple(tuple(tuple(sorted(set(int(f) for f in a))) for a in player) for player in self.actions)
        R = np.asarray(self.facility_reward, dtype=np.float64)
        m = len(acts)
        if R.shape != (F, m):
            raise ValueError(f"facility_reward must have shape (F, m) = {(F, m)}")
        if R.min() < 0.0 or R.max() > 1.0 / F + 1e-15:
            raise ValueError("facility rewards must lie in [0, 1/F]")
        for player in acts:
            if not player:
                raise ValueError("every player needs at least one action")
            for a in player:
                if not a or min(a) < 0 or max(a) >= F:
                    raise ValueError("each action must be a nonempty subset of facilities")
        object.__setattr__(self, "actions", acts)
        object.__setattr__(self, "facility_reward", R)

    @property
    def num_players(self) -> int:
        return len(self.actions)

    def loads(self, joint: Sequence[int]) -> np.ndarray:
        n = np.zeros(self.num_facilities, dtype=np.int64)
        for i, k in enumerate(joint):
            for f in self.actions[i][k]:
                n[f] += 1
        return n

    def player_reward(self, joint: Sequence[int], i: int) -> float:
        n = self.loads(joint)
        return float(sum(self.facility_reward[f, n[f] - 1] for f in self.actions[i][joint[i]]))

    def to_dict(self) -> dict:
        return {
            "family": "congestion",
            "facilities": self.num_facilities,
            "players": self.num_players,
            "actions": [[list(a) for a in player] for player in self.actions],
            "facility_reward": self.facility_reward.tolist(),
            "noise": self.noise,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CongestionGame":
        return cls(int(doc["facilities"]), tuple(tuple(tuple(a) for a in p) for p in doc["actions"]),
                   np.asarray(doc["facility_reward"]), doc.get("noise", "bernoulli"))


def congestion_to_markov_game(cg: CongestionGame, cap: int = 10**7) -> tuple[TabularMarkovGame, FeatureMap]:
    """One-state, one-step game with joint rewards and scaled incidence features."""
    counts = tuple(len(p) for p in cg.actions)
    J = math.prod(counts)
    if J > cap:
        raise CapExceeded(f"{J} joint actions exceed the enumeration cap {cap}")
    m = cg.num_players
    R = np.zeros((1, 1, J, m))
    for j, joint in enumerate(itertools.product(*(range(c) for c in counts))):
        for i in range(m):
            R[0, 0, j, i] = cg.player_reward(joint, i)
    R = np.clip(R, 0.0, 1.0)  # sums of F terms <= 1/F can round a hair above 1
    game = TabularMarkovGame(np.ones((1, 1, J, 1)), R, counts, noise=cg.noise)
    scale = 1.0 / math.sqrt(cg.num_facilities)
    phi = []
    for player in cg.actions:
        x = np.zeros((1, len(player), cg.num_facilities))
        for k, a in enumerate(player):
            x[0, k, list(a)] = 1.0
        phi.append(x * scale)
    return game, FeatureMap(tuple(phi), scale=scale)


def congestion_linear_parameter(cg: CongestionGame, i: int, opponent_probs: Sequence[np.ndarray]) -> np.ndarray:
    """Unscaled ``theta_f = E[R^f(n^f(a_{-i}) + 1)]`` under independent opponents."""
    m = cg.num_players
    others = [j for j in range(m) if j != i]
    theta = np.zeros(cg.num_facilities)
    for combo in itertools.product(*(range(len(cg.actions[j])) for j in others)):
        prob = math.prod(float(opponent_probs[j][k]) for j, k in zip(others, combo))
        if prob == 0.0:
            continue
        n = np.zeros(cg.num_facilities, dtype=np.int64)
        for j, k in zip(others, combo):
            for f in cg.actions[j][k]:
                n[f] += 1
        theta += prob * cg.facility_reward[np.arange(cg.num_facilities), n]
    return theta


def rosenthal_potential(cg: CongestionGame, joint: Sequence[int]) -> float:
    """``sum_f sum_{n=1}^{n^f(a)} R^f(n)`` for a deterministic joint action."""
    n = cg.loads(joint)
    return float(sum(cg.facility_reward[f, :n[f]].sum() for f in range(cg.num_facilities)))


def random_congestion(seed: int, num_players: int = 2, num_facilities: int = 2, singleton: bool = True,
                      noise: str = "bernoulli") -> CongestionGame:
    """Facility rewards drawn uniformly in ``[0, 1/F]`` and sorted so they decrease with load."""
    rng = np.random.default_rng(seed)
    F = num_facilities
    R = -np.sort(-rng.uniform(0.0, 1.0 / F, size=(F, num_players)), axis=1)
    if singleton:
        acts = tuple(tuple((f,) for f in range(F)) for _ in range(num_players))
    else:
        subsets = tuple(c for r in range(1, F + 1) for c in itertools.combinations(range(F), r))
        acts = tuple(subsets for _ in range(num_players))
    return CongestionGame(F, acts, R, noise)


def two_facility_congestion(noise: str = "bernoulli") -> CongestionGame:
    """Two players, two facilities, singleton actions, ``R^f(1) = 0.5/F`` and ``R^f(2) = 0.25/F``."""
    F = 2
    R = np.array([[0.5 / F, 0.25 / F], [0.5 / F, 0.25 / F]])
    return CongestionGame(F, (((0,), (1,)), ((0,), (1,))), R, noise)


# -- state abstraction -----------------------------------------------------

@dataclass(frozen=True, eq=False)
class AbstractionSpec:
    base: TabularMarkovGame
    mapping: np.ndarray  # (S,) abstract index per state

    def __post_init__(self):
        z = np.asarray(self.mapping, dtype=np.int64)
        if z.shape != (self.base.num_states,) or z.min() < 0:
            raise ValueError("abstraction must map every state to a nonnegative index")
        object.__setattr__(self, "mapping", z)

    @property
    def num_abstract(self) -> int:
        return int(self.mapping.max()) + 1


def abstraction_misspecification(spec: AbstractionSpec) -> np.ndarray:
    """``eps[h, z]``: largest reward or L1 transition discrepancy between states mapped to ``z``."""
    g = spec.base
    eps = np.zeros((g.horizon, spec.num_abstract))
    for z in range(spec.num_abstract):
        members = np.flatnonzero(spec.mapping == z)
        for s, t in itertools.combinations(members, 2):
            for h in range(g.horizon):
                dr = np.abs(g.mean_reward[h, s] - g.mean_reward[h, t]).max()
                dp = np.abs(g.transition[h, s] - g.transition[h, t]).sum(axis=-1).max()
                eps[h, z] = max(eps[h, z], dr, dp)
    return eps


def abstraction_env(base: TabularMarkovGame,
                    mapping: Sequence[int]) -> tuple[TabularMarkovGame, FeatureMap, np.ndarray]:
    """Base game, features ``e_(z(s), a_i)`` and the per-``(h, z)`` misspecification table."""
    spec = AbstractionSpec(base, np.asarray(mapping))
    Z = spec.num_abstract
    if Z > base.num_states:
        raise ValueError("more abstract states than states")
    phi = []
    for a in base.action_counts:
        d = Z * a
        x = np.zeros((base.num_states, a, d))
        for s in range(base.num_states):
            for k in range(a):
                x[s, k, spec.mapping[s] * a + k] = 1.0
        phi.append(x)
    return base, FeatureMap(tuple(phi)), abstraction_misspecification(spec)


# -- generators ------------------------------------------------------------

GAME_KINDS = ("general", "zero_sum", "cooperative")


def random_game(seed: int, num_states: int, action_counts: Sequence[int], horizon: int,
                kind: str = "general", noise: str = "bernoulli") -> TabularMarkovGame:
    """Dirichlet(1) transition rows and Uniform[0, 1] mean rewards, reproducible from ``seed``.

    ``zero_sum`` sets ``R_2 = 1 - R_1`` (two players); ``cooperative`` shares one reward.
    """
    if kind not in GAME_KINDS:
        raise ValueError(f"kind must be one of {GAME_KINDS}")
    counts = tuple(int(a) for a in action_counts)
    m = len(counts)
    J = math.prod(counts)
    if kind == "zero_sum" and m != 2:
        raise ValueError("zero-sum games need exactly two players")
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(num_states), size=(horizon, num_states, J))
    P /= P.sum(axis=-1, keepdims=True)
    if kind == "general":
        R = rng.uniform(size=(horizon, num_states, J, m))
    else:
        r = rng.uniform(size=(horizon, num_states, J, 1))
        R = np.concatenate([r, 1.0 - r], axis=-1) if kind == "zero_sum" else np.repeat(r, m, axis=-1)
    return TabularMarkovGame(P, R, counts, noise=noise)


def matching_pennies(noise: str = "bernoulli") -> TabularMarkovGame:
    """Player 0 earns 1 on a match, player 1 earns 1 on a mismatch."""
    R = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [1.0, 0.0]]).reshape(1, 1, 4, 2)
    return TabularMarkovGame(np.ones((1, 1, 4, 1)), R, (2, 2), noise=noise)


def linear_bandit(means: Sequence[float], noise: str = "bernoulli") -> TabularMarkovGame:
    """Single-player, single-step game whose arm ``k`` pays ``means[k]`` on average."""
    A = len(means)
    R = np.asarray(means, dtype=np.float64).reshape(1, 1, A, 1)
    return TabularMarkovGame(np.ones((1, 1, A, 1)), R, (A,), noise=noise)


def chain_mdp(noise: str = "deterministic") -> TabularMarkovGame:
    """Deterministic three-state, two-step chain with a unique optimal path.

    From state 0, action 1 moves to state 2 (reward 0.2) and action 0 to state 1
    (reward 0.4).  In state 2 action 1 pays 1.0; everything else pays 0.1.
    The optimal plan is action 1 then action 1 (value 1.2).
    """
    S, H, A = 3, 2, 2
    P = np.zeros((H, S, A, S))
    R = np.full((H, S, A, 1), 0.1)
    P[:, :, :, 0] = 1.0
    P[0, 0, 0] = [0.0, 1.0, 0.0]
    P[0, 0, 1] = [0.0, 0.0, 1.0]
    R[0, 0, 0, 0] = 0.4
    R[0, 0, 1, 0] = 0.2
    R[1, 2, 1, 0] = 1.0
    return TabularMarkovGame(P, R, (A,), noise=noise)


# -- structured documents --------------------------------------------------

def env_from_dict(doc: dict) -> Environment:
    """Build an :class:`Environment` from a family document.

    Families: ``game`` (a serialized tabular game; tabular features), ``random``,
    ``matching_pennies``, ``congestion`` (explicit), ``random_congestion``,
    ``two_facility_congestion``, ``abstraction``, ``linear_bandit``, ``chain_mdp``.
    """
    family = doc.get("family", "game")
    noise = doc.get("noise", "bernoulli")
    if family == "game":
        game = TabularMarkovGame.from_dict(doc["game"] if "game" in doc else doc)
        return Environment(game, tabular_features(game), "game", potential=bool(doc.get("potential", False)))
    if family == "random":
        kind = doc.get("kind", "general")
        game = random_game(int(doc.get("seed", 0)), int(doc["states"]), doc["action_counts"], int(doc["horizon"]),
                           kind=kind, noise=noise)
        return Environment(game, tabular_features(game), f"random-{kind}", potential=kind == "cooperative")
    if family == "matching_pennies":
        game = matching_pennies(noise)
        return Environment(game, tabular_features(game), "matching_pennies")
    if family in ("congestion", "random_congestion", "two_facility_congestion"):
        if family == "congestion":
            cg = CongestionGame.from_dict(doc)
        elif family == "random_congestion":
            cg = random_congestion(int(doc.get("seed", 0)), int(doc.get("players", 2)), int(doc.get("facilities", 2)),
                                   bool(doc.get("singleton", True)), noise)
        else:
            cg = two_facility_congestion(noise)
        game, feats = congestion_to_markov_game(cg)
        return Environment(game, feats, family, potential=True, congestion=cg,
                           constraint_radius=float(cg.num_facilities))
    if family == "abstraction":
        base = TabularMarkovGame.from_dict(doc["base"])
        game, feats, eps = abstraction_env(base, doc["abstraction"])
        return Environment(game, feats, "abstraction", info={"misspecification": eps.tolist()})
    if family == "linear_bandit":
        game = linear_bandit(doc["means"], noise)
        return Environment(game, tabular_features(game), "linear_bandit", potential=True)
    if family == "chain_mdp":
        game = chain_mdp(doc.get("noise", "deterministic"))
        return Environment(game, tabular_features(game), "chain_mdp", potential=True)
    raise ValueError(f"unknown environment family {family!r}")
