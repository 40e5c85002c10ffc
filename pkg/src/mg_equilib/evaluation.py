"""Exact dynamic-programming evaluators and equilibrium gaps."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .game import CapExceeded, MixtureMarkovPolicy, StrategyModification, TabularMarkovGame

DEFAULT_CELL_CAP = 10**7
DEFAULT_ENUM_CAP = 10**6
GAP_FLOOR = -1e-9


def _check_cap(game: TabularMarkovGame, cap: int) -> None:
    cells = game.horizon * game.num_states * game.num_joint_actions
    if cells > cap:
        raise CapExceeded(f"{cells} (h, s, a) cells exceed the enumeration cap {cap}")


def _player_q(game: TabularMarkovGame, h: int, s: int, i: int, v_next: np.ndarray) -> np.ndarray:
    """Player ``i``'s one-step value at ``(h, s)`` laid out as ``(A_i, J_{-i})``."""
    q = game.mean_reward[h, s, :, i] + game.transition[h, s] @ v_next
    return _split(q, game.action_counts, i)


def _split(x: np.ndarray, counts, i: int) -> np.ndarray:
    return np.moveaxis(x.reshape(counts), i, 0).reshape(counts[i], -1)


def evaluate_value(game: TabularMarkovGame, policy: MixtureMarkovPolicy, cap: int = DEFAULT_CELL_CAP) -> np.ndarray:
    """Exact values ``V[h, s, i]`` of ``policy``; shape ``(H + 1, S, m)``."""
    policy.check_compatible(game)
    _check_cap(game, cap)
    H, S, m = game.horizon, game.num_states, game.num_players
    V = np.zeros((H + 1, S, m))
    for h in reversed(range(H)):
        Q = game.mean_reward[h] + np.einsum("sjt,tm->sjm", game.transition[h], V[h + 1])
        for s in range(S):
            V[h, s] = policy.joint(h, s) @ Q[s]
    return V


@dataclass
class BestResponse:
    values: np.ndarray  # (H + 1, S) optimal deviation values of the player
    actions: np.ndarray  # (H, S) deterministic maximiser, smallest index on ties
    player: int

    def policy(self, against: MixtureMarkovPolicy) -> MixtureMarkovPolicy:
        return against.with_player(self.player, self.actions)


def best_response_value(game: TabularMarkovGame, policy: MixtureMarkovPolicy, player: int,
                        cap: int = DEFAULT_CELL_CAP) -> BestResponse:
    """Optimal value of ``player`` against the opponents' marginal ``pi_{-i}``.

    The deviator ignores any correlation between its recommendation and the
    opponents: at each ``(h, s)`` the opponents' joint marginal is used.
    """
    policy.check_compatible(game)
    _check_cap(game, cap)
    H, S = game.horizon, game.num_states
    V = np.zeros((H + 1, S))
    actions = np.zeros((H, S), dtype=np.int64)
    for h in reversed(range(H)):
        for s in range(S):
            opp = _split(policy.joint(h, s), game.action_counts, player).sum(axis=0)
            q = _player_q(game, h, s, player, V[h + 1]) @ opp
            a = int(np.argmax(q))
            actions[h, s] = a
            V[h, s] = q[a]
    return BestResponse(V, actions, player)


@dataclass
class BestModification:
    values: np.ndarray  # (H + 1, S)
    modification: StrategyModification


def best_modification_value(game: TabularMarkovGame, policy: MixtureMarkovPolicy, player: int,
                            cap: int = DEFAULT_CELL_CAP) -> BestModification:
    """Value of the optimal strategy modification of ``player`` against ``policy``.

    Recommendations with zero probability keep the identity mapping and add
    nothing to the value.
    """
    policy.check_compatible(game)
    _check_cap(game, cap)
    H, S = game.horizon, game.num_states
    A = game.action_counts[player]
    M = np.zeros((H + 1, S))
    table = np.broadcast_to(np.arange(A), (H, S, A)).copy()
    for h in reversed(range(H)):
        for s in range(S):
            joint = _split(policy.joint(h, s), game.action_counts, player)
            q = _player_q(game, h, s, player, M[h + 1])
            gain = joint @ q.T  # gain[a, a'] = sum_{a_-i} pi(a, a_-i) Q(a', a_-i)
            total = 0.0
            for a in range(A):
                if joint[a].sum() <= 0.0:
                    continue
                b = int(np.argmax(gain[a]))
                table[h, s, a] = b
                total += gain[a, b]
            M[h, s] = total
    return BestModification(M, StrategyModification(player, table))


@dataclass
class GapReport:
    kind: str
    per_player: np.ndarray  # clamped at 0
    deviation_values: np.ndarray  # best-response or modification value at s_1
    policy_values: np.ndarray  # V^pi at s_1

    @property
    def max(self) -> float:
        return float(self.per_player.max())

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "gap": self.max,
            "per_player": self.per_player.tolist(),
            "deviation_values": self.deviation_values.tolist(),
            "policy_values": self.policy_values.tolist(),
        }


def _gap(kind: str, deviation: np.ndarray, base: np.ndarray, check: bool = True) -> GapReport:
    raw = deviation - base
    if check and raw.min() < GAP_FLOOR:
        raise ArithmeticError(f"{kind} gap {raw.min()} below the numerical floor {GAP_FLOOR}")
    return GapReport(kind, np.maximum(raw, 0.0), deviation, base)


def cce_gap(game: TabularMarkovGame, policy: MixtureMarkovPolicy, cap: int = DEFAULT_CELL_CAP) -> GapReport:
    s1 = game.initial_state
    base = evaluate_value(game, policy, cap)[0, s1]
    dev = np.array([best_response_value(game, policy, i, cap).values[0, s1] for i in range(game.num_players)])
    # a correlated policy can be worth more to a player than any fixed deviation, so the floor
    # only guards product policies
    return _gap("cce", dev, base, check=policy.is_product())


def nash_gap(game: TabularMarkovGame, policy: MixtureMarkovPolicy, cap: int = DEFAULT_CELL_CAP) -> GapReport:
    if not policy.is_product():
        raise ValueError("nash_gap requires a product policy")
    report = cce_gap(game, policy, cap)
    report.kind = "nash"
    return report


def ce_gap(game: TabularMarkovGame, policy: MixtureMarkovPolicy, cap: int = DEFAULT_CELL_CAP) -> GapReport:
    s1 = game.initial_state
    base = evaluate_value(game, policy, cap)[0, s1]
    dev = np.array([best_modification_value(game, policy, i, cap).values[0, s1] for i in range(game.num_players)])
    return _gap("ce", dev, base)


def all_gaps(game: TabularMarkovGame, policy: MixtureMarkovPolicy, cap: int = DEFAULT_CELL_CAP) -> dict:
    """CCE and CE gap reports, plus the Nash gap when ``policy`` is a product."""
    out = {"cce": cce_gap(game, policy, cap), "ce": ce_gap(game, policy, cap)}
    if policy.is_product():
        out["nash"] = nash_gap(game, policy, cap)
    return out


def deterministic_policies(game: TabularMarkovGame, player: int):
    """Iterate over every ``(H, S)`` deterministic action table of ``player``."""
    H, S = game.horizon, game.num_states
    for flat in itertools.product(range(game.action_counts[player]), repeat=H * S):
        yield np.array(flat, dtype=np.int64).reshape(H, S)


def brute_force_pure_nash(game: TabularMarkovGame, cap: int = DEFAULT_ENUM_CAP, tol: float = 1e-9):
    """All deterministic product policies whose Nash gap is at most ``tol``."""
    H, S = game.horizon, game.num_states
    total = math.prod(a ** (S * H) for a in game.action_counts)
    if total > cap:
        raise CapExceeded(f"{total} deterministic profiles exceed the enumeration cap {cap}")
    per_player = [list(deterministic_policies(game, i)) for i in range(game.num_players)]
    found = []
    for profile in itertools.product(*per_player):
        actions = np.stack(profile, axis=-1)
        pol = MixtureMarkovPolicy.deterministic(actions, game.action_counts)
        if nash_gap(game, pol).max <= tol:
            found.append(pol)
    return found
