"""No-regret learners for the full-information and bandit protocols.

* ``full_external``: Hedge (exponential weights).
* ``full_swap``: Blum-Mansour reduction over ``B`` Hedge experts.
* ``bandit_external``: EXP3-IX (implicit exploration).
* ``bandit_swap``: Blum-Mansour reduction over EXP3-IX experts.
"""

from __future__ import annotations

import math
import warnings
from enum import Enum

import numpy as np

from . import rng


class Mode(str, Enum):
    FULL_EXTERNAL = "full_external"
    FULL_SWAP = "full_swap"
    BANDIT_EXTERNAL = "bandit_external"
    BANDIT_SWAP = "bandit_swap"

    @property
    def is_full(self) -> bool:
        return self in (Mode.FULL_EXTERNAL, Mode.FULL_SWAP)

    @property
    def is_swap(self) -> bool:
        return self in (Mode.FULL_SWAP, Mode.BANDIT_SWAP)


# regret constants used by both the oracle suites and the algorithms' value adjustments
EXTERNAL_CONST = 2.0
SWAP_CONST = 3.0


def full_regret_bound(T: int, B: int, swap: bool = False, const: float | None = None) -> float:
    """``2 sqrt(T ln B)`` (external) or ``3 sqrt(B T ln B)`` (swap)."""
    if B <= 1 or T <= 0:
        return 0.0
    if swap:
        return (SWAP_CONST if const is None else const) * math.sqrt(B * T * math.log(B))
    return (EXTERNAL_CONST if const is None else const) * math.sqrt(T * math.log(B))


def bandit_regret_bound(n: int, B: int, delta: float, swap: bool = False, const: float | None = None) -> float:
    """``2 sqrt(B n) ln(B n / delta)`` (external) or ``3 B sqrt(n) ln(B n / delta)`` (swap).

    A single arm has no regret, so ``B = 1`` gives 0.
    """
    if n <= 0 or B <= 1:
        return 0.0
    log_term = max(math.log(B * n / delta), 0.0)
    if swap:
        return (SWAP_CONST if const is None else const) * B * math.sqrt(n) * log_term
    return (EXTERNAL_CONST if const is None else const) * math.sqrt(B * n) * log_term


def _softmax_neg(eta: float, losses: np.ndarray) -> np.ndarray:
    z = -eta * losses
    z -= z.max(axis=-1, keepdims=True)
    w = np.exp(z)
    return w / w.sum(axis=-1, keepdims=True)


def stationary_distribution(Q: np.ndarray) -> np.ndarray:
    """Distribution ``p`` with ``p = p Q`` for a row-stochastic matrix ``Q``."""
    B = Q.shape[0]
    if B == 1:
        return np.ones(1)
    A = Q.T - np.eye(B)
    A[-1, :] = 1.0
    b = np.zeros(B)
    b[-1] = 1.0
    try:
        p = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        # reducible chain: any stationary point will do
        M = np.vstack([Q.T - np.eye(B), np.ones((1, B))])
        p = np.linalg.lstsq(M, np.concatenate([np.zeros(B), [1.0]]), rcond=None)[0]
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def ix_estimate(p_arm: float, gamma: float, loss: float) -> float:
    """Implicit-exploration importance weight ``loss / (p_arm + gamma)``."""
    return loss / (p_arm + gamma)


class RegretLearner:
    """One no-regret instance over ``num_arms`` arms.

    ``horizon`` fixes the full-information learning rate to ``sqrt(ln B / T)``
    (``sqrt(B ln B / T)`` per expert in swap mode); without it the rate follows
    a doubling schedule.  Bandit modes use ``eta_t = gamma_t = sqrt(ln B / (B t))``
    unless ``lr`` / ``gamma`` fix them.  ``record=True`` keeps ``(p_t, l_t)``.
    """

    def __init__(self, num_arms: int, mode: Mode | str = Mode.FULL_EXTERNAL, horizon: int | None = None,
                 lr: float | None = None, gamma: float | None = None, record: bool = False):
        if num_arms < 1:
            raise ValueError("need at least one arm")
        self.B = int(num_arms)
        self.mode = Mode(mode)
        self.horizon = horizon
        self.fixed_lr = lr
        self.fixed_gamma = gamma
        self.t = 1  # index of the round whose distribution is self.p
        self.clipped = 0
        self.history: list | None = [] if record else None
        rows = self.B if self.mode.is_swap else 1
        self.cum_loss = np.zeros((rows, self.B))
        self._epoch_start = 1
        self._epoch_len = 1
        self.p = np.full(self.B, 1.0 / self.B)

    # -- rates ---------------------------------------------------------
    def _full_rate(self) -> float:
        if self.fixed_lr is not None:
            return self.fixed_lr
        scale = self.B if self.mode is Mode.FULL_SWAP else 1
        T = self.horizon if self.horizon is not None else self._epoch_len
        return math.sqrt(scale * math.log(self.B) / T) if self.B > 1 else 0.0

    def bandit_rate(self, t: int | None = None) -> float:
        if self.fixed_lr is not None:
            return self.fixed_lr
        t = self.t if t is None else t
        return math.sqrt(math.log(self.B) / (self.B * t)) if self.B > 1 else 0.0

    def bandit_gamma(self, t: int | None = None) -> float:
        return self.fixed_gamma if self.fixed_gamma is not None else self.bandit_rate(t)

    def _refresh(self, eta: float) -> None:
        if self.mode.is_swap:
            self.p = stationary_distribution(self.expert_matrix(eta))
        else:
            self.p = _softmax_neg(eta, self.cum_loss[0])

    def expert_matrix(self, eta: float | None = None) -> np.ndarray:
        """Row ``j`` is expert ``j``'s distribution (swap modes)."""
        if eta is None:
            eta = self._full_rate() if self.mode.is_full else self.bandit_rate()
        return _softmax_neg(eta, self.cum_loss)

    # -- updates -------------------------------------------------------
    def full_update(self, loss) -> np.ndarray:
        if not self.mode.is_full:
            raise ValueError(f"full_update called on a {self.mode.value} learner")
        loss = np.asarray(loss, dtype=np.float64)
        if loss.shape != (self.B,) or not np.all(np.isfinite(loss)):
            raise ValueError("loss must be a finite vector with one entry per arm")
        if loss.min() < 0.0 or loss.max() > 1.0:
            self.clipped += 1
            loss = np.clip(loss, 0.0, 1.0)
        if self.history is not None:
            self.history.append((self.p.copy(), loss.copy()))
        if self.mode is Mode.FULL_SWAP:
            self.cum_loss += self.p[:, None] * loss[None, :]
        else:
            self.cum_loss[0] += loss
        self.t += 1
        if self.horizon is None and self.fixed_lr is None and self.t - self._epoch_start >= self._epoch_len:
            # doubling trick: restart with twice the epoch length
            self._epoch_start = self.t
            self._epoch_len *= 2
            self.cum_loss[:] = 0.0
        self._refresh(self._full_rate())
        return self.p

    def bandit_update(self, arm: int, loss: float) -> np.ndarray:
        if self.mode.is_full:
            raise ValueError(f"bandit_update called on a {self.mode.value} learner")
        if not 0 <= arm < self.B:
            raise ValueError(f"arm {arm} out of range")
        if not 0.0 <= loss <= 1.0:
            raise ValueError("bandit loss must lie in [0, 1]")
        if self.history is not None:
            self.history.append((self.p.copy(), arm, loss))
        est = ix_estimate(self.p[arm], self.bandit_gamma(), loss)
        if self.mode is Mode.BANDIT_SWAP:
            self.cum_loss[:, arm] += self.p * est
        else:
            self.cum_loss[0, arm] += est
        self.t += 1
        self._refresh(self.bandit_rate())
        return self.p

    def sample(self, u: float) -> int:
        return rng.categorical(self.p, u)


def clipped_warning(learners) -> None:
    n = sum(lr.clipped for lr in learners)
    if n:
        warnings.warn(f"{n} loss vectors were clipped to [0, 1]", RuntimeWarning, stacklevel=2)


# -- regret measurement ----------------------------------------------------

def external_regret(ps, losses) -> float:
    """``sum_t <p_t, l_t> - min_b sum_t l_t(b)``."""
    ps = np.asarray(ps, dtype=np.float64)
    losses = np.asarray(losses, dtype=np.float64)
    if ps.size == 0:
        return 0.0
    return float(np.einsum("tb,tb->", ps, losses) - losses.sum(axis=0).min())


def swap_regret(ps, losses) -> float:
    """``sum_b max_b' sum_t p_t(b) (l_t(b) - l_t(b'))`` (per-arm best reroute)."""
    ps = np.asarray(ps, dtype=np.float64)
    losses = np.asarray(losses, dtype=np.float64)
    if ps.size == 0:
        return 0.0
    # M[b, b'] = sum_t p_t(b) l_t(b'); fsum is correctly rounded, hence monotone in every term,
    # so this equals the maximum over all B^B maps bit for bit
    M = ps.T @ losses
    return math.fsum(np.diag(M) - M.min(axis=1))
