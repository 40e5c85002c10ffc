"""Counter-based random streams.

Every random draw in the library is a pure function of ``(key, rollout, draw)``
so batches can be split, reordered or run in parallel without changing a
single sampled value.  The mixing function is splitmix64; the compiled rollout
kernel reimplements the same arithmetic, which is what makes the compiled and
pure-Python backends bit-identical.
"""

from __future__ import annotations

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
ROLLOUT_MULT = 0xD1B54A32D192ED03
_INV_2_53 = 1.0 / 9007199254740992.0


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def stream_key(seed: int, *ids: int) -> int:
    """Derive a 64-bit stream key from a seed and a tuple of integer ids."""
    k = mix64((seed & MASK64) + GOLDEN)
    for x in ids:
        k = mix64(k ^ ((x & MASK64) * GOLDEN & MASK64))
    return k


def rollout_state(key: int, index: int) -> int:
    return mix64((key + (index & MASK64) * ROLLOUT_MULT) & MASK64)


def uniform(state: int, draw: int) -> float:
    """The ``draw``-th uniform in [0, 1) of the sub-stream ``state``."""
    return (mix64((state + (draw + 1) * GOLDEN) & MASK64) >> 11) * _INV_2_53


class Stream:
    """Sequential view over one sub-stream; ``next()`` returns uniforms in order."""

    __slots__ = ("state", "draw")

    def __init__(self, key: int, index: int = 0):
        self.state = rollout_state(key, index)
        self.draw = 0

    def next(self) -> float:
        u = uniform(self.state, self.draw)
        self.draw += 1
        return u

    def categorical(self, probs) -> int:
        return categorical(probs, self.next())


def categorical(probs, u: float) -> int:
    """Inverse-CDF draw by sequential accumulation (same order as the kernel)."""
    acc = 0.0
    last = 0
    for k, p in enumerate(probs):
        if p > 0.0:
            last = k
        acc += p
        if u < acc:
            return k
    return last
