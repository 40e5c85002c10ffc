"""Compare the compiled rollout kernel with the pure-Python fallback.

Usage: python3 benchmarks/bench_rollout.py [--count N] [--repeat R]

Both backends are checked for identical samples before timing.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from mg_equilib import game as gm
from mg_equilib import kernels
from mg_equilib.envs import random_game

CASES = [
    # (states, action counts, horizon, cover members)
    (3, (2, 2), 2, 1),
    (10, (3, 3), 5, 4),
    (20, (2, 2, 2), 8, 8),
]


def make_cover(game: gm.TabularMarkovGame, members: int, seed: int) -> gm.PackedPolicies:
    g = np.random.default_rng(seed)
    pols = []
    for _ in range(members):
        tables = [g.dirichlet(np.ones(a), size=(game.horizon, game.num_states)) for a in game.action_counts]
        pols.append(gm.MixtureMarkovPolicy.from_product(tables))
    return gm.pack_policies(pols)


def best_time(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--count", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    compiled = kernels.compiled_rollout_batch
    print(f"default backend: {kernels.BACKEND}")
    if compiled is None:
        print("compiled extension not built; timing the Python fallback only")
    print(f"{'case':<28}{'python ms':>12}{'compiled ms':>14}{'speedup':>10}")
    for S, A, H, L in CASES:
        game = random_game(0, S, A, H)
        packed = make_cover(game, L, 1)
        weights = np.arange(1, L + 1, dtype=np.float64)

        def run(backend):
            return gm.rollouts(game, packed, 12345, args.count, H, cover_weights=weights, backend=backend,
                               account=False)

        ref = run(kernels.python_rollout_batch)
        t_py = best_time(lambda: run(kernels.python_rollout_batch), args.repeat)
        label = f"S={S} A={A} H={H} L={L}"
        if compiled is None:
            print(f"{label:<28}{t_py * 1e3:>12.1f}{'-':>14}{'-':>10}")
            continue
        out = run(compiled)
        fields = ("states", "actions", "rewards", "picks")
        for name in fields:
            if not np.array_equal(getattr(ref, name), getattr(out, name)):
                raise SystemExit(f"{label}: backends disagree")
        t_c = best_time(lambda: run(compiled), args.repeat)
        print(f"{label:<28}{t_py * 1e3:>12.1f}{t_c * 1e3:>14.2f}{t_py / t_c:>9.0f}x")


if __name__ == "__main__":
    main()
