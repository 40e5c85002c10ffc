"""Empirical suites for the no-regret oracles and the constrained regression.

Each suite returns a :class:`SuiteReport` whose ``lines`` compare measured
quantities with their thresholds.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import regression as reg
from .oracles import Mode, RegretLearner, external_regret, swap_regret

SUITES = ("hedge", "swap", "bandit", "bandit-swap", "regression")
PASS_RATE = 0.95


@dataclass
class SuiteReport:
    name: str
    passed: bool
    lines: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {"suite": self.name, "passed": self.passed, "lines": self.lines, "metrics": self.metrics,
                "seconds": self.seconds}


# -- loss sequences -----------------------------------------------------------

def alternating_losses(B: int, T: int) -> np.ndarray:
    """Round ``t`` charges every arm except ``t mod B``."""
    L = np.ones((T, B))
    L[np.arange(T), np.arange(T) % B] = 0.0
    return L


def random_losses(B: int, T: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).random((T, B))


def drifting_losses(B: int, T: int, seed: int) -> np.ndarray:
    """Piecewise-constant means that switch best arm every ``T // 8`` rounds, plus noise."""
    g = np.random.default_rng(seed)
    blocks = max(1, T // 8)
    means = g.random((math.ceil(T / blocks), B))
    L = np.repeat(means, blocks, axis=0)[:T] + 0.1 * g.standard_normal((T, B))
    return np.clip(L, 0.0, 1.0)


def play_full(learner: RegretLearner, losses: np.ndarray) -> np.ndarray:
    ps = np.empty_like(losses)
    for t, l in enumerate(losses):
        ps[t] = learner.p
        learner.full_update(l)
    return ps


def play_adaptive_full(learner: RegretLearner, T: int) -> tuple[np.ndarray, np.ndarray]:
    """Adaptive adversary: loss 1 on the currently most likely arm, 0 elsewhere."""
    B = learner.B
    ps = np.empty((T, B))
    L = np.zeros((T, B))
    for t in range(T):
        ps[t] = learner.p
        L[t, int(np.argmax(learner.p))] = 1.0
        learner.full_update(L[t])
    return ps, L


def play_bandit(learner: RegretLearner, losses: np.ndarray, seed: int) -> tuple[np.ndarray, float]:
    """Bandit play against a fixed loss table; returns the distributions and the realized loss."""
    u = np.random.default_rng(seed).random(losses.shape[0])
    ps = np.empty_like(losses)
    total = 0.0
    for t, l in enumerate(losses):
        ps[t] = learner.p
        b = learner.sample(u[t])
        total += l[b]
        learner.bandit_update(b, float(l[b]))
    return ps, total


# -- suites ---------------------------------------------------------------------

def hedge_suite(T: int = 10_000, arms=(2, 4, 8), seeds: int = 5) -> SuiteReport:
    """Deterministic external-regret bound ``2 sqrt(T ln B)`` on adversarial and random sequences."""
    lines, worst = [], 0.0
    ok = True
    for B in arms:
        bound = 2 * math.sqrt(T * math.log(B))
        cases = {"alternating": alternating_losses(B, T)}
        for s in range(seeds):
            cases[f"random{s}"] = random_losses(B, T, s)
            cases[f"drifting{s}"] = drifting_losses(B, T, 100 + s)
        for name, L in cases.items():
            r = external_regret(play_full(RegretLearner(B, Mode.FULL_EXTERNAL, horizon=T), L), L)
            worst = max(worst, r / bound)
            ok &= r <= bound
        ps, L = play_adaptive_full(RegretLearner(B, Mode.FULL_EXTERNAL, horizon=T), T)
        r = external_regret(ps, L)
        worst = max(worst, r / bound)
        ok &= r <= bound
        lines.append(f"B={B} T={T}: bound {bound:.2f}, worst ratio so far {worst:.3f}")
    return SuiteReport("hedge", bool(ok), lines, {"worst_ratio": worst})


def decomposition_check(B: int = 3, T: int = 20, seed: int = 0) -> tuple[float, float]:
    """Per-arm swap regret vs. exhaustive search over all ``B^B`` maps.

    Both sides sum the same per-arm rerouting gains, so they must agree exactly.
    """
    g = np.random.default_rng(seed)
    ps = g.dirichlet(np.ones(B), size=T)
    L = g.random((T, B))
    fast = swap_regret(ps, L)
    M = ps.T @ L
    arms = np.arange(B)
    best = max(math.fsum(M[arms, arms] - M[arms, list(psi)]) for psi in itertools.product(range(B), repeat=B))
    return fast, best


def swap_suite(T: int = 2_000, arms=(2, 4, 8), seeds: int = 50) -> SuiteReport:
    """``3 sqrt(B T ln B)`` swap-regret bound in at least 95% of seeds per (B, sequence family)."""
    lines, rates = [], {}
    ok = True
    for B in arms:
        bound = 3 * math.sqrt(B * T * math.log(B))
        for family in ("random", "drifting", "adaptive"):
            hits = 0
            for s in range(seeds):
                lr = RegretLearner(B, Mode.FULL_SWAP, horizon=T)
                if family == "adaptive":
                    ps, L = play_adaptive_full(lr, T)
                else:
                    L = random_losses(B, T, s) if family == "random" else drifting_losses(B, T, s)
                    ps = play_full(lr, L)
                hits += swap_regret(ps, L) <= bound
            rate = hits / seeds
            rates[f"B{B}-{family}"] = rate
            ok &= rate >= PASS_RATE
            lines.append(f"B={B} {family}: pass rate {rate:.2f} (bound {bound:.1f})")
    fast, brute = decomposition_check()
    exact = fast == brute
    ok &= exact
    lines.append(f"per-arm decomposition {fast:.12f} vs exhaustive {brute:.12f}")
    return SuiteReport("swap", bool(ok), lines, {"pass_rates": rates, "decomposition_error": abs(fast - brute)})


def bandit_suite(T: int = 10_000, seeds: int = 50, arms=(2, 4, 8)) -> SuiteReport:
    """Realized regret ``<= 2 sqrt(B T) ln(B T)`` in at least 95% of seeds."""
    lines, rates = [], {}
    ok = True
    for B in arms:
        bound = 2 * math.sqrt(B * T) * math.log(B * T)
        families = {"random": lambda s: (np.random.default_rng(s).random(B) * np.ones((T, 1))).clip(0, 1)}
        if B == 2:
            families["fixed01"] = lambda s: np.tile([0.0, 1.0], (T, 1))
        for family, make in families.items():
            hits = 0
            for s in range(seeds):
                L = make(s)
                _, total = play_bandit(RegretLearner(B, Mode.BANDIT_EXTERNAL), L, 1000 + s)
                hits += total - L.sum(axis=0).min() <= bound
            rate = hits / seeds
            rates[f"B{B}-{family}"] = rate
            ok &= rate >= PASS_RATE
            lines.append(f"B={B} {family}: pass rate {rate:.2f} (bound {bound:.1f})")
    return SuiteReport("bandit", bool(ok), lines, {"pass_rates": rates})


def bandit_swap_suite(T: int = 2_000, seeds: int = 50, arms=(2, 4)) -> SuiteReport:
    """Swap regret of the bandit reduction ``<= 3 B sqrt(T) ln(B T)`` in at least 95% of seeds."""
    lines, rates = [], {}
    ok = True
    for B in arms:
        bound = 3 * B * math.sqrt(T) * math.log(B * T)
        hits = 0
        for s in range(seeds):
            L = random_losses(B, T, s)
            ps, _ = play_bandit(RegretLearner(B, Mode.BANDIT_SWAP), L, 2000 + s)
            hits += swap_regret(ps, L) <= bound
        rate = hits / seeds
        rates[f"B{B}"] = rate
        ok &= rate >= PASS_RATE
        lines.append(f"B={B}: pass rate {rate:.2f} (bound {bound:.1f})")
    return SuiteReport("bandit-swap", bool(ok), lines, {"pass_rates": rates})


def ball_probes(d: int, radius: float, count: int, g: np.random.Generator) -> np.ndarray:
    """Uniform points in the ball, half of them pushed to the boundary."""
    x = g.standard_normal((count, d))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    r = radius * g.random(count) ** (1.0 / d)
    r[: count // 2] = radius
    return x * r[:, None]


def closed_form_examples() -> list[tuple[str, bool]]:
    e1 = np.array([[1.0, 0.0]])
    return [
        ("interpolation", np.array_equal(reg.fit_constrained_ls(e1, [1.0], 10.0).theta, [1.0, 0.0])),
        ("projection", np.array_equal(reg.fit_constrained_ls(e1, [1.0], 0.5).theta, [0.5, 0.0])),
        ("mean", np.array_equal(reg.fit_constrained_ls([[1.0], [1.0]], [0.0, 1.0], 10.0).theta, [0.5])),
    ]


def regression_suite(instances: int = 100, probes: int = 10_000, streams: int = 1_000, seed: int = 0) -> SuiteReport:
    g = np.random.default_rng(seed)
    beaten = 0
    worst_margin = np.inf
    for _ in range(instances):
        d = int(g.integers(1, 9))
        n = int(g.integers(1, 51))
        X = g.standard_normal((n, d)) / math.sqrt(d)
        y = g.standard_normal(n) * g.uniform(0.1, 5.0)
        W = float(g.uniform(0.05, 3.0))
        fit = reg.fit_constrained_ls(X, y, W)
        loss = reg.squared_loss(X, y, fit.theta)
        P = ball_probes(d, W, probes, g)
        probe_loss = np.sum((P @ X.T - y) ** 2, axis=1).min()
        free = np.linalg.lstsq(X, y, rcond=None)[0]
        nf = np.linalg.norm(free)
        proj = free if nf <= W else free * (W / nf)
        ref = min(probe_loss, reg.squared_loss(X, y, proj))
        feasible = np.linalg.norm(fit.theta) <= W + 1e-9
        margin = ref - loss
        worst_margin = min(worst_margin, margin / max(1.0, abs(ref)))
        beaten += feasible and loss <= ref + 1e-9 * max(1.0, abs(ref))
    examples = closed_form_examples()
    monotone = 0
    for _ in range(streams):
        d = int(g.integers(1, 6))
        acc = reg.CovarianceAccumulator(d, float(g.uniform(0.1, 2.0)))
        phi = g.standard_normal(d)
        prev = acc.bonus(phi)
        good = True
        for _ in range(int(g.integers(1, 30))):
            acc.add(g.standard_normal(d))
            cur = acc.bonus(phi)
            good &= cur <= prev + 1e-12
            prev = cur
        monotone += good
    ok = beaten == instances and all(v for _, v in examples) and monotone == streams
    lines = [
        f"constrained fit beats probes and projected solution on {beaten}/{instances} instances",
        *[f"closed form {name}: {'ok' if v else 'FAIL'}" for name, v in examples],
        f"bonus monotone on {monotone}/{streams} streams",
    ]
    return SuiteReport("regression", bool(ok), lines, {"worst_relative_margin": float(worst_margin)})


def run_suite(name: str, seeds: int | None = None) -> SuiteReport:
    started = time.perf_counter()
    if name == "hedge":
        rep = hedge_suite()
    elif name == "swap":
        rep = swap_suite(seeds=seeds or 50)
    elif name == "bandit":
        rep = bandit_suite(seeds=seeds or 50)
    elif name == "bandit-swap":
        rep = bandit_swap_suite(seeds=seeds or 50)
    elif name == "regression":
        rep = regression_suite()
    else:
        raise ValueError(f"unknown suite {name!r}; choose from {SUITES}")
    rep.seconds = time.perf_counter() - started
    return rep
