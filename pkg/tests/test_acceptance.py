"""End-to-end acceptance criteria, each printed as one PASS/FAIL line."""

from __future__ import annotations

import json
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

import reference as ref
from conftest import DESK_LINEAR, clear_gap_env, random_mixture, tabular_env
from mg_equilib import cli
from mg_equilib import game as gm
from mg_equilib.envs import chain_mdp, env_from_dict, linear_bandit, random_congestion, random_game
from mg_equilib.evaluation import (best_modification_value, best_response_value, brute_force_pure_nash, ce_gap,
                                   cce_gap, evaluate_value, nash_gap)
from mg_equilib.nash_ca import default_nash_params, run_nash_ca
from mg_equilib.prebo import default_prebo_params, run_prebo
from mg_equilib.prefi import default_params, run_prefi
from mg_equilib.suites import decomposition_check, run_suite

pytestmark = pytest.mark.slow


@contextmanager
def criterion(capsys, number: int, title: str):
    """Print ``criterion N title: PASS|FAIL detail`` whatever the outcome."""
    notes: list[str] = []
    ok = False
    try:
        yield notes
        ok = True
    finally:
        with capsys.disabled():
            print(f"\ncriterion {number} {title}: {'PASS' if ok else 'FAIL'} {'; '.join(notes)}")


def test_1_oracle_suites(capsys):
    with criterion(capsys, 1, "oracle suites") as notes:
        hedge = run_suite("hedge")
        notes.append(f"hedge {hedge.seconds:.1f}s worst ratio {hedge.metrics['worst_ratio']:.3f}")
        swap = run_suite("swap")
        bandit = run_suite("bandit")
        swap_rate, bandit_rate = min(swap.metrics["pass_rates"].values()), min(bandit.metrics["pass_rates"].values())
        notes.append(f"swap worst rate {swap_rate:.2f}, bandit worst rate {bandit_rate:.2f}")
        fast, brute = decomposition_check(3, 20, 0)
        notes.append(f"decomposition {fast!r} vs exhaustive {brute!r}")
        assert hedge.passed and hedge.seconds < 10.0
        assert swap.passed and swap_rate >= 0.95
        assert bandit.passed and bandit_rate >= 0.95
        assert fast == brute


def test_2_evaluation_oracles(capsys):
    with criterion(capsys, 2, "evaluation oracles") as notes:
        start = time.perf_counter()
        worst_br = worst_bm = 0.0
        dominance = True
        g = np.random.default_rng(2024)
        for k in range(100):
            S, H = int(g.integers(1, 4)), int(g.integers(1, 3))
            A = tuple(int(a) for a in g.integers(1, 3, size=2))
            game = random_game(k, S, A, H)
            pol = random_mixture(game, k, int(g.integers(1, 4)))
            for i in range(2):
                br = best_response_value(game, pol, i).values[0, 0]
                bm = best_modification_value(game, pol, i).values[0, 0]
                worst_br = max(worst_br, abs(br - ref.best_response_by_enumeration(game, pol, i)))
                worst_bm = max(worst_bm, abs(bm - ref.best_modification_by_search(game, pol, i)))
            dominance &= bool(np.all(ce_gap(game, pol).per_player >= cce_gap(game, pol).per_player - 1e-9))
        seconds = time.perf_counter() - start
        notes.append(f"max BR error {worst_br:.1e}, max modification error {worst_bm:.1e}, {seconds:.1f}s")
        assert worst_br <= 1e-12 and worst_bm <= 1e-12 and dominance and seconds < 60.0


def test_3_regression(capsys):
    with criterion(capsys, 3, "regression") as notes:
        rep = run_suite("regression")
        notes.extend(rep.lines)
        assert rep.passed


def test_4_prebo(capsys):
    with criterion(capsys, 4, "PReBO end to end") as notes:
        rates = {}
        for mode, S in (("cce", 3), ("ce", 1)):
            hits, times, within_budget = 0, [], True
            for seed in range(20):
                game = random_game(1000 + seed, S, (2, 2), 2)
                p = default_prebo_params(0.25, 0.1, game, mode=mode)
                start = time.perf_counter()
                r = run_prebo(game, p, seed)
                times.append(time.perf_counter() - start)
                gap = (cce_gap if mode == "cce" else ce_gap)(game, r.policy).max
                hits += gap <= 0.25 + 0.05
                within_budget &= r.trajectories <= p.N_max * p.K_max * p.horizon
            rates[mode] = hits / 20
            notes.append(f"{mode} S={S}: rate {hits / 20:.2f}, median {np.median(times):.1f}s, "
                         f"budget {'ok' if within_budget else 'exceeded'}")
            assert within_budget and np.median(times) < 120.0
        assert rates["cce"] >= 0.9 and rates["ce"] >= 0.9


def _prefi_cell(env, mode, overrides, seeds):
    """Soundness hits plus optimism and pessimism counts over (episode, player) pairs."""
    g, s1 = env.game, env.game.initial_state
    p = default_params(0.2, 0.1, env, mode=mode, T_mult=0.1, N_mult=0.1, **overrides)
    sound = opt = pes = total = 0
    slowest = 0.0
    for seed in seeds:
        start = time.perf_counter()
        r = run_prefi(env, p, seed)
        slowest = max(slowest, time.perf_counter() - start)
        gap = (cce_gap if mode == "cce" else ce_gap)(g, r.policy).max
        sound += gap <= r.certified_bound + 0.05
        for ep in r.episodes:
            V = evaluate_value(g, ep.policy)[0, s1]
            for i in range(g.num_players):
                opt += ep.v_hi[0, s1, i] + 1e-6 >= best_response_value(g, ep.policy, i).values[0, s1]
                pes += ep.v_lo[0, s1, i] <= V[i] + 1e-6
                total += 1
    return sound / len(seeds), opt / total, pes / total, slowest


def test_5_prefi(capsys):
    with criterion(capsys, 5, "PReFI end to end") as notes:
        pennies = env_from_dict({"family": "matching_pennies"})
        cells = [("pennies", pennies, "cce"), ("pennies", pennies, "ce"), ("clear-gap", clear_gap_env(), "cce"),
                 ("chain", tabular_env(chain_mdp()), "cce"),
                 ("bandit", tabular_env(linear_bandit([0.9, 0.1])), "cce")]
        ok = True
        for label, overrides in (("theory", {}), ("desk", DESK_LINEAR)):
            for name, env, mode in cells:
                sound, opt, pes, slowest = _prefi_cell(env, mode, overrides, range(10))
                notes.append(f"{label} {name}/{mode}: sound {sound:.2f} opt {opt:.2f} pes {pes:.2f}")
                ok &= sound >= 0.9 and opt >= 0.9 and pes >= 0.9 and slowest < 300.0
        assert ok


def test_6_nash_ca(capsys):
    with criterion(capsys, 6, "Lin-Nash-CA") as notes:
        p = default_nash_params(0.1, 0.1, 1, 2, mc_mult=1.0, solver_N_mult=0.1, **DESK_LINEAR)
        hits, ascent, slowest = 0, True, 0.0
        for seed in range(10):
            cg = random_congestion(seed, 2, 2)
            assert np.all(np.diff(cg.facility_reward, axis=1) <= 0)
            env = env_from_dict(cg.to_dict())
            start = time.perf_counter()
            r = run_nash_ca(env, p, seed)
            slowest = max(slowest, time.perf_counter() - start)
            pure = [q.pure_actions().tolist() for q in brute_force_pure_nash(env.game)]
            hits += r.policy.is_product() and nash_gap(env.game, r.policy).max <= 0.1 and r.actions.tolist() in pure
            for rec, after in zip(r.records, r.potentials[1:]):
                if rec["switch"] is not None:
                    ascent &= after > rec["potential"]
        notes.append(f"pure NE rate {hits / 10:.2f}, potential ascent {'yes' if ascent else 'no'}, "
                     f"slowest {slowest:.1f}s")
        assert hits / 10 >= 0.9 and ascent and slowest < 120.0


def test_7_determinism(capsys, tmp_path, monkeypatch):
    with criterion(capsys, 7, "determinism and accounting") as notes:
        configs = {
            "prefi": ({"family": "matching_pennies"}, {"T_mult": 0.1, "N_mult": 0.1}, DESK_LINEAR),
            "prefi-agile": ({"family": "matching_pennies"}, {"T_mult": 0.1, "K_mult": 0.05}, {}),
            "prebo": ({"family": "random", "states": 2, "action_counts": [2, 2], "horizon": 2, "seed": 4},
                      {"N_mult": 0.2}, {}),
            "nash-ca": ({"family": "random_congestion", "seed": 1}, {"solver_N_mult": 0.1}, DESK_LINEAR),
        }
        monkeypatch.delenv("MG_EQUILIB_THREADS", raising=False)
        for algorithm, (env, mult, ov) in configs.items():
            doc = {"env": env, "algorithm": algorithm, "epsilon": 0.2, "delta": 0.1, "multipliers": mult,
                   "overrides": dict(ov), "seeds": [0, 1]}
            path = tmp_path / f"{algorithm}.json"
            path.write_text(json.dumps(doc))
            outs = []
            for tag, threads in (("a", 1), ("b", 1), ("c", 2)):
                out = tmp_path / f"{algorithm}-{tag}"
                assert cli.main(["run", "--config", str(path), "--out", str(out), "--threads", str(threads)]) == 0
                outs.append(out)
            for seed in (0, 1):
                for suffix in (".jsonl", ".policy.json"):
                    name = f"{algorithm}-seed{seed}{suffix}"
                    first = (outs[0] / name).read_bytes()
                    assert first == (outs[1] / name).read_bytes() == (outs[2] / name).read_bytes()
                final = json.loads((outs[0] / f"{algorithm}-seed{seed}.jsonl").read_text().splitlines()[-1])
                assert final["trajectories"] == final["trajectory_counter"]
            notes.append(f"{algorithm} ok")
        before = gm.trajectory_count()
        game = random_game(0, 2, (2,), 2)
        gm.rollouts(game, gm.MixtureMarkovPolicy.uniform(2, 2, (2,)).pack(), 1, 37, 2)
        assert gm.trajectory_count() - before == 37


def test_reference_oracle_sanity():
    # the enumeration oracle agrees with a hand-computed single-player optimum
    assert ref.optimal_value_single(chain_mdp()) == pytest.approx(1.2, abs=1e-15)
    assert math.isclose(ref.optimal_value_single(clear_gap_env().game), 1.8, abs_tol=1e-15)
