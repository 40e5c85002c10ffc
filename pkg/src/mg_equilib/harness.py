"""Experiment configuration, per-seed cells, record streams and summaries.

A config is one flat JSON document::

    {
      "env": {"family": "matching_pennies"},      # or {"file": "game.json"}
      "algorithm": "prefi",                        # prefi | prefi-agile | prebo | nash-ca
      "mode": "cce",                               # cce | ce (ignored by nash-ca)
      "epsilon": 0.2, "delta": 0.1,
      "multipliers": {"T_mult": 0.1, "N_mult": 0.1},
      "overrides": {"lam": 1.0},
      "seeds": [0, 1, 2],
      "out": "runs/pennies",
      "exact_eval": "final",                       # off | final | episode
      "inner_threads": 1
    }

Every seed is a cell.  A cell writes ``<algorithm>-seed<seed>.jsonl`` (a
header, one row per episode and a final record) and the output policy as
``<algorithm>-seed<seed>.policy.json``.  The run writes ``summary.csv``.
Wall time only appears in the summary, so record streams are reproducible
byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import game as gm
from .envs import Environment, env_from_dict
from .evaluation import all_gaps, best_modification_value, best_response_value, evaluate_value
from .nash_ca import default_nash_params, run_nash_ca
from .prebo import default_prebo_params, run_prebo
from .prefi import default_params, run_prefi

ALGORITHMS = ("prefi", "prefi-agile", "prebo", "nash-ca")
EXACT_EVAL = ("off", "final", "episode")
SUMMARY_COLUMNS = ("seed", "episodes", "trajectories", "certified_bound", "exact_cce_gap", "exact_ce_gap", "wall_ms")
THREADS_ENV = "MG_EQUILIB_THREADS"
MULTIPLIERS = {
    "prefi": ("T_mult", "N_mult"),
    "prefi-agile": ("T_mult", "N_mult", "K_mult"),
    "prebo": ("N_mult",),
    "nash-ca": ("mc_mult", "solver_N_mult"),
}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    env: dict
    algorithm: str
    epsilon: float
    delta: float
    seeds: list
    out: str = "runs"
    mode: str = "cce"
    multipliers: dict = field(default_factory=dict)
    overrides: dict = field(default_factory=dict)
    exact_eval: str = "final"
    inner_threads: int = 1
    base_dir: str = "."

    @classmethod
    def from_dict(cls, doc: dict, base_dir: str | os.PathLike = ".") -> "ExperimentConfig":
        known = {"env", "algorithm", "epsilon", "delta", "seeds", "out", "mode", "multipliers", "overrides",
                 "exact_eval", "inner_threads"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        missing = {"env", "algorithm", "epsilon", "delta", "seeds"} - set(doc)
        if missing:
            raise ConfigError(f"missing config keys: {sorted(missing)}")
        cfg = cls(base_dir=str(base_dir), **doc)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_dict(doc, path.parent)

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}")
        if self.mode not in ("cce", "ce"):
            raise ConfigError("mode must be cce or ce")
        if self.exact_eval not in EXACT_EVAL:
            raise ConfigError(f"exact_eval must be one of {EXACT_EVAL}")
        if not (0 < self.epsilon < 1 and 0 < self.delta < 1):
            raise ConfigError("epsilon and delta must lie in (0, 1)")
        if not isinstance(self.seeds, list) or not self.seeds:
            raise ConfigError("the seed list is empty")
        if not all(isinstance(s, int) and s >= 0 for s in self.seeds) or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct nonnegative integers")
        bad = set(self.multipliers) - set(MULTIPLIERS[self.algorithm])
        if bad:
            raise ConfigError(f"multipliers {sorted(bad)} do not apply to {self.algorithm}")
        if "file" in self.env and not self.env_path().is_file():
            raise ConfigError(f"environment file {self.env_path()} does not exist")
        if int(self.inner_threads) < 1:
            raise ConfigError("inner_threads must be at least 1")
        env = self.build_env()
        if self.algorithm == "nash-ca" and not env.potential:
            raise ConfigError("nash-ca needs a potential-game environment (congestion or cooperative)")

    def env_path(self) -> Path:
        p = Path(self.env["file"])
        return p if p.is_absolute() else Path(self.base_dir) / p

    def env_doc(self) -> dict:
        if "file" in self.env:
            return json.loads(self.env_path().read_text())
        return self.env

    def build_env(self) -> Environment:
        try:
            return env_from_dict(self.env_doc())
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid environment: {exc}") from None

    def to_dict(self) -> dict:
        return {
            "env": self.env, "algorithm": self.algorithm, "mode": self.mode, "epsilon": self.epsilon,
            "delta": self.delta, "multipliers": self.multipliers, "overrides": self.overrides,
            "seeds": self.seeds, "out": self.out, "exact_eval": self.exact_eval, "inner_threads": self.inner_threads,
        }

    def config_hash(self) -> str:
        """Hash of everything that influences a cell's results (environment contents included)."""
        doc = {k: v for k, v in self.to_dict().items() if k not in ("seeds", "out", "inner_threads", "env")}
        doc["env"] = self.env_doc()
        return hashlib.sha256(canonical(doc).encode()).hexdigest()[:16]


def canonical(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=True)


def resolve_threads(flag: int | None) -> int:
    """``--threads`` if given, else ``MG_EQUILIB_THREADS``, else 1."""
    if flag is not None:
        n = int(flag)
    else:
        raw = os.environ.get(THREADS_ENV, "").strip()
        try:
            n = int(raw) if raw else 1
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("thread count must be at least 1")
    return n


# -- evaluation ----------------------------------------------------------------

def evaluation_report(game: gm.TabularMarkovGame, policy: gm.MixtureMarkovPolicy) -> dict:
    """Per-player policy, best-response and modification values plus the gap triple at ``s_1``."""
    policy.check_compatible(game)
    s1 = game.initial_state
    m = game.num_players
    gaps = all_gaps(game, policy)
    return {
        "policy_values": evaluate_value(game, policy)[0, s1].tolist(),
        "best_response_values": [float(best_response_value(game, policy, i).values[0, s1]) for i in range(m)],
        "modification_values": [float(best_modification_value(game, policy, i).values[0, s1]) for i in range(m)],
        "gaps": {
            "nash": gaps["nash"].max if "nash" in gaps else None,
            "cce": gaps["cce"].max,
            "ce": gaps["ce"].max,
        },
    }


def _exact_row(game: gm.TabularMarkovGame, policy: gm.MixtureMarkovPolicy) -> dict:
    try:
        return evaluation_report(game, policy)
    except gm.CapExceeded as exc:
        return {"skipped": str(exc)}


# -- cells -----------------------------------------------------------------------

@dataclass
class CellResult:
    seed: int
    stream: str
    policy: str
    summary: dict


def build_and_run(cfg: ExperimentConfig, env: Environment, seed: int):
    """Run the configured algorithm; returns ``(result, output policy, per-episode policies, params dict)``."""
    mult = dict(cfg.multipliers)
    ov = dict(cfg.overrides)
    try:
        if cfg.algorithm in ("prefi", "prefi-agile"):
            params = default_params(cfg.epsilon, cfg.delta, env, mode=cfg.mode,
                                    cover="agile" if cfg.algorithm == "prefi-agile" else "lazy", **mult, **ov)
        elif cfg.algorithm == "prebo":
            params = default_prebo_params(cfg.epsilon, cfg.delta, env.game, cfg.mode, **mult, **ov)
        else:
            params = default_nash_params(cfg.epsilon, cfg.delta, env.game.horizon, env.game.num_players, **mult, **ov)
    except TypeError as exc:
        raise ConfigError(f"invalid override: {exc}") from None
    if cfg.algorithm == "nash-ca":
        res = run_nash_ca(env, params, seed, cfg.inner_threads)
        return res, res.policy, None, params.to_dict()
    if cfg.algorithm == "prebo":
        res = run_prebo(env.game, params, seed)
    else:
        res = run_prefi(env, params, seed, cfg.inner_threads)
    return res, res.policy, [e.policy for e in res.episodes], params.to_dict()


def run_cell(cfg: ExperimentConfig, seed: int) -> CellResult:
    """Run one seed, write its record stream and policy, and return the summary row."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{cfg.algorithm}-seed{seed}"
    env = cfg.build_env()
    started = time.perf_counter()
    before = gm.trajectory_count()
    res, policy, episode_policies, params = build_and_run(cfg, env, seed)
    counted = gm.trajectory_count() - before
    wall_ms = (time.perf_counter() - started) * 1000.0
    if counted != res.trajectories:
        raise RuntimeError(f"trajectory accounting mismatch: counter {counted} vs algorithm {res.trajectories}")

    lines = [{"type": "header", "config_hash": cfg.config_hash(), "seed": seed, "algorithm": cfg.algorithm,
              "mode": cfg.mode, "env": env.name, "params": params}]
    for idx, rec in enumerate(res.records):
        row = {"type": "episode", **rec}
        if cfg.exact_eval == "episode":
            if episode_policies is not None:
                pol = episode_policies[rec["episode"] - 1]
            else:
                pol = gm.MixtureMarkovPolicy.deterministic(np.asarray(rec["actions"]), env.game.action_counts)
            row["exact"] = _exact_row(env.game, pol)
        lines.append(row)

    exact = _exact_row(env.game, policy) if cfg.exact_eval != "off" else None
    gaps = exact.get("gaps") if exact else None
    if cfg.algorithm == "nash-ca":
        certified_bound, output_episode, stopped_by = None, res.episodes, (
            "no_improvement" if res.certified else "k_exhausted")
        extra = {"certified": res.certified, "potentials": res.potentials,
                 "profile": res.actions.tolist()}
    else:
        certified_bound, output_episode, stopped_by = res.certified_bound, res.output_episode, res.stopped_by
        extra = dict(res.extra)
    policy_file = f"{stem}.policy.json"
    final = {"type": "final", "config_hash": cfg.config_hash(), "seed": seed, "episodes": len(res.records),
             "output_episode": output_episode, "certified_bound": certified_bound, "stopped_by": stopped_by,
             "trajectories": res.trajectories, "trajectory_counter": counted, "exact": exact,
             "policy_file": policy_file, **extra}
    lines.append(final)
    stream = "".join(canonical(_plain(x)) + "\n" for x in lines)
    (out / f"{stem}.jsonl").write_text(stream)
    policy_text = canonical(policy.to_dict()) + "\n"
    (out / policy_file).write_text(policy_text)
    summary = {
        "seed": seed,
        "episodes": len(res.records),
        "trajectories": res.trajectories,
        "certified_bound": "" if certified_bound is None else repr(float(certified_bound)),
        "exact_cce_gap": "" if not gaps else repr(gaps["cce"]),
        "exact_ce_gap": "" if not gaps else repr(gaps["ce"]),
        "wall_ms": f"{wall_ms:.1f}",
    }
    return CellResult(seed, stream, policy_text, summary)


def _plain(x):
    """JSON-safe copy: numpy scalars and arrays become Python values."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    return x


def _cell_entry(args) -> tuple[int, CellResult | None, str | None]:
    cfg, seed = args
    try:
        return seed, run_cell(cfg, seed), None
    except Exception as exc:  # reported per cell; the run is flagged partial
        return seed, None, f"{type(exc).__name__}: {exc}"


@dataclass
class RunOutcome:
    cells: list
    failures: dict
    summary_path: Path

    @property
    def ok(self) -> bool:
        return not self.failures


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> RunOutcome:
    """Run every seed cell (in a process pool when ``threads > 1``) and write ``summary.csv``."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, s) for s in cfg.seeds]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            results = list(pool.map(_cell_entry, jobs))
    else:
        results = [_cell_entry(j) for j in jobs]
    cells = [r for _, r, err in results if r is not None]
    failures = {seed: err for seed, _, err in results if err is not None}
    summary_path = out / "summary.csv"
    with summary_path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
        w.writeheader()
        for c in cells:
            w.writerow(c.summary)
    partial = out / "PARTIAL"
    if failures:
        partial.write_text("".join(f"seed {s}: {e}\n" for s, e in sorted(failures.items())))
    elif partial.exists():
        partial.unlink()
    return RunOutcome(cells, failures, summary_path)


def read_stream(path: str | os.PathLike) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line]
