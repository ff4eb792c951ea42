"""Experiment driver: multi-seed runs, record files, aggregation, reporting.

Every (strategy, run) pair is simulated with its own derived seed and written
to its own CSV stream, so runs are independent, order-insensitive and safe to
execute in parallel. Aggregation is a separate pass over finished record
files that refuses to work on incomplete data.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence

import numpy as np

from .agent import AgentPair, ReplayMemory
from .config import ExperimentConfig, SimConfig, Strategy
from .env import SlicingEnv, valid_actions
from .scheduler import ConvergenceDetector, channel_budget, plan_episode, run_episode


class HarnessError(Exception):
    """Raised for unusable output locations or incomplete record sets."""


RECORD_FIELDS = ["run_id", "episode", "strategy", "t_rho_effective",
                 "mean_phi", "transitions_sent", "synced", "detector_fired"]
AGGREGATE_FIELDS = ["episode", "strategy", "mean", "p5", "p25", "p50", "p75", "p95"]


@dataclass(frozen=True)
class EpisodeRecord:
    run_id: int
    episode: int            # 1-based
    strategy: str
    t_rho_effective: int
    mean_phi: float
    transitions_sent: int
    synced: bool
    detector_fired: bool


@dataclass(frozen=True)
class AggregateRow:
    episode: int
    strategy: str
    mean: float
    p5: float
    p25: float
    p50: float
    p75: float
    p95: float


def derive_seed(base_seed: int, strategy_name: str, run_id: int,
                common: bool = False) -> int:
    """Stable per-(strategy, run) seed; with ``common`` the strategy is left
    out so different strategies share random numbers run for run."""
    key = f"run{run_id}" if common else f"{strategy_name}|run{run_id}"
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return (base_seed ^ int.from_bytes(digest[:8], "little")) & ((1 << 63) - 1)


def simulate_run(cfg: ExperimentConfig, strategy: Strategy,
                 run_id: int) -> Iterator[EpisodeRecord]:
    """One full coherence period of episodes for one strategy and seed."""
    seed = derive_seed(cfg.base_seed, strategy.name, run_id,
                       cfg.common_random_numbers)
    rng = np.random.default_rng(seed)
    env = SlicingEnv(cfg.sim)
    pair = AgentPair.create(rng, cfg.sim)
    memory = ReplayMemory(cfg.sim.memory_capacity)
    detector = ConvergenceDetector(cfg.detector_window)
    ideal = strategy.mode == "ideal"
    total_decisions = cfg.sim.decisions_per_episode
    for ep in range(cfg.episodes):
        plan = plan_episode(strategy, ep, detector, total_decisions,
                            cfg.sim.sync_every)
        budget = channel_budget(plan, cfg.sim)
        result = run_episode(env, pair, memory, plan, budget, rng, ideal=ideal)
        detector.update(result.mean_reward)
        yield EpisodeRecord(
            run_id=run_id,
            episode=ep + 1,
            strategy=strategy.name,
            t_rho_effective=plan.update_decisions,
            mean_phi=result.mean_reward,
            transitions_sent=result.transitions_sent,
            synced=result.synced,
            detector_fired=detector.fired,
        )


def record_path(records_dir: str, strategy: Strategy, run_id: int) -> str:
    return os.path.join(records_dir, f"{strategy.file_tag}__run{run_id:03d}.csv")


def _format_record(rec: EpisodeRecord) -> List[str]:
    return [str(rec.run_id), str(rec.episode), rec.strategy,
            str(rec.t_rho_effective), repr(rec.mean_phi),
            str(rec.transitions_sent), str(int(rec.synced)),
            str(int(rec.detector_fired))]


def write_run(cfg: ExperimentConfig, strategy: Strategy, run_id: int,
              records_dir: str, quiet: bool = False) -> str:
    path = record_path(records_dir, strategy, run_id)
    started = time.time()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(RECORD_FIELDS)
        for rec in simulate_run(cfg, strategy, run_id):
            writer.writerow(_format_record(rec))
    if not quiet:
        print(f"[slicesim] {strategy.name} run {run_id}: {cfg.episodes} episodes "
              f"in {time.time() - started:.1f}s", flush=True)
    return path


def _write_run_task(args) -> str:
    cfg, strategy, run_id, records_dir, quiet = args
    return write_run(cfg, strategy, run_id, records_dir, quiet)


def run_experiment(cfg: ExperimentConfig, out_dir: Optional[str] = None,
                   quiet: bool = False) -> List[str]:
    """Simulate every (strategy, run) pair and stream records to disk."""
    out = out_dir if out_dir is not None else cfg.output_dir
    records_dir = os.path.join(out, "records")
    try:
        os.makedirs(records_dir, exist_ok=True)
        probe = os.path.join(records_dir, ".write_probe")
        with open(probe, "w") as fh:
            fh.write("ok")
        os.remove(probe)
    except OSError as exc:
        raise HarnessError(f"output directory {out!r} is not writable: {exc}") from None
    tasks = [(cfg, strategy, run_id, records_dir, quiet)
             for strategy in cfg.strategies for run_id in range(cfg.num_runs)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            paths = list(pool.map(_write_run_task, tasks))
    else:
        paths = [_write_run_task(t) for t in tasks]
    return paths


# -- reading and aggregation ------------------------------------------------

class RunData:
    """Per-episode columns of one (strategy, run) record stream."""

    def __init__(self, strategy: str, run_id: int, mean_phi: np.ndarray,
                 fired: np.ndarray):
        self.strategy = strategy
        self.run_id = run_id
        self.mean_phi = mean_phi
        self.fired = fired

    @property
    def episodes(self) -> int:
        return len(self.mean_phi)

    def first_fired_episode(self) -> Optional[int]:
        hits = np.nonzero(self.fired)[0]
        return int(hits[0]) + 1 if len(hits) else None


def load_records(records_dir: str) -> Dict[str, Dict[int, RunData]]:
    if not os.path.isdir(records_dir):
        raise HarnessError(f"records directory {records_dir!r} does not exist")
    paths = sorted(
        os.path.join(records_dir, name)
        for name in os.listdir(records_dir) if name.endswith(".csv")
    )
    if not paths:
        raise HarnessError(f"no record files in {records_dir!r}")
    data: Dict[str, Dict[int, RunData]] = {}
    for path in paths:
        with open(path, "r", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != RECORD_FIELDS:
                raise HarnessError(f"{path}: unexpected header {header}")
            phis: List[float] = []
            fired: List[int] = []
            strategy = None
            run_id = None
            for row in reader:
                if strategy is None:
                    strategy = row[2]
                    run_id = int(row[0])
                episode = int(row[1])
                if episode != len(phis) + 1:
                    raise HarnessError(
                        f"strategy {row[2]} run {row[0]}: expected episode "
                        f"{len(phis) + 1}, found {episode} in {path}")
                phis.append(float(row[4]))
                fired.append(int(row[7]))
            if strategy is None:
                raise HarnessError(f"{path}: no records")
        runs = data.setdefault(strategy, {})
        if run_id in runs:
            raise HarnessError(f"duplicate records for strategy {strategy} run {run_id}")
        runs[run_id] = RunData(strategy, run_id,
                               np.array(phis, dtype=np.float64),
                               np.array(fired, dtype=np.uint8))
    return data


def nearest_rank(sorted_values: np.ndarray, percentile: float) -> float:
    """Classic nearest-rank percentile on an ascending array."""
    n = len(sorted_values)
    rank = int(np.ceil(percentile / 100.0 * n))
    rank = min(max(rank, 1), n)
    return float(sorted_values[rank - 1])


def aggregate(data: Dict[str, Dict[int, RunData]], stride: int,
              episodes: Optional[int] = None) -> List[AggregateRow]:
    """Mean and percentiles across runs of stride-smoothed reward curves.

    Every run of a strategy must cover every episode; anything missing is a
    hard error rather than a silently partial aggregate.
    """
    if stride < 1:
        raise HarnessError("stride must be >= 1")
    rows: List[AggregateRow] = []
    for strategy in sorted(data):
        runs = data[strategy]
        if not runs:
            raise HarnessError(f"strategy {strategy}: no runs")
        lengths = {rd.episodes for rd in runs.values()}
        n_eps = episodes if episodes is not None else max(lengths)
        for run_id in sorted(runs):
            have = runs[run_id].episodes
            if have < n_eps:
                raise HarnessError(
                    f"strategy {strategy} run {run_id}: missing episode {have + 1}")
        matrix = np.stack([runs[r].mean_phi[:n_eps] for r in sorted(runs)])
        for ep in range(stride, n_eps + 1, stride):
            window = matrix[:, ep - stride:ep]
            smoothed = window.mean(axis=1)
            ordered = np.sort(smoothed)
            rows.append(AggregateRow(
                episode=ep,
                strategy=strategy,
                mean=float(smoothed.mean()),
                p5=nearest_rank(ordered, 5),
                p25=nearest_rank(ordered, 25),
                p50=nearest_rank(ordered, 50),
                p75=nearest_rank(ordered, 75),
                p95=nearest_rank(ordered, 95),
            ))
    return rows


def write_aggregate_csv(rows: Sequence[AggregateRow], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(AGGREGATE_FIELDS)
        for row in rows:
            writer.writerow([str(row.episode), row.strategy, repr(row.mean),
                             repr(row.p5), repr(row.p25), repr(row.p50),
                             repr(row.p75), repr(row.p95)])


# -- sweep summary ------------------------------------------------------------

def sweep_report(data: Dict[str, Dict[int, RunData]]) -> dict:
    """Overall reward per strategy, the winner per mode, and for adaptive
    strategies the spread of detector firing episodes."""
    strategies = {}
    convergence = {}
    for name in sorted(data):
        runs = data[name]
        means = np.array([rd.mean_phi.mean() for rd in runs.values()])
        strategies[name] = {
            "overall_mean_phi": float(np.mean(means)),
            "runs": len(runs),
            "episodes": int(min(rd.episodes for rd in runs.values())),
        }
        if name.startswith("adaptive"):
            fired_eps = [rd.first_fired_episode() for rd in runs.values()]
            hits = sorted(e for e in fired_eps if e is not None)
            convergence[name] = {
                "fired_runs": len(hits),
                "total_runs": len(runs),
                "fired_episodes": hits,
                "median_fired_episode": (float(np.median(hits)) if hits else None),
            }

    def best(prefix: str) -> Optional[str]:
        names = [n for n in strategies if n.startswith(prefix)]
        if not names:
            return None
        return max(names, key=lambda n: strategies[n]["overall_mean_phi"])

    report = {
        "strategies": strategies,
        "best_overall": max(strategies, key=lambda n: strategies[n]["overall_mean_phi"]),
        "best_constant": best("constant"),
        "best_adaptive": best("adaptive"),
        "adaptive_convergence": convergence,
    }
    return report


def write_sweep_json(report: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def format_sweep_text(report: dict) -> str:
    lines = ["strategy            runs  mean phi"]
    for name, info in report["strategies"].items():
        lines.append(f"{name:<18} {info['runs']:>5}  {info['overall_mean_phi']:.4f}")
    lines.append(f"best overall : {report['best_overall']}")
    if report["best_constant"]:
        lines.append(f"best constant: {report['best_constant']}")
    if report["best_adaptive"]:
        lines.append(f"best adaptive: {report['best_adaptive']}")
    for name, conv in report["adaptive_convergence"].items():
        med = conv["median_fired_episode"]
        med_text = f"median episode {med:.0f}" if med is not None else "never fired"
        lines.append(f"{name}: fired in {conv['fired_runs']}/{conv['total_runs']} runs, {med_text}")
    return "\n".join(lines)


# -- fixed policies for reference runs ----------------------------------------

def uniform_random_policy(rng, env: SlicingEnv) -> int:
    acts = valid_actions(env.alloc)
    return acts[int(rng.integers(len(acts)))]


def noop_policy(rng, env: SlicingEnv) -> int:
    return 0


def simulate_policy(sim: SimConfig, policy: Callable, episodes: int,
                    seed: int) -> np.ndarray:
    """Episode mean rewards under a fixed policy: no training, no update phase."""
    rng = np.random.default_rng(seed)
    env = SlicingEnv(sim)
    out = np.empty(episodes, dtype=np.float64)
    for ep in range(episodes):
        env.reset(rng)
        for _ in range(sim.decisions_per_episode):
            env.step_decision_interval(policy(rng, env))
        out[ep] = env.episode_mean_phi()
    return out
