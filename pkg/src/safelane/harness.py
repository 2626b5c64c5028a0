"""Training, evaluation and strategy comparison runs with CSV outputs."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .agents import (
    Agent,
    ConstrainedState,
    EpisodeResult,
    dual_update,
    epsilon_at,
    return_bounds,
    run_episode,
)
from .config import ExperimentConfig
from .env import OBS_SIZE, N_ACTIONS, HighwayEnv
from .neural import QNetwork, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

TRAIN_COLUMNS = (
    "episode",
    "epsilon",
    "total_reward",
    "steps",
    "collision",
    "loss_mean",
    "q_change",
    "lambda_norm",
)
EVAL_COLUMNS = (
    "episode",
    "total_reward",
    "steps",
    "collision",
    "time_to_collision",
    "reward_before_collision",
)
TRAIN_PURPOSE, EVAL_PURPOSE = 0, 1
PLATEAU_WINDOW = 20
PLATEAU_FRACTION = 0.9
TABLE_ROWS = 7


class TrainingAborted(RuntimeError):
    """Training produced non-finite parameters; logs written so far are kept."""


def episode_seed(seed: int, purpose: int, k: int) -> np.random.SeedSequence:
    """Independent scenario seed for episode ``k`` of a training or evaluation run."""
    return np.random.SeedSequence([seed, purpose, k])


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


def moving_average(values: Sequence[float], window: int = PLATEAU_WINDOW) -> np.ndarray:
    """Trailing means over complete windows; entry ``i`` ends at episode ``i + window - 1``."""
    v = np.asarray(values, dtype=float)
    if len(v) < window:
        return np.zeros(0)
    c = np.concatenate([[0.0], np.cumsum(v)])
    return (c[window:] - c[:-window]) / window


def episodes_to_plateau(
    rewards: Sequence[float], window: int = PLATEAU_WINDOW, fraction: float = PLATEAU_FRACTION
) -> Optional[int]:
    """First episode whose trailing moving average gets within ``1 - fraction`` of the final one.

    The level is ``final - (1 - fraction) * |final|``, which is ``fraction *
    final`` for a positive final average and stays below it for a negative
    one. Returns ``None`` when there are fewer than ``window`` episodes.
    """
    ma = moving_average(rewards, window)
    if ma.size == 0:
        return None
    final = ma[-1]
    level = final - (1.0 - fraction) * abs(final)
    hit = int(np.flatnonzero(ma >= level - 1e-12)[0])
    return hit + window - 1


def min_max_scale(values: Sequence[float]) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return v
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def _write_csv(path: Path, columns: Sequence[str], rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(row.get(c)) if not isinstance(row.get(c), str) else row[c] for c in columns])


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@dataclass
class RunMetrics:
    rows: list[dict] = field(default_factory=list)
    collision_count: int = 0
    mean_reward_before_collision: float = float("nan")
    episodes_to_plateau: Optional[int] = None

    def table_view(self, n: int = TABLE_ROWS) -> list[str]:
        """Time to collision for the first ``n`` episodes, ``-`` when none occurred."""
        out = []
        for row in self.rows[:n]:
            ttc = row.get("time_to_collision")
            out.append("-" if ttc is None else f"{ttc:g}")
        return out


@dataclass
class TrainingResult:
    seed: int
    run_dir: Path
    checkpoint: Path
    log_path: Path
    metrics: RunMetrics
    agent: Agent
    constrained: Optional[ConstrainedState]


def _make_agent(cfg: ExperimentConfig, seed: int) -> Agent:
    bounds = return_bounds(cfg.strategy, cfg.reward, cfg.train.gamma)
    return Agent(cfg.train, seed=seed, obs_size=OBS_SIZE, value_bounds=bounds)


def _constrained_state(cfg: ExperimentConfig) -> Optional[ConstrainedState]:
    if cfg.strategy != "constrained":
        return None
    t = cfg.train
    return ConstrainedState(
        np.zeros(len(t.constraint_bounds)), t.eta, np.array(t.constraint_bounds), t.constraint_kinds
    )


def run_training(
    cfg: ExperimentConfig, seed: int, out_dir: str | Path, episodes: Optional[int] = None
) -> TrainingResult:
    """Train one agent and write ``train_log.csv``, ``checkpoint.txt`` and ``summary.csv``.

    Log rows are flushed as episodes finish, so an aborted run keeps them.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_episodes = cfg.train.episodes if episodes is None else episodes
    env = HighwayEnv(cfg.env_config())
    agent = _make_agent(cfg, seed)
    cs = _constrained_state(cfg)
    log_path = out / "train_log.csv"
    metrics = RunMetrics()
    rewards = []
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAIN_COLUMNS)
        for ep in range(n_episodes):
            eps = epsilon_at(cfg.train, ep)
            res = run_episode(
                env, agent, episode_seed(seed, TRAIN_PURPOSE, ep), eps, cfg.safety, cs=cs
            )
            loss = agent.update()
            if cs is not None:
                cs = dual_update(cs, res.avg_violation)
            row = {
                "episode": ep,
                "epsilon": eps,
                "total_reward": res.total_reward,
                "steps": res.steps,
                "collision": res.collision,
                "loss_mean": loss,
                "q_change": agent.q_change,
                "lambda_norm": None if cs is None else float(np.linalg.norm(cs.lambdas)),
            }
            writer.writerow([fmt(row[c]) for c in TRAIN_COLUMNS])
            fh.flush()
            metrics.rows.append(row)
            rewards.append(res.total_reward)
            metrics.collision_count += int(res.collision)
            if not np.all(np.isfinite(agent.net.flat())):
                raise TrainingAborted(
                    f"non-finite network parameters after episode {ep}; partial log in {log_path}"
                )
    metrics.episodes_to_plateau = episodes_to_plateau(rewards)
    if rewards:
        metrics.mean_reward_before_collision = float(
            np.mean([r["total_reward"] for r in metrics.rows])
        )
    ckpt = out / "checkpoint.txt"
    save_checkpoint(agent.net, ckpt, step=agent.adam.t)
    ma = moving_average(rewards)
    _write_csv(
        out / "summary.csv",
        ("seed", "strategy", "episodes", "train_collisions", "final_moving_average", "episodes_to_plateau"),
        [
            {
                "seed": seed,
                "strategy": cfg.strategy,
                "episodes": n_episodes,
                "train_collisions": metrics.collision_count,
                "final_moving_average": ma[-1] if ma.size else None,
                "episodes_to_plateau": metrics.episodes_to_plateau,
            }
        ],
    )
    return TrainingResult(seed, out, ckpt, log_path, metrics, agent, cs)


def _eval_row(k: int, res: EpisodeResult) -> dict:
    return {
        "episode": k,
        "total_reward": res.total_reward,
        "steps": res.steps,
        "collision": res.collision,
        "time_to_collision": res.time_to_collision,
        "reward_before_collision": res.reward_before_collision,
    }


def run_eval(
    cfg: ExperimentConfig,
    checkpoint: str | Path | QNetwork,
    seed: int = 0,
    episodes: Optional[int] = None,
    out_path: Optional[str | Path] = None,
) -> RunMetrics:
    """Greedy evaluation on scenarios disjoint from training.

    Masking stays active for masked strategies. The constrained strategy is
    scored with its multipliers at zero, i.e. on the plain speed reward.
    """
    if isinstance(checkpoint, QNetwork):
        net = checkpoint.clone()
    else:
        net = load_checkpoint(checkpoint)[0]
    expected = (OBS_SIZE, *cfg.train.hidden, N_ACTIONS)
    if net.dims != expected:
        raise ValueError(f"checkpoint layers {net.dims} do not match configuration {expected}")
    n = cfg.eval_episodes if episodes is None else episodes
    env = HighwayEnv(cfg.env_config())
    agent = _make_agent(cfg, seed)
    agent.net = net
    cs = _constrained_state(cfg)
    rng = np.random.default_rng(np.random.SeedSequence([seed, EVAL_PURPOSE, 2**31]))
    metrics = RunMetrics()
    for k in range(n):
        res = run_episode(
            env,
            agent,
            episode_seed(seed, EVAL_PURPOSE, k),
            0.0,
            cfg.safety,
            learn=False,
            cs=cs,
            rng=rng,
        )
        metrics.rows.append(_eval_row(k, res))
        metrics.collision_count += int(res.collision)
    if metrics.rows:
        metrics.mean_reward_before_collision = float(
            np.mean([r["reward_before_collision"] for r in metrics.rows])
        )
    if out_path is not None:
        write_eval_csv(metrics, out_path)
    return metrics


def write_eval_csv(metrics: RunMetrics, path: str | Path) -> None:
    rows = [dict(r, time_to_collision=r["time_to_collision"] if r["collision"] else "-") for r in metrics.rows]
    for r in rows:
        if r["time_to_collision"] != "-":
            r["time_to_collision"] = fmt(r["time_to_collision"])
    _write_csv(Path(path), EVAL_COLUMNS, rows)


@dataclass
class StrategyRuns:
    label: str
    cfg: ExperimentConfig
    train: dict[int, list[float]] = field(default_factory=dict)
    plateau: dict[int, Optional[int]] = field(default_factory=dict)
    train_collisions: dict[int, int] = field(default_factory=dict)
    eval: dict[int, RunMetrics] = field(default_factory=dict)


def _labels(cfgs: Sequence[ExperimentConfig]) -> list[str]:
    seen: dict[str, int] = {}
    out = []
    for c in cfgs:
        seen[c.strategy] = seen.get(c.strategy, 0) + 1
        out.append(c.strategy if seen[c.strategy] == 1 else f"{c.strategy}_{seen[c.strategy]}")
    return out


def _ranks(values: dict[str, Optional[int]]) -> dict[str, int]:
    """Rank 1 for the fewest episodes; runs without a plateau rank last; ties share a rank."""
    key = {k: (math.inf if v is None else v) for k, v in values.items()}
    return {k: 1 + sum(1 for o in key.values() if o < key[k]) for k in key}


def _train_quietly(cfg: ExperimentConfig, seed: int, run_dir: Path, episodes: Optional[int]) -> None:
    run_training(cfg, seed, run_dir, episodes)


def compare_strategies(
    cfgs: Sequence[ExperimentConfig],
    out_dir: str | Path,
    seeds: Optional[Sequence[int]] = None,
    episodes: Optional[int] = None,
    eval_episodes: Optional[int] = None,
    reuse: bool = True,
    workers: int = 1,
) -> list[StrategyRuns]:
    """Train and evaluate each configuration on each seed and write comparison tables.

    Completed runs found under ``out_dir`` (a ``summary.csv`` next to the
    log and checkpoint) are read back instead of retrained when ``reuse``.
    With ``workers > 1`` the training runs execute in separate processes;
    every run is independent, so the outputs do not depend on ``workers``.
    """
    if len(cfgs) < 2:
        raise ValueError("need at least two configurations to compare")
    sig = cfgs[0].environment_signature()
    for c in cfgs[1:]:
        if c.environment_signature() != sig:
            raise ValueError("configurations use different environment settings")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labels = _labels(cfgs)
    seeds = list(cfgs[0].seeds if seeds is None else seeds)
    pending = []
    for label, cfg in zip(labels, cfgs):
        for seed in seeds:
            run_dir = out / label / f"seed_{seed}"
            done = (run_dir / "summary.csv").is_file() and (run_dir / "checkpoint.txt").is_file()
            if not (reuse and done):
                pending.append((cfg, seed, run_dir, episodes))
    if workers > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for fut in [pool.submit(_train_quietly, *job) for job in pending]:
                fut.result()
    else:
        for job in pending:
            run_training(*job)
    runs = []
    for label, cfg in zip(labels, cfgs):
        sr = StrategyRuns(label, cfg)
        for seed in seeds:
            run_dir = out / label / f"seed_{seed}"
            rows = read_csv(run_dir / "train_log.csv")
            rewards = [float(r["total_reward"]) for r in rows]
            sr.train[seed] = rewards
            sr.plateau[seed] = episodes_to_plateau(rewards)
            sr.train_collisions[seed] = sum(int(r["collision"]) for r in rows)
            sr.eval[seed] = run_eval(
                cfg,
                run_dir / "checkpoint.txt",
                seed,
                eval_episodes,
                out_path=run_dir / "eval.csv",
            )
        runs.append(sr)
    _write_comparison(runs, seeds, out)
    return runs


def _write_comparison(runs: Sequence[StrategyRuns], seeds: Sequence[int], out: Path) -> None:
    for sr in runs:
        n = max((len(v) for v in sr.train.values()), default=0)
        cols = ["episode"] + [f"seed_{s}" for s in seeds] + ["mean"]
        scaled = {s: min_max_scale(moving_average(sr.train[s]) if len(sr.train[s]) >= PLATEAU_WINDOW else sr.train[s]) for s in seeds}
        offset = PLATEAU_WINDOW - 1 if all(len(sr.train[s]) >= PLATEAU_WINDOW for s in seeds) else 0
        rows = []
        for i in range(n - offset):
            row = {"episode": i + offset}
            vals = []
            for s in seeds:
                v = scaled[s][i] if i < len(scaled[s]) else None
                row[f"seed_{s}"] = v
                if v is not None:
                    vals.append(v)
            row["mean"] = float(np.mean(vals)) if vals else None
            rows.append(row)
        _write_csv(out / f"curve_{sr.label}.csv", cols, rows)

    plateau_rows, coll_rows, reward_rows = [], [], []
    for s in seeds:
        ranks = _ranks({sr.label: sr.plateau[s] for sr in runs})
        for sr in runs:
            plateau_rows.append(
                {"strategy": sr.label, "seed": s, "episodes_to_plateau": sr.plateau[s], "rank": ranks[sr.label]}
            )
            m = sr.eval[s]
            coll_rows.append(
                {
                    "strategy": sr.label,
                    "seed": s,
                    "train_collisions": sr.train_collisions[s],
                    "eval_collisions": m.collision_count,
                    "eval_episodes": len(m.rows),
                    "first_times_to_collision": " ".join(m.table_view()),
                }
            )
            reward_rows.append(
                {"strategy": sr.label, "seed": s, "mean_reward_before_collision": m.mean_reward_before_collision}
            )
    _write_csv(out / "plateau.csv", ("strategy", "seed", "episodes_to_plateau", "rank"), plateau_rows)
    _write_csv(
        out / "collisions.csv",
        ("strategy", "seed", "train_collisions", "eval_collisions", "eval_episodes", "first_times_to_collision"),
        coll_rows,
    )
    _write_csv(out / "reward_before_collision.csv", ("strategy", "seed", "mean_reward_before_collision"), reward_rows)
    (out / "summary.txt").write_text(comparison_summary(runs, seeds))


def comparison_summary(runs: Sequence[StrategyRuns], seeds: Sequence[int]) -> str:
    lines = ["strategy            median plateau  eval collisions  mean reward before collision"]
    for sr in runs:
        plateaus = [p for p in sr.plateau.values() if p is not None]
        med = f"{np.median(plateaus):g}" if plateaus else "-"
        coll = sum(m.collision_count for m in sr.eval.values())
        n = sum(len(m.rows) for m in sr.eval.values())
        rewards = [m.mean_reward_before_collision for m in sr.eval.values() if m.rows]
        rew = f"{np.mean(rewards):.3f}" if rewards else "-"
        lines.append(f"{sr.label:<19} {med:>14}  {coll:>7} / {n:<6}  {rew:>10}")
    lines.append("")
    lines.append("plateau rank per seed (1 = fastest):")
    for s in seeds:
        ranks = _ranks({sr.label: sr.plateau[s] for sr in runs})
        lines.append(f"  seed {s}: " + ", ".join(f"{k}={v}" for k, v in ranks.items()))
    lines.append("")
    lines.append("time to collision, first episodes of each evaluation ('-' = none):")
    for sr in runs:
        for s in seeds:
            lines.append(f"  {sr.label} seed {s}: " + " ".join(sr.eval[s].table_view()))
    return "\n".join(lines) + "\n"
