"""Experiment configuration files (TOML).

Every key is optional; missing keys fall back to the defaults of the
corresponding dataclass. Layout::

    strategy = "robust_qmask"      # traditional | constrained | qmask | robust_qmask
    seeds = [0, 1, 2, 3, 4]
    output_dir = "runs/robust"
    eval_episodes = 20

    [train]    # gamma, alpha, batch_size, buffer_capacity, episodes,
               # iterations_per_update, eps_start, eps_end, eps_decay_episodes,
               # hidden, eta, constraint_bounds, constraint_kinds
    [reward]   # b, c
    [safety]   # mode, horizon, psi_max_other, eps_den, margin
    [road]     # n_lanes, lane_width, length, v_min, v_max
    [sim]      # dt, policy_period, n_vehicles, psi_max, ambient_a_max, ego_a_max, ...
    [env]      # episode_duration, delta_v, sensing_range

``safety.mode`` defaults to ``robust`` for ``robust_qmask`` and ``basic``
otherwise; pairing a masking strategy with the other mode is rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .agents import STRATEGIES, TrainConfig
from .env import EnvConfig, RewardConfig
from .safety import SafetyConfig
from .sim import RoadConfig, SimConfig

TOP_LEVEL = ("strategy", "seeds", "output_dir", "eval_episodes")
ENV_KEYS = ("episode_duration", "delta_v", "sensing_range")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key path."""


@dataclass(frozen=True)
class ExperimentConfig:
    strategy: str = "traditional"
    train: TrainConfig = field(default_factory=TrainConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    safety: SafetyConfig = field(default_factory=SafetyConfig)
    road: RoadConfig = field(default_factory=RoadConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    episode_duration: float = 40.0
    delta_v: float = 5.0
    sensing_range: float = 100.0
    seeds: tuple[int, ...] = (0,)
    output_dir: str = "runs"

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy: unknown value {self.strategy!r}")
        if self.train.strategy != self.strategy:
            raise ConfigError("train.strategy: must match strategy")
        if not self.seeds:
            raise ConfigError("seeds: must be non-empty")
        if self.strategy == "qmask" and self.safety.mode != "basic":
            raise ConfigError("safety.mode: qmask requires the basic mask")
        if self.strategy == "robust_qmask" and self.safety.mode != "robust":
            raise ConfigError("safety.mode: robust_qmask requires the robust mask")
        if not self.episode_duration > 0:
            raise ConfigError("env.episode_duration: must be positive")
        if not self.delta_v > 0:
            raise ConfigError("env.delta_v: must be positive")
        if not self.sensing_range > 0:
            raise ConfigError("env.sensing_range: must be positive")

    @property
    def eval_episodes(self) -> int:
        return self.train.eval_episodes

    @property
    def horizon_steps(self) -> int:
        return int(round(self.episode_duration / self.sim.policy_period))

    def env_config(self) -> EnvConfig:
        return EnvConfig(
            road=self.road,
            sim=self.sim,
            reward=self.reward,
            episode_duration=self.episode_duration,
            delta_v=self.delta_v,
            sensing_range=self.sensing_range,
        )

    def environment_signature(self) -> tuple:
        """Settings that must agree for runs to be comparable."""
        return (self.road, self.sim, self.episode_duration, self.delta_v, self.sensing_range)


def _build(cls, section: str, values: dict, extra: dict | None = None):
    if not isinstance(values, dict):
        raise ConfigError(f"{section}: expected a table")
    names = {f.name: f for f in fields(cls)}
    kwargs = dict(extra or {})
    for key, val in values.items():
        if key not in names or key in kwargs:
            raise ConfigError(f"{section}.{key}: unknown key")
        default = getattr(cls(), key) if key != "strategy" else None
        if isinstance(default, tuple) and isinstance(val, list):
            val = tuple(val)
        elif isinstance(default, float) and isinstance(val, int) and not isinstance(val, bool):
            val = float(val)
        kwargs[key] = val
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def config_from_dict(data: dict[str, Any]) -> ExperimentConfig:
    """Validated experiment configuration from a parsed mapping."""
    sections = {"train", "reward", "safety", "road", "sim", "env"}
    for key in data:
        if key not in sections and key not in TOP_LEVEL:
            raise ConfigError(f"{key}: unknown key")
    strategy = data.get("strategy", "traditional")
    if strategy not in STRATEGIES:
        raise ConfigError(f"strategy: unknown value {strategy!r}")
    extra_train = {"strategy": strategy}
    if "eval_episodes" in data:
        extra_train["eval_episodes"] = data["eval_episodes"]
    train = _build(TrainConfig, "train", data.get("train", {}), extra_train)
    reward = _build(RewardConfig, "reward", data.get("reward", {}))
    safety_values = dict(data.get("safety", {}))
    safety_values.setdefault("mode", "robust" if strategy == "robust_qmask" else "basic")
    safety = _build(SafetyConfig, "safety", safety_values)
    road = _build(RoadConfig, "road", data.get("road", {}))
    sim = _build(SimConfig, "sim", data.get("sim", {}))
    env = data.get("env", {})
    for key in env:
        if key not in ENV_KEYS:
            raise ConfigError(f"env.{key}: unknown key")
    seeds = data.get("seeds", [0])
    if not isinstance(seeds, list) or not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise ConfigError("seeds: expected a list of non-negative integers")
    try:
        return ExperimentConfig(
            strategy=strategy,
            train=train,
            reward=reward,
            safety=safety,
            road=road,
            sim=sim,
            seeds=tuple(seeds),
            output_dir=str(data.get("output_dir", "runs")),
            **{k: float(v) for k, v in env.items()},
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: no such file")
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: malformed TOML ({exc})") from exc
    return config_from_dict(data)


def config_to_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    """Mapping that ``config_from_dict`` turns back into ``cfg``."""

    def plain(obj, skip=()):
        out = {}
        for f in fields(obj):
            if f.name in skip:
                continue
            v = getattr(obj, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    return {
        "strategy": cfg.strategy,
        "seeds": list(cfg.seeds),
        "output_dir": cfg.output_dir,
        "train": plain(cfg.train, skip=("strategy",)),
        "reward": plain(cfg.reward),
        "safety": plain(cfg.safety),
        "road": plain(cfg.road),
        "sim": plain(cfg.sim),
        "env": {k: getattr(cfg, k) for k in ENV_KEYS},
    }


def with_overrides(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    return dataclasses.replace(cfg, **changes)
