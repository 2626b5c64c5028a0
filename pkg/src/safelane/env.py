"""Episodic MDP around the highway simulator.

The agent picks one of five meta-actions once per policy period; the
environment turns it into a low-level control profile, runs the simulator
for one period and returns the 26-dimensional observation.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .sim import (
    RoadConfig,
    Scene,
    SimConfig,
    VehicleState,
    advance_vehicle,
    ego_collisions,
    heading_rate_toward,
    lane_keep_goal,
    make_scene,
    nearest_neighbors,
    step_scene,
)

N_SLOTS = 4
SLOT_SIZE = 6
OBS_SIZE = N_SLOTS * SLOT_SIZE + 2
DEFAULT_DELTA_V = 5.0


class MetaAction(enum.IntEnum):
    IDLE = 0
    LANE_RIGHT = 1
    LANE_LEFT = 2
    FASTER = 3
    SLOWER = 4


N_ACTIONS = len(MetaAction)


@dataclass(frozen=True)
class RewardConfig:
    b: float = 1.0
    c: float = 10.0
    mode: str = "traditional"

    def __post_init__(self) -> None:
        if not self.b > 0:
            raise ValueError("reward coefficient b must be positive")
        if self.c < 0:
            raise ValueError("collision penalty c must be non-negative")
        if self.mode not in ("traditional", "speed_only"):
            raise ValueError(f"unknown reward mode {self.mode!r}")


@dataclass(frozen=True)
class EnvConfig:
    road: RoadConfig = field(default_factory=RoadConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    episode_duration: float = 40.0
    delta_v: float = DEFAULT_DELTA_V
    sensing_range: float = 100.0


@dataclass(frozen=True)
class Observation:
    """Raw road-frame features and the normalized copy fed to the network.

    Layout: four neighbour slots of ``(dx, dy, dvx, dvy, psi, flag)`` in
    ascending distance, then ``v_ego`` and ``psi_ego``.
    """

    raw: np.ndarray
    normalized: np.ndarray

    def slot(self, i: int) -> np.ndarray:
        return self.raw[i * SLOT_SIZE : (i + 1) * SLOT_SIZE]

    @property
    def v_ego(self) -> float:
        return float(self.raw[-2])

    @property
    def psi_ego(self) -> float:
        return float(self.raw[-1])


@dataclass(frozen=True)
class StepResult:
    obs: Observation
    reward: float
    terminal: bool
    info: dict


@dataclass(frozen=True)
class ControlProfile:
    """Per-micro-step ego controls for one policy period and the states they produce."""

    action: MetaAction
    controls: tuple[tuple[float, float], ...]
    states: tuple[VehicleState, ...]
    target_lane: Optional[int]


def build_observation(
    scene: Scene, sensing_range: float = 100.0, psi_max: Optional[float] = None
) -> Observation:
    psi_max = scene.sim.psi_max if psi_max is None else psi_max
    v_max = scene.road.v_max
    ego = scene.ego
    raw = np.zeros(OBS_SIZE)
    scale = np.zeros(OBS_SIZE)
    evx, evy = ego.v * math.cos(ego.psi), ego.v * math.sin(ego.psi)
    for i, (v, _) in enumerate(nearest_neighbors(scene, N_SLOTS, sensing_range)):
        raw[i * SLOT_SIZE : (i + 1) * SLOT_SIZE] = (
            v.x - ego.x,
            v.y - ego.y,
            v.v * math.cos(v.psi) - evx,
            v.v * math.sin(v.psi) - evy,
            v.psi,
            1.0,
        )
    raw[-2] = ego.v
    raw[-1] = ego.psi
    for i in range(N_SLOTS):
        k = i * SLOT_SIZE
        scale[k : k + 2] = sensing_range
        scale[k + 2 : k + 4] = v_max
        scale[k + 4] = psi_max
        scale[k + 5] = 1.0
    scale[-2] = v_max
    scale[-1] = psi_max
    normalized = np.clip(raw / scale, -1.0, 1.0)
    return Observation(raw, normalized)


def admissible_actions(scene: Scene, delta_v: float = DEFAULT_DELTA_V) -> list[MetaAction]:
    """Meta-actions that respect the speed band and the road edges, in index order."""
    road = scene.road
    ego = scene.ego
    lane = road.lane_of(ego.y)
    out = [MetaAction.IDLE]
    if lane > 0:
        out.append(MetaAction.LANE_RIGHT)
    if lane < road.n_lanes - 1:
        out.append(MetaAction.LANE_LEFT)
    if ego.v + delta_v <= road.v_max + 1e-9:
        out.append(MetaAction.FASTER)
    if ego.v - delta_v >= road.v_min - 1e-9:
        out.append(MetaAction.SLOWER)
    return out


def _lane_change_goals(y0: float, y1: float, n: int) -> list[float]:
    """Lateral targets for boundaries 2..n+1 of a trapezoidal lateral-speed move.

    The first micro-step cannot move laterally (heading is set one step ahead),
    so the whole displacement happens over steps 1..n-1.
    """
    weights = np.ones(n - 1)
    weights[0] = weights[-1] = 0.5
    cum = np.cumsum(weights) / weights.sum()
    return [y0 + (y1 - y0) * float(cum[k]) if k < n - 1 else y1 for k in range(n)]


def apply_meta_action(
    scene: Scene, action: MetaAction | int, delta_v: float = DEFAULT_DELTA_V
) -> ControlProfile:
    """Low-level ego controls realizing ``action`` over one policy period.

    Speed actions track ``v +/- delta_v`` with saturated deadbeat control; the
    other actions hold the current speed. Lane changes follow a precomputed
    lateral path that reaches the neighbouring lane centre by the end of the
    period.
    """
    action = MetaAction(action)
    if action not in admissible_actions(scene, delta_v):
        raise ValueError(f"{action.name} is not admissible in this scene")
    road, sim = scene.road, scene.sim
    dt, n = sim.dt, sim.steps_per_period
    ego = scene.ego
    lane = road.lane_of(ego.y)
    v_target = ego.v
    target_lane = None
    if action is MetaAction.FASTER:
        v_target = ego.v + delta_v
    elif action is MetaAction.SLOWER:
        v_target = ego.v - delta_v
    elif action is MetaAction.LANE_LEFT:
        target_lane = lane + 1
    elif action is MetaAction.LANE_RIGHT:
        target_lane = lane - 1
    goals = None
    if target_lane is not None:
        goals = _lane_change_goals(ego.y, road.lane_center(target_lane), n)

    s = ego
    controls = []
    states = [s]
    for k in range(n):
        accel = min(max((v_target - s.v) / dt, -s.a_max), s.a_max)
        if goals is not None:
            y_goal = goals[k]
        else:
            y_goal = lane_keep_goal(s, lane, road, dt, sim.lateral_tau)
        rate = heading_rate_toward(s, accel, y_goal, dt, sim.psi_max)
        controls.append((accel, rate))
        s = advance_vehicle(s, accel, rate, dt, road, sim.psi_max)
        states.append(s)
    return ControlProfile(action, tuple(controls), tuple(states), target_lane)


def _check_speed(v: float, road: RoadConfig) -> None:
    if not road.v_min - 1e-6 <= v <= road.v_max + 1e-6:
        raise ValueError(f"ego speed {v} outside [{road.v_min}, {road.v_max}]")


def reward_traditional(
    ego_v: float, collided: bool, cfg: RewardConfig, road: RoadConfig
) -> float:
    """Normalized speed reward minus ``c`` on collision."""
    _check_speed(ego_v, road)
    speed = cfg.b * (ego_v - road.v_min) / (road.v_max - road.v_min)
    return speed - (cfg.c if collided else 0.0)


def reward_speed(ego_v: float, cfg: RewardConfig, road: RoadConfig) -> float:
    _check_speed(ego_v, road)
    return cfg.b * (ego_v - road.v_min) / (road.v_max - road.v_min)


class HighwayEnv:
    """Single-agent highway MDP with a 1 s decision period."""

    def __init__(self, cfg: EnvConfig = EnvConfig()):
        self.cfg = cfg
        self._scene: Optional[Scene] = None
        self._terminal = False
        self.step_count = 0

    @property
    def scene(self) -> Scene:
        if self._scene is None:
            raise RuntimeError("call reset() first")
        return self._scene

    def reset(self, seed: int | np.random.SeedSequence) -> Observation:
        return self.load_scene(make_scene(seed, self.cfg.road, self.cfg.sim))

    def load_scene(self, scene: Scene) -> Observation:
        """Start an episode from a prepared scene (used for constructed situations)."""
        self._scene = scene
        self._terminal = False
        self.step_count = 0
        return self.observe()

    def observe(self) -> Observation:
        return build_observation(self.scene, self.cfg.sensing_range)

    def admissible_actions(self) -> list[MetaAction]:
        return admissible_actions(self.scene, self.cfg.delta_v)

    def step(self, action: MetaAction | int) -> StepResult:
        if self._scene is None:
            raise RuntimeError("call reset() first")
        if self._terminal:
            raise RuntimeError("episode is over; call reset()")
        profile = apply_meta_action(self._scene, action, self.cfg.delta_v)
        scene = replace(self._scene, ego_target_lane=profile.target_lane)
        hit: list[int] = []
        for controls in profile.controls:
            scene = step_scene(scene, controls)
            hit = ego_collisions(scene)
            if hit:
                break
        scene.ego_target_lane = None
        self._scene = scene
        self.step_count += 1
        collided = bool(hit)
        ego = scene.ego
        if self.cfg.reward.mode == "traditional":
            reward = reward_traditional(ego.v, collided, self.cfg.reward, self.cfg.road)
        else:
            reward = reward_speed(ego.v, self.cfg.reward, self.cfg.road)
        self._terminal = collided or scene.t >= self.cfg.episode_duration - 1e-9
        info = {
            "collision": collided,
            "collided_with": hit,
            "ego_v": ego.v,
            "ego_lane": ego.lane,
            "t": scene.t,
        }
        return StepResult(self.observe(), reward, self._terminal, info)


TRACE_COLUMNS = ("step", "action", "reward", "ego_v", "ego_lane", "collision", "terminal")


def write_trace(rows: Iterable[dict], path: str | Path) -> None:
    """Episode trace as CSV with one row per policy step."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
