"""Kinematic action masking.

For every admissible meta-action the ego trajectory over the look-ahead
horizon is checked against the free space of each lane it occupies. The free
space is bounded by the worst-case envelopes of the vehicles ahead (full
braking) and behind (full acceleration), each padded by a safe distance that
grows with the closing speed. Robust mode also treats vehicles in
adjacent lanes as potential leaders/followers when their worst-case heading
lets them reach the lane within the horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .env import DEFAULT_DELTA_V, N_ACTIONS, MetaAction, admissible_actions, apply_meta_action
from .sim import RoadConfig, Scene, VehicleState, ego_collisions, footprint_lanes

MODES = ("basic", "robust")


@dataclass(frozen=True)
class SafetyConfig:
    mode: str = "basic"
    horizon: float = 1.0
    psi_max_other: float = 0.26
    eps_den: float = 0.1
    margin: float = 2.0
    sensing_range: float = 100.0

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown safety mode {self.mode!r}")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if not self.eps_den > 0:
            raise ValueError("eps_den must be positive")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")
        if self.psi_max_other < 0:
            raise ValueError("psi_max_other must be non-negative")


@dataclass(frozen=True)
class FreeSpace:
    """Open interval of ego positions in ``lane``; empty when ``lower >= upper``."""

    lane: int
    lower: float
    upper: float

    @property
    def empty(self) -> bool:
        return not self.lower < self.upper

    def contains(self, p: float) -> bool:
        return self.lower < p < self.upper


@dataclass(frozen=True)
class VirtualNeighbor:
    """A vehicle from an adjacent lane projected into ``state.lane``."""

    source: VehicleState
    state: VehicleState
    reach: float
    lateral_gap: float


@dataclass(frozen=True)
class SafetyMask:
    mode: str
    safe: tuple[bool, ...]
    verdict: tuple[bool, ...]
    clearance: tuple[float, ...]
    leader_penetration: tuple[float, ...]
    follower_penetration: tuple[float, ...]
    free_spaces: tuple[FreeSpace, ...]
    virtual_neighbors: tuple[VirtualNeighbor, ...] = ()
    fallback: bool = False

    @property
    def safe_actions(self) -> list[MetaAction]:
        return [MetaAction(i) for i, ok in enumerate(self.safe) if ok]

    def as_array(self) -> np.ndarray:
        return np.array(self.safe, dtype=bool)


def predict_position(p0: float, v: float, a: float, t: float) -> float:
    """Constant-acceleration position; braking stops at zero speed instead of reversing."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if a < 0 and v + a * t < 0:
        t = v / -a
    return p0 + v * t + 0.5 * a * t * t


def predict_speed(v: float, a: float, t: float) -> float:
    return max(0.0, v + a * t)


def safe_distance(
    v_other: float, v_ego: float, a_max_other: float, a_max_ego: float, cfg: SafetyConfig
) -> float:
    """Kinematic buffer ``dv^2 / (2 (|a_other| - |a_ego|)) + margin`` with a guarded denominator."""
    if not (a_max_other > 0 and a_max_ego > 0):
        raise ValueError("maximum accelerations must be positive")
    den = max(abs(a_max_other) - abs(a_max_ego), cfg.eps_den)
    return (v_other - v_ego) ** 2 / (2.0 * den) + cfg.margin


def free_space(
    lane: int,
    ego_pos: float,
    leader_pos: Optional[float] = None,
    follower_pos: Optional[float] = None,
    leader_safe: float = 0.0,
    follower_safe: float = 0.0,
    sensing_range: float = 100.0,
) -> FreeSpace:
    """Interval ``(P_f + P_safe_f, P_l - P_safe_l)``; a missing side opens to the sensing window.

    Positions are those the ego centre may take, i.e. body lengths are
    already folded into ``leader_pos`` / ``follower_pos``.
    """
    lower = ego_pos - sensing_range if follower_pos is None else follower_pos + follower_safe
    upper = ego_pos + sensing_range if leader_pos is None else leader_pos - leader_safe
    return FreeSpace(lane, lower, upper)


def _lateral_gap(v: VehicleState, lane: int, road: RoadConfig) -> float:
    half = 0.5 * v.width * math.cos(v.psi) + 0.5 * v.length * abs(math.sin(v.psi))
    lo, hi = lane * road.lane_width, (lane + 1) * road.lane_width
    if v.y < lo:
        return lo - (v.y + half)
    return (v.y - half) - hi


def worst_case_merge_set(
    scene: Scene, cfg: SafetyConfig, lanes: Optional[Sequence[int]] = None
) -> list[VirtualNeighbor]:
    """Vehicles in lanes adjacent to ``lanes`` that could swerve into them within the horizon."""
    road = scene.road
    ego = scene.ego
    lanes = range(road.n_lanes) if lanes is None else lanes
    out = []
    for lane in lanes:
        for v in scene.vehicles:
            if v.is_ego or abs(v.x - ego.x) > cfg.sensing_range:
                continue
            occupied = footprint_lanes(v, road)
            if lane in occupied or min(abs(k - lane) for k in occupied) != 1:
                continue
            reach = abs(v.v * math.sin(cfg.psi_max_other) * cfg.horizon)
            gap = _lateral_gap(v, lane, road)
            if reach > gap:
                proj = replace(v, y=road.lane_center(lane), lane=lane, psi=0.0)
                out.append(VirtualNeighbor(v, proj, reach, gap))
    return out


@dataclass
class _Constraint:
    """Worst-case envelope of one neighbour bounding the ego in one lane."""

    lane: int
    vehicle: VehicleState
    is_leader: bool

    def clearance(
        self, ts: np.ndarray, xe: np.ndarray, ve: np.ndarray, ego: VehicleState, cfg: SafetyConfig
    ) -> np.ndarray:
        v = self.vehicle
        accel = -v.a_max if self.is_leader else v.a_max
        xs = np.array([predict_position(v.x, v.v, accel, t) for t in ts])
        vs = np.maximum(0.0, v.v + accel * ts)
        reach = 0.5 * (v.length + ego.length)
        den = 2.0 * max(abs(v.a_max) - abs(ego.a_max), cfg.eps_den)
        if self.is_leader:
            closing = np.maximum(0.0, ve - vs)
            return xs - reach - (closing**2 / den + cfg.margin) - xe
        closing = np.maximum(0.0, vs - ve)
        return xe - (xs + reach + closing**2 / den + cfg.margin)


def _lane_constraints(
    scene: Scene, lane: int, cfg: SafetyConfig, virtual: Sequence[VirtualNeighbor]
) -> list[_Constraint]:
    """Every vehicle in range occupying ``lane``, plus the virtual ones projected into it.

    Not just the nearest leader and follower: the buffer grows with closing
    speed, so a slower vehicle further ahead can bind before the nearest one.
    """
    ego = scene.ego
    out = []
    for v in scene.vehicles:
        if v.is_ego or abs(v.x - ego.x) > cfg.sensing_range:
            continue
        if lane in footprint_lanes(v, scene.road):
            out.append(_Constraint(lane, v, v.x >= ego.x))
    for vn in virtual:
        if vn.state.lane == lane:
            out.append(_Constraint(lane, vn.state, vn.state.x >= ego.x))
    return out


def _ego_track(states: Sequence[VehicleState], n: int, dt: float) -> tuple[np.ndarray, np.ndarray]:
    xs = [s.x for s in states[: n + 1]]
    vs = [s.v for s in states[: n + 1]]
    last = states[-1]
    while len(xs) < n + 1:
        xs.append(xs[-1] + last.v * math.cos(last.psi) * dt)
        vs.append(last.v)
    return np.array(xs), np.array(vs)


@dataclass
class _Evaluation:
    verdict: list[bool] = field(default_factory=lambda: [False] * N_ACTIONS)
    clearance: list[float] = field(default_factory=lambda: [-math.inf] * N_ACTIONS)
    lead_pen: list[float] = field(default_factory=lambda: [0.0] * N_ACTIONS)
    follow_pen: list[float] = field(default_factory=lambda: [0.0] * N_ACTIONS)


def _evaluate(
    scene: Scene, cfg: SafetyConfig, delta_v: float, virtual: Sequence[VirtualNeighbor]
) -> _Evaluation:
    ego = scene.ego
    dt = scene.sim.dt
    n = int(round(cfg.horizon / dt))
    ts = np.arange(n + 1) * dt
    origin = set(footprint_lanes(ego, scene.road))
    cache: dict[int, list[_Constraint]] = {}
    out = _Evaluation()
    for action in admissible_actions(scene, delta_v):
        profile = apply_meta_action(scene, action, delta_v)
        xe, ve = _ego_track(profile.states, n, dt)
        lanes = set(origin)
        if profile.target_lane is not None:
            lanes.add(profile.target_lane)
        worst = math.inf
        lead = follow = math.inf
        for lane in sorted(lanes):
            if lane not in cache:
                cache[lane] = _lane_constraints(scene, lane, cfg, virtual)
            for con in cache[lane]:
                c = float(np.min(con.clearance(ts, xe, ve, ego, cfg)))
                worst = min(worst, c)
                if con.is_leader:
                    lead = min(lead, c)
                else:
                    follow = min(follow, c)
        out.verdict[action] = worst > 0.0
        out.clearance[action] = worst
        out.lead_pen[action] = max(0.0, -lead) if math.isfinite(lead) else 0.0
        out.follow_pen[action] = max(0.0, -follow) if math.isfinite(follow) else 0.0
    return out


def _free_spaces(
    scene: Scene, cfg: SafetyConfig, virtual: Sequence[VirtualNeighbor]
) -> tuple[FreeSpace, ...]:
    ego = scene.ego
    spaces = []
    for lane in range(scene.road.n_lanes):
        leader_pos = follower_pos = None
        leader_safe = follower_safe = 0.0
        for con in _lane_constraints(scene, lane, cfg, virtual):
            v = con.vehicle
            reach = 0.5 * (v.length + ego.length)
            if con.is_leader:
                p_safe = safe_distance(min(v.v, ego.v), ego.v, v.a_max, ego.a_max, cfg)
                if leader_pos is None or v.x - reach - p_safe < leader_pos - leader_safe:
                    leader_pos, leader_safe = v.x - reach, p_safe
            else:
                p_safe = safe_distance(max(v.v, ego.v), ego.v, v.a_max, ego.a_max, cfg)
                if follower_pos is None or v.x + reach + p_safe > follower_pos + follower_safe:
                    follower_pos, follower_safe = v.x + reach, p_safe
        spaces.append(
            free_space(
                lane, ego.x, leader_pos, follower_pos, leader_safe, follower_safe, cfg.sensing_range
            )
        )
    return tuple(spaces)


def _fallback(verdict: Sequence[bool], clearance: Sequence[float], pool: Sequence[int]) -> list[bool]:
    safe = [bool(verdict[i]) and i in pool for i in range(N_ACTIONS)]
    if not any(safe):
        best = max(pool, key=lambda i: (clearance[i], -i))
        safe[best] = True
    return safe


def mask_actions(
    scene: Scene, cfg: SafetyConfig = SafetyConfig(), delta_v: float = DEFAULT_DELTA_V
) -> SafetyMask:
    """Safe/unsafe verdict for every meta-action.

    Inadmissible actions are always unsafe. If nothing passes the check, the
    admissible action with the largest clearance is released so the mask is
    never empty; in robust mode that release is restricted to actions the
    basic check accepts, which keeps the robust safe set inside the basic one.
    """
    if ego_collisions(scene):
        raise ValueError("scene is already in collision")
    admissible = [int(a) for a in admissible_actions(scene, delta_v)]
    basic = _evaluate(scene, replace(cfg, mode="basic"), delta_v, ())
    basic_safe = _fallback(basic.verdict, basic.clearance, admissible)
    if cfg.mode == "basic":
        return SafetyMask(
            "basic",
            tuple(basic_safe),
            tuple(basic.verdict),
            tuple(basic.clearance),
            tuple(basic.lead_pen),
            tuple(basic.follow_pen),
            _free_spaces(scene, cfg, ()),
            (),
            not any(basic.verdict),
        )
    virtual = worst_case_merge_set(scene, cfg)
    robust = _evaluate(scene, cfg, delta_v, virtual)
    pool = [i for i in admissible if basic_safe[i]]
    safe = _fallback(robust.verdict, robust.clearance, pool)
    return SafetyMask(
        "robust",
        tuple(safe),
        tuple(robust.verdict),
        tuple(robust.clearance),
        tuple(robust.lead_pen),
        tuple(robust.follow_pen),
        _free_spaces(scene, cfg, virtual),
        tuple(virtual),
        not any(v and basic_safe[i] for i, v in enumerate(robust.verdict)),
    )


def format_mask(mask: SafetyMask) -> str:
    """Human-readable mask report used by the ``check-scene`` command."""
    lines = [f"mode: {mask.mode}" + ("  (fallback)" if mask.fallback else "")]
    for a in MetaAction:
        c = mask.clearance[a]
        cs = "-" if not math.isfinite(c) else f"{c:+.2f} m"
        lines.append(f"  {a.name:<10} {'safe' if mask.safe[a] else 'UNSAFE':<6} clearance {cs}")
    lines.append("free space per lane (ego-centre positions):")
    for fs in mask.free_spaces:
        state = "empty" if fs.empty else f"({fs.lower:.2f}, {fs.upper:.2f})"
        lines.append(f"  lane {fs.lane}: {state}")
    if mask.virtual_neighbors:
        lines.append("virtual neighbours:")
        for vn in mask.virtual_neighbors:
            lines.append(
                f"  id {vn.source.vid} lane {vn.source.lane} -> {vn.state.lane}"
                f" reach {vn.reach:.2f} m > gap {vn.lateral_gap:.2f} m"
            )
    return "\n".join(lines)
