"""Kinematic multi-lane highway world.

Vehicles are oriented rectangles moving on a straight road. Ambient traffic
follows the Intelligent Driver Model longitudinally and a gap-acceptance rule
laterally; the ego vehicle is driven by explicit (acceleration, heading rate)
controls. The world is an open segment that travels with the ego: vehicles
leaving the window are respawned at the opposite end so the population stays
constant.

Lane 0 is the rightmost lane and ``y`` grows to the left, so lane ``k`` is
centred at ``(k + 0.5) * lane_width``.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "RoadConfig",
    "SimConfig",
    "IdmParams",
    "VehicleState",
    "LanePlan",
    "Driver",
    "Scene",
    "advance_vehicle",
    "idm_acceleration",
    "desired_gap",
    "nearest_neighbors",
    "detect_collision",
    "ego_collisions",
    "rectangles_overlap",
    "footprint_lanes",
    "lane_keep_goal",
    "heading_rate_toward",
    "make_scene",
    "scene_from_vehicles",
    "bumper_gap",
    "step_scene",
    "scene_to_text",
    "scene_from_text",
]


@dataclass(frozen=True)
class RoadConfig:
    """Straight road with ``n_lanes`` parallel lanes.

    ``length`` is the extent of the simulated window that travels with the ego.
    """

    n_lanes: int = 4
    lane_width: float = 4.0
    length: float = 1200.0
    v_min: float = 20.0
    v_max: float = 30.0

    def __post_init__(self) -> None:
        if self.n_lanes < 2:
            raise ValueError("n_lanes must be >= 2")
        if not self.lane_width > 0 or not self.length > 0:
            raise ValueError("lane_width and length must be positive")
        if not self.v_min < self.v_max:
            raise ValueError("v_min must be < v_max")

    def lane_center(self, lane: int) -> float:
        return (lane + 0.5) * self.lane_width

    def lane_of(self, y: float) -> int:
        lane = int(math.floor(y / self.lane_width))
        return min(max(lane, 0), self.n_lanes - 1)


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.1
    policy_period: float = 1.0
    n_vehicles: int = 50
    psi_max: float = 0.26
    v0_range: tuple[float, float] = (21.0, 29.0)
    ambient_a_max: float = 6.0
    ego_a_max: float = 4.0
    ego_speed: float = 25.0
    vehicle_length: float = 5.0
    vehicle_width: float = 2.0
    lane_change_duration: float = 2.0
    # per-second rates at which an ambient driver evaluates a lane change
    lane_change_rate: float = 0.5
    spontaneous_rate: float = 0.03
    lateral_tau: float = 0.5
    # multiplier on the IDM desired gap for gap acceptance and spawning
    gap_factor: float = 1.2

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        steps = self.policy_period / self.dt
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("dt must divide the policy period")
        if not 0 < self.psi_max < math.pi / 2:
            raise ValueError("psi_max must lie in (0, pi/2)")

    @property
    def steps_per_period(self) -> int:
        return int(round(self.policy_period / self.dt))


@dataclass(frozen=True)
class IdmParams:
    v0: float = 25.0
    T: float = 1.5
    s0: float = 2.0
    a: float = 3.0
    b_comf: float = 5.0
    delta: float = 4.0

    def __post_init__(self) -> None:
        if min(self.v0, self.T, self.s0, self.a, self.b_comf) <= 0:
            raise ValueError("IDM parameters must be positive")
        if self.delta < 1:
            raise ValueError("IDM delta must be >= 1")


@dataclass(frozen=True, slots=True)
class VehicleState:
    x: float
    y: float
    v: float
    psi: float = 0.0
    lane: int = 0
    length: float = 5.0
    width: float = 2.0
    a_max: float = 6.0
    is_ego: bool = False
    vid: int = 0


@dataclass(frozen=True)
class LanePlan:
    """Lateral move from ``y_start`` to ``y_end`` with a cosine velocity profile."""

    y_start: float
    y_end: float
    t_start: float
    duration: float
    target_lane: int

    def y_at(self, t: float) -> float:
        u = min(max((t - self.t_start) / self.duration, 0.0), 1.0)
        return self.y_start + (self.y_end - self.y_start) * (0.5 - 0.5 * math.cos(math.pi * u))


@dataclass(frozen=True)
class Driver:
    idm: IdmParams
    plan: Optional[LanePlan] = None


@dataclass
class Scene:
    vehicles: tuple[VehicleState, ...]
    t: float
    road: RoadConfig
    sim: SimConfig
    rng: np.random.Generator
    drivers: dict[int, Driver] = field(default_factory=dict)
    # lane the ego is currently moving into; ambient drivers treat it as occupied
    ego_target_lane: Optional[int] = None

    def __post_init__(self) -> None:
        n_ego = sum(1 for v in self.vehicles if v.is_ego)
        if n_ego != 1:
            raise ValueError(f"scene must hold exactly one ego vehicle, got {n_ego}")

    @property
    def ego(self) -> VehicleState:
        for v in self.vehicles:
            if v.is_ego:
                return v
        raise AssertionError("unreachable")

    @property
    def others(self) -> list[VehicleState]:
        return [v for v in self.vehicles if not v.is_ego]

    def copy(self) -> "Scene":
        return replace(self, rng=copy.deepcopy(self.rng), drivers=dict(self.drivers))


def _check_finite(*values: float) -> None:
    if not math.isfinite(math.fsum(values)):
        raise ValueError(f"non-finite input among {values!r}")


def advance_vehicle(
    s: VehicleState,
    accel: float,
    heading_rate: float,
    dt: float,
    road: RoadConfig = RoadConfig(),
    psi_max: float = 0.26,
) -> VehicleState:
    """Integrate one vehicle over ``dt`` with constant acceleration and heading rate.

    Longitudinal motion is exact for constant acceleration and stops at zero
    speed instead of reversing; lateral motion uses the heading held at the
    start of the step.
    """
    _check_finite(s.x, s.y, s.v, s.psi, accel, heading_rate, dt)
    if not dt > 0:
        raise ValueError("dt must be positive")
    if abs(accel) > s.a_max + 1e-9:
        raise ValueError(f"|accel|={abs(accel):.3f} exceeds a_max={s.a_max}")
    tau = dt
    if s.v + accel * dt < 0.0:
        tau = s.v / -accel
    cos_psi = math.cos(s.psi)
    x = s.x + (s.v * tau + 0.5 * accel * tau * tau) * cos_psi
    y = s.y + s.v * math.sin(s.psi) * dt
    v = max(0.0, s.v + accel * dt)
    psi = min(max(s.psi + heading_rate * dt, -psi_max), psi_max)
    return VehicleState(x, y, v, psi, road.lane_of(y), s.length, s.width, s.a_max, s.is_ego, s.vid)


def desired_gap(v: float, dv: float, p: IdmParams) -> float:
    """IDM desired bumper-to-bumper gap ``s*`` for speed ``v`` and approach rate ``dv``."""
    return p.s0 + max(0.0, v * p.T + v * dv / (2.0 * math.sqrt(p.a * p.b_comf)))


def bumper_gap(follower: VehicleState, leader: VehicleState) -> float:
    return leader.x - follower.x - 0.5 * (leader.length + follower.length)


def idm_acceleration(me: VehicleState, leader: Optional[VehicleState], p: IdmParams) -> float:
    """IDM acceleration of ``me`` behind ``leader`` (or on a free road), clamped to ``me.a_max``."""
    free = 1.0 - (me.v / p.v0) ** p.delta
    if leader is None:
        acc = p.a * free
    else:
        if leader.x < me.x:
            raise ValueError("leader must be ahead of the follower")
        gap = bumper_gap(me, leader)
        if gap <= 0.0:
            return -me.a_max
        s_star = desired_gap(me.v, me.v - leader.v, p)
        acc = p.a * (free - (s_star / gap) ** 2)
    return min(max(acc, -me.a_max), me.a_max)


def nearest_neighbors(
    scene: Scene, k: int, sensing_range: float = 100.0
) -> list[tuple[VehicleState, float]]:
    """Up to ``k`` non-ego vehicles within ``sensing_range``, nearest first (ties by id)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ego = scene.ego
    found = []
    for v in scene.vehicles:
        if v.is_ego:
            continue
        d = math.hypot(v.x - ego.x, v.y - ego.y)
        if d <= sensing_range:
            found.append((d, v.vid, v))
    found.sort(key=lambda item: (item[0], item[1]))
    return [(v, d) for d, _, v in found[:k]]


def _corners(v: VehicleState) -> list[tuple[float, float]]:
    c, s = math.cos(v.psi), math.sin(v.psi)
    hl, hw = 0.5 * v.length, 0.5 * v.width
    return [
        (v.x + c * dx - s * dy, v.y + s * dx + c * dy)
        for dx, dy in ((hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw))
    ]


def rectangles_overlap(a: VehicleState, b: VehicleState) -> bool:
    """Separating-axis test for two oriented vehicle rectangles (touching counts as overlap)."""
    ra = math.hypot(a.length, a.width) * 0.5
    rb = math.hypot(b.length, b.width) * 0.5
    if (a.x - b.x) ** 2 + (a.y - b.y) ** 2 > (ra + rb) ** 2:
        return False
    ca, cb = _corners(a), _corners(b)
    for psi in (a.psi, b.psi):
        for ax, ay in ((math.cos(psi), math.sin(psi)), (-math.sin(psi), math.cos(psi))):
            pa = [px * ax + py * ay for px, py in ca]
            pb = [px * ax + py * ay for px, py in cb]
            if max(pa) < min(pb) or max(pb) < min(pa):
                return False
    return True


def detect_collision(scene: Scene) -> tuple[bool, list[tuple[int, int]]]:
    """All intersecting vehicle pairs, as sorted id tuples."""
    order = sorted(scene.vehicles, key=lambda v: v.x)
    reach = max((math.hypot(v.length, v.width) for v in order), default=0.0)
    pairs = []
    for i, a in enumerate(order):
        for b in order[i + 1 :]:
            if b.x - a.x > reach:
                break
            if rectangles_overlap(a, b):
                pairs.append(tuple(sorted((a.vid, b.vid))))
    pairs.sort()
    return bool(pairs), pairs


def ego_collisions(scene: Scene) -> list[int]:
    """Ids of vehicles currently intersecting the ego."""
    ego = scene.ego
    return [v.vid for v in scene.vehicles if not v.is_ego and rectangles_overlap(ego, v)]


def footprint_lanes(v: VehicleState, road: RoadConfig) -> range:
    """Lanes whose band intersects the lateral extent of the vehicle body."""
    if v.psi == 0.0:
        half = 0.5 * v.width
    else:
        half = 0.5 * v.width * math.cos(v.psi) + 0.5 * v.length * abs(math.sin(v.psi))
    lo = road.lane_of(v.y - half + 1e-9)
    hi = road.lane_of(v.y + half - 1e-9)
    return range(lo, hi + 1)


def heading_rate_toward(
    s: VehicleState, accel: float, y_goal: float, dt: float, psi_max: float
) -> float:
    """Heading rate that makes the *next* step end at ``y_goal`` (deadbeat, saturated).

    The heading chosen now acts on the step after this one, because lateral
    motion within a step uses the heading held at its start.
    """
    y1 = s.y + s.v * math.sin(s.psi) * dt
    v1 = max(0.0, s.v + accel * dt)
    if v1 * dt < 1e-9:
        psi_des = 0.0
    else:
        lim = math.sin(psi_max)
        psi_des = math.asin(min(max((y_goal - y1) / (v1 * dt), -lim), lim))
    return (psi_des - s.psi) / dt


def lane_keep_goal(s: VehicleState, lane: int, road: RoadConfig, dt: float, tau: float) -> float:
    y1 = s.y + s.v * math.sin(s.psi) * dt
    return y1 + (road.lane_center(lane) - y1) * min(1.0, dt / tau)


# ---------------------------------------------------------------------------
# ambient traffic


def _occupancy(scene: Scene) -> dict[int, frozenset[int]]:
    occ = {}
    for v in scene.vehicles:
        lanes = set(footprint_lanes(v, scene.road))
        if v.is_ego:
            if scene.ego_target_lane is not None:
                lanes.add(scene.ego_target_lane)
        else:
            plan = scene.drivers[v.vid].plan
            if plan is not None:
                lanes.add(plan.target_lane)
        occ[v.vid] = frozenset(lanes)
    return occ


class _Order:
    """Vehicles sorted by ``x`` with an index for neighbour scans."""

    def __init__(self, vehicles: Sequence[VehicleState]):
        self.items = sorted(vehicles, key=lambda v: (v.x, v.vid))
        self.index = {v.vid: i for i, v in enumerate(self.items)}


def _leader_follower(
    me: VehicleState,
    lanes: frozenset[int],
    order: _Order,
    occ: dict[int, frozenset[int]],
) -> tuple[Optional[VehicleState], Optional[VehicleState]]:
    """Nearest vehicle ahead / behind ``me`` occupying any of ``lanes``."""
    items = order.items
    i = order.index[me.vid]
    leader = follower = None
    for v in items[i + 1 :]:
        if occ[v.vid] & lanes:
            leader = v
            break
    for v in reversed(items[:i]):
        if occ[v.vid] & lanes:
            follower = v
            break
    return leader, follower


def _gap_ok(
    me: VehicleState,
    p_me: IdmParams,
    leader: Optional[VehicleState],
    follower: Optional[VehicleState],
    drivers: dict[int, Driver],
    factor: float,
) -> bool:
    if leader is not None:
        if bumper_gap(me, leader) < factor * desired_gap(me.v, me.v - leader.v, p_me):
            return False
    if follower is not None:
        p_f = drivers[follower.vid].idm
        if bumper_gap(follower, me) < factor * desired_gap(follower.v, follower.v - me.v, p_f):
            return False
    return True


def _plan_lane_change(
    me: VehicleState,
    scene: Scene,
    order: _Order,
    occ: dict[int, frozenset[int]],
    motivated_draw: float,
    spontaneous_draw: float,
    pick_draw: float,
) -> Optional[LanePlan]:
    sim, road = scene.sim, scene.road
    motivated_roll = motivated_draw < sim.lane_change_rate * sim.dt
    spontaneous = spontaneous_draw < sim.spontaneous_rate * sim.dt
    if not (motivated_roll or spontaneous):
        return None
    driver = scene.drivers[me.vid]
    lane = me.lane
    if abs(me.y - road.lane_center(lane)) > 0.3 or abs(me.psi) > 0.02:
        return None
    cur_leader, _ = _leader_follower(me, frozenset((lane,)), order, occ)
    cur_gap = math.inf if cur_leader is None else bumper_gap(me, cur_leader)
    motivated = (
        motivated_roll
        and cur_leader is not None
        and cur_gap < 80.0
        and cur_leader.v < driver.idm.v0 - 1.0
    )
    if not (motivated or spontaneous):
        return None
    options = []
    for target in (lane - 1, lane + 1):
        if not 0 <= target < road.n_lanes:
            continue
        leader, follower = _leader_follower(me, frozenset((target,)), order, occ)
        if not _gap_ok(me, driver.idm, leader, follower, scene.drivers, sim.gap_factor):
            continue
        if motivated and not spontaneous:
            new_gap = math.inf if leader is None else bumper_gap(me, leader)
            if not (new_gap > cur_gap + 10.0 and (leader is None or leader.v > cur_leader.v)):
                continue
        options.append(target)
    if not options:
        return None
    target = options[min(int(pick_draw * len(options)), len(options) - 1)]
    return LanePlan(me.y, road.lane_center(target), scene.t, sim.lane_change_duration, target)


def _respawn(
    me: VehicleState, scene: Scene, occ: dict[int, frozenset[int]]
) -> Optional[tuple[VehicleState, Driver]]:
    """Move a vehicle that left the window to a free slot at the opposite edge."""
    sim, road, rng = scene.sim, scene.road, scene.rng
    ego = scene.ego
    half = 0.5 * road.length
    p = IdmParams(v0=float(rng.uniform(*sim.v0_range)))
    x_new = ego.x - half + 5.0 if me.x > ego.x else ego.x + half - 5.0
    others = [v for v in scene.vehicles if v.vid != me.vid]
    for lane in rng.permutation(road.n_lanes):
        lane = int(lane)
        in_lane = [v for v in others if lane in occ[v.vid]]
        ahead = [v for v in in_lane if v.x >= x_new]
        behind = [v for v in in_lane if v.x < x_new]
        leader = min(ahead, key=lambda v: v.x) if ahead else None
        follower = max(behind, key=lambda v: v.x) if behind else None
        v_new = p.v0 if leader is None else min(p.v0, leader.v)
        cand = replace(me, x=x_new, y=road.lane_center(lane), v=v_new, psi=0.0, lane=lane)
        if _gap_ok(cand, p, leader, follower, scene.drivers, sim.gap_factor):
            return cand, Driver(p)
    return None


def step_scene(
    scene: Scene,
    ego_controls: Optional[tuple[float, float]],
    dt: Optional[float] = None,
) -> Scene:
    """Advance the whole scene by one micro-step.

    ``ego_controls`` is ``(accel, heading_rate)``; ``None`` hands the ego to the
    same IDM + lane-keeping controller as ambient traffic (without lane changes).
    The input scene is left untouched.
    """
    sim, road = scene.sim, scene.road
    dt = sim.dt if dt is None else dt
    if not dt > 0:
        raise ValueError("dt must be positive")
    steps = sim.policy_period / dt
    if abs(steps - round(steps)) > 1e-9:
        raise ValueError("dt must divide the policy period")

    new = scene.copy()
    rng = new.rng
    n = len(scene.vehicles)
    draws = rng.random((3, n))
    order = _Order(scene.vehicles)
    occ = _occupancy(scene)
    drivers = new.drivers

    # lane-change decisions are sequential so later drivers see earlier targets
    for i, v in enumerate(scene.vehicles):
        if v.is_ego or drivers[v.vid].plan is not None:
            continue
        plan = _plan_lane_change(v, new, order, occ, draws[0, i], draws[1, i], draws[2, i])
        if plan is not None:
            drivers[v.vid] = replace(drivers[v.vid], plan=plan)
            occ[v.vid] = occ[v.vid] | {plan.target_lane}

    moved = []
    for v in scene.vehicles:
        if v.is_ego and ego_controls is not None:
            accel, rate = ego_controls
            moved.append(advance_vehicle(v, accel, rate, dt, road, sim.psi_max))
            continue
        driver = drivers[v.vid]
        lanes = occ[v.vid]
        leader, _ = _leader_follower(v, lanes, order, occ)
        accel = idm_acceleration(v, leader, driver.idm)
        if driver.plan is not None:
            y_goal = driver.plan.y_at(new.t + 2 * dt)
        else:
            y_goal = lane_keep_goal(v, v.lane, road, dt, sim.lateral_tau)
        rate = heading_rate_toward(v, accel, y_goal, dt, sim.psi_max)
        moved.append(advance_vehicle(v, accel, rate, dt, road, sim.psi_max))
    new.t = round(scene.t + dt, 9)

    for v in moved:
        if v.is_ego:
            continue
        plan = drivers[v.vid].plan
        if plan is not None and new.t >= plan.t_start + plan.duration - 1e-9:
            if abs(v.y - plan.y_end) < 0.05 and abs(v.psi) < 0.02:
                drivers[v.vid] = replace(drivers[v.vid], plan=None)

    ego = next(v for v in moved if v.is_ego)
    half = 0.5 * road.length
    new.vehicles = tuple(moved)
    stray = [j for j, v in enumerate(moved) if not v.is_ego and abs(v.x - ego.x) > half]
    if stray:
        occ = _occupancy(new)
        for j in stray:
            spot = _respawn(moved[j], new, occ)
            if spot is None:
                continue
            state, driver = spot
            moved[j] = state
            drivers[state.vid] = driver
            new.vehicles = tuple(moved)
            occ[state.vid] = frozenset((state.lane,))
    return new


# ---------------------------------------------------------------------------
# construction and serialization


def make_scene(
    seed: int | np.random.SeedSequence,
    road: RoadConfig = RoadConfig(),
    sim: SimConfig = SimConfig(),
    ego_lane: Optional[int] = None,
    max_attempts: int = 200,
) -> Scene:
    """Draw a random collision-free scene with the ego at ``x = 0``.

    Vehicles are placed by sequential rejection sampling so that every
    same-lane pair respects ``gap_factor`` times the IDM desired gap.
    """
    rng = np.random.default_rng(seed)
    half = 0.5 * road.length
    lane = int(rng.integers(road.n_lanes)) if ego_lane is None else ego_lane
    ego = VehicleState(
        x=0.0,
        y=road.lane_center(lane),
        v=sim.ego_speed,
        lane=lane,
        length=sim.vehicle_length,
        width=sim.vehicle_width,
        a_max=sim.ego_a_max,
        is_ego=True,
        vid=0,
    )
    vehicles = [ego]
    drivers = {0: Driver(IdmParams(v0=sim.ego_speed))}
    for vid in range(1, sim.n_vehicles):
        for _ in range(max_attempts):
            cand_lane = int(rng.integers(road.n_lanes))
            x = float(rng.uniform(-half + 5.0, half - 5.0))
            p = IdmParams(v0=float(rng.uniform(*sim.v0_range)))
            cand = VehicleState(
                x=x,
                y=road.lane_center(cand_lane),
                v=p.v0,
                lane=cand_lane,
                length=sim.vehicle_length,
                width=sim.vehicle_width,
                a_max=sim.ambient_a_max,
                vid=vid,
            )
            if all(_spaced(cand, p, other, drivers[other.vid].idm, sim) for other in vehicles):
                vehicles.append(cand)
                drivers[vid] = Driver(p)
                break
    return Scene(tuple(vehicles), 0.0, road, sim, rng, drivers)


def _spaced(a: VehicleState, pa: IdmParams, b: VehicleState, pb: IdmParams, sim: SimConfig) -> bool:
    if a.lane != b.lane:
        return True
    if a.x < b.x:
        a, pa, b, pb = b, pb, a, pa
    # b follows a
    return bumper_gap(b, a) >= sim.gap_factor * desired_gap(b.v, b.v - a.v, pb)


def scene_from_vehicles(
    vehicles: Sequence[VehicleState],
    road: RoadConfig = RoadConfig(),
    sim: SimConfig = SimConfig(),
    t: float = 0.0,
    seed: int = 0,
    idm: Optional[dict[int, IdmParams]] = None,
) -> Scene:
    """Wrap hand-built vehicles in a scene; missing IDM parameters default to ``v0 = v``."""
    idm = idm or {}
    drivers = {v.vid: Driver(idm.get(v.vid, IdmParams(v0=max(v.v, 1.0)))) for v in vehicles}
    return Scene(tuple(vehicles), t, road, sim, np.random.default_rng(seed), drivers)


def scene_to_text(scene: Scene) -> str:
    """One vehicle per line: ``id x y v psi lane is_ego``; header lines start with ``#``."""
    road = scene.road
    lines = [
        f"# t {scene.t!r}",
        f"# road {road.n_lanes} {road.lane_width!r} {road.length!r} {road.v_min!r} {road.v_max!r}",
        "# id x y v psi lane is_ego",
    ]
    for v in scene.vehicles:
        lines.append(f"{v.vid} {v.x!r} {v.y!r} {v.v!r} {v.psi!r} {v.lane} {int(v.is_ego)}")
    return "\n".join(lines) + "\n"


def scene_from_text(text: str, sim: SimConfig = SimConfig()) -> Scene:
    t = 0.0
    road = RoadConfig()
    vehicles = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if parts[:1] == ["t"]:
                t = float(parts[1])
            elif parts[:1] == ["road"]:
                road = RoadConfig(
                    int(parts[1]), float(parts[2]), float(parts[3]), float(parts[4]), float(parts[5])
                )
            continue
        parts = line.split()
        if len(parts) != 7:
            raise ValueError(f"line {lineno}: expected 7 fields, got {len(parts)}")
        vid, x, y, v, psi, lane, is_ego = parts
        ego = is_ego == "1"
        vehicles.append(
            VehicleState(
                x=float(x),
                y=float(y),
                v=float(v),
                psi=float(psi),
                lane=int(lane),
                length=sim.vehicle_length,
                width=sim.vehicle_width,
                a_max=sim.ego_a_max if ego else sim.ambient_a_max,
                is_ego=ego,
                vid=int(vid),
            )
        )
    return scene_from_vehicles(vehicles, road, sim, t=t)
