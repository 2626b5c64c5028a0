import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safelane.sim import (
    IdmParams,
    RoadConfig,
    SimConfig,
    VehicleState,
    advance_vehicle,
    bumper_gap,
    desired_gap,
    detect_collision,
    idm_acceleration,
    make_scene,
    nearest_neighbors,
    rectangles_overlap,
    scene_from_text,
    scene_from_vehicles,
    scene_to_text,
    step_scene,
)

from .oracles import sampled_overlap

ROAD = RoadConfig()
QUIET = SimConfig(lane_change_rate=0.0, spontaneous_rate=0.0)


def ego(x=0.0, lane=1, v=25.0, **kw):
    return VehicleState(x, ROAD.lane_center(lane), v, lane=lane, a_max=4.0, is_ego=True, vid=0, **kw)


def car(vid, x, lane=1, v=25.0, **kw):
    return VehicleState(x, ROAD.lane_center(lane), v, lane=lane, vid=vid, **kw)


class TestAdvanceVehicle:
    def test_uniform_motion(self):
        s = advance_vehicle(VehicleState(0.0, 2.0, 10.0), 0.0, 0.0, 2.0)
        assert s.x == pytest.approx(20.0)
        assert s.v == pytest.approx(10.0)

    def test_constant_acceleration(self):
        s = advance_vehicle(VehicleState(5.0, 2.0, 10.0), 2.0, 0.0, 2.0)
        assert s.x == pytest.approx(29.0)
        assert s.v == pytest.approx(14.0)

    def test_speed_floor(self):
        s = advance_vehicle(VehicleState(0.0, 2.0, 1.0), -5.0, 0.0, 1.0)
        assert s.v == 0.0
        # stops after 0.2 s having covered 0.1 m, and does not roll back
        assert s.x == pytest.approx(0.1)

    def test_heading_clamped_and_lane_rederived(self):
        s = advance_vehicle(VehicleState(0.0, 3.9, 20.0, psi=0.25), 0.0, 5.0, 0.1)
        assert s.psi == pytest.approx(0.26)
        assert s.y == pytest.approx(3.9 + 20.0 * math.sin(0.25) * 0.1)
        assert s.lane == 1

    @pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(ValueError):
            advance_vehicle(VehicleState(bad, 2.0, 10.0), 0.0, 0.0, 0.1)
        with pytest.raises(ValueError):
            advance_vehicle(VehicleState(0.0, 2.0, 10.0), bad, 0.0, 0.1)

    def test_bad_dt_and_excess_accel_rejected(self):
        with pytest.raises(ValueError):
            advance_vehicle(VehicleState(0.0, 2.0, 10.0), 0.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            advance_vehicle(VehicleState(0.0, 2.0, 10.0, a_max=4.0), 4.5, 0.0, 0.1)

    @settings(max_examples=300, deadline=None)
    @given(
        v=st.floats(0, 40),
        a=st.floats(-6, 6),
        psi=st.floats(-0.26, 0.26),
        rate=st.floats(-10, 10),
        dt=st.floats(0.01, 2.0),
    )
    def test_speed_and_heading_bounds(self, v, a, psi, rate, dt):
        s = advance_vehicle(VehicleState(0.0, 6.0, v, psi=psi), a, rate, dt)
        assert s.v >= 0.0
        assert abs(s.psi) <= 0.26 + 1e-12


class TestIdm:
    p = IdmParams(v0=30.0)

    def test_free_flow_equilibrium(self):
        assert idm_acceleration(car(1, 0.0, v=30.0), None, self.p) == pytest.approx(0.0)

    def test_standstill_free_road(self):
        assert idm_acceleration(car(1, 0.0, v=0.0), None, self.p) == pytest.approx(self.p.a)

    def test_equilibrium_gap_by_bisection(self):
        def acc(gap):
            me = car(1, 0.0, v=20.0)
            lead = car(2, gap + 5.0, v=20.0)
            return idm_acceleration(me, lead, self.p)

        lo, hi = 1.0, 500.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if acc(mid) < 0:
                lo = mid
            else:
                hi = mid
        gap = 0.5 * (lo + hi)
        assert abs(acc(gap)) < 1e-9
        # closed form: s = s* / sqrt(1 - (v/v0)^delta) with s* = s0 + v T
        expected = (2.0 + 20.0 * 1.5) / math.sqrt(1.0 - (20.0 / 30.0) ** 4)
        assert gap == pytest.approx(expected, rel=1e-9)

    def test_contact_gives_emergency_braking(self):
        me = car(1, 0.0, v=20.0)
        assert idm_acceleration(me, car(2, 4.0, v=20.0), self.p) == -me.a_max

    def test_leader_behind_rejected(self):
        with pytest.raises(ValueError):
            idm_acceleration(car(1, 0.0), car(2, -10.0), self.p)

    def test_output_clamped(self):
        me = car(1, 0.0, v=30.0)
        assert idm_acceleration(me, car(2, 6.0, v=0.0), self.p) >= -me.a_max

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            IdmParams(T=0.0)
        with pytest.raises(ValueError):
            IdmParams(delta=0.5)


class TestNeighbors:
    def test_alone(self):
        scene = scene_from_vehicles([ego()])
        assert nearest_neighbors(scene, 4) == []

    def test_two_sorted(self):
        scene = scene_from_vehicles([ego(), car(1, 50.0), car(2, -10.0)])
        found = nearest_neighbors(scene, 4)
        assert [v.vid for v, _ in found] == [2, 1]
        assert [d for _, d in found] == pytest.approx([10.0, 50.0])

    def test_k_closest_matches_bruteforce(self):
        rng = np.random.default_rng(3)
        others = [car(i, float(rng.uniform(-90, 90)), lane=int(rng.integers(4))) for i in range(1, 7)]
        scene = scene_from_vehicles([ego()] + others)
        brute = sorted(others, key=lambda v: (math.hypot(v.x, v.y - ROAD.lane_center(1)), v.vid))
        assert [v.vid for v, _ in nearest_neighbors(scene, 4)] == [v.vid for v in brute[:4]]

    def test_sensing_range(self):
        scene = scene_from_vehicles([ego(), car(1, 150.0)])
        assert nearest_neighbors(scene, 4, sensing_range=100.0) == []

    def test_tie_break_by_id(self):
        scene = scene_from_vehicles([ego(), car(5, 20.0), car(3, -20.0)])
        assert [v.vid for v, _ in nearest_neighbors(scene, 2)] == [3, 5]


class TestCollision:
    def test_far_apart(self):
        assert detect_collision(scene_from_vehicles([ego(), car(1, 100.0)])) == (False, [])

    def test_identical_pose(self):
        assert rectangles_overlap(car(1, 0.0), car(2, 0.0))

    def test_same_lane_overlap(self):
        hit, pairs = detect_collision(scene_from_vehicles([ego(), car(1, 4.9)]))
        assert hit and pairs == [(0, 1)]

    def test_adjacent_lanes_do_not_touch(self):
        assert not rectangles_overlap(car(1, 0.0, lane=1), car(2, 0.0, lane=2))

    def test_rotated_corner_overlap(self):
        a = car(1, 0.0, lane=1)
        b = replace(car(2, 4.0, lane=1), y=ROAD.lane_center(1) + 2.2, psi=0.26)
        assert rectangles_overlap(a, b) == sampled_overlap(a, b)

    def test_agrees_with_sampling_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            a = VehicleState(0.0, 0.0, 20.0, psi=float(rng.uniform(-0.26, 0.26)))
            b = VehicleState(
                float(rng.uniform(-7, 7)),
                float(rng.uniform(-3.5, 3.5)),
                20.0,
                psi=float(rng.uniform(-0.26, 0.26)),
                vid=1,
            )
            got = rectangles_overlap(a, b)
            assert got == rectangles_overlap(b, a)
            if got != sampled_overlap(a, b, step=0.01):
                # only grazing contacts below the sampling resolution may differ
                assert sampled_overlap(a, replace(b, length=b.length + 0.04, width=b.width + 0.04))


class TestStepScene:
    def test_idm_equilibrium_is_fixed_point(self):
        v0 = 30.0
        gap = (2.0 + 20.0 * 1.5) / math.sqrt(1.0 - (20.0 / v0) ** 4)
        lead = car(1, 100.0, lane=2, v=20.0)
        follow = car(2, 100.0 - gap - 5.0, lane=2, v=20.0)
        scene = scene_from_vehicles(
            [ego(x=0.0, lane=0, v=25.0), lead, follow],
            sim=QUIET,
            idm={1: IdmParams(v0=20.0), 2: IdmParams(v0=v0)},
        )
        for _ in range(50):
            scene = step_scene(scene, None)
        for v in scene.vehicles:
            assert v.v == pytest.approx({0: 25.0, 1: 20.0, 2: 20.0}[v.vid], abs=1e-9)

    def test_dt_validation(self):
        scene = make_scene(0)
        with pytest.raises(ValueError):
            step_scene(scene, None, dt=0.0)
        with pytest.raises(ValueError):
            step_scene(scene, None, dt=0.3)

    def test_input_scene_untouched_and_time_advances(self):
        scene = make_scene(0)
        before = scene_to_text(scene)
        nxt = step_scene(scene, (0.0, 0.0))
        assert scene_to_text(scene) == before
        assert nxt.t == pytest.approx(0.1)

    def test_traffic_only_no_collisions(self):
        for seed in range(3):
            scene = make_scene(seed)
            for _ in range(100):
                scene = step_scene(scene, None)
                assert not detect_collision(scene)[0]

    def test_determinism(self):
        a, b = make_scene(5), make_scene(5)
        for _ in range(30):
            a, b = step_scene(a, None), step_scene(b, None)
        assert scene_to_text(a) == scene_to_text(b)

    def test_invariants_over_random_steps(self):
        rng = np.random.default_rng(0)
        scene = make_scene(1)
        sim = scene.sim
        for _ in range(300):
            e = scene.ego
            accel = float(rng.uniform(-e.a_max, e.a_max))
            if e.v + accel * sim.dt < scene.road.v_min - 5 or e.v + accel * sim.dt > 35:
                accel = 0.0
            scene = step_scene(scene, (accel, float(rng.uniform(-0.5, 0.5))))
            for v in scene.vehicles:
                assert v.v >= 0.0
                assert abs(v.psi) <= sim.psi_max + 1e-12


class TestScene:
    def test_make_scene_valid(self):
        for seed in range(5):
            scene = make_scene(seed)
            assert len(scene.vehicles) == 50
            assert sum(v.is_ego for v in scene.vehicles) == 1
            assert not detect_collision(scene)[0]
            for v in scene.others:
                assert 21.0 <= v.v <= 29.0

    def test_same_lane_spacing_respects_idm_gap(self):
        scene = make_scene(2)
        for lane in range(4):
            row = sorted((v for v in scene.vehicles if v.lane == lane), key=lambda v: v.x)
            for f, l in zip(row, row[1:]):
                p = scene.drivers[f.vid].idm
                assert bumper_gap(f, l) >= desired_gap(f.v, f.v - l.v, p) - 1e-9

    def test_exactly_one_ego(self):
        with pytest.raises(ValueError):
            scene_from_vehicles([car(1, 0.0)])
        with pytest.raises(ValueError):
            scene_from_vehicles([ego(), replace(ego(), vid=1)])

    def test_text_round_trip(self):
        scene = make_scene(4)
        back = scene_from_text(scene_to_text(scene))
        assert back.t == scene.t
        assert back.road == scene.road
        for a, b in zip(scene.vehicles, back.vehicles):
            assert (a.vid, a.x, a.y, a.v, a.psi, a.lane, a.is_ego, a.a_max) == (
                b.vid,
                b.x,
                b.y,
                b.v,
                b.psi,
                b.lane,
                b.is_ego,
                b.a_max,
            )

    def test_text_malformed(self):
        with pytest.raises(ValueError):
            scene_from_text("0 1 2 3\n")

    def test_road_validation(self):
        with pytest.raises(ValueError):
            RoadConfig(n_lanes=1)
        with pytest.raises(ValueError):
            RoadConfig(v_min=30.0, v_max=20.0)
