import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safelane.env import (
    OBS_SIZE,
    TRACE_COLUMNS,
    EnvConfig,
    HighwayEnv,
    MetaAction,
    RewardConfig,
    admissible_actions,
    apply_meta_action,
    build_observation,
    reward_speed,
    reward_traditional,
    write_trace,
)
from safelane.sim import RoadConfig, VehicleState, make_scene, scene_from_vehicles

ROAD = RoadConfig()
A = MetaAction


def ego(lane=1, v=25.0, x=0.0):
    return VehicleState(x, ROAD.lane_center(lane), v, lane=lane, a_max=4.0, is_ego=True, vid=0)


def car(vid, x, lane=1, v=25.0, psi=0.0):
    return VehicleState(x, ROAD.lane_center(lane), v, psi=psi, lane=lane, vid=vid)


class TestObservation:
    def test_alone(self):
        obs = build_observation(scene_from_vehicles([ego(v=27.0)]))
        assert obs.raw.shape == (OBS_SIZE,) == (26,)
        assert np.all(obs.raw[:24] == 0.0)
        assert obs.v_ego == 27.0 and obs.psi_ego == 0.0

    def test_single_leader(self):
        obs = build_observation(scene_from_vehicles([ego(), car(1, 30.0)]))
        assert list(obs.slot(0)) == [30.0, 0.0, 0.0, 0.0, 0.0, 1.0]
        assert np.all(obs.raw[6:24] == 0.0)

    def test_relative_velocity_in_road_frame(self):
        other = car(1, 20.0, lane=2, v=20.0, psi=0.1)
        obs = build_observation(scene_from_vehicles([ego(), other]))
        dx, dy, dvx, dvy, psi, flag = obs.slot(0)
        assert (dx, dy) == pytest.approx((20.0, 4.0))
        assert dvx == pytest.approx(20.0 * math.cos(0.1) - 25.0)
        assert dvy == pytest.approx(20.0 * math.sin(0.1))
        assert psi == 0.1 and flag == 1.0

    def test_normalized_in_unit_box_and_flags_consistent(self):
        for seed in range(20):
            obs = build_observation(make_scene(seed))
            assert obs.raw.size == 26
            assert np.all(np.isfinite(obs.raw))
            assert np.all(np.abs(obs.normalized) <= 1.0)
            for i in range(4):
                slot = obs.slot(i)
                if slot[5] == 0.0:
                    assert np.all(slot == 0.0)

    def test_normalization_scales(self):
        obs = build_observation(scene_from_vehicles([ego(v=30.0), car(1, 50.0, v=15.0)]))
        assert obs.normalized[0] == pytest.approx(0.5)
        assert obs.normalized[2] == pytest.approx(-0.5)
        assert obs.normalized[24] == pytest.approx(1.0)


class TestAdmissible:
    def test_at_vmax_middle_lane(self):
        assert admissible_actions(scene_from_vehicles([ego(lane=1, v=30.0)])) == [
            A.IDLE,
            A.LANE_RIGHT,
            A.LANE_LEFT,
            A.SLOWER,
        ]

    def test_rightmost_lane(self):
        assert A.LANE_RIGHT not in admissible_actions(scene_from_vehicles([ego(lane=0)]))

    def test_vmin_leftmost(self):
        assert admissible_actions(scene_from_vehicles([ego(lane=3, v=20.0)])) == [
            A.IDLE,
            A.LANE_RIGHT,
            A.FASTER,
        ]

    @settings(max_examples=200, deadline=None)
    @given(lane=st.integers(0, 3), v=st.floats(20.0, 30.0))
    def test_never_empty(self, lane, v):
        acts = admissible_actions(scene_from_vehicles([ego(lane=lane, v=v)]))
        assert A.IDLE in acts


class TestMetaAction:
    def test_idle_fixed_point(self):
        prof = apply_meta_action(scene_from_vehicles([ego()]), A.IDLE)
        assert all(c == (0.0, 0.0) for c in prof.controls)
        assert prof.target_lane is None

    def test_faster_rate_limited(self):
        prof = apply_meta_action(scene_from_vehicles([ego(v=25.0)]), A.FASTER)
        assert prof.states[-1].v == pytest.approx(29.0)
        assert max(abs(a) for a, _ in prof.controls) <= 4.0 + 1e-12

    def test_slower(self):
        prof = apply_meta_action(scene_from_vehicles([ego(v=25.0)]), A.SLOWER)
        assert prof.states[-1].v == pytest.approx(21.0)

    @pytest.mark.parametrize("v", [20.0, 25.0, 30.0])
    def test_lane_left_reaches_next_centre(self, v):
        prof = apply_meta_action(scene_from_vehicles([ego(lane=1, v=v)]), A.LANE_LEFT)
        end = prof.states[-1]
        assert end.lane == 2
        assert abs(end.y - ROAD.lane_center(2)) < 0.2
        assert max(abs(s.psi) for s in prof.states) <= 0.26 + 1e-12
        assert prof.target_lane == 2

    def test_lane_right(self):
        prof = apply_meta_action(scene_from_vehicles([ego(lane=2)]), A.LANE_RIGHT)
        assert prof.states[-1].lane == 1

    def test_inadmissible_rejected(self):
        with pytest.raises(ValueError):
            apply_meta_action(scene_from_vehicles([ego(lane=0)]), A.LANE_RIGHT)
        with pytest.raises(ValueError):
            apply_meta_action(scene_from_vehicles([ego(v=30.0)]), A.FASTER)


class TestRewards:
    cfg = RewardConfig(b=1.0, c=10.0)

    def test_bounds(self):
        assert reward_traditional(20.0, False, self.cfg, ROAD) == 0.0
        assert reward_traditional(30.0, False, self.cfg, ROAD) == 1.0

    def test_collision(self):
        assert reward_traditional(25.0, True, self.cfg, ROAD) == pytest.approx(-9.5)

    def test_speed_reward(self):
        assert reward_speed(20.0, self.cfg, ROAD) == 0.0
        assert reward_speed(30.0, self.cfg, ROAD) == 1.0
        assert reward_speed(27.5, self.cfg, ROAD) == pytest.approx(0.75)

    @settings(max_examples=200, deadline=None)
    @given(v1=st.floats(20.0, 30.0), v2=st.floats(20.0, 30.0))
    def test_monotone_and_penalty(self, v1, v2):
        lo, hi = sorted((v1, v2))
        assert reward_traditional(lo, False, self.cfg, ROAD) <= reward_traditional(hi, False, self.cfg, ROAD)
        diff = reward_traditional(v1, False, self.cfg, ROAD) - reward_traditional(v1, True, self.cfg, ROAD)
        assert diff == pytest.approx(self.cfg.c)

    def test_out_of_band_rejected(self):
        with pytest.raises(ValueError):
            reward_speed(19.0, self.cfg, ROAD)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            RewardConfig(b=0.0)
        with pytest.raises(ValueError):
            RewardConfig(c=-1.0)
        with pytest.raises(ValueError):
            RewardConfig(mode="other")


class TestEnv:
    def test_reset_determinism(self):
        a, b = HighwayEnv(), HighwayEnv()
        assert np.array_equal(a.reset(7).raw, b.reset(7).raw)

    def test_step_sequence_determinism(self):
        runs = []
        for _ in range(2):
            env = HighwayEnv()
            env.reset(3)
            out = []
            for k in range(8):
                acts = env.admissible_actions()
                res = env.step(acts[k % len(acts)])
                out.append((res.obs.raw.tobytes(), res.reward, res.terminal))
                if res.terminal:
                    break
            runs.append(out)
        assert runs[0] == runs[1]

    def test_full_episode_has_40_steps(self):
        env = HighwayEnv()
        env.reset(0)
        steps = 0
        while True:
            res = env.step(A.IDLE)
            steps += 1
            if res.terminal:
                break
        assert not res.info["collision"]
        assert steps == 40
        assert res.info["t"] == pytest.approx(40.0)

    def test_forced_crash(self):
        env = HighwayEnv()
        env.load_scene(scene_from_vehicles([ego(v=30.0), car(1, 12.0, v=0.0)]))
        res = env.step(A.IDLE)
        assert res.terminal and res.info["collision"]
        assert res.info["collided_with"] == [1]
        assert res.reward == pytest.approx(1.0 - 10.0)

    def test_step_after_terminal_rejected(self):
        env = HighwayEnv()
        env.load_scene(scene_from_vehicles([ego(v=30.0), car(1, 12.0, v=0.0)]))
        env.step(A.IDLE)
        with pytest.raises(RuntimeError):
            env.step(A.IDLE)

    def test_step_before_reset_rejected(self):
        with pytest.raises(RuntimeError):
            HighwayEnv().step(A.IDLE)

    def test_speed_only_mode(self):
        cfg = EnvConfig(reward=RewardConfig(mode="speed_only"))
        env = HighwayEnv(cfg)
        env.load_scene(scene_from_vehicles([ego(v=30.0), car(1, 12.0, v=0.0)]))
        res = env.step(A.IDLE)
        assert res.info["collision"] and res.reward >= 0.0

    def test_trace_export(self, tmp_path):
        rows = [{"step": 1, "action": "IDLE", "reward": 0.5, "ego_v": 25.0, "ego_lane": 1, "collision": 0, "terminal": 0}]
        path = tmp_path / "trace.csv"
        write_trace(rows, path)
        with open(path) as fh:
            got = list(csv.reader(fh))
        assert tuple(got[0]) == TRACE_COLUMNS
        assert got[1][1] == "IDLE"
