import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adsbmpc.obstacles import LaneProfile, VehicleGeometry, is_colliding
from adsbmpc.sim.config import ConfigError, RewardSection, default_config, dump_config, load_config
from adsbmpc.sim.traffic import Car, IdmParams, MobilParams, idm_accel, mobil_lane_change
from adsbmpc.sim.world import (CONSTANT_VELOCITY, IDM_MOBIL, SCRIPTED, ScriptedProfile, TargetVehicle, World,
                               generate_highway_scenario, generate_merge_scenario, reward,
                               scripted_disturbance_profile, step_world)

GEOM = VehicleGeometry(1.35, 1.4, 1.0, 2.0, 3.0)


def empty_world(ego=(0.0, 0.0, 0.0, 20.0, 0.0), targets=()):
    return World(t=0.0, ego=np.array(ego, float), ego_geom=GEOM, targets=list(targets),
                 lanes=LaneProfile.straight(-1.5, 7.5), lane_centers=[0.0, 3.0, 6.0])


# ---------------------------------------------------------------- step_world
def test_empty_road_zero_input_goes_straight():
    w = empty_world()
    for _ in range(40):
        _, crashed = step_world(w, [0.0, 0.0], 0.05)
        assert not crashed
    assert w.ego[0] == pytest.approx(20.0 * 2.0, abs=1e-9)
    assert w.ego[1] == 0.0 and w.ego[2] == 0.0 and w.ego[3] == 20.0
    assert w.t == pytest.approx(2.0)


def test_constant_velocity_target_advances_exactly():
    tv = TargetVehicle(id=0, X=50.0, Y=3.0, v=17.0, geom=GEOM, lane=1)
    w = empty_world(targets=[tv])
    step_world(w, [0.0, 0.0], 0.05)
    assert tv.X == 50.0 + 17.0 * 0.05
    assert tv.v == 17.0 and tv.Y == 3.0


def test_overlap_sets_crash_flag():
    tv = TargetVehicle(id=3, X=1.0, Y=0.5, v=20.0, geom=GEOM, lane=0)
    w = empty_world(targets=[tv])
    _, crashed = step_world(w, [0.0, 0.0], 0.05)
    assert crashed and w.crashed
    assert w.crash_reason == "collision with 3"


def test_road_departure_is_a_crash():
    # departure is judged by circle centers leaving the road
    w = empty_world(ego=(0.0, -1.6, 0.0, 20.0, 0.0))
    _, crashed = step_world(w, [0.0, 0.0], 0.05)
    assert crashed and w.crash_reason == "road departure"


def test_braking_target_stops_without_reversing():
    tv = TargetVehicle(id=0, X=50.0, Y=3.0, v=0.1, geom=GEOM, behavior=SCRIPTED, lane=1,
                       profile=ScriptedProfile(0.0, 1.0, accel=-3.0, decel=3.0))
    w = empty_world(targets=[tv])
    step_world(w, [0.0, 0.0], 0.05)
    assert tv.v == 0.0
    assert tv.X == pytest.approx(50.0 + 0.1 ** 2 / (2 * 3.0))


# ---------------------------------------------------------------- scripted profile
def test_scripted_profile_examples():
    assert scripted_disturbance_profile(-0.5, t_on=0.0, t_off=2.0) == 0.0
    assert scripted_disturbance_profile(0.0, t_on=0.0, t_off=2.0) == 3.0
    assert scripted_disturbance_profile(1.99, t_on=0.0, t_off=2.0) == 3.0
    assert scripted_disturbance_profile(2.0, t_on=0.0, t_off=2.0) == -3.0
    assert scripted_disturbance_profile(4.5, t_on=0.0, t_off=2.0) == 0.0


def test_scripted_target_returns_to_initial_speed():
    cfg = default_config("merge")
    cfg.merge.disturbance = True
    w = generate_merge_scenario(cfg)
    white = w.targets[0]
    v0, peak = white.v, white.v
    while w.t < 6.0 - 1e-9:
        step_world(w, [0.0, 0.0], 0.05)
        peak = max(peak, white.v)
    assert peak == pytest.approx(v0 + 3.0 * (cfg.merge.t_off - cfg.merge.t_on))
    assert white.v == pytest.approx(v0, abs=1e-9)


# ---------------------------------------------------------------- IDM
def idm_oracle(s, v, dv, v0, a, b, s0, T, delta):
    s_star = s0 + v * T + v * dv / (2.0 * math.sqrt(a * b))
    return a * (1.0 - (v / v0) ** delta - (s_star / s) ** 2)


def test_idm_free_flow_and_start():
    p = IdmParams()
    assert idm_accel(None, 25.0, 0.0, 25.0, p) == pytest.approx(0.0, abs=1e-12)
    assert idm_accel(1e9, 0.0, 0.0, 25.0, p) == pytest.approx(p.a_max, rel=1e-9)


def test_idm_matches_independent_evaluation():
    p = IdmParams()
    want = idm_oracle(20.0, 25.0, 5.0, 30.0, p.a_max, p.b, p.s0, p.T, p.delta)
    got = idm_accel(20.0, 25.0, 5.0, 30.0, p)
    assert got == pytest.approx(max(want, p.a_floor), rel=1e-12)
    # a milder case that stays above the braking floor
    want = idm_oracle(60.0, 20.0, -1.0, 30.0, p.a_max, p.b, p.s0, p.T, p.delta)
    assert want > p.a_floor
    assert idm_accel(60.0, 20.0, -1.0, 30.0, p) == pytest.approx(want, rel=1e-12)


def test_idm_platoon_converges_to_leader_speed():
    leader = TargetVehicle(id=0, X=200.0, Y=0.0, v=20.0, geom=GEOM, behavior=CONSTANT_VELOCITY, lane=0)
    followers = [TargetVehicle(id=i, X=200.0 - 25.0 * i, Y=0.0, v=v, geom=GEOM, behavior=IDM_MOBIL, lane=0,
                               v0=28.0, lc_timer=1e9)
                 for i, v in zip(range(1, 5), (26.0, 15.0, 24.0, 18.0))]
    w = World(t=0.0, ego=np.array([-1000.0, 0.0, 0.0, 0.0, 0.0]), ego_geom=GEOM, targets=[leader] + followers,
              lanes=LaneProfile.straight(-1.5, 1.5), lane_centers=[0.0])
    for _ in range(int(120.0 / 0.05)):
        step_world(w, [0.0, 0.0], 0.05)
    assert not w.crashed
    for f in followers:
        assert abs(f.v - 20.0) < 0.1
    xs = [t.X for t in w.targets]
    gaps = -np.diff(xs) - w.idm.length
    # equilibrium gap of the IDM at the leader speed
    p = w.idm
    s_eq = (p.s0 + 20.0 * p.T) / math.sqrt(1.0 - (20.0 / 28.0) ** p.delta)
    np.testing.assert_allclose(gaps, s_eq, rtol=0.02)


# ---------------------------------------------------------------- MOBIL
def test_mobil_empty_road_keeps_lane():
    me = Car("me", 0.0, 25.0, 1, v0=25.0)
    assert not mobil_lane_change(me, [me], 0, IdmParams(), MobilParams())
    assert not mobil_lane_change(me, [me], 2, IdmParams(), MobilParams())


def test_mobil_slow_leader_free_lane_changes():
    me = Car("me", 0.0, 25.0, 1, v0=30.0)
    slow = Car("slow", 30.0, 15.0, 1, v0=15.0)
    idm = IdmParams()
    # incentive by hand: free-road acceleration minus car-following acceleration
    a_new = idm.a_max * (1 - (25.0 / 30.0) ** idm.delta)
    a_old = max(idm_oracle(30.0 - idm.length, 25.0, 10.0, 30.0, idm.a_max, idm.b, idm.s0, idm.T, idm.delta),
                idm.a_floor)
    assert a_new - a_old > MobilParams().threshold
    assert mobil_lane_change(me, [me, slow], 2, idm, MobilParams())


def test_mobil_unsafe_follower_rejects():
    me = Car("me", 0.0, 25.0, 1, v0=30.0)
    slow = Car("slow", 30.0, 15.0, 1, v0=15.0)
    fast = Car("fast", -9.0, 30.0, 2, v0=30.0)
    idm = IdmParams()
    a_follower = idm_accel(9.0 - idm.length, 30.0, 5.0, 30.0, idm)
    assert a_follower < -MobilParams().b_safe
    assert not mobil_lane_change(me, [me, slow, fast], 2, idm, MobilParams())


# ---------------------------------------------------------------- reward
def test_reward_examples():
    p = RewardSection()
    assert reward(False, 3, 30.0, p) == pytest.approx(1.0)
    assert reward(True, 0, 15.0, p) == pytest.approx(0.0)
    assert reward(False, 2, 25.0, p) == pytest.approx((1 + 0.1 * 2 / 3 + 0.4 * 0.5) / 1.5)
    assert reward(False, 2, 25.0, p) == pytest.approx(0.8444, abs=1e-4)


@given(st.booleans(), st.integers(0, 3), st.floats(0.0, 40.0), st.floats(0.0, 40.0), st.integers(0, 3))
def test_reward_bounds_and_monotonicity(crashed, lane, v1, v2, lane2):
    r = reward(crashed, lane, v1)
    assert 0.0 <= r <= 1.0
    lo, hi = sorted((v1, v2))
    assert reward(crashed, lane, lo) <= reward(crashed, lane, hi)
    l_lo, l_hi = sorted((lane, lane2))
    assert reward(crashed, l_lo, v1) <= reward(crashed, l_hi, v1)


# ---------------------------------------------------------------- scenarios
def world_signature(w):
    return (w.ego.tolist(), [(t.id, t.X, t.Y, t.v, t.lane, t.lc_timer) for t in w.targets])


def test_highway_generation_is_deterministic():
    cfg = default_config("highway")
    assert world_signature(generate_highway_scenario(cfg, 7)) == world_signature(generate_highway_scenario(cfg, 7))
    assert world_signature(generate_highway_scenario(cfg, 7)) != world_signature(generate_highway_scenario(cfg, 8))


@pytest.mark.parametrize("density", [1.0, 1.5, 2.0])
def test_highway_counts_and_spawn_gaps(density):
    cfg = default_config("highway")
    base = cfg.traffic.base_count
    for seed in range(20):
        w = generate_highway_scenario(cfg, seed, density)
        assert len(w.targets) == math.ceil(density * base)
        assert len(w.lane_centers) == 4
        assert np.diff(w.lane_centers) == pytest.approx([4.0] * 3)
        assert not w.crashed
        # same-lane spacing, ego included
        cars = [(w.ego[0], w.lane_of(w.ego[1]))] + [(t.X, t.lane) for t in w.targets]
        for lane in range(4):
            xs = sorted(x for x, ln in cars if ln == lane)
            assert np.all(np.diff(xs) >= cfg.traffic.spawn_gap - 1e-9)
        ego_pose = (w.ego[0], w.ego[1], w.ego[2])
        assert not any(is_colliding(ego_pose, t.pose(), w.ego_geom, t.geom) for t in w.targets)
        assert all(t.behavior == IDM_MOBIL for t in w.targets)


def test_density_two_doubles_the_count():
    cfg = default_config("highway")
    n1 = len(generate_highway_scenario(cfg, 0, 1.0).targets)
    n2 = len(generate_highway_scenario(cfg, 0, 2.0).targets)
    assert n2 == 2 * n1


def test_merge_scenarios():
    cfg = default_config("merge")
    w = generate_merge_scenario(cfg)
    assert [t.behavior for t in w.targets] == [CONSTANT_VELOCITY, CONSTANT_VELOCITY]
    assert w.ego[1] == cfg.merge.y_entry
    # the entry lane terminates over the configured taper
    m, half = cfg.merge, cfg.vehicle.w_lane / 2
    assert w.lanes.y_min(m.ramp_start - 1.0) == pytest.approx(m.y_entry - half)
    assert w.lanes.y_min(m.ramp_start + m.ramp_length + 1.0) == pytest.approx(m.y_main - half)
    assert w.lanes.end_of_lane() == m.ramp_start + m.ramp_length
    cfg.merge.disturbance = True
    w = generate_merge_scenario(cfg)
    assert w.targets[0].behavior == SCRIPTED and w.targets[1].behavior == CONSTANT_VELOCITY
    assert w.targets[0].profile(0.5 * (m.t_on + m.t_off)) == 3.0


# ---------------------------------------------------------------- config
def test_config_round_trip(tmp_path):
    cfg = default_config("highway")
    cfg.traffic.density = 1.5
    cfg.cost.q_a = 7.0
    path = tmp_path / "c.ini"
    path.write_text(dump_config(cfg))
    assert load_config(path, "highway") == cfg


@pytest.mark.parametrize("text", ["[mpc]\nbogus = 1\n", "[nosuch]\nx = 1\n", "[mpc]\nN = lots\n",
                                  "[scenario]\nkind = highway\n", "not an ini file"])
def test_config_rejects_bad_input(tmp_path, text):
    path = tmp_path / "c.ini"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_config(path, "merge")


def test_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.ini", "merge")
