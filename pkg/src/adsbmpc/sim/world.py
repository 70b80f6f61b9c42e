"""Closed-loop world: ego ground truth, target behaviors, crashes and rewards."""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from ..obstacles import VehicleGeometry, LaneProfile, circle_centers, is_colliding
from ..vehicle_models import KinematicModel, DirectSteerModel
from .config import ScenarioConfig, RewardSection
from .traffic import Car, IdmParams, MobilParams, idm_accel, leader_follower, mobil_lane_change

CONSTANT_VELOCITY = "constant_velocity"
SCRIPTED = "scripted"
IDM_MOBIL = "idm_mobil"


@dataclass(frozen=True)
class ScriptedProfile:
    """Accelerate for ``[t_on, t_off)``, then brake back to the initial speed."""

    t_on: float
    t_off: float
    accel: float = 3.0
    decel: float = 3.0

    @property
    def t_end(self) -> float:
        return self.t_off + (self.t_off - self.t_on) * self.accel / self.decel

    def __call__(self, t: float) -> float:
        if t < self.t_on:
            return 0.0
        if t < self.t_off:
            return self.accel
        if t < self.t_end - 1e-12:
            return -self.decel
        return 0.0


def scripted_disturbance_profile(t: float, t_on: float = 0.0, t_off: float = 2.0,
                                 accel: float = 3.0) -> float:
    return ScriptedProfile(t_on, t_off, accel, accel)(t)


@dataclass
class TargetVehicle:
    id: int
    X: float
    Y: float
    v: float
    geom: VehicleGeometry
    behavior: str = CONSTANT_VELOCITY
    lane: int = 0
    psi: float = 0.0
    v0: float = 25.0
    target_lane: int | None = None
    profile: ScriptedProfile | None = None
    lc_timer: float = 0.0
    vy: float = 0.0

    def pose(self):
        return (self.X, self.Y, self.psi)

    def state(self) -> np.ndarray:
        return np.array([self.X, self.Y, self.psi, self.v])


@dataclass
class World:
    t: float
    ego: np.ndarray
    ego_geom: VehicleGeometry
    targets: list
    lanes: LaneProfile
    lane_centers: list
    direct_steer: bool = False
    idm: IdmParams = field(default_factory=IdmParams)
    mobil: MobilParams = field(default_factory=MobilParams)
    lateral_gain: float = 0.8
    lateral_speed_max: float = 2.0
    crashed: bool = False
    crash_reason: str = ""

    @property
    def model(self):
        L = self.ego_geom.L
        return DirectSteerModel(L) if self.direct_steer else KinematicModel(L)

    def copy(self) -> "World":
        return copy.deepcopy(self)

    def lane_of(self, Y: float) -> int:
        return int(np.argmin([abs(Y - c) for c in self.lane_centers]))


def ego_crash(world: World) -> str:
    pose = world.ego[:3]
    for tv in world.targets:
        if is_colliding(pose, tv.pose(), world.ego_geom, tv.geom):
            return f"collision with {tv.id}"
    for (x, y) in circle_centers(pose, world.ego_geom):
        if y < float(world.lanes.y_min(x)) or y > float(world.lanes.y_max(x)):
            return "road departure"
    return ""


def _cars(world: World):
    g = world.ego_geom
    cars = [Car("ego", world.ego[0] + g.C, world.ego[3], world.lane_of(world.ego[1]), v0=world.ego[3])]
    for tv in world.targets:
        cars.append(Car(tv.id, tv.X + tv.geom.C, tv.v, tv.target_lane if tv.target_lane is not None else tv.lane,
                        v0=tv.v0))
    return cars


def _idm_decisions(world: World, dt: float):
    """Accelerations and lane-change updates for IDM/MOBIL targets."""
    cars = _cars(world)
    accs = {}
    for tv, car in zip(world.targets, cars[1:]):
        if tv.behavior != IDM_MOBIL:
            continue
        # follow the nearest leader in the current and (while changing) target lane
        lanes = {tv.lane} | ({tv.target_lane} if tv.target_lane is not None else set())
        acc = math.inf
        for ln in lanes:
            lead, _ = leader_follower(cars, car.x, ln, exclude=car)
            acc = min(acc, idm_accel(None if lead is None else lead.x - car.x - world.idm.length,
                                     car.v, 0.0 if lead is None else car.v - lead.v, car.v0, world.idm))
        accs[tv.id] = acc
        tv.lc_timer -= dt
        if tv.target_lane is None and tv.lc_timer <= 0.0:
            tv.lc_timer = world.mobil.period
            for ln in (tv.lane - 1, tv.lane + 1):
                if 0 <= ln < len(world.lane_centers) and mobil_lane_change(car, cars, ln, world.idm, world.mobil):
                    tv.target_lane = ln
                    break
    return accs


def step_world(world: World, ego_input, dt: float) -> tuple[World, bool]:
    """Advance the world by ``dt`` in place; returns (world, crashed)."""
    u = np.asarray(ego_input, dtype=float)
    accs = _idm_decisions(world, dt) if any(tv.behavior == IDM_MOBIL for tv in world.targets) else {}
    world.ego = world.model.step(world.ego, u, dt)
    for tv in world.targets:
        if tv.behavior == CONSTANT_VELOCITY:
            a = 0.0
        elif tv.behavior == SCRIPTED:
            a = tv.profile(world.t)
        else:
            a = accs.get(tv.id, 0.0)
        if a < 0.0 and tv.v + a * dt < 0.0:
            tau = tv.v / -a
            tv.X += tv.v * tau / 2.0
            tv.v = 0.0
        else:
            tv.X += tv.v * dt + 0.5 * a * dt * dt
            tv.v += a * dt
        if tv.behavior == IDM_MOBIL:
            goal = world.lane_centers[tv.target_lane if tv.target_lane is not None else tv.lane]
            vy = max(-world.lateral_speed_max, min(world.lateral_speed_max, world.lateral_gain * (goal - tv.Y)))
            tv.Y += vy * dt
            tv.vy = vy
            tv.psi = math.atan2(vy, max(tv.v, 1e-3))
            if tv.target_lane is not None and abs(goal - tv.Y) < 0.1:
                tv.lane, tv.target_lane = tv.target_lane, None
                tv.Y, tv.vy, tv.psi = goal, 0.0, 0.0
    world.t += dt
    reason = ego_crash(world)
    if reason:
        world.crashed = True
        world.crash_reason = reason
    return world, world.crashed


def reward(crashed: bool, i_lane: int, v: float, p: RewardSection | None = None, n_lanes: int = 4) -> float:
    p = p or RewardSection()
    r_lane = i_lane / (n_lanes - 1)
    if v < p.v_r_min:
        r_speed = 0.0
    elif v > p.v_r_max:
        r_speed = 1.0
    else:
        r_speed = (v - p.v_r_min) / (p.v_r_max - p.v_r_min)
    r_crash = 1.0 if crashed else 0.0
    return (p.b_c * (1.0 - r_crash) + p.b_l * r_lane + p.b_v * r_speed) / (p.b_c + p.b_l + p.b_v)


# ---------------------------------------------------------------- scenarios
def ego_geometry(cfg: ScenarioConfig) -> VehicleGeometry:
    v = cfg.vehicle
    return VehicleGeometry(r=v.r, D=v.D, C=v.C, L=v.L, w_lane=v.w_lane)


def merge_lanes(cfg: ScenarioConfig) -> LaneProfile:
    m, w = cfg.merge, cfg.vehicle.w_lane
    return LaneProfile(m.y_entry - w / 2, m.y_main + w / 2, ramp_start=m.ramp_start,
                       ramp_length=m.ramp_length, y_lo_after=m.y_main - w / 2)


def generate_merge_scenario(cfg: ScenarioConfig) -> World:
    m = cfg.merge
    g = ego_geometry(cfg)
    ego = np.array([m.ego_x, m.y_entry, 0.0, m.ego_v, 0.0])
    white = TargetVehicle(id=0, X=m.white_x, Y=m.y_main, v=m.white_v, geom=g, lane=1, v0=m.white_v)
    gray = TargetVehicle(id=1, X=m.gray_x, Y=m.y_main, v=m.gray_v, geom=g, lane=1, v0=m.gray_v)
    if m.disturbance:
        white.behavior = SCRIPTED
        white.profile = ScriptedProfile(m.t_on, m.t_off, m.dist_accel, m.dist_accel)
    return World(t=0.0, ego=ego, ego_geom=g, targets=[white, gray], lanes=merge_lanes(cfg),
                 lane_centers=[m.y_entry, m.y_main], direct_steer=False)


def highway_lanes(cfg: ScenarioConfig):
    w, n = cfg.vehicle.w_lane, cfg.traffic.n_lanes
    centers = [i * w for i in range(n)]
    return LaneProfile.straight(-w / 2, centers[-1] + w / 2), centers


def generate_highway_scenario(cfg: ScenarioConfig, seed: int, density: float | None = None) -> World:
    tr = cfg.traffic
    density = tr.density if density is None else density
    rng = np.random.default_rng(seed)
    g = ego_geometry(cfg)
    lanes, centers = highway_lanes(cfg)
    n = len(centers)
    ego_lane = int(rng.integers(n))
    ego = np.array([0.0, centers[ego_lane], 0.0, tr.ego_speed])
    count = int(math.ceil(density * tr.base_count))
    targets = []
    x_front = g.C
    last_in_lane = {i: -math.inf for i in range(n)}
    last_in_lane[ego_lane] = g.C
    for i in range(count):
        speed = float(rng.uniform(tr.speed_lo, tr.speed_hi))
        lane = int(rng.integers(n))
        offset = (12.0 + speed) * math.exp(-5.0 / 40.0 * n) / density * float(rng.uniform(0.9, 1.1))
        x_c = max(x_front + offset, last_in_lane[lane] + tr.spawn_gap)
        x_front = x_c
        last_in_lane[lane] = x_c
        targets.append(TargetVehicle(id=i, X=x_c - g.C, Y=centers[lane], v=speed, geom=g,
                                     behavior=IDM_MOBIL, lane=lane, v0=speed,
                                     lc_timer=float(rng.uniform(0.0, tr.mobil_period))))
    idm = IdmParams(a_max=tr.idm_a_max, b=tr.idm_b, s0=tr.idm_s0, T=tr.idm_T, delta=tr.idm_delta,
                    a_floor=tr.idm_a_floor, length=2.0 * (g.C - g.offsets[1]) + 2.0 * g.r - 0.6)
    mobil = MobilParams(politeness=tr.mobil_politeness, threshold=tr.mobil_threshold,
                        b_safe=tr.mobil_b_safe, period=tr.mobil_period)
    return World(t=0.0, ego=ego, ego_geom=g, targets=targets, lanes=lanes, lane_centers=centers,
                 direct_steer=True, idm=idm, mobil=mobil, lateral_gain=tr.lateral_gain,
                 lateral_speed_max=tr.lateral_speed_max)
