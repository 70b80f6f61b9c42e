"""Scenario configuration with INI overrides.

Each section of the INI file maps to one dataclass below; keys must match
field names.  Unknown sections or keys raise ``ConfigError``.
"""
from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field


class ConfigError(ValueError):
    pass


@dataclass
class VehicleSection:
    w_lane: float = 3.0
    L: float = 2.0
    r: float = 1.35
    D: float = 1.4
    C: float = 1.0
    v_max: float = 30.0
    v_min: float = 0.0
    psi_max: float = math.pi / 2
    delta_max: float = math.pi / 6
    delta_rate_max: float = 0.5
    a_max: float = 3.0
    v_ref: float = 25.0


@dataclass
class CostSection:
    q_Y: float = 3.0
    q_psi: float = math.pi / 2
    q_v: float = 10.0
    q_delta: float = 0.1
    q_delta_rate: float = 0.1
    q_a: float = 6.0
    q_s: float = 0.001


@dataclass
class MpcSection:
    N: int = 25
    dt: float = 0.2
    physics_dt: float = 0.05
    max_iter: int = 150
    tol: float = 1e-6
    direct_steer: bool = False
    sensing_range: float = 80.0
    max_obstacles: int = 6
    safety_margin: float = 0.1   # planner-only clearance added to target radii


@dataclass
class AdversarialSection:
    dX: float = 5.0
    dt_cell: float = 0.01
    gamma_d: float = 0.5
    eta: float = 0.25
    a_dist: float = 3.0
    k_y: float = 0.0
    prune_n: int = -1          # negative keeps every sequence
    merge_exception: bool = True
    literal_guard: bool = False


@dataclass
class MergeSection:
    disturbance: bool = False
    y_entry: float = 0.0
    y_main: float = 3.0
    ramp_start: float = 50.0
    ramp_length: float = 20.0
    ego_x: float = 0.0
    ego_v: float = 20.0
    white_x: float = -6.0
    white_v: float = 21.0
    gray_x: float = 35.0
    gray_v: float = 22.0
    t_on: float = 0.0
    t_off: float = 2.0
    dist_accel: float = 3.0
    episode_length: float = 10.0


@dataclass
class TrafficSection:
    density: float = 1.0
    base_count: int = 20
    n_lanes: int = 4
    ego_speed: float = 25.0
    speed_lo: float = 23.0
    speed_hi: float = 25.0
    spawn_gap: float = 8.0
    episode_length: float = 20.0
    idm_a_max: float = 3.0
    idm_b: float = 5.0
    idm_s0: float = 5.0
    idm_T: float = 1.5
    idm_delta: float = 4.0
    idm_a_floor: float = -6.0
    mobil_politeness: float = 0.0
    mobil_threshold: float = 0.2
    mobil_b_safe: float = 2.0
    mobil_period: float = 1.0
    lateral_gain: float = 0.8
    lateral_speed_max: float = 2.0


@dataclass
class RewardSection:
    b_c: float = 1.0
    b_l: float = 0.1
    b_v: float = 0.4
    v_r_min: float = 20.0
    v_r_max: float = 30.0


@dataclass
class ScenarioConfig:
    kind: str = "merge"
    seed: int = 0
    vehicle: VehicleSection = field(default_factory=VehicleSection)
    cost: CostSection = field(default_factory=CostSection)
    mpc: MpcSection = field(default_factory=MpcSection)
    adversarial: AdversarialSection = field(default_factory=AdversarialSection)
    merge: MergeSection = field(default_factory=MergeSection)
    traffic: TrafficSection = field(default_factory=TrafficSection)
    reward: RewardSection = field(default_factory=RewardSection)

    def __post_init__(self):
        if self.kind not in ("merge", "highway"):
            raise ConfigError(f"unknown scenario kind {self.kind!r}")

    @property
    def episode_length(self) -> float:
        return self.merge.episode_length if self.kind == "merge" else self.traffic.episode_length


SECTIONS = ("vehicle", "cost", "mpc", "adversarial", "merge", "traffic", "reward")


def default_config(kind: str = "merge") -> ScenarioConfig:
    if kind == "merge":
        return ScenarioConfig(kind="merge")
    if kind != "highway":
        raise ConfigError(f"unknown scenario kind {kind!r}")
    return ScenarioConfig(
        kind="highway",
        vehicle=VehicleSection(w_lane=4.0, L=5.0, r=1.4, D=1.4, C=2.5, delta_max=math.pi / 4,
                               a_max=5.0, v_ref=30.0),
        cost=CostSection(q_Y=12.0, q_v=20.0, q_delta_rate=math.inf, q_a=10.0),
        mpc=MpcSection(N=15, direct_steer=True),
        adversarial=AdversarialSection(a_dist=1.0, k_y=0.1, prune_n=2, merge_exception=False, dt_cell=0.05),
    )


def _coerce(value: str, typ, name: str):
    typ = {"float": float, "int": int, "bool": bool, "str": str}.get(typ, typ) if isinstance(typ, str) else typ
    try:
        if typ is bool:
            v = value.strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if typ is int:
            return int(value)
        if typ is float:
            v = value.strip().lower()
            return math.inf if v in ("inf", "infinity") else float(value)
        return value
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {value!r}") from exc


def apply_overrides(cfg: ScenarioConfig, parser: configparser.ConfigParser) -> ScenarioConfig:
    for sec in parser.sections():
        if sec == "scenario":
            for key, val in parser.items(sec):
                if key == "seed":
                    cfg.seed = _coerce(val, int, "scenario.seed")
                elif key == "kind":
                    if val != cfg.kind:
                        raise ConfigError(f"config is for {val!r}, run requested {cfg.kind!r}")
                else:
                    raise ConfigError(f"unknown key scenario.{key}")
            continue
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        obj = getattr(cfg, sec)
        fields = {f.name: f for f in dataclasses.fields(obj)}
        for key, val in parser.items(sec):
            if key not in fields:
                raise ConfigError(f"unknown key {sec}.{key}")
            setattr(obj, key, _coerce(val, fields[key].type, f"{sec}.{key}"))
    return cfg


def load_config(path, kind: str) -> ScenarioConfig:
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep key case (q_Y, L, ...)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return apply_overrides(default_config(kind), parser)


def dump_config(cfg: ScenarioConfig) -> str:
    lines = ["[scenario]", f"kind = {cfg.kind}", f"seed = {cfg.seed}"]
    for sec in SECTIONS:
        lines.append("")
        lines.append(f"[{sec}]")
        for f in dataclasses.fields(getattr(cfg, sec)):
            lines.append(f"{f.name} = {getattr(getattr(cfg, sec), f.name)}")
    return "\n".join(lines) + "\n"
