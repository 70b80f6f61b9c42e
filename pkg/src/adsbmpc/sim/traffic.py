"""Intelligent driver model and MOBIL lane changes."""
from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class IdmParams:
    a_max: float = 3.0        # maximum (comfortable) acceleration
    b: float = 5.0            # comfortable deceleration
    s0: float = 5.0           # minimum bumper-to-bumper gap
    T: float = 1.5            # desired time headway
    delta: float = 4.0
    a_floor: float = -6.0     # physical braking limit applied to the output
    length: float = 5.0       # vehicle length used for bumper gaps


@dataclass(frozen=True)
class MobilParams:
    politeness: float = 0.0
    threshold: float = 0.2
    b_safe: float = 2.0
    period: float = 1.0


def idm_accel(gap, v: float, dv: float, v0: float, p: IdmParams) -> float:
    """IDM acceleration; ``gap=None`` means no leader, ``dv`` is the closing speed."""
    free = 1.0 - (max(v, 0.0) / v0) ** p.delta if v0 > 0 else -1.0
    if gap is None:
        acc = p.a_max * free
    else:
        gap = max(gap, 1e-3)
        s_star = p.s0 + max(0.0, v * p.T + v * dv / (2.0 * math.sqrt(p.a_max * p.b)))
        acc = p.a_max * (free - (s_star / gap) ** 2)
    return max(acc, p.a_floor)


@dataclass
class Car:
    """Minimal view of a vehicle for car-following and lane-change logic."""
    id: object
    x: float        # center position
    v: float
    lane: int
    v0: float = 30.0


def leader_follower(cars, x: float, lane: int, exclude=None):
    lead, foll = None, None
    for c in cars:
        if c.lane != lane or c is exclude:
            continue
        if c.x >= x:
            if lead is None or c.x < lead.x:
                lead = c
        else:
            if foll is None or c.x > foll.x:
                foll = c
    return lead, foll


def accel_behind(car: Car, lead: Car | None, p: IdmParams, x=None) -> float:
    x = car.x if x is None else x
    if lead is None:
        return idm_accel(None, car.v, 0.0, car.v0, p)
    return idm_accel(lead.x - x - p.length, car.v, car.v - lead.v, car.v0, p)


def mobil_lane_change(car: Car, cars, target_lane: int, idm: IdmParams, mp: MobilParams) -> bool:
    """MOBIL safety and incentive criteria for a move into ``target_lane``."""
    others = [c for c in cars if c is not car]
    new_lead, new_foll = leader_follower(others, car.x, target_lane)
    # safety: the new follower must not brake harder than b_safe
    if new_foll is not None:
        if new_lead is not None and new_lead.x - new_foll.x <= 0:
            return False
        if car.x - new_foll.x - idm.length <= 0:
            return False
        a_nf_new = accel_behind(new_foll, car, idm)
        if a_nf_new < -mp.b_safe:
            return False
    if new_lead is not None and new_lead.x - car.x - idm.length <= 0:
        return False
    old_lead, old_foll = leader_follower(others, car.x, car.lane)
    a_self_old = accel_behind(car, old_lead, idm)
    a_self_new = accel_behind(car, new_lead, idm)
    gain = a_self_new - a_self_old
    if mp.politeness > 0.0:
        if new_foll is not None:
            gain += mp.politeness * (accel_behind(new_foll, car, idm) - accel_behind(new_foll, new_lead, idm))
        if old_foll is not None:
            gain += mp.politeness * (accel_behind(old_foll, old_lead, idm) - accel_behind(old_foll, car, idm))
    return gain > mp.threshold
