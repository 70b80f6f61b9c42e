"""Two-circle kernel collision constraints and lane-boundary constraints.

Each vehicle is covered by two circles on its longitudinal axis.  The
constraint against another vehicle combines that vehicle's circles with a
squared exponential kernel, which yields a smooth, vehicle-shaped keep-out
region.  Residuals follow the ``g <= 0`` feasible convention throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


@dataclass(frozen=True)
class VehicleGeometry:
    r: float
    D: float
    C: float
    L: float
    w_lane: float

    def __post_init__(self):
        if self.r <= 0 or self.D <= 0:
            raise ValueError("circle radius and separation must be positive")

    @property
    def length_scale(self) -> float:
        return length_scale(self.D)

    @property
    def offsets(self) -> tuple[float, float]:
        """Distances from the reference point to the front and rear circle."""
        return (self.C + self.D, self.C - self.D)


def length_scale(D: float) -> float:
    """Kernel length scale keeping the boundary outside the centerline band."""
    return D / math.sqrt(2.0 * math.log(2.0))


class CirclePair(NamedTuple):
    p1: tuple[float, float]
    p2: tuple[float, float]


def circle_centers(pose, geom: VehicleGeometry) -> CirclePair:
    X, Y, psi = pose[0], pose[1], pose[2]
    c, s = math.cos(psi), math.sin(psi)
    f, b = geom.offsets
    return CirclePair((X + f * c, Y + f * s), (X + b * c, Y + b * s))


def circle_centers_array(X, Y, psi, geom: VehicleGeometry) -> np.ndarray:
    """Vectorized centers, shape (..., 2 circles, 2 coords)."""
    X, Y, psi = np.broadcast_arrays(np.asarray(X, float), np.asarray(Y, float), np.asarray(psi, float))
    c, s = np.cos(psi), np.sin(psi)
    out = np.empty(X.shape + (2, 2))
    for j, off in enumerate(geom.offsets):
        out[..., j, 0] = X + off * c
        out[..., j, 1] = Y + off * s
    return out


def kernel_value(a, b, r_a: float, r_b: float, slack: float, l: float) -> float:
    d2 = (a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2
    return math.exp(-(d2 - (r_a + r_b - slack) ** 2) / (2.0 * l * l))


def collision_constraints(ego: CirclePair, target: CirclePair, r_ego: float, r_tv: float,
                          slack: float, l: float) -> np.ndarray:
    """One residual per ego circle: sum of target-circle kernels minus one."""
    return np.array([
        sum(kernel_value(a, b, r_tv, r_ego, slack, l) for a in target) - 1.0
        for b in ego
    ])


def kernel_sum_array(ego_centers: np.ndarray, tv_centers: np.ndarray, R: float, l: float,
                     slack=0.0) -> np.ndarray:
    """Vectorized kernel sums.

    ``ego_centers`` (..., 2, 2) and ``tv_centers`` (..., 2, 2) broadcast
    together; returns (..., 2) kernel sums per ego circle.
    """
    diff = ego_centers[..., :, None, :] - tv_centers[..., None, :, :]
    d2 = np.sum(diff * diff, axis=-1)
    Rs = (R - np.asarray(slack, float))[..., None, None] if np.ndim(slack) else (R - slack)
    return np.exp(-(d2 - Rs ** 2) / (2.0 * l * l)).sum(axis=-1)


class LaneProfile:
    """Lower/upper road boundaries as functions of the longitudinal position.

    ``y_min`` may step up over a linear taper to model a terminating lane.
    """

    def __init__(self, y_lo: float, y_hi: float, ramp_start: float | None = None,
                 ramp_length: float = 20.0, y_lo_after: float | None = None):
        self.y_lo = float(y_lo)
        self.y_hi = float(y_hi)
        self.ramp_start = ramp_start
        self.ramp_length = float(ramp_length)
        self.y_lo_after = float(y_lo_after) if y_lo_after is not None else self.y_lo
        if self.y_lo_after >= self.y_hi or self.y_lo >= self.y_hi:
            raise ValueError("lane profile must satisfy y_min < y_max")

    @classmethod
    def straight(cls, y_lo: float, y_hi: float) -> "LaneProfile":
        return cls(y_lo, y_hi)

    def _ramp(self, X):
        X = np.asarray(X, dtype=float)
        if self.ramp_start is None or self.y_lo_after == self.y_lo:
            z = np.zeros_like(X)
            return z, z, z
        z = np.clip((X - self.ramp_start) / self.ramp_length, 0.0, 1.0)
        inside = (z > 0.0) & (z < 1.0)
        h = self.y_lo_after - self.y_lo
        dS = np.where(inside, 1.0 / self.ramp_length, 0.0)
        return h * z, h * dS, np.zeros_like(z)

    def y_min(self, X):
        return self.y_lo + self._ramp(X)[0]

    def y_min_scalar(self, x: float) -> float:
        """``y_min`` for a single float, without array overhead."""
        if self.ramp_start is None or x <= self.ramp_start:
            return self.y_lo
        z = min(1.0, (x - self.ramp_start) / self.ramp_length)
        return self.y_lo + (self.y_lo_after - self.y_lo) * z

    def y_min_derivs(self, X):
        v, d1, d2 = self._ramp(X)
        return self.y_lo + v, d1, d2

    def y_max(self, X):
        return np.full_like(np.asarray(X, dtype=float), self.y_hi)

    def end_of_lane(self) -> float:
        """Position past which the lower boundary has fully stepped up."""
        if self.ramp_start is None:
            return math.inf
        return self.ramp_start + self.ramp_length


def lane_constraints(circles: CirclePair, r: float, slack: float, lanes: LaneProfile) -> np.ndarray:
    """Residuals (lower, upper) for each circle, flattened to length 4."""
    out = []
    for (x, y) in circles:
        out.append(r - (y - float(lanes.y_min(x)) + slack))
        out.append(r - (float(lanes.y_max(x)) - y + slack))
    return np.array(out)


def is_colliding(ego_pose, tv_pose, geom_ego: VehicleGeometry, geom_tv: VehicleGeometry) -> bool:
    R = geom_ego.r + geom_tv.r
    for a in circle_centers(ego_pose, geom_ego):
        for b in circle_centers(tv_pose, geom_tv):
            if math.hypot(a[0] - b[0], a[1] - b[1]) < R:
                return True
    return False


def violation_radius(R: float, D: float) -> float:
    """Largest center distance at which a slack-free kernel sum can exceed one.

    A sum of two kernels exceeds one only if one of them exceeds one half,
    i.e. ``d^2 < R^2 + 2 l^2 ln 2 = R^2 + D^2``.
    """
    return math.sqrt(R * R + D * D)

