"""Ego-vehicle dynamics: the kinematic single-track model and the
distance-parameterized point-mass model used by the lattice searches.

The vectorized ``KinematicModel`` / ``DirectSteerModel`` classes provide the
RK4 discretization together with exact first and second derivatives, which
the optimal control transcription consumes.
"""
from __future__ import annotations

import math
from dataclasses import astuple, dataclass

import numpy as np


class StopsWithinStep(ValueError):
    """Braking would bring the vehicle to rest before covering the step."""


@dataclass(frozen=True)
class EgoState:
    X: float
    Y: float
    psi: float
    v: float
    delta: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, a) -> "EgoState":
        return cls(*(float(x) for x in a[:5]))


@dataclass(frozen=True)
class EgoInput:
    steer_rate: float
    accel: float

    def as_array(self) -> np.ndarray:
        return np.array([self.steer_rate, self.accel], dtype=float)


@dataclass(frozen=True)
class SimpleState:
    X: float
    Y: float
    v_sq: float
    t: float

    @property
    def v(self) -> float:
        return math.sqrt(max(self.v_sq, 0.0))


@dataclass(frozen=True)
class SimpleInput:
    u_a: float
    u_y: float = 0.0


def kinematic_derivative(s: EgoState, u: EgoInput, L: float) -> np.ndarray:
    return np.array([
        s.v * math.cos(s.psi),
        s.v * math.sin(s.psi),
        s.v * math.tan(s.delta) / L,
        u.accel,
        u.steer_rate,
    ])


def rk4_step(s: EgoState, u: EgoInput, dt: float, L: float) -> EgoState:
    x = s.as_array()
    uu = np.array([u.steer_rate, u.accel])
    return EgoState.from_array(KinematicModel(L).step(x, uu, dt))


def step_time(v: float, u_a: float, dX: float) -> float:
    """Time to cover ``dX`` from speed ``v`` under constant acceleration."""
    if u_a == 0.0:
        if v <= 0.0:
            return math.inf
        return dX / v
    disc = v * v + 2.0 * u_a * dX
    if disc < 0.0:
        raise StopsWithinStep(f"v={v}, u_a={u_a}, dX={dX}")
    root = math.sqrt(disc)
    # (root - v)/u_a without cancellation
    return 2.0 * dX / (v + root)


def simple_step(s: SimpleState, u: SimpleInput, dX: float, clamp: bool = True) -> SimpleState:
    """Advance the distance-parameterized model by ``dX``.

    With ``clamp`` (default), a braking step that would stop the vehicle is
    shortened to the stopping distance and the state is returned at rest.
    """
    v_sq_next = s.v_sq + 2.0 * u.u_a * dX
    if v_sq_next < 0.0:
        if not clamp:
            raise StopsWithinStep(f"v_sq={s.v_sq}, u_a={u.u_a}, dX={dX}")
        stop_dist = s.v_sq / (-2.0 * u.u_a)
        t_stop = s.v / (-u.u_a)
        return SimpleState(s.X + stop_dist, s.Y + u.u_y * stop_dist, 0.0, s.t + t_stop)
    dt = step_time(s.v, u.u_a, dX)
    return SimpleState(s.X + dX, s.Y + u.u_y * dX, v_sq_next, s.t + dt)


class _VectorModel:
    """RK4-discretized model evaluated over a stack of (state, input) pairs.

    ``nx`` states and ``nu`` inputs; ``z = (x, u)``.  Subclasses define the
    continuous right-hand side with its Jacobian and Hessian.
    """

    nx: int
    nu: int
    # positions of X, Y, psi, v in the state vector
    iX, iY, ipsi, iv = 0, 1, 2, 3

    def __init__(self, L: float):
        if L <= 0:
            raise ValueError("wheelbase must be positive")
        self.L = float(L)

    @property
    def nz(self) -> int:
        return self.nx + self.nu

    def rhs(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def rhs_derivs(self, x, u):
        raise NotImplementedError

    def step(self, x, u, dt):
        """Plain RK4 step; works on single vectors or stacks."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        k1 = self.rhs(x, u)
        k2 = self.rhs(x + 0.5 * dt * k1, u)
        k3 = self.rhs(x + 0.5 * dt * k2, u)
        k4 = self.rhs(x + dt * k3, u)
        return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def step_derivs(self, x, u, dt, second: bool = True):
        """RK4 step with Jacobian (P, nx, nz) and optionally Hessian (P, nx, nz, nz).

        Derivatives are propagated exactly through the four stages
        (second-order forward mode).
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        u = np.atleast_2d(np.asarray(u, dtype=float))
        P, nx, nz = x.shape[0], self.nx, self.nz
        Y = np.zeros((P, nx, nz))
        Y[:, :, :nx] = np.eye(nx)
        Yzz = np.zeros((P, nx, nz, nz)) if second else None
        W = np.zeros((P, nz, nz))
        W[:, nx:, nx:] = np.eye(self.nu)

        y = x
        ks, dks, ddks = [], [], []
        coeffs = (0.5 * dt, 0.5 * dt, dt)
        for stage in range(4):
            f, J, H = self.rhs_derivs(y, u)
            W[:, :nx, :] = Y
            dk = J @ W
            ks.append(f)
            dks.append(dk)
            if second:
                # W^T H_a W + J_{a,state} * d2y
                ddk = (W.transpose(0, 2, 1)[:, None] @ H) @ W[:, None]
                ddk += (J[:, :, :nx] @ Yzz.reshape(P, nx, nz * nz)).reshape(P, nx, nz, nz)
                ddks.append(ddk)
            if stage < 3:
                c = coeffs[stage]
                y = x + c * f
                Y = np.zeros((P, nx, nz))
                Y[:, :, :nx] = np.eye(nx)
                Y = Y + c * dk
                if second:
                    Yzz = c * ddk
        w = dt / 6.0
        F = x + w * (ks[0] + 2 * ks[1] + 2 * ks[2] + ks[3])
        DF = np.zeros((P, nx, nz))
        DF[:, :, :nx] = np.eye(nx)
        DF += w * (dks[0] + 2 * dks[1] + 2 * dks[2] + dks[3])
        HF = w * (ddks[0] + 2 * ddks[1] + 2 * ddks[2] + ddks[3]) if second else None
        return F, DF, HF


class KinematicModel(_VectorModel):
    """State (X, Y, psi, v, delta), input (steer rate, accel)."""

    nx, nu = 5, 2
    idelta = 4

    def rhs(self, x, u):
        psi, v, delta = x[..., 2], x[..., 3], x[..., 4]
        return np.stack([
            v * np.cos(psi),
            v * np.sin(psi),
            v * np.tan(delta) / self.L,
            u[..., 1],
            u[..., 0],
        ], axis=-1)

    def rhs_derivs(self, x, u):
        P = x.shape[0]
        psi, v, delta = x[:, 2], x[:, 3], x[:, 4]
        c, s, t = np.cos(psi), np.sin(psi), np.tan(delta)
        sec2 = 1.0 + t * t
        L = self.L
        f = np.stack([v * c, v * s, v * t / L, u[:, 1], u[:, 0]], axis=-1)
        J = np.zeros((P, 5, 7))
        J[:, 0, 2] = -v * s
        J[:, 0, 3] = c
        J[:, 1, 2] = v * c
        J[:, 1, 3] = s
        J[:, 2, 3] = t / L
        J[:, 2, 4] = v * sec2 / L
        J[:, 3, 6] = 1.0
        J[:, 4, 5] = 1.0
        H = np.zeros((P, 5, 7, 7))
        H[:, 0, 2, 2] = -v * c
        H[:, 0, 2, 3] = H[:, 0, 3, 2] = -s
        H[:, 1, 2, 2] = -v * s
        H[:, 1, 2, 3] = H[:, 1, 3, 2] = c
        H[:, 2, 3, 4] = H[:, 2, 4, 3] = sec2 / L
        H[:, 2, 4, 4] = 2.0 * v * sec2 * t / L
        return f, J, H


class DirectSteerModel(_VectorModel):
    """Steering angle as direct input: state (X, Y, psi, v), input (delta, accel)."""

    nx, nu = 4, 2
    idelta = None

    def rhs(self, x, u):
        psi, v = x[..., 2], x[..., 3]
        delta = u[..., 0]
        return np.stack([
            v * np.cos(psi),
            v * np.sin(psi),
            v * np.tan(delta) / self.L,
            u[..., 1],
        ], axis=-1)

    def rhs_derivs(self, x, u):
        P = x.shape[0]
        psi, v, delta = x[:, 2], x[:, 3], u[:, 0]
        c, s, t = np.cos(psi), np.sin(psi), np.tan(delta)
        sec2 = 1.0 + t * t
        L = self.L
        f = np.stack([v * c, v * s, v * t / L, u[:, 1]], axis=-1)
        J = np.zeros((P, 4, 6))
        J[:, 0, 2] = -v * s
        J[:, 0, 3] = c
        J[:, 1, 2] = v * c
        J[:, 1, 3] = s
        J[:, 2, 3] = t / L
        J[:, 2, 4] = v * sec2 / L
        J[:, 3, 5] = 1.0
        H = np.zeros((P, 4, 6, 6))
        H[:, 0, 2, 2] = -v * c
        H[:, 0, 2, 3] = H[:, 0, 3, 2] = -s
        H[:, 1, 2, 2] = -v * s
        H[:, 1, 2, 3] = H[:, 1, 3, 2] = c
        H[:, 2, 3, 4] = H[:, 2, 4, 3] = sec2 / L
        H[:, 2, 4, 4] = 2.0 * v * sec2 * t / L
        return f, J, H
