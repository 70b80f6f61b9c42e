"""A* search on an (X, Y, v^2, t) lattice producing OCP warm starts.

Each edge covers ``dX`` metres with one of five actions: keep speed,
accelerate, brake, move one lateral grid step up or down.  The lateral grid
is anchored at the reference lane center so lane centers are reachable
exactly.  Time is continuous; vertices are merged per time cell.
"""
from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass

import numpy as np

from ..obstacles import VehicleGeometry, LaneProfile, length_scale


class NoFeasiblePath(RuntimeError):
    pass


@dataclass
class GuessParams:
    N: int
    dt: float
    y_ref: float
    v_ref: float
    q_Y: float
    q_v: float
    q_a: float
    q_psi: float
    a_max: float
    v_max: float
    ego: VehicleGeometry
    target: VehicleGeometry
    lanes: LaneProfile
    dX: float = 5.0
    dt_cell: float = 0.01
    lateral_step: float | None = None
    max_expansions: int = 60000
    relax: float = 0.0          # slack granted to every collision and lane check

    @classmethod
    def from_ocp(cls, p, **kw) -> "GuessParams":
        return cls(N=p.N, dt=p.dt, y_ref=p.y_ref, v_ref=p.v_ref, q_Y=p.q_Y, q_v=p.q_v, q_a=p.q_a,
                   q_psi=p.q_psi, a_max=p.a_max, v_max=p.v_max, ego=p.ego, target=p.target,
                   lanes=p.lanes, **kw)

    @property
    def step_y(self) -> float:
        return self.lateral_step if self.lateral_step is not None else self.ego.w_lane / 4.0


@dataclass
class InitialGuess:
    t: np.ndarray       # sample times
    X: np.ndarray
    Y: np.ndarray
    psi: np.ndarray
    v: np.ndarray
    accel: np.ndarray   # (N,) acceleration active at each sample
    cost: float
    actions: list

    def states(self, with_delta=True) -> np.ndarray:
        cols = [self.X, self.Y, self.psi, self.v]
        if with_delta:
            cols.append(np.zeros_like(self.X))
        return np.stack(cols, axis=1)


def _sq_ramp_integral(d, rate, tau):
    """Integral over [0, tau] of max(0, d - rate*s)^2."""
    if d <= 0.0 or tau <= 0.0:
        return 0.0
    if rate <= 0.0:
        return d * d * tau
    s = min(tau, d / rate)
    return (d ** 3 - (d - rate * s) ** 3) / (3.0 * rate)


class _Collision:
    def __init__(self, gp: GuessParams, obstacles):
        self.R = gp.ego.r + gp.target.r - gp.relax
        self.l2 = 2.0 * length_scale(gp.target.D) ** 2
        self.e_off = gp.ego.offsets
        self.r = gp.ego.r - gp.relax
        self.lanes = gp.lanes
        # a pair sum above one needs a term above one half, i.e. a circle closer than rho
        self.rho2 = self.R * self.R + self.l2 * math.log(2.0)
        rho = math.sqrt(self.rho2)
        # per sample: (x_lo, x_hi, circle centers) of each target
        self.tcs = []
        for k in range(gp.N + 1):
            o = np.asarray(obstacles[k], float).reshape(-1, 3) if obstacles is not None else np.zeros((0, 3))
            cs = []
            for X, Y, psi in o:
                c, s = math.cos(psi), math.sin(psi)
                pair = [(X + off * c, Y + off * s) for off in gp.target.offsets]
                xs = [a for a, _ in pair]
                cs.append((min(xs) - rho, max(xs) + rho, pair))
            self.tcs.append(cs)

    def free(self, k, X, Y, psi) -> bool:
        c, s = math.cos(psi), math.sin(psi)
        R2, l2, rho2 = self.R * self.R, self.l2, self.rho2
        for off in self.e_off:
            bx, by = X + off * c, Y + off * s
            if by - self.lanes.y_min_scalar(bx) < self.r or self.lanes.y_hi - by < self.r:
                return False
            for x_lo, x_hi, pair in self.tcs[k]:
                if bx < x_lo or bx > x_hi:
                    continue
                d2 = [(ax - bx) ** 2 + (ay - by) ** 2 for ax, ay in pair]
                if min(d2) >= rho2:
                    continue
                if sum(math.exp(-(d - R2) / l2) for d in d2) > 1.0:
                    return False
        return True


def _motion(X, Y, v, a, u_y, tau):
    if a < 0.0 and v + a * tau < 0.0:
        tau = v / -a
    dx = v * tau + 0.5 * a * tau * tau
    return X + dx, Y + u_y * dx, max(v + a * tau, 0.0)


def lattice_edges(gp: GuessParams, t, X, Y, v):
    """Yield (action, t1, X1, Y1, v1, accel, u_y) for the five actions (plus wait at rest)."""
    a, dX, T = gp.a_max, gp.dX, gp.N * gp.dt
    g = gp.step_y
    m = (Y - gp.y_ref) / g
    m_lo, m_hi = math.floor(m + 1e-9), math.ceil(m - 1e-9)
    y_up = gp.y_ref + (m_hi + 1 if m_hi == m_lo else m_hi) * g
    y_dn = gp.y_ref + (m_lo - 1 if m_hi == m_lo else m_lo) * g
    for name, acc, dy in (("keep", 0.0, 0.0), ("accel", a, 0.0), ("brake", -a, 0.0),
                          ("left", 0.0, y_up - Y), ("right", 0.0, y_dn - Y)):
        u_y = dy / dX
        if acc == 0.0 and v <= 0.0:
            if name == "keep":
                yield ("wait", T, X, Y, 0.0, 0.0, 0.0)
            continue
        v2 = v * v + 2.0 * acc * dX
        if v2 > gp.v_max ** 2 + 1e-9:
            continue
        if v2 <= 0.0:
            ds = v * v / (-2.0 * acc)
            yield (name, t + v / -acc, X + ds, Y + u_y * ds, 0.0, acc, u_y)
            continue
        v1 = math.sqrt(v2)
        yield (name, t + 2.0 * dX / (v + v1), X + dX, Y + dy, v1, acc, u_y)


def edge_cost(gp: GuessParams, t, t1, Y, v, acc, u_y) -> float:
    psi = math.atan(u_y)
    c = ((Y - gp.y_ref) / gp.q_Y) ** 2 + ((v - gp.v_ref) / gp.q_v) ** 2 \
        + (acc / gp.q_a) ** 2 + (psi / gp.q_psi) ** 2
    return (t1 - t) * c


def heuristic(gp: GuessParams, t, Y, v) -> float:
    tau = gp.N * gp.dt - t
    if tau <= 0.0:
        return 0.0
    hv = _sq_ramp_integral(abs(v - gp.v_ref), gp.a_max, tau) / gp.q_v ** 2
    rate = gp.step_y / gp.dX * gp.v_max
    hy = _sq_ramp_integral(abs(Y - gp.y_ref), rate, tau) / gp.q_Y ** 2
    return hv + hy


def edge_feasible(gp: GuessParams, col: _Collision, t, t1, X, Y, v, acc, u_y) -> bool:
    dt = gp.dt
    j0 = int(math.floor(t / dt + 1e-9)) + 1
    j1 = min(int(math.floor(t1 / dt + 1e-9)), gp.N)
    psi = math.atan(u_y)
    for j in range(j0, j1 + 1):
        Xj, Yj, _ = _motion(X, Y, v, acc, u_y, j * dt - t)
        if not col.free(j, Xj, Yj, psi):
            return False
    return True


def initial_guess_search(gp: GuessParams, x0, obstacles=None) -> InitialGuess:
    """Minimum-cost lattice path over the horizon; raises NoFeasiblePath."""
    X0, Y0, v0 = float(x0[0]), float(x0[1]), float(x0[3])
    T = gp.N * gp.dt
    col = _Collision(gp, obstacles)
    counter = itertools.count()
    heap = [(heuristic(gp, 0.0, Y0, v0), 0.0, next(counter), (0.0, X0, Y0, v0), None)]
    closed = set()
    parents = {}
    expansions = 0
    while heap:
        f, g, cnt, st, par = heapq.heappop(heap)
        t, X, Y, v = st
        key = (round(X, 6), round(Y, 6), round(v * v, 6),
               round(t, 9) if gp.dt_cell <= 0 else int(math.floor(t / gp.dt_cell + 1e-9)))
        if key in closed:
            continue
        closed.add(key)
        parents[cnt] = par
        if t >= T - 1e-12:
            return _lift(gp, cnt, parents, st, g)
        expansions += 1
        if expansions > gp.max_expansions:
            break
        for name, t1, X1, Y1, v1, acc, u_y in lattice_edges(gp, t, X, Y, v):
            if not edge_feasible(gp, col, t, t1, X, Y, v, acc, u_y):
                continue
            g1 = g + edge_cost(gp, t, t1, Y, v, acc, u_y)
            h1 = heuristic(gp, t1, Y1, v1)
            heapq.heappush(heap, (g1 + h1, g1, next(counter), (t1, X1, Y1, v1),
                                  (cnt, (t, t1, X, Y, v, acc, u_y, name))))
    raise NoFeasiblePath("no lattice path covers the horizon")


def _lift(gp, cnt, parents, st, cost):
    edges = []
    c = cnt
    while parents[c] is not None:
        c, e = parents[c]
        edges.append(e)
    edges.reverse()
    N, dt = gp.N, gp.dt
    ts = dt * np.arange(N + 1)
    X = np.empty(N + 1)
    Y = np.empty(N + 1)
    psi = np.zeros(N + 1)
    v = np.empty(N + 1)
    acc_k = np.zeros(N)
    t_last, X_last, Y_last, v_last = st
    for k, tk in enumerate(ts):
        for (t0, t1, Xe, Ye, ve, acc, u_y, _) in edges:
            if t0 - 1e-12 <= tk < t1 - 1e-12:
                X[k], Y[k], v[k] = _motion(Xe, Ye, ve, acc, u_y, tk - t0)
                psi[k] = math.atan(u_y)
                if k < N:
                    acc_k[k] = acc
                break
        else:
            X[k], Y[k], v[k] = X_last, Y_last, v_last
    return InitialGuess(t=ts, X=X, Y=Y, psi=psi, v=v, accel=acc_k, cost=float(cost),
                        actions=[e[-1] for e in edges])

