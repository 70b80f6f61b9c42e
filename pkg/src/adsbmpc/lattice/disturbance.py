"""Adversarial disturbance sequences found by Dijkstra search on a state lattice.

A target vehicle is moved with the distance-parameterized point-mass model:
every lattice edge covers ``dX`` metres with a constant acceleration in
``{+a_dist, -a_dist, 0}``.  Lateral motion follows the ego vehicle by a fixed
fraction of the longitudinal motion.  Search nodes are seeded at every sample
of the nominal prediction, so the start time of the disturbance is part of
the path cost ``t_inf - eta * t_dist``.  A goal is reached when the fixed
nominal ego plan violates the slack-free kernel constraint at a sample time.
"""
from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from ..obstacles import VehicleGeometry, LaneProfile, length_scale, violation_radius


@dataclass(frozen=True)
class DisturbanceParams:
    a_dist: float = 3.0
    k_y: float = 0.0
    eta: float = 0.25
    v_min: float = 0.0
    dX: float = 5.0
    dt_cell: float = 0.01
    merge_exception: bool = False
    literal_guard: bool = False

    def __post_init__(self):
        if self.a_dist <= 0 or self.dX <= 0 or self.dt_cell < 0:
            raise ValueError("a_dist and dX must be positive, dt_cell non-negative")
        if not 0.0 <= self.eta < 1.0:
            raise ValueError("eta must lie in [0, 1)")


@dataclass
class NominalPrediction:
    """Fixed ego plan and constant-velocity target rollouts on the sample grid.

    ``ego`` is (N+1, 4) with columns X, Y, psi, v.  ``agents`` maps an agent id
    to its (N+1, 4) rollout with the same columns.
    """

    dt: float
    ego: np.ndarray
    agents: dict
    ego_geom: VehicleGeometry
    target_geom: VehicleGeometry
    lanes: LaneProfile | None = None

    @property
    def N(self) -> int:
        return self.ego.shape[0] - 1

    @property
    def t(self) -> np.ndarray:
        return self.dt * np.arange(self.N + 1)


@dataclass
class DisturbanceSequence:
    agent_id: object
    k_start: int
    t_dist: float
    t_inf: float
    # piecewise constant motion from t_dist to the horizon end: (t0, t1, accel, u_y)
    segments: list
    # target poses on the sample grid, (N+1, 4) columns X, Y, psi, v
    states: np.ndarray
    accel: np.ndarray = field(default=None)
    lateral: np.ndarray = field(default=None)

    def cost(self, eta: float) -> float:
        return self.t_inf - eta * self.t_dist


def lateral_disturbance(y_ego: float, y_tv: float, k_y: float) -> float:
    d = y_ego - y_tv
    if d > 0:
        return k_y
    if d < 0:
        return -k_y
    return 0.0


def relative_stop_distance(v_tv: float, v_ego: float, a_dist: float) -> float:
    dv = v_tv - v_ego
    return -abs(dv) * dv / (2.0 * a_dist)


def extension_accel(x_tv: float, x_ego: float, v_tv: float, v_ego: float,
                    p: DisturbanceParams, dt: float) -> float:
    """Bang-bang acceleration bringing the target onto the ego in minimum time."""
    x = relative_stop_distance(v_tv, v_ego, p.a_dist)
    if p.literal_guard:
        if x_tv - x_ego < x and v_tv + p.a_dist * dt * dt / 2.0 < p.v_min:
            return p.a_dist
        return -p.a_dist
    if x_tv - x_ego < x:
        return p.a_dist
    # brake, but never below the speed floor
    if v_tv <= p.v_min:
        return 0.0
    return max(-p.a_dist, (p.v_min - v_tv) / dt)


def _advance(X, Y, v, a, u_y, tau):
    """Constant-acceleration motion for ``tau`` seconds, stopping at zero speed."""
    if a < 0.0 and v + a * tau < 0.0:
        tau = v / -a
    dx = v * tau + 0.5 * a * tau * tau
    return X + dx, Y + u_y * dx, max(v + a * tau, 0.0)


class _Checker:
    """Slack-free kernel violation test against the fixed ego plan."""

    def __init__(self, nominal: NominalPrediction):
        eg, tg = nominal.ego_geom, nominal.target_geom
        self.R = eg.r + tg.r
        self.l2 = 2.0 * length_scale(tg.D) ** 2
        self.t_off = tg.offsets
        e = nominal.ego
        self.ego_c = [[(e[k, 0] + o * math.cos(e[k, 2]), e[k, 1] + o * math.sin(e[k, 2]))
                       for o in eg.offsets] for k in range(e.shape[0])]
        self.reach = violation_radius(self.R, tg.D) + max(abs(o) for o in eg.offsets) \
            + max(abs(o) for o in tg.offsets)

    def violates(self, k, X, Y, psi) -> bool:
        c, s = math.cos(psi), math.sin(psi)
        tcs = [(X + o * c, Y + o * s) for o in self.t_off]
        R2 = self.R * self.R
        for bx, by in self.ego_c[k]:
            tot = 0.0
            for ax, ay in tcs:
                d2 = (ax - bx) ** 2 + (ay - by) ** 2
                tot += math.exp(-(d2 - R2) / self.l2)
            if tot > 1.0:
                return True
        return False


def merge_cutoff(nominal: NominalPrediction, agent_id, w_lane: float) -> int:
    """First sample at which the ego shares the target's lane (N+1 if never)."""
    tv = nominal.agents[agent_id]
    for k in range(nominal.N + 1):
        if abs(tv[k, 1] - nominal.ego[k, 1]) <= w_lane / 2.0:
            return k
    return nominal.N + 1


def find_adversarial_sequence(agent_id, nominal: NominalPrediction, p: DisturbanceParams,
                              w_lane: float | None = None, max_expansions: int = 200000):
    """Sequence minimizing ``t_inf - eta*t_dist`` for one agent, or None."""
    N, dt = nominal.N, nominal.dt
    T = N * dt
    tv = np.asarray(nominal.agents[agent_id], dtype=float)
    ego = nominal.ego
    chk = _Checker(nominal)
    w_lane = nominal.ego_geom.w_lane if w_lane is None else w_lane
    k_end = merge_cutoff(nominal, agent_id, w_lane) if p.merge_exception else N + 1
    # samples where the nominal target already violates do not count
    nominal_bad = [chk.violates(k, tv[k, 0], tv[k, 1], tv[k, 2]) for k in range(N + 1)]
    y_lo, y_hi = _lateral_limits(nominal, w_lane)
    a = p.a_dist
    reach = chk.reach

    def hopeless(t, X, Y, v):
        # no sample left at which the target can come close to the ego
        j0 = int(math.floor(t / dt + 1e-9)) + 1
        for j in range(j0, min(N, k_end - 1) + 1):
            tau = j * dt - t
            xmax = X + v * tau + 0.5 * a * tau * tau
            xmin = X + (v * tau - 0.5 * a * tau * tau if v > a * tau else 0.5 * v * v / a)
            ex = ego[j, 0]
            if xmin - reach <= ex <= xmax + reach:
                lat = p.k_y * (xmax - X)
                if abs(ego[j, 1] - Y) <= reach + lat:
                    return False
        return True

    heap = []
    counter = itertools.count()
    parents = {}
    seen = set()
    # seeds: disturbance starts at sample k from the nominal target state
    for k in range(0, min(N, k_end - 1)):
        X, Y, v = tv[k, 0], tv[k, 1], tv[k, 3]
        t = k * dt
        if hopeless(t, X, Y, v):
            continue
        node = ("s", k)
        parents[node] = None
        cost = (1.0 - p.eta) * t
        heapq.heappush(heap, (cost, -t, next(counter), node, (k, t, X, Y, v, 0, t)))

    expansions = 0
    while heap:
        cost, _, _, node, st = heapq.heappop(heap)
        if node[0] == "g":
            return _build_sequence(agent_id, node, parents, nominal, p, chk, y_lo, y_hi)
        k0, t, X, Y, v, i, t_dist = st
        key = (k0, i, round(v * v, 6), round(Y, 6), _cell(t, p.dt_cell))
        if key in seen:
            continue
        seen.add(key)
        expansions += 1
        if expansions > max_expansions:
            break
        if t >= T - 1e-12:
            continue
        started = i > 0
        u_y = lateral_disturbance(_ego_y_at(ego, t, dt), Y, p.k_y) if started else 0.0
        actions = (a, -a, 0.0) if started else (a, -a)
        for acc in actions:
            edge = _edge(t, X, Y, v, acc, u_y, p.dX, T, p.v_min)
            if edge is None:
                continue
            t1, X1, Y1, v1, _ = edge
            Y1 = min(max(Y1, y_lo), y_hi)
            # sample times covered by this edge
            j0 = int(math.floor(t / dt + 1e-9)) + 1
            j1 = min(int(math.floor(t1 / dt + 1e-9)), N)
            goal = None
            for j in range(max(j0, k0 + 1), j1 + 1):
                if j >= k_end or nominal_bad[j]:
                    continue
                Xj, Yj, _ = _advance(X, Y, v, acc, u_y, j * dt - t)
                Yj = min(max(Yj, y_lo), y_hi)
                if chk.violates(j, Xj, Yj, math.atan(u_y)):
                    goal = j
                    break
            seg = (t, t1, acc, u_y)
            if goal is not None:
                g = ("g", next(counter))
                parents[g] = (node, seg, goal)
                heapq.heappush(heap, (goal * dt - p.eta * t_dist, -t_dist, next(counter), g, None))
                continue
            nxt = ("n", next(counter))
            parents[nxt] = (node, seg, None)
            if t1 < T and not hopeless(t1, X1, Y1, v1):
                ncost = t1 - p.eta * t_dist
                heapq.heappush(heap, (ncost, -t_dist, next(counter), nxt,
                                      (k0, t1, X1, Y1, v1, i + 1, t_dist)))
    return None


def _cell(t, dt_cell):
    if dt_cell <= 0:
        return round(t, 9)
    return int(math.floor(t / dt_cell + 1e-9))


def _ego_y_at(ego, t, dt):
    k = min(int(round(t / dt)), ego.shape[0] - 1)
    return ego[k, 1]


def _lateral_limits(nominal, w_lane):
    if nominal.lanes is None:
        return -math.inf, math.inf
    return nominal.lanes.y_lo + w_lane / 2.0, nominal.lanes.y_hi - w_lane / 2.0


def _edge(t, X, Y, v, acc, u_y, dX, T, v_min):
    """One lattice edge; returns (t1, X1, Y1, v1, stopped) or None if not allowed."""
    if acc < 0.0 and v_min > 0.0 and v * v + 2.0 * acc * dX < v_min * v_min:
        return None
    v2 = v * v + 2.0 * acc * dX
    if acc == 0.0 and v <= 0.0:
        # hold position until the end of the horizon
        return (T, X, Y, 0.0, True)
    if v2 <= 0.0:
        if v <= 0.0:
            return None
        ds = v * v / (-2.0 * acc)
        return (t + v / -acc, X + ds, Y + u_y * ds, 0.0, True)
    v1 = math.sqrt(v2)
    dt = 2.0 * dX / (v + v1)
    return (t + dt, X + dX, Y + u_y * dX, v1, False)


def _build_sequence(agent_id, goal, parents, nominal, p, chk, y_lo, y_hi):
    N, dt = nominal.N, nominal.dt
    node, seg, k_inf = parents[goal]
    segs = [(seg[0], k_inf * dt, seg[2], seg[3])]
    while parents[node] is not None:
        node, s, _ = parents[node]
        segs.append(s)
    segs.reverse()
    k_start = node[1]
    t_dist = k_start * dt
    t_inf = k_inf * dt
    tv = np.asarray(nominal.agents[agent_id], dtype=float)
    states = tv[:, :4].copy()
    # replay the searched part on the sample grid
    X, Y, v = tv[k_start, 0], tv[k_start, 1], tv[k_start, 3]
    for (t0, t1, acc, u_y) in segs:
        for j in range(k_start + 1, N + 1):
            if t0 < j * dt <= t1 + 1e-12:
                Xj, Yj, vj = _advance(X, Y, v, acc, u_y, j * dt - t0)
                states[j] = (Xj, min(max(Yj, y_lo), y_hi), math.atan(u_y), vj)
        X, Y, v = _advance(X, Y, v, acc, u_y, t1 - t0)
        Y = min(max(Y, y_lo), y_hi)
    # minimum-time extension to the horizon end
    ego = nominal.ego
    for k in range(k_inf, N):
        acc = extension_accel(X, ego[k, 0], v, ego[k, 3], p, dt)
        u_y = lateral_disturbance(ego[k, 1], Y, p.k_y)
        segs.append((k * dt, (k + 1) * dt, acc, u_y))
        X, Y, v = _advance(X, Y, v, acc, u_y, dt)
        Y = min(max(Y, y_lo), y_hi)
        states[k + 1] = (X, Y, math.atan(u_y), v)
    accel = np.zeros(N)
    lateral = np.zeros(N)
    for j in range(k_start, N):
        tj = j * dt
        for (t0, t1, acc, u_y) in segs:
            if t0 - 1e-9 <= tj < t1 - 1e-9:
                accel[j], lateral[j] = acc, u_y
                break
    seq = DisturbanceSequence(agent_id=agent_id, k_start=k_start, t_dist=t_dist, t_inf=t_inf,
                              segments=segs, states=states, accel=accel[k_start:],
                              lateral=lateral[k_start:])
    return seq


def replay_sequence(seq: DisturbanceSequence, nominal: NominalPrediction) -> np.ndarray:
    """Independent re-integration of a sequence's segments on the sample grid."""
    N, dt = nominal.N, nominal.dt
    tv = np.asarray(nominal.agents[seq.agent_id], dtype=float)
    out = tv[:, :4].copy()
    X, Y, v = tv[seq.k_start, 0], tv[seq.k_start, 1], tv[seq.k_start, 3]
    y_lo, y_hi = _lateral_limits(nominal, nominal.ego_geom.w_lane)
    for (t0, t1, acc, u_y) in seq.segments:
        # midpoint substeps, split at the sample times inside the segment
        cuts = [t0] + [j * dt for j in range(N + 1) if t0 + 1e-12 < j * dt < t1 - 1e-12] + [t1]
        for a0, a1 in zip(cuts[:-1], cuts[1:]):
            n_sub = max(1, int(math.ceil((a1 - a0) / 1e-3)))
            h = (a1 - a0) / n_sub
            for _ in range(n_sub):
                dv = acc * h
                if v + dv < 0.0:
                    tau = v / -acc
                    X += v * tau / 2.0
                    Y += u_y * v * tau / 2.0
                    v = 0.0
                else:
                    X += (v + 0.5 * dv) * h
                    Y += u_y * (v + 0.5 * dv) * h
                    v += dv
                Y = min(max(Y, y_lo), y_hi)
            j = int(round(a1 / dt))
            if abs(a1 - j * dt) < 1e-9 and seq.k_start < j <= N:
                out[j] = (X, Y, math.atan(u_y), v)
    return out


def first_violation(states: np.ndarray, nominal: NominalPrediction, start: int = 1):
    """First sample (>= start) where the poses violate the kernel constraint, else None."""
    chk = _Checker(nominal)
    for k in range(start, nominal.N + 1):
        if chk.violates(k, states[k, 0], states[k, 1], states[k, 2]):
            return k
    return None
