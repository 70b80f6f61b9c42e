"""Receding-horizon planners: nominal MPC and the adversarial branching MPC."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .lattice.disturbance import DisturbanceParams, NominalPrediction, find_adversarial_sequence
from .lattice.initial_guess import GuessParams, NoFeasiblePath, initial_guess_search
from .ocp import IpmOptions, OcpParams, build_branching, solve, SOLVED
from .scenario_tree import (TrajectoryTree, assemble_scenario_tree, extract_nominal,
                            generate_disturbance_tree, prune, tree_skeleton)
from .sim.config import ScenarioConfig
from .sim.world import World, ego_geometry


@dataclass
class PlanStep:
    u: np.ndarray
    status: str
    kkt: float
    nodes: int
    iterations: int = 0
    fallback: bool = False
    overrun: bool = False
    solve_time: float = 0.0
    sequences: list = field(default_factory=list)   # (agent id, k_start, t_inf)
    plan: np.ndarray | None = None                  # nominal-branch states
    branches: list = field(default_factory=list)    # states of each disturbance branch
    max_slack: float = 0.0
    disturbances: list = field(default_factory=list)   # DisturbanceSequence objects kept after pruning
    prediction: NominalPrediction | None = None      # the fixed plan they were searched against


def ocp_params(cfg: ScenarioConfig, world: World) -> OcpParams:
    v, c, m = cfg.vehicle, cfg.cost, cfg.mpc
    if cfg.kind == "merge":
        y_ref = cfg.merge.y_main
    else:
        y_ref = world.lane_centers[-1]
    g = ego_geometry(cfg)
    # the clearance margin widens vehicle-vehicle separation only, not the lane corridor
    target = replace(g, r=g.r + m.safety_margin)
    return OcpParams(N=m.N, dt=m.dt, direct_steer=m.direct_steer, q_Y=c.q_Y, q_psi=c.q_psi, q_v=c.q_v,
                     q_delta=c.q_delta, q_delta_rate=c.q_delta_rate, q_a=c.q_a, q_s=c.q_s,
                     v_ref=v.v_ref, y_ref=y_ref, v_min=v.v_min, v_max=v.v_max, psi_max=v.psi_max,
                     delta_max=v.delta_max, delta_rate_max=v.delta_rate_max, a_max=v.a_max,
                     ego=g, target=target, lanes=world.lanes)


def predict_targets(world: World, N: int, dt: float, ids=None) -> dict:
    """Constant-velocity rollouts (N+1, 4) keyed by target id."""
    lo, hi = min(world.lane_centers), max(world.lane_centers)
    out = {}
    t = dt * np.arange(N + 1)
    for tv in world.targets:
        if ids is not None and tv.id not in ids:
            continue
        Y = np.clip(tv.Y + tv.vy * t, min(lo, tv.Y), max(hi, tv.Y))
        out[tv.id] = np.stack([tv.X + tv.v * t, Y, np.full_like(t, tv.psi), np.full_like(t, tv.v)], axis=1)
    return out


def relevant_targets(world: World, cfg: ScenarioConfig) -> list:
    ex = world.ego[0]
    rng = cfg.mpc.sensing_range
    near = [tv for tv in world.targets if abs(tv.X - ex) <= rng]
    near.sort(key=lambda tv: (abs(tv.X - ex) + 2.0 * abs(tv.Y - world.ego[1]), tv.id))
    return [tv.id for tv in near[:cfg.mpc.max_obstacles]]


class Planner:
    """Shared receding-horizon machinery."""

    name = "base"

    def __init__(self, cfg: ScenarioConfig, deadline_ms: float | None = None):
        self.cfg = cfg
        self.deadline = None if deadline_ms is None else deadline_ms / 1000.0
        self.queue = []          # remaining nominal inputs of the last accepted plan
        self.prev_tree = None
        self.prev_nominal_X = None
        self.opts = IpmOptions(tol=cfg.mpc.tol, max_iter=cfg.mpc.max_iter)

    def reset(self):
        self.queue = []
        self.prev_tree = None
        self.prev_nominal_X = None

    # ------------------------------------------------------------- helpers
    def _fallback_input(self, params: OcpParams) -> np.ndarray:
        if self.queue:
            return self.queue.pop(0)
        u = np.zeros(2)
        u[1] = -params.a_max
        return u

    def _guess(self, params, x0, obstacles_per_k):
        # a strict lattice path first; otherwise one that only needs bounded slack
        g = None
        for frac in (0.0, 0.25, 0.5):
            gp = GuessParams.from_ocp(params, dX=self.cfg.adversarial.dX, dt_cell=self.cfg.adversarial.dt_cell,
                                      relax=frac * params.R)
            try:
                g = initial_guess_search(gp, x0, obstacles_per_k)
                break
            except NoFeasiblePath:
                continue
        if g is None:
            return None
        X = g.states(with_delta=not params.direct_steer)
        X[0] = x0
        U = np.zeros((params.N + 1, 2))
        U[:params.N, 1] = g.accel
        return X, U

    def _shifted_previous(self, x0, params, shift=True):
        """Previous nominal plan shifted by one sample and rolled out from x0."""
        if self.prev_tree is None:
            return None
        U = extract_nominal(self.prev_tree)
        if shift:
            U = np.vstack([U[1:], U[-1:]])
        model = params.model
        X = [np.asarray(x0, float)]
        for u in U:
            X.append(model.step(X[-1], u, params.dt))
        return np.array(X), np.vstack([U, np.zeros((1, U.shape[1]))])

    def _accept(self, tree: TrajectoryTree, res):
        tree.states, tree.inputs, tree.slacks = res.X, res.U, res.S
        self.prev_tree = tree
        path = tree.nominal_path()
        self.queue = [tree.inputs[i].copy() for i in path[:-1]]
        self.prev_nominal_X = tree.states[path]

    def plan(self, world: World) -> PlanStep:
        raise NotImplementedError


def _warm_vector(prob, tree: TrajectoryTree, per_branch):
    """Per-node (X, U) guesses from per-branch sample trajectories."""
    P = prob.P
    X = np.zeros((P, prob.nx))
    U = np.zeros((P, prob.nu))
    for n in tree.nodes:
        Xb, Ub = per_branch[n.branch_id]
        X[n.id] = Xb[n.k]
        U[n.id] = Ub[n.k]
    X[0] = prob.x0
    return X, U


class NominalPlanner(Planner):
    name = "nominal"

    def plan(self, world: World) -> PlanStep:
        t0 = time.perf_counter()
        cfg = self.cfg
        params = ocp_params(cfg, world)
        x0 = world.ego.copy()
        ids = relevant_targets(world, cfg)
        preds = predict_targets(world, params.N, params.dt, ids)
        tree = TrajectoryTree(nodes=tree_skeleton(params.N, []),
                              obstacles=[np.array([preds[a][k, :3] for a in ids]).reshape(-1, 3)
                                         for k in range(params.N + 1)],
                              obstacle_ids=[list(ids)] * (params.N + 1))
        step = self._solve_tree(world, params, x0, tree, {0: None}, t0)
        return step

    def _solve_tree(self, world, params, x0, tree, guesses, t0, sequences=(), adversary=None):
        prob = build_branching(params, x0, tree)
        per_branch = {}
        shifted = self._shifted_previous(x0, params)
        for b in sorted({n.branch_id for n in tree.nodes}):
            if b == 0:
                obs = tree.obstacles
            else:
                obs = self._branch_obstacles(tree, b)
            g = self._guess(params, x0, obs)
            if g is None:
                g = shifted if shifted is not None else per_branch.get(0)
            if g is None:
                U = np.zeros((params.N + 1, 2))
                Xr = [x0]
                for k in range(params.N):
                    Xr.append(params.model.step(Xr[-1], U[k], params.dt))
                g = (np.array(Xr), U)
            per_branch[b] = g
        X, U = _warm_vector(prob, tree, per_branch)
        res = solve(prob, (X, U), self.opts)
        if res.status != SOLVED and shifted is not None:
            # second attempt from the previous plan
            per_branch = {b: shifted for b in per_branch}
            X2, U2 = _warm_vector(prob, tree, per_branch)
            res2 = solve(prob, (X2, U2), self.opts)
            if res2.status == SOLVED or res2.kkt_residual < res.kkt_residual:
                res = res2
        elapsed = time.perf_counter() - t0
        overrun = self.deadline is not None and elapsed > self.deadline
        if res.status == SOLVED and not overrun:
            self._accept(tree, res)
            u = self.queue.pop(0)
            fallback = False
        else:
            u = self._fallback_input(params)
            fallback = True
        path = tree.nominal_path()
        branches = []
        for b in sorted({n.branch_id for n in tree.nodes} - {0}):
            ids = [n.id for n in tree.nodes if n.branch_id == b]
            par = tree.nodes[ids[0]].parent_id
            branches.append(res.X[[par] + ids])
        return PlanStep(u=np.asarray(u, float), status=res.status, kkt=res.kkt_residual, nodes=prob.P,
                        iterations=res.iterations, fallback=fallback, overrun=overrun,
                        solve_time=elapsed, sequences=list(sequences), plan=res.X[path],
                        branches=branches, max_slack=float(np.max(res.S)),
                        disturbances=list(adversary[0]) if adversary else [],
                        prediction=adversary[1] if adversary else None)

    @staticmethod
    def _branch_obstacles(tree, b):
        """Obstacle poses per sample along branch ``b`` (shared prefix from the nominal chain)."""
        N = max(n.k for n in tree.nodes)
        obs = list(tree.obstacles[:N + 1])
        for n in tree.nodes:
            if n.branch_id == b:
                obs[n.k] = tree.obstacles[n.id]
        return obs


class AdsbPlanner(NominalPlanner):
    name = "adsb"

    def dist_params(self) -> DisturbanceParams:
        a, v = self.cfg.adversarial, self.cfg.vehicle
        return DisturbanceParams(a_dist=a.a_dist, k_y=a.k_y, eta=a.eta, v_min=v.v_min, dX=a.dX,
                                 dt_cell=a.dt_cell, merge_exception=a.merge_exception,
                                 literal_guard=a.literal_guard)

    def plan(self, world: World) -> PlanStep:
        t0 = time.perf_counter()
        cfg = self.cfg
        params = ocp_params(cfg, world)
        x0 = world.ego.copy()
        ids = relevant_targets(world, cfg)
        preds = predict_targets(world, params.N, params.dt, ids)
        fresh = self.prev_tree is None
        if fresh:
            # bootstrap: one nominal solve provides the plan the adversary attacks
            boot = NominalPlanner.plan(self, world)
            if boot.fallback:
                return boot
            self.queue.insert(0, boot.u)
        shifted = self._shifted_previous(x0, params, shift=not fresh)
        ego_plan = shifted[0][:, :4]
        nominal = NominalPrediction(dt=params.dt, ego=ego_plan, agents=preds, ego_geom=params.ego,
                                    target_geom=params.target, lanes=params.lanes)
        dp = self.dist_params()
        w = generate_disturbance_tree(ids, lambda a: find_adversarial_sequence(a, nominal, dp))
        n = cfg.adversarial.prune_n
        w = prune(w, None if n < 0 else n, dp.eta)
        tree = assemble_scenario_tree(params.N, w, preds, gamma_d=cfg.adversarial.gamma_d)
        seqs = [(s.agent_id, s.k_start, s.t_inf) for s in w]
        return self._solve_tree(world, params, x0, tree, None, t0, sequences=seqs, adversary=(w, nominal))


def make_planner(name: str, cfg: ScenarioConfig, deadline_ms=None) -> Planner:
    if name == "nominal":
        return NominalPlanner(cfg, deadline_ms)
    if name == "adsb":
        return AdsbPlanner(cfg, deadline_ms)
    raise ValueError(f"unknown planner {name!r}")
