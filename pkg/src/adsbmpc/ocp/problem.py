"""Transcription of the nominal and branching optimal control problems.

Both problems share one representation: a tree of nodes, each node holding a
state, an input (non-leaf nodes only) and a slack (non-root nodes).  The
nominal problem is the degenerate single-chain tree.  Variables and
derivatives are organized in per-node blocks ``[x, u, s]`` which the
interior-point solver assembles into a sparse KKT matrix.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..obstacles import VehicleGeometry, LaneProfile, length_scale
from ..vehicle_models import DirectSteerModel, KinematicModel

FAR = 1.0e6  # position used to pad obstacle slots


@dataclass
class OcpParams:
    """Cost normalizations, bounds and geometry for one scenario.

    A normalization of ``math.inf`` removes the term from the cost.
    """

    N: int = 25
    dt: float = 0.2
    direct_steer: bool = False
    q_Y: float = 3.0
    q_psi: float = math.pi / 2
    q_v: float = 10.0
    q_delta: float = 0.1
    q_delta_rate: float = 0.1
    q_a: float = 6.0
    q_s: float = 0.001
    v_ref: float = 25.0
    y_ref: float = 0.0
    v_min: float = 0.0
    v_max: float = 30.0
    psi_max: float = math.pi / 2
    delta_max: float = math.pi / 6
    delta_rate_max: float = 0.5
    a_max: float = 3.0
    ego: VehicleGeometry = field(default_factory=lambda: VehicleGeometry(1.35, 1.4, 1.0, 2.0, 3.0))
    target: VehicleGeometry | None = None
    lanes: LaneProfile = field(default_factory=lambda: LaneProfile.straight(-1.5, 4.5))

    def __post_init__(self):
        if self.target is None:
            self.target = self.ego

    @property
    def model(self):
        return DirectSteerModel(self.ego.L) if self.direct_steer else KinematicModel(self.ego.L)

    @property
    def b(self) -> float:
        return 1.0 / self.q_s

    @property
    def R(self) -> float:
        return self.ego.r + self.target.r

    def weights(self) -> tuple[np.ndarray, np.ndarray]:
        """Diagonal state and input weights (the X entry is always zero)."""
        w = lambda q: 0.0 if math.isinf(q) else 1.0 / (q * q)
        if self.direct_steer:
            qx = np.array([0.0, w(self.q_Y), w(self.q_psi), w(self.q_v)])
            qu = np.array([w(self.q_delta), w(self.q_a)])
        else:
            qx = np.array([0.0, w(self.q_Y), w(self.q_psi), w(self.q_v), w(self.q_delta)])
            qu = np.array([w(self.q_delta_rate), w(self.q_a)])
        return qx, qu

    def Q(self) -> np.ndarray:
        qx, qu = self.weights()
        return np.diag(np.concatenate([qx, qu]))

    def x_ref(self) -> np.ndarray:
        if self.direct_steer:
            return np.array([0.0, self.y_ref, 0.0, self.v_ref])
        return np.array([0.0, self.y_ref, 0.0, self.v_ref, 0.0])

    def x_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        inf = math.inf
        lo = [-inf, -inf, -self.psi_max, self.v_min]
        hi = [inf, inf, self.psi_max, self.v_max]
        if not self.direct_steer:
            lo.append(-self.delta_max)
            hi.append(self.delta_max)
        return np.array(lo), np.array(hi)

    def u_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if self.direct_steer:
            return (np.array([-self.delta_max, -self.a_max]), np.array([self.delta_max, self.a_max]))
        return (np.array([-self.delta_rate_max, -self.a_max]),
                np.array([self.delta_rate_max, self.a_max]))

    def with_(self, **kw) -> "OcpParams":
        return replace(self, **kw)


def stage_cost(x, u_parent, s, beta, params: OcpParams) -> float:
    qx, qu = params.weights()
    dx = np.asarray(x, float) - params.x_ref()
    u = np.asarray(u_parent, float)
    return float(beta * (dx @ (qx * dx) + u @ (qu * u) + params.b * s))


class OcpProblem:
    """Tree-structured NLP in node-block form.

    ``parent[n]`` is the parent node of node ``n`` (``-1`` for the root),
    ``beta[n]`` its importance weight and ``obstacles[n]`` an ``(M, 3)``
    array of predicted target poses ``(X, Y, psi)`` constraining ``x_n``.
    Node 0 is the root; its state is the fixed initial state.
    """

    def __init__(self, params: OcpParams, x0, parent, beta, obstacles, k=None):
        self.params = params
        self.model = params.model
        self.nx, self.nu = self.model.nx, self.model.nu
        self.x0 = np.asarray(x0, dtype=float).copy()
        self.parent = np.asarray(parent, dtype=int)
        self.P = len(self.parent)
        if self.parent[0] != -1 or np.any(self.parent[1:] < 0):
            raise ValueError("node 0 must be the only root")
        if np.any(self.parent[1:] >= np.arange(1, self.P)):
            raise ValueError("parents must precede their children")
        self.beta = np.asarray(beta, dtype=float)
        self.k = np.asarray(k, dtype=int) if k is not None else self._depths()
        self.has_input = np.zeros(self.P, dtype=bool)
        self.has_input[self.parent[1:]] = True

        M = max([len(o) for o in obstacles[1:]] + [0])
        self.M = M
        obs = np.full((self.P, M, 3), FAR)
        obs[..., 1] = FAR
        obs[..., 2] = 0.0
        for n in range(1, self.P):
            if len(obstacles[n]):
                o = np.asarray(obstacles[n], dtype=float)
                obs[n, :len(o)] = o[:, :3]
        self.obstacles = obs
        self._tv_centers = self._target_centers(obs[1:])

        self._layout()
        self._cost_setup()

    # ------------------------------------------------------------------ layout
    def _depths(self):
        k = np.zeros(self.P, dtype=int)
        for n in range(1, self.P):
            k[n] = k[self.parent[n]] + 1
        return k

    def _layout(self):
        nx, nu = self.nx, self.nu
        nb = nx + nu + 1
        self.nb = nb
        idx = -np.ones((self.P, nb), dtype=int)
        c = 0
        for n in range(self.P):
            if self.has_input[n]:
                idx[n, nx:nx + nu] = np.arange(c, c + nu)
                c += nu
            if n > 0:
                idx[n, :nx] = np.arange(c, c + nx)
                idx[n, nb - 1] = c + nx
                c += nx + 1
        self.block_index = idx
        self.n = c
        self.parents_with_children = np.flatnonzero(self.has_input)
        self._pwc_pos = -np.ones(self.P, dtype=int)
        self._pwc_pos[self.parents_with_children] = np.arange(len(self.parents_with_children))
        self.mE = (self.P - 1) * nx
        self.m_node = 2 * self.M + 4
        self.mI = (self.P - 1) * self.m_node
        # local positions of (X, Y, psi, s) inside a block
        self.q_local = np.array([0, 1, 2, nb - 1])

        lbx, ubx = self.params.x_bounds()
        lbu, ubu = self.params.u_bounds()
        lb = np.full(self.n, -math.inf)
        ub = np.full(self.n, math.inf)
        for n in range(self.P):
            i = idx[n]
            if n > 0:
                lb[i[:nx]], ub[i[:nx]] = lbx, ubx
                lb[i[nb - 1]], ub[i[nb - 1]] = 0.0, self.params.R
            if self.has_input[n]:
                lb[i[nx:nx + nu]], ub[i[nx:nx + nu]] = lbu, ubu
        self.lb, self.ub = lb, ub

        # equality Jacobian pattern: rows of node n (n >= 1)
        nodes = np.arange(1, self.P)
        rows = (nodes[:, None] - 1) * nx + np.arange(nx)[None, :]  # (P-1, nx)
        par = self.parent[1:]
        parcols = idx[par][:, :nx + nu]  # (P-1, nz)
        r_par = np.broadcast_to(rows[:, :, None], (len(nodes), nx, nx + nu))
        c_par = np.broadcast_to(parcols[:, None, :], (len(nodes), nx, nx + nu))
        self._jE_mask = c_par >= 0
        self.jacE_rows = np.concatenate([rows.ravel(), r_par[self._jE_mask]])
        self.jacE_cols = np.concatenate([idx[nodes][:, :nx].ravel(), c_par[self._jE_mask]])

    def _cost_setup(self):
        p = self.params
        qx, qu = p.weights()
        self.qx, self.qu = qx, qu
        self.xref = p.x_ref()
        # input weight of a parent = sum of its children's betas
        wu = np.zeros(self.P)
        np.add.at(wu, self.parent[1:], self.beta[1:])
        self.wu = wu
        nx, nu, nb = self.nx, self.nu, self.nb
        H = np.zeros((self.P, nb, nb))
        d = np.zeros((self.P, nb))
        d[1:, :nx] = self.beta[1:, None] * qx[None, :]
        d[:, nx:nx + nu] = wu[:, None] * qu[None, :]
        H[:, np.arange(nb), np.arange(nb)] = 2.0 * d
        self.cost_hess_blocks = H

    # --------------------------------------------------------------- unpacking
    def unpack(self, z):
        nx, nu, nb = self.nx, self.nu, self.nb
        idx = self.block_index
        X = np.empty((self.P, nx))
        X[0] = self.x0
        X[1:] = z[idx[1:, :nx]]
        U = np.zeros((self.P, nu))
        hi = self.has_input
        U[hi] = z[idx[hi, nx:nx + nu]]
        S = np.zeros(self.P)
        S[1:] = z[idx[1:, nb - 1]]
        return X, U, S

    def pack(self, X, U, S) -> np.ndarray:
        nx, nu, nb = self.nx, self.nu, self.nb
        z = np.zeros(self.n)
        idx = self.block_index
        z[idx[1:, :nx]] = X[1:]
        hi = self.has_input
        z[idx[hi, nx:nx + nu]] = U[hi]
        z[idx[1:, nb - 1]] = S[1:]
        return z

    # ---------------------------------------------------------------- objective
    def objective(self, z) -> float:
        X, U, S = self.unpack(z)
        dx = X[1:] - self.xref
        fx = np.sum(self.beta[1:] * np.sum(dx * dx * self.qx, axis=1))
        fu = np.sum(self.wu * np.sum(U * U * self.qu, axis=1))
        fs = self.params.b * np.sum(self.beta[1:] * S[1:])
        return float(fx + fu + fs)

    def gradient(self, z) -> np.ndarray:
        X, U, S = self.unpack(z)
        nx, nu, nb = self.nx, self.nu, self.nb
        g = np.zeros(self.n)
        idx = self.block_index
        g[idx[1:, :nx]] = 2.0 * self.beta[1:, None] * self.qx * (X[1:] - self.xref)
        hi = self.has_input
        g[idx[hi, nx:nx + nu]] = 2.0 * self.wu[hi, None] * self.qu * U[hi]
        g[idx[1:, nb - 1]] = self.params.b * self.beta[1:]
        return g

    # -------------------------------------------------------------- dynamics
    def _parent_step(self, X, U, second=False, derivs=True):
        pw = self.parents_with_children
        xp, up = X[pw], U[pw]
        key = xp.tobytes() + up.tobytes()
        # residual, Jacobian and Hessian are usually requested at the same point
        hit = getattr(self, "_step_cache", None)
        if hit is not None and hit[0] == key and (hit[3] is not None or not second) \
                and (hit[2] is not None or not derivs):
            return hit[1], hit[2], hit[3]
        if not derivs:
            F, DF, HF = self.model.step(xp, up, self.params.dt), None, None
        else:
            F, DF, HF = self.model.step_derivs(xp, up, self.params.dt, second=second)
        self._step_cache = (key, F, DF, HF)
        return F, DF, HF

    def eq(self, z) -> np.ndarray:
        X, U, _ = self.unpack(z)
        F, _, _ = self._parent_step(X, U, derivs=False)
        return (X[1:] - F[self._pwc_pos[self.parent[1:]]]).ravel()

    def eq_jac(self, z) -> np.ndarray:
        X, U, _ = self.unpack(z)
        _, DF, _ = self._parent_step(X, U, second=False)
        D = -DF[self._pwc_pos[self.parent[1:]]]  # (P-1, nx, nz)
        ones = np.ones((self.P - 1) * self.nx)
        return np.concatenate([ones, D[self._jE_mask]])

    # ------------------------------------------------------------ inequalities
    def _target_centers(self, obs):
        tg = self.params.target
        c, s = np.cos(obs[..., 2]), np.sin(obs[..., 2])
        out = np.empty(obs.shape[:-1] + (2, 2))
        for j, off in enumerate(tg.offsets):
            out[..., j, 0] = obs[..., 0] + off * c
            out[..., j, 1] = obs[..., 1] + off * s
        return out

    def _ineq_parts(self, X, S, order: int):
        """Residuals (P-1, m), gradients wrt (X, Y, psi, s) and optionally Hessians."""
        p = self.params
        Xn, Sn = X[1:], S[1:]
        Pn = Xn.shape[0]
        psi = Xn[:, 2]
        cps, sps = np.cos(psi), np.sin(psi)
        offs = np.array(p.ego.offsets)  # (2,)
        # ego circle centers (Pn, 2)
        bx = Xn[:, 0, None] + offs[None, :] * cps[:, None]
        by = Xn[:, 1, None] + offs[None, :] * sps[:, None]
        dbx = -offs[None, :] * sps[:, None]  # d/dpsi
        dby = offs[None, :] * cps[:, None]
        R = p.R
        l = length_scale(p.target.D)
        il2 = 1.0 / (l * l)
        # kernel terms: (Pn, M, ego j, tv i)
        A = self._tv_centers  # (Pn, M, 2 tv circles, 2)
        dx = bx[:, None, :, None] - A[:, :, None, :, 0]
        dy = by[:, None, :, None] - A[:, :, None, :, 1]
        Rs = (R - Sn)[:, None, None, None]
        e = dx * dx + dy * dy - Rs * Rs
        kv = np.exp(np.minimum(-0.5 * e * il2, 50.0))
        gk = kv.sum(axis=-1) - 1.0  # (Pn, M, 2)

        r = p.ego.r
        lanes = p.lanes
        Xc = bx
        ymin, dymin, d2ymin = lanes.y_min_derivs(Xc)
        ymax = lanes.y_hi
        g_lo = r - (by - ymin + Sn[:, None])
        g_hi = r - (ymax - by + Sn[:, None])
        res = np.concatenate([gk.reshape(Pn, -1), g_lo, g_hi], axis=1)
        if order == 0:
            return res, None, None

        # gradient of e wrt q = (X, Y, psi, s): (Pn, M, 2, 2, 4)
        ge = np.empty(e.shape + (4,))
        ge[..., 0] = 2.0 * dx
        ge[..., 1] = 2.0 * dy
        ge[..., 2] = 2.0 * (dx * dbx[:, None, :, None] + dy * dby[:, None, :, None])
        ge[..., 3] = 2.0 * np.broadcast_to(Rs, e.shape)
        gkq = (-0.5 * il2 * kv)[..., None] * ge  # (Pn, M, 2, 2, 4)
        Jk = gkq.sum(axis=3).reshape(Pn, -1, 4)

        Jlo = np.zeros((Pn, 2, 4))
        Jlo[..., 0] = dymin
        Jlo[..., 1] = -1.0
        Jlo[..., 2] = -dby + dymin * dbx
        Jlo[..., 3] = -1.0
        Jhi = np.zeros((Pn, 2, 4))
        Jhi[..., 1] = 1.0
        Jhi[..., 2] = dby
        Jhi[..., 3] = -1.0
        jac = np.concatenate([Jk, Jlo, Jhi], axis=1)  # (Pn, m, 4)
        if order == 1:
            return res, jac, None

        # Hessians (Pn, m, 4, 4)
        He = np.zeros(e.shape + (4, 4))
        He[..., 0, 0] = 2.0
        He[..., 1, 1] = 2.0
        He[..., 0, 2] = He[..., 2, 0] = 2.0 * np.broadcast_to(dbx[:, None, :, None], e.shape)
        He[..., 1, 2] = He[..., 2, 1] = 2.0 * np.broadcast_to(dby[:, None, :, None], e.shape)
        d2bx = -offs[None, :] * cps[:, None]
        d2by = -offs[None, :] * sps[:, None]
        He[..., 2, 2] = 2.0 * (np.broadcast_to((dbx ** 2 + dby ** 2)[:, None, :, None], e.shape)
                               + dx * d2bx[:, None, :, None] + dy * d2by[:, None, :, None])
        He[..., 3, 3] = -2.0
        Hk = (0.25 * il2 * il2 * kv)[..., None, None] * ge[..., :, None] * ge[..., None, :] \
            - (0.5 * il2 * kv)[..., None, None] * He
        Hk = Hk.sum(axis=3).reshape(Pn, -1, 4, 4)

        Hlo = np.zeros((Pn, 2, 4, 4))
        dXq = np.zeros((Pn, 2, 4))
        dXq[..., 0] = 1.0
        dXq[..., 2] = dbx
        Hlo += d2ymin[..., None, None] * dXq[..., :, None] * dXq[..., None, :]
        Hlo[..., 2, 2] += -d2by + dymin * d2bx
        Hhi = np.zeros((Pn, 2, 4, 4))
        Hhi[..., 2, 2] = d2by
        hess = np.concatenate([Hk, Hlo, Hhi], axis=1)
        return res, jac, hess

    def feasible_slack(self, X, margin: float = 1e-3, iters: int = 40) -> np.ndarray:
        """Smallest per-node slack in [0, R) that makes each node's inequalities hold with ``margin``."""
        X = np.asarray(X, float)
        R = self.params.R
        lo = np.zeros(self.P)
        hi = np.full(self.P, R * (1.0 - 1e-3))
        ok0 = self._ineq_parts(X, lo, 0)[0].max(axis=1) <= -margin
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            ok = self._ineq_parts(X, mid, 0)[0].max(axis=1) <= -margin
            ok = np.concatenate([[True], ok])
            hi = np.where(ok, mid, hi)
            lo = np.where(ok, lo, mid)
        S = np.where(np.concatenate([[True], ok0]), 0.0, hi)
        S[0] = 0.0
        return S

    def ineq(self, z) -> np.ndarray:
        X, _, S = self.unpack(z)
        return self._ineq_parts(X, S, 0)[0].ravel()

    def ineq_jac(self, z) -> np.ndarray:
        """Dense local Jacobian (P-1, m_node, 4) wrt (X, Y, psi, s) of each node."""
        X, _, S = self.unpack(z)
        return self._ineq_parts(X, S, 1)[1]

    def ineq_jac_sparse(self, z):
        import scipy.sparse as sp
        jac = self.ineq_jac(z)
        cols = self.block_index[1:][:, self.q_local]  # (P-1, 4)
        rows = np.arange(self.mI).reshape(self.P - 1, self.m_node)
        R = np.broadcast_to(rows[:, :, None], jac.shape)
        C = np.broadcast_to(cols[:, None, :], jac.shape)
        return sp.csr_matrix((jac.ravel(), (R.ravel(), C.ravel())), shape=(self.mI, self.n))

    def eq_jac_sparse(self, z):
        import scipy.sparse as sp
        return sp.csr_matrix((self.eq_jac(z), (self.jacE_rows, self.jacE_cols)), shape=(self.mE, self.n))

    # ------------------------------------------------------------------ hessian
    def hessian_blocks(self, z, lamE, lamI, obj_factor=1.0) -> np.ndarray:
        """Lagrangian Hessian in node blocks (P, nb, nb).

        The inequality part is returned separately by ``ineq_derivs``.
        """
        X, U, S = self.unpack(z)
        nx, nu = self.nx, self.nu
        H = obj_factor * self.cost_hess_blocks.copy()
        _, _, HF = self._parent_step(X, U, second=True)
        lam = lamE.reshape(self.P - 1, nx)
        lam_par = np.zeros((len(self.parents_with_children), nx))
        np.add.at(lam_par, self._pwc_pos[self.parent[1:]], lam)
        Hd = -np.einsum("pa,paij->pij", lam_par, HF)
        nz = nx + nu
        H[self.parents_with_children, :nz, :nz] += Hd
        return H

    def ineq_derivs(self, z):
        X, _, S = self.unpack(z)
        return self._ineq_parts(X, S, 2)

    # --------------------------------------------------------------- utilities
    def rollout(self, U, x0=None):
        """States obtained by applying per-node inputs through the tree."""
        X = np.empty((self.P, self.nx))
        X[0] = self.x0 if x0 is None else x0
        for n in range(1, self.P):
            p = self.parent[n]
            X[n] = self.model.step(X[p], U[p], self.params.dt)
        return X

    def restore(self, z) -> np.ndarray:
        """Nearby point with zero dynamics defect: roll the inputs of ``z`` out
        through the tree, keep states inside their bounds and pick feasible slacks."""
        _, U, _ = self.unpack(z)
        lo, hi = self.params.x_bounds()
        with np.errstate(invalid="ignore"):
            pad = np.where(np.isfinite(hi - lo), 1e-6 * np.maximum(1.0, hi - lo), 0.0)
        X = np.empty((self.P, self.nx))
        X[0] = self.x0
        for n in range(1, self.P):
            X[n] = np.clip(self.model.step(X[self.parent[n]], U[self.parent[n]], self.params.dt),
                           lo + pad, hi - pad)
        return self.pack(X, U, self.feasible_slack(X))

    def constraint_violation(self, z) -> float:
        cI = self.ineq(z)
        cE = self.eq(z)
        v = max(np.max(np.abs(cE), initial=0.0), np.max(cI, initial=0.0))
        return float(max(v, np.max(self.lb - z, initial=0.0), np.max(z - self.ub, initial=0.0)))


def build_branching(params: OcpParams, x0, tree) -> OcpProblem:
    """Branching problem from a weighted trajectory-tree skeleton."""
    parent = [(-1 if nd.parent_id is None else nd.parent_id) for nd in tree.nodes]
    beta = [nd.beta for nd in tree.nodes]
    k = [nd.k for nd in tree.nodes]
    return OcpProblem(params, x0, parent, beta, tree.obstacles, k=k)


def build_nominal(params: OcpParams, x0, obstacle_predictions) -> OcpProblem:
    """Nominal problem; ``obstacle_predictions[k]`` holds target poses at sample k.

    ``obstacle_predictions`` may be an array (N+1, M, 3) or a list of arrays.
    """
    N = params.N
    parent = [-1] + list(range(N))
    beta = [1.0] * (N + 1)
    obs = [np.zeros((0, 3))] + [np.asarray(obstacle_predictions[k], float).reshape(-1, 3)
                                for k in range(1, N + 1)] if len(obstacle_predictions) else \
        [np.zeros((0, 3))] * (N + 1)
    return OcpProblem(params, x0, parent, beta, obs)
