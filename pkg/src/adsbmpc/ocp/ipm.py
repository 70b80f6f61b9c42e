"""Primal-dual interior-point method for node-block structured NLPs.

Solves

    min f(z)  s.t.  c_E(z) = 0,  c_I(z) <= 0,  lb <= z <= ub

with slacks ``w`` turning inequalities into ``c_I + w = 0, w >= 0``.  The
inequality and bound terms are condensed into the primal block so each
Newton step needs one sparse factorization of

    [ H + Sigma + J_I^T Sigma_w J_I + dw I     J_E^T ]
    [ J_E                                    -dc I  ]

Inequalities are attached to problem nodes and only touch a fixed subset of
each node's block, so the condensation stays block diagonal.  Globalization
uses a filter line search on (constraint violation, barrier objective)
with second-order corrections.  The primal regularization grows until the
factorization reports the inertia of a local minimizer.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

SOLVED = "solved"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible_detected"

log = logging.getLogger(__name__)


@dataclass
class IpmOptions:
    tol: float = 1e-6
    max_iter: int = 150
    mu_init: float = 0.1
    kappa_eps: float = 10.0
    kappa_mu: float = 0.2
    theta_mu: float = 1.5
    s_max: float = 100.0
    tau_min: float = 0.99
    bound_push: float = 1e-2
    max_grad_scale: float = 100.0
    gamma_theta: float = 1e-5
    gamma_phi: float = 1e-8
    gamma_alpha: float = 0.05
    delta_switch: float = 1.0
    s_theta: float = 1.1
    s_phi: float = 2.3
    eta_phi: float = 1e-8
    max_soc: int = 4
    kappa_soc: float = 0.99
    min_step: float = 1e-12
    kappa_sigma: float = 1e10
    curvature_tol: float = 1e-10


@dataclass
class IpmResult:
    z: np.ndarray
    lamE: np.ndarray
    lamI: np.ndarray
    status: str
    kkt: float
    iterations: int
    objective: float
    constraint_violation: float


class _Kkt:
    """Sparse assembly of the condensed KKT matrix with a fixed pattern."""

    def __init__(self, prob):
        self.n, self.mE = prob.n, prob.mE
        idx = prob.block_index
        P, nb = idx.shape
        r = np.broadcast_to(idx[:, :, None], (P, nb, nb))
        c = np.broadcast_to(idx[:, None, :], (P, nb, nb))
        self.bmask = (r >= 0) & (c >= 0)
        n, mE = self.n, self.mE
        Er, Ec = prob.jacE_rows, prob.jacE_cols
        self.rows = np.concatenate([r[self.bmask], np.arange(n), n + Er, Ec, n + np.arange(mE)])
        self.cols = np.concatenate([c[self.bmask], np.arange(n), Ec, n + Er, n + np.arange(mE)])

    def factor(self, blocks, diag, jE, dc, diagonal_pivots=False):
        """LU of the KKT matrix.

        With ``diagonal_pivots`` no row interchanges are made, so the factors
        amount to a symmetric LDL^T and the signs of diag(U) give the inertia.
        """
        data = np.concatenate([blocks[self.bmask], diag, jE, jE, np.full(self.mE, -dc)])
        N = self.n + self.mE
        K = sp.csc_matrix((data, (self.rows, self.cols)), shape=(N, N))
        if diagonal_pivots:
            return splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                        options={"SymmetricMode": True})
        return splu(K, permc_spec="MMD_AT_PLUS_A", options={"SymmetricMode": True})

    def inertia(self, lu, dc=0.0):
        """(positive, negative, zero) pivot counts, or None if rows were permuted."""
        if not np.array_equal(lu.perm_r, lu.perm_c):
            return None
        d = lu.U.diagonal()
        scale = max(np.max(np.abs(d), initial=0.0), 1.0)
        eps = 1e-14 * scale
        if dc > 0.0:
            # constraint pivots are at least dc in size once regularized
            eps = min(eps, 1e-3 * dc)
        tiny = np.abs(d) <= eps
        return int(np.sum((d > 0) & ~tiny)), int(np.sum((d < 0) & ~tiny)), int(np.sum(tiny))


class _Evaluation(dict):
    """Function values at a point; derivatives are filled in on first access.

    Line-search trial points are mostly rejected, so their derivatives are
    never needed.
    """

    def __init__(self, p, z, obj_scale):
        X, _, S = p.unpack(z)
        super().__init__(f=obj_scale * p.objective(z), cE=p.eq(z),
                         cI=p._ineq_parts(X, S, 0)[0].ravel())
        self._p, self._z, self._scale = p, z, obj_scale

    def __missing__(self, key):
        p, z = self._p, self._z
        if key == "g":
            self["g"] = self._scale * p.gradient(z)
        elif key == "jE":
            self["jE"] = p.eq_jac(z)
        elif key in ("jI", "hI"):
            _, self["jI"], self["hI"] = p.ineq_derivs(z)
        else:
            raise KeyError(key)
        return self[key]


class InteriorPoint:
    def __init__(self, prob, options: IpmOptions | None = None):
        self.p = prob
        self.o = options or IpmOptions()
        self.kkt = _Kkt(prob)
        self.iL = np.isfinite(prob.lb)
        self.iU = np.isfinite(prob.ub)
        self.obj_scale = 1.0
        self._q_cols = prob.block_index[1:][:, prob.q_local]  # (P-1, 4)

    # ----------------------------------------------------------- evaluations
    def _eval(self, z):
        return _Evaluation(self.p, z, self.obj_scale)

    def _jE_T(self, jE, v):
        out = np.zeros(self.p.n)
        np.add.at(out, self.p.jacE_cols, jE * v[self.p.jacE_rows])
        return out

    def _jE(self, jE, d):
        out = np.zeros(self.p.mE)
        np.add.at(out, self.p.jacE_rows, jE * d[self.p.jacE_cols])
        return out

    def _jI_T(self, jI, v):
        out = np.zeros(self.p.n)
        contrib = np.einsum("pmq,pm->pq", jI, v.reshape(jI.shape[:2]))
        np.add.at(out, self._q_cols.ravel(), contrib.ravel())
        return out

    def _jI(self, jI, d):
        return np.einsum("pmq,pq->pm", jI, d[self._q_cols]).ravel()

    # ------------------------------------------------------------- residuals
    def _errors(self, ev, z, w, lamE, lamI, nuL, nuU, mu):
        o = self.o
        rz = ev["g"] + self._jE_T(ev["jE"], lamE) + self._jI_T(ev["jI"], lamI) - nuL + nuU
        gapL = np.where(self.iL, z - self.p.lb, 1.0)
        gapU = np.where(self.iU, self.p.ub - z, 1.0)
        nb = self.iL.sum() + self.iU.sum()
        m = len(lamE) + len(lamI) + nb
        sum_mult = np.abs(lamE).sum() + np.abs(lamI).sum() + nuL.sum() + nuU.sum()
        sd = max(o.s_max, sum_mult / max(m, 1)) / o.s_max
        sc = max(o.s_max, (lamI.sum() + nuL.sum() + nuU.sum()) / max(len(lamI) + nb, 1)) / o.s_max
        dual = np.max(np.abs(rz), initial=0.0) / sd
        prim = max(np.max(np.abs(ev["cE"]), initial=0.0), np.max(np.abs(ev["cI"] + w), initial=0.0))
        comp = max(np.max(np.abs(w * lamI - mu), initial=0.0),
                   np.max(np.abs((gapL * nuL - mu)[self.iL]), initial=0.0),
                   np.max(np.abs((gapU * nuU - mu)[self.iU]), initial=0.0)) / sc
        return max(dual, prim, comp), rz

    def _theta(self, cE, cI, w):
        return np.abs(cE).sum() + np.abs(cI + w).sum()

    def _barrier(self, f, z, w, mu):
        gapL = (z - self.p.lb)[self.iL]
        gapU = (self.p.ub - z)[self.iU]
        if np.any(gapL <= 0) or np.any(gapU <= 0) or np.any(w <= 0):
            return math.inf
        return f - mu * (np.log(w).sum() + np.log(gapL).sum() + np.log(gapU).sum())

    # ------------------------------------------------------------------ solve
    def solve(self, z0, lamE0=None) -> IpmResult:
        p, o = self.p, self.o
        z = np.array(z0, dtype=float)
        lb, ub = p.lb, p.ub
        # push into the interior
        with np.errstate(invalid="ignore"):
            width = np.where(self.iL & self.iU, ub - lb, np.inf)
            pl = np.minimum(o.bound_push * np.maximum(1.0, np.abs(lb)), o.bound_push * width)
            pu = np.minimum(o.bound_push * np.maximum(1.0, np.abs(ub)), o.bound_push * width)
            z = np.where(self.iL, np.maximum(z, lb + pl), z)
            z = np.where(self.iU, np.minimum(z, ub - pu), z)

        g0 = p.gradient(z)
        gmax = np.max(np.abs(g0), initial=0.0)
        self.obj_scale = min(1.0, o.max_grad_scale / gmax) if gmax > 0 else 1.0

        mu = o.mu_init
        ev = self._eval(z)
        w = np.maximum(-ev["cI"], o.bound_push)
        lamI = mu / w
        nuL = np.where(self.iL, mu / np.where(self.iL, z - lb, 1.0), 0.0)
        nuU = np.where(self.iU, mu / np.where(self.iU, ub - z, 1.0), 0.0)
        lamE = np.zeros(p.mE) if lamE0 is None else np.array(lamE0, float)
        if lamE0 is None:
            lamE = self._ls_multipliers(ev, lamI, nuL, nuU)

        filt, filter_mu = [], None
        theta_max = theta_min = None
        dw_reg_last = 0.0
        best = None
        status = MAX_ITER
        small_steps = 0
        it = 0
        for it in range(o.max_iter + 1):
            err0, _ = self._errors(ev, z, w, lamE, lamI, nuL, nuU, 0.0)
            theta_inf = max(np.max(np.abs(ev["cE"]), initial=0.0), np.max(ev["cI"], initial=0.0))
            if best is None or err0 < best[0]:
                best = (err0, z.copy(), lamE.copy(), lamI.copy(), theta_inf)
            if err0 <= o.tol:
                status = SOLVED
                break
            if it == o.max_iter:
                break
            # barrier update
            while True:
                err_mu, _ = self._errors(ev, z, w, lamE, lamI, nuL, nuU, mu)
                if err_mu <= o.kappa_eps * mu and mu > o.tol / 10.0:
                    mu = max(o.tol / 10.0, min(o.kappa_mu * mu, mu ** o.theta_mu))
                else:
                    break

            step = self._direction(ev, z, w, lamE, lamI, nuL, nuU, mu, dw_reg_last)
            if step is None:
                status = INFEASIBLE
                break
            dz, lamE_new, dw, dlamI, dnuL, dnuU, dw_reg, quad = step
            if dw_reg > 0:
                dw_reg_last = dw_reg

            tau = max(o.tau_min, 1.0 - mu)
            a_p = min(self._max_step(z - lb, dz, tau, self.iL),
                      self._max_step(ub - z, -dz, tau, self.iU),
                      self._max_step(w, dw, tau, np.ones_like(w, bool)))
            a_d = min(self._max_step(lamI, dlamI, tau, np.ones_like(w, bool)),
                      self._max_step(nuL, dnuL, tau, self.iL),
                      self._max_step(nuU, dnuU, tau, self.iU))

            # filter line search on (theta, phi)
            theta = self._theta(ev["cE"], ev["cI"], w)
            phi = self._barrier(ev["f"], z, w, mu)
            gb = ev["g"].copy()
            gb[self.iL] -= mu / (z - lb)[self.iL]
            gb[self.iU] += mu / (ub - z)[self.iU]
            dphi = gb @ dz - mu * np.sum(dw / w)
            if mu != filter_mu:
                filt, filter_mu = [], mu
            if theta_max is None:
                theta_max = 1e4 * max(1.0, theta)
                theta_min = 1e-4 * max(1.0, theta)

            def acceptable(th, ph, alpha):
                """Returns (accepted, f_type)."""
                if not math.isfinite(ph) or th > theta_max:
                    return False, False
                if any(th >= tf and ph >= pf for tf, pf in filt):
                    return False, False
                f_type = (theta <= theta_min and dphi < 0.0
                          and alpha * (-dphi) ** o.s_phi > o.delta_switch * theta ** o.s_theta)
                if f_type:
                    return ph <= phi + o.eta_phi * alpha * dphi, True
                return th <= (1.0 - o.gamma_theta) * theta or ph <= phi - o.gamma_phi * theta, False

            if dphi < 0.0 and theta > 0.0:
                alpha_min = o.gamma_alpha * min(o.gamma_theta, o.gamma_phi * theta / -dphi,
                                                o.delta_switch * theta ** o.s_theta / (-dphi) ** o.s_phi)
            elif dphi < 0.0:
                alpha_min = o.gamma_alpha * o.gamma_theta
            else:
                alpha_min = o.gamma_alpha * o.gamma_theta
            alpha_min = max(alpha_min, o.min_step)

            alpha = a_p
            accepted = f_type = False
            first = True
            while alpha >= alpha_min:
                zt, wt = z + alpha * dz, w + alpha * dw
                evt = self._eval(zt)
                tht = self._theta(evt["cE"], evt["cI"], wt)
                pht = self._barrier(evt["f"], zt, wt, mu)
                accepted, f_type = acceptable(tht, pht, alpha)
                if accepted:
                    break
                if first and tht >= theta:
                    # second-order corrections on the full step
                    cE_soc = alpha * ev["cE"] + evt["cE"]
                    rI_soc = alpha * (ev["cI"] + w) + (evt["cI"] + wt)
                    th_old = tht
                    for _ in range(o.max_soc):
                        soc = self._soc(ev, cE_soc, rI_soc, z, w, lamI, nuL, nuU, mu, tau)
                        if soc is None:
                            break
                        zs, ws, evs, a_soc, lamE_s, dlamI_s, dnuL_s, dnuU_s = soc
                        ths = self._theta(evs["cE"], evs["cI"], ws)
                        phs = self._barrier(evs["f"], zs, ws, mu)
                        ok, ft = acceptable(ths, phs, alpha)
                        if ok:
                            zt, wt, evt = zs, ws, evs
                            lamE_new, dlamI, dnuL, dnuU = lamE_s, dlamI_s, dnuL_s, dnuU_s
                            tht, pht, f_type = ths, phs, ft
                            alpha = a_soc
                            accepted = True
                            break
                        if ths > o.kappa_soc * th_old:
                            break
                        th_old = ths
                        cE_soc = a_soc * cE_soc + evs["cE"]
                        rI_soc = a_soc * rI_soc + (evs["cI"] + ws)
                    if accepted:
                        break
                first = False
                alpha *= 0.5
            if accepted:
                small_steps = 0
                if not f_type:
                    filt.append(((1.0 - o.gamma_theta) * theta, phi - o.gamma_phi * theta))
            else:
                small_steps += 1
                if small_steps >= 5:
                    status = INFEASIBLE if theta_inf > o.tol else MAX_ITER
                    break
                dw_reg_last = max(10.0 * dw_reg_last, 1e-4)
                alpha = a_p
                zt, wt = z + alpha * dz, w + alpha * dw
                restored = self._restore(zt, mu) if hasattr(p, "restore") else None
                if restored is not None:
                    # restoration: keep the filter, remember the point we are leaving
                    filt.append(((1.0 - o.gamma_theta) * theta, phi - o.gamma_phi * theta))
                    zt, wt, evt = restored
                else:
                    # take the full step with a fresh filter
                    filt = [((1.0 - o.gamma_theta) * theta, phi - o.gamma_phi * theta)] if theta > o.tol else []
                    evt = self._eval(zt)

            log.debug("it=%3d err=%.2e mu=%.1e a_p=%.2e a_d=%.2e alpha=%.2e reg=%.1e theta=%.2e",
                      it, err0, mu, a_p, a_d, alpha, dw_reg, theta)
            z, w, ev = zt, wt, evt
            lamE = lamE + alpha * (lamE_new - lamE)
            lamI = lamI + a_d * dlamI
            nuL = nuL + a_d * dnuL
            nuU = nuU + a_d * dnuU
            # keep duals close to the central path
            ks = o.kappa_sigma
            lamI = np.clip(lamI, mu / (ks * w), ks * mu / w)
            gapL = np.where(self.iL, z - lb, 1.0)
            gapU = np.where(self.iU, ub - z, 1.0)
            nuL = np.where(self.iL, np.clip(nuL, mu / (ks * gapL), ks * mu / gapL), 0.0)
            nuU = np.where(self.iU, np.clip(nuU, mu / (ks * gapU), ks * mu / gapU), 0.0)

        if status != SOLVED and best is not None and best[0] < math.inf:
            err0, z, lamE, lamI, _ = best
        else:
            err0, _ = self._errors(ev, z, w, lamE, lamI, nuL, nuU, 0.0)
        viol = p.constraint_violation(z)
        return IpmResult(z=z, lamE=lamE, lamI=lamI, status=status, kkt=float(err0),
                         iterations=it, objective=float(p.objective(z)), constraint_violation=viol)

    # --------------------------------------------------------------- helpers
    def _restore(self, z, mu):
        """Problem-supplied feasibility restoration, pushed back into the interior."""
        p = self.p
        zr = np.asarray(p.restore(z), float)
        if not np.all(np.isfinite(zr)):
            return None
        with np.errstate(invalid="ignore"):
            zr = np.where(self.iL, np.maximum(zr, p.lb + 1e-8 * np.maximum(1.0, np.abs(p.lb))), zr)
            zr = np.where(self.iU, np.minimum(zr, p.ub - 1e-8 * np.maximum(1.0, np.abs(p.ub))), zr)
        ev = self._eval(zr)
        w = np.maximum(-ev["cI"], min(mu, 1e-3))
        return zr, w, ev

    @staticmethod
    def _max_step(x, dx, tau, mask):
        m = mask & (dx < 0)
        if not np.any(m):
            return 1.0
        with np.errstate(over="ignore"):
            return float(min(1.0, np.min(-tau * x[m] / dx[m])))

    def _ls_multipliers(self, ev, lamI, nuL, nuU):
        p = self.p
        blocks = np.zeros((p.P, p.nb, p.nb))
        try:
            lu = self.kkt.factor(blocks, np.ones(p.n), ev["jE"], 0.0)
        except RuntimeError:
            return np.zeros(p.mE)
        rhs = np.concatenate([-(ev["g"] + self._jI_T(ev["jI"], lamI) - nuL + nuU), np.zeros(p.mE)])
        lam = lu.solve(rhs)[p.n:]
        if not np.all(np.isfinite(lam)) or np.max(np.abs(lam), initial=0.0) > 1e3:
            return np.zeros(p.mE)
        return lam

    def _primal_blocks(self, ev, z, w, lamE, lamI, sigma_w):
        p = self.p
        blocks = p.hessian_blocks(z, lamE, lamI, obj_factor=self.obj_scale)
        P1 = p.P - 1
        lam = lamI.reshape(P1, -1)
        sig = sigma_w.reshape(P1, -1)
        jI = ev["jI"]
        add = np.einsum("pm,pmij->pij", lam, ev["hI"]) + np.einsum("pmi,pm,pmj->pij", jI, sig, jI)
        ql = p.q_local
        blocks[1:, ql[:, None], ql[None, :]] += add
        return blocks

    def _direction(self, ev, z, w, lamE, lamI, nuL, nuU, mu, dw_last, c_override=None):
        p = self.p
        lb, ub = p.lb, p.ub
        gapL = np.where(self.iL, z - lb, 1.0)
        gapU = np.where(self.iU, ub - z, 1.0)
        sL = np.where(self.iL, nuL / gapL, 0.0)
        sU = np.where(self.iU, nuU / gapU, 0.0)
        sig_w = lamI / w
        blocks = self._primal_blocks(ev, z, w, lamE, lamI, sig_w)
        cE, cI = (ev["cE"], ev["cI"]) if c_override is None else c_override
        rI = cI + w
        rhs_z = -ev["g"] - self._jI_T(ev["jI"], mu / w + sig_w * rI)
        rhs_z = rhs_z + np.where(self.iL, mu / gapL, 0.0) - np.where(self.iU, mu / gapU, 0.0)
        rhs = np.concatenate([rhs_z, -cE])

        dw_reg = 0.0
        dc = 0.0
        base = sL + sU
        idx = p.block_index
        n, mE = p.n, p.mE
        for attempt in range(60):
            sol = None
            try:
                lu = self.kkt.factor(blocks, base + dw_reg, ev["jE"], dc, diagonal_pivots=True)
                inert = self.kkt.inertia(lu, dc)
            except RuntimeError:
                lu, inert = None, (0, 0, 1)
            if inert is not None and inert[2] > 0 and dc == 0.0:
                # singular: regularize the constraint block first
                dc = 1e-8 * mu ** 0.25
                continue
            if inert is None:
                # rows were permuted; fall back to a curvature test on the step
                sol = lu.solve(rhs)
                ok = bool(np.all(np.isfinite(sol))) and np.max(np.abs(sol)) < 1e150
                if ok:
                    dz = sol[:n]
                    dzb = np.where(idx >= 0, dz[np.maximum(idx, 0)], 0.0)
                    quad = np.einsum("pi,pij,pj->", dzb, blocks, dzb) + np.sum((base + dw_reg) * dz * dz)
                    ok = quad >= self.o.curvature_tol * (dz @ dz) or dz @ dz == 0.0
            else:
                ok = inert == (n, mE, 0)
                if ok:
                    sol = lu.solve(rhs)
                    ok = bool(np.all(np.isfinite(sol)))
            if ok:
                break
            if dw_reg == 0.0:
                dw_reg = 1e-4 if dw_last == 0.0 else max(1e-20, dw_last / 3.0)
            else:
                dw_reg *= 100.0 if dw_last == 0.0 else 8.0
            if dw_reg > 1e40:
                return None
        else:
            return None
        dz = sol[:n]
        dzb = np.where(idx >= 0, dz[np.maximum(idx, 0)], 0.0)
        quad = np.einsum("pi,pij,pj->", dzb, blocks, dzb) + np.sum((base + dw_reg) * dz * dz)
        lamE_new = sol[p.n:]
        dw = -rI - self._jI(ev["jI"], dz)
        dlamI = mu / w - lamI - sig_w * dw
        dnuL = np.where(self.iL, mu / gapL - nuL - sL * dz, 0.0)
        dnuU = np.where(self.iU, mu / gapU - nuU + sU * dz, 0.0)
        self._last_lu = (lu, rhs_z, sig_w, gapL, gapU, sL, sU)
        return dz, lamE_new, dw, dlamI, dnuL, dnuU, dw_reg, quad

    def _soc(self, ev, cE_soc, rI_soc, z, w, lamI, nuL, nuU, mu, tau):
        """Second-order correction reusing the current factorization."""
        p = self.p
        lu, _, sig_w, gapL, gapU, sL, sU = self._last_lu
        rhs_z = -ev["g"] - self._jI_T(ev["jI"], mu / w + sig_w * rI_soc)
        rhs_z = rhs_z + np.where(self.iL, mu / gapL, 0.0) - np.where(self.iU, mu / gapU, 0.0)
        sol = lu.solve(np.concatenate([rhs_z, -cE_soc]))
        if not np.all(np.isfinite(sol)):
            return None
        dzs = sol[:p.n]
        dws = -rI_soc - self._jI(ev["jI"], dzs)
        a = min(self._max_step(z - p.lb, dzs, tau, self.iL),
                self._max_step(p.ub - z, -dzs, tau, self.iU),
                self._max_step(w, dws, tau, np.ones_like(w, bool)))
        zs, ws = z + a * dzs, w + a * dws
        evs = self._eval(zs)
        dlamI = mu / w - lamI - sig_w * dws
        dnuL = np.where(self.iL, mu / gapL - nuL - sL * dzs, 0.0)
        dnuU = np.where(self.iU, mu / gapU - nuU + sU * dzs, 0.0)
        return zs, ws, evs, a, sol[p.n:], dlamI, dnuL, dnuU
