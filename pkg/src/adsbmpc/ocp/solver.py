"""Solve entry point returning per-node trajectories."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ipm import InteriorPoint, IpmOptions, SOLVED, MAX_ITER, INFEASIBLE
from .problem import OcpProblem


@dataclass
class SolveResult:
    X: np.ndarray  # (P, nx) states per node, row 0 is the fixed initial state
    U: np.ndarray  # (P, nu) inputs per node, zero rows on leaves
    S: np.ndarray  # (P,) slacks, S[0] = 0
    objective: float
    kkt_residual: float
    status: str
    iterations: int
    constraint_violation: float

    @property
    def ok(self) -> bool:
        return self.status == SOLVED


def warm_start_vector(p: OcpProblem, X=None, U=None, S=None) -> np.ndarray:
    """Variable vector from (partial) per-node guesses; missing parts default to a rollout."""
    if U is None:
        U = np.zeros((p.P, p.nu))
    if X is None:
        X = p.rollout(U)
    if S is None:
        S = p.feasible_slack(X)
    return p.pack(np.asarray(X, float), np.asarray(U, float), np.asarray(S, float))


def solve(p: OcpProblem, warm_start=None, options: IpmOptions | None = None) -> SolveResult:
    """Local solve from ``warm_start`` (a variable vector or an (X, U[, S]) tuple)."""
    if warm_start is None:
        z0 = warm_start_vector(p)
    elif isinstance(warm_start, tuple):
        z0 = warm_start_vector(p, *warm_start)
    else:
        z0 = np.asarray(warm_start, float)
    res = InteriorPoint(p, options).solve(z0)
    X, U, S = p.unpack(res.z)
    return SolveResult(X=X, U=U, S=S, objective=res.objective, kkt_residual=res.kkt,
                       status=res.status, iterations=res.iterations,
                       constraint_violation=res.constraint_violation)


def dump_nlp(p: OcpProblem, path, z=None):
    """Plain-text dump of variables, bounds and constraint sparsity."""
    names = []
    labels = [f"x{i}" for i in range(p.nx)] + [f"u{i}" for i in range(p.nu)] + ["s"]
    for n in range(p.P):
        for j, gi in enumerate(p.block_index[n]):
            if gi >= 0:
                names.append((gi, f"node{n}.k{p.k[n]}.{labels[j]}"))
    names.sort()
    with open(path, "w") as fh:
        fh.write(f"# variables {p.n} equalities {p.mE} inequalities {p.mI}\n")
        fh.write(f"# nodes {p.P} parents {' '.join(map(str, p.parent))}\n")
        fh.write("# index name lb ub value\n")
        for gi, name in names:
            val = "" if z is None else f" {z[gi]:.9g}"
            fh.write(f"{gi} {name} {p.lb[gi]:.9g} {p.ub[gi]:.9g}{val}\n")
        fh.write("# equality jacobian (row col)\n")
        for r, c in zip(p.jacE_rows, p.jacE_cols):
            fh.write(f"E {r} {c}\n")
        fh.write("# inequality jacobian (row col)\n")
        q = p.block_index[1:][:, p.q_local]
        for node in range(p.P - 1):
            for m in range(p.m_node):
                row = node * p.m_node + m
                fh.write(f"I {row} " + " ".join(map(str, q[node])) + "\n")


__all__ = ["SolveResult", "solve", "warm_start_vector", "dump_nlp", "SOLVED", "MAX_ITER", "INFEASIBLE"]
