"""Disturbance trees, pruning, importance weights and trajectory-tree skeletons.

The scenario tree consists of a nominal chain of nodes ``k = 0..N`` and one
branch per disturbance sequence.  A sequence whose first nonzero
acceleration acts on the interval starting at sample ``k_start`` moves the
target away from its nominal prediction at ``k_start + 1``.  The ego state
at that sample is still decided by the input applied before the disturbance
could be observed, so node ``k_start + 1`` is shared and must respect both
predictions.  The branch proper starts one sample later.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .lattice.disturbance import DisturbanceSequence


class MalformedTree(ValueError):
    pass


@dataclass
class TreeNode:
    id: int
    parent_id: int | None
    k: int
    branch_id: int = 0
    beta: float = 1.0
    gamma: float = 1.0
    nominal: bool = True


@dataclass
class DisturbanceTree:
    sequences: list = field(default_factory=list)

    def __len__(self):
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)


@dataclass
class TrajectoryTree:
    nodes: list
    # per node (M_n, 3) target poses (X, Y, psi) that constrain the node state
    obstacles: list
    obstacle_ids: list
    states: np.ndarray | None = None
    inputs: np.ndarray | None = None
    slacks: np.ndarray | None = None
    sequences: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.nodes)

    def children(self, i: int) -> list:
        return [n.id for n in self.nodes if n.parent_id == i]

    def nominal_path(self) -> list:
        """Node ids from root to leaf following the nominal label."""
        path = [0]
        while True:
            nxt = [c for c in self.children(path[-1]) if self.nodes[c].nominal]
            if not nxt:
                return path
            if len(nxt) > 1:
                raise MalformedTree(f"node {path[-1]} has several nominal children")
            path.append(nxt[0])

    def branch_leaves(self) -> list:
        ids = {n.parent_id for n in self.nodes}
        return [n.id for n in self.nodes if n.id not in ids]

    def to_dict(self) -> dict:
        out = []
        for n in self.nodes:
            d = {"id": n.id, "parent": n.parent_id, "k": n.k, "branch": n.branch_id,
                 "beta": n.beta, "nominal": n.nominal}
            if self.states is not None:
                d["state"] = [float(x) for x in self.states[n.id]]
            out.append(d)
        return {"nodes": out}

    def dump_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    def dump_text(self) -> str:
        lines = []

        def rec(i, depth):
            n = self.nodes[i]
            st = ""
            if self.states is not None:
                st = " state=" + ",".join(f"{x:.3f}" for x in self.states[i])
            lines.append(f"{'  ' * depth}k={n.k} branch={n.branch_id} beta={n.beta:.4f}{st}")
            kids = self.children(i)
            # the nominal child continues at the same indentation
            for c in kids:
                rec(c, depth + (0 if self.nodes[c].nominal and len(kids) > 1 else 1 if len(kids) > 1 else 0))

        rec(0, 0)
        return "\n".join(lines)


def extract_nominal(tree: TrajectoryTree) -> np.ndarray:
    """Inputs along the nominal path from the root to its last non-leaf node."""
    if tree.inputs is None:
        raise MalformedTree("tree carries no inputs")
    path = tree.nominal_path()
    ks = [tree.nodes[i].k for i in path]
    if ks != list(range(len(path))) or len(path) < 2:
        raise MalformedTree("nominal branch is incomplete")
    U = tree.inputs[path[:-1]]
    if not np.all(np.isfinite(U)):
        raise MalformedTree("nominal branch has missing inputs")
    return np.array(U)


def generate_disturbance_tree(agent_ids, search) -> DisturbanceTree:
    """At most one adversarial sequence per agent; ``search(agent_id)`` may return None."""
    w = DisturbanceTree()
    for a in agent_ids:
        seq = search(a)
        if seq is not None:
            w.sequences.append(seq)
    return w


def prune(w_in: DisturbanceTree, n, eta: float) -> DisturbanceTree:
    """Keep the ``n`` most critical sequences (stable for ties)."""
    order = sorted(w_in.sequences, key=lambda s: s.cost(eta))
    if n is None:
        n = len(order)
    return DisturbanceTree(order[:min(int(n), len(order))])


def assign_weights(nodes: list) -> list:
    """Top-down importance weights from the odds stored on each node."""
    out = [replace(n) for n in nodes]
    by_id = {n.id: n for n in out}
    kids = {}
    for n in out:
        if n.parent_id is not None:
            kids.setdefault(n.parent_id, []).append(n)
    roots = [n for n in out if n.parent_id is None]
    if len(roots) != 1:
        raise MalformedTree("tree must have exactly one root")
    roots[0].beta = 1.0
    stack = [roots[0].id]
    while stack:
        i = stack.pop()
        ch = kids.get(i, [])
        if not ch:
            continue
        tot = sum(c.gamma for c in ch)
        for c in ch:
            c.beta = by_id[i].beta * c.gamma / tot
            stack.append(c.id)
    return out


def tree_skeleton(N: int, branch_nodes, gamma_d: float = 0.5) -> list:
    """Nominal chain 0..N plus one branch per entry of ``branch_nodes``.

    A branch at ``b`` leaves the nominal node at sample ``b`` and holds nodes
    ``b+1..N``.  Returned nodes are weighted.
    """
    nodes = [TreeNode(id=k, parent_id=(k - 1 if k else None), k=k) for k in range(N + 1)]
    for j, b in enumerate(branch_nodes, start=1):
        if not 0 <= b <= N:
            raise ValueError("branch node outside the horizon")
        prev = b
        for k in range(b + 1, N + 1):
            nid = len(nodes)
            nodes.append(TreeNode(id=nid, parent_id=prev, k=k, branch_id=j,
                                  gamma=gamma_d if k == b + 1 else 1.0, nominal=False))
            prev = nid
    return assign_weights(nodes)


def split_node(seq: DisturbanceSequence) -> int:
    return seq.k_start + 1


def assemble_scenario_tree(N: int, w: DisturbanceTree, predictions: dict,
                           gamma_d: float = 0.5) -> TrajectoryTree:
    """Skeleton with per-node obstacle poses.

    ``predictions`` maps agent id to its (N+1, >=3) nominal rollout.  The
    disturbed agent follows its sequence on the branch it spawns; the shared
    split node carries both the nominal and the disturbed pose.
    """
    seqs = list(w.sequences)
    nodes = tree_skeleton(N, [split_node(s) for s in seqs], gamma_d)
    ids = list(predictions)
    nominal_obs = [np.array([predictions[a][k, :3] for a in ids]).reshape(-1, 3) for k in range(N + 1)]
    obstacles = [o.copy() for o in nominal_obs]
    obstacle_ids = [list(ids) for _ in range(N + 1)]
    for j, s in enumerate(seqs, start=1):
        b = split_node(s)
        if b <= N:
            obstacles[b] = np.vstack([obstacles[b], s.states[b, :3]])
            obstacle_ids[b] = obstacle_ids[b] + [(s.agent_id, "dist")]
    for n in nodes[N + 1:]:
        s = seqs[n.branch_id - 1]
        o = nominal_obs[n.k].copy()
        o[ids.index(s.agent_id)] = s.states[n.k, :3]
        obstacles.append(o)
        obstacle_ids.append(list(ids))
    return TrajectoryTree(nodes=nodes, obstacles=obstacles, obstacle_ids=obstacle_ids, sequences=seqs)


def node_count_bound(N: int, n_agents: int) -> int:
    return (N + 1) + n_agents * (N - 1)
