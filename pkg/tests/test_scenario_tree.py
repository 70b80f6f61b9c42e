import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adsbmpc.lattice.disturbance import DisturbanceSequence
from adsbmpc.ocp import OcpParams, build_branching
from adsbmpc.scenario_tree import (DisturbanceTree, MalformedTree, TrajectoryTree, TreeNode,
                                   assemble_scenario_tree, assign_weights, extract_nominal,
                                   generate_disturbance_tree, node_count_bound, prune, tree_skeleton)


def seq(agent, k_start, t_inf, N=10, dt=0.2):
    states = np.zeros((N + 1, 4))
    states[:, 0] = 100.0 + agent
    return DisturbanceSequence(agent_id=agent, k_start=k_start, t_dist=k_start * dt, t_inf=t_inf,
                               segments=[], states=states)


def predictions(ids, N):
    return {a: np.column_stack([np.full(N + 1, 10.0 * (a + 1)), np.zeros(N + 1), np.zeros(N + 1),
                                np.full(N + 1, 20.0)]) for a in ids}


def by_depth(nodes):
    out = {}
    for n in nodes:
        out.setdefault(n.k, []).append(n)
    return out


# ------------------------------------------------------------------ examples
def test_prune_examples():
    a, b = seq(0, 1, 1.0), seq(1, 1, 2.0)
    assert prune(DisturbanceTree([b, a]), 1, 0.25).sequences == [a]
    c, d = seq(0, 5, 2.0), seq(1, 1, 2.0)
    assert [s.cost(0.25) for s in (c, d)] == pytest.approx([1.75, 1.95])
    assert prune(DisturbanceTree([d, c]), 1, 0.25).sequences == [c]
    w = DisturbanceTree([a, b])
    assert prune(w, 5, 0.25).sequences == [a, b]


def test_prune_is_stable_and_idempotent():
    w = DisturbanceTree([seq(i, 1, 1.0) for i in range(4)] + [seq(9, 0, 0.8)])
    once = prune(w, 3, 0.25)
    assert [s.agent_id for s in once] == [9, 0, 1]
    assert prune(once, 3, 0.25).sequences == once.sequences


def test_generate_disturbance_tree():
    assert len(generate_disturbance_tree([], lambda a: seq(a, 0, 1.0))) == 0
    w = generate_disturbance_tree([0, 1], lambda a: seq(a, 0, 1.0) if a == 0 else None)
    assert [s.agent_id for s in w] == [0]


def test_weight_examples():
    nodes = [TreeNode(0, None, 0), TreeNode(1, 0, 1, gamma=1.0), TreeNode(2, 0, 1, gamma=0.5)]
    b = [n.beta for n in assign_weights(nodes)]
    assert b == pytest.approx([1, 2 / 3, 1 / 3])
    nodes.append(TreeNode(3, 0, 1, gamma=0.5))
    b = [n.beta for n in assign_weights(nodes)]
    assert b == pytest.approx([1, 1 / 2, 1 / 4, 1 / 4])
    chain = tree_skeleton(6, [])
    assert all(n.beta == 1.0 for n in chain)


def test_assemble_examples():
    N = 10
    preds = predictions([0, 1], N)
    t = assemble_scenario_tree(N, DisturbanceTree(), preds)
    assert t.size == N + 1 and t.nominal_path() == list(range(N + 1))
    # branch proper starts one sample after the split node
    t = assemble_scenario_tree(N, DisturbanceTree([seq(0, 0, 1.0)]), preds)
    assert t.size == N + 1 + (N - 1)
    first = [n for n in t.nodes if n.branch_id == 1][0]
    assert first.parent_id == 1 and first.k == 2
    t = assemble_scenario_tree(N, DisturbanceTree([seq(0, 3, 1.0)]), preds)
    assert t.size == N + 1 + (N - 4)
    # the disturbed agent follows its sequence on the branch, the others stay nominal
    node = [n for n in t.nodes if n.branch_id == 1][0]
    assert t.obstacles[node.id][0, 0] == 100.0
    assert t.obstacles[node.id][1, 0] == 20.0
    # the shared split node carries both the nominal and the disturbed pose
    assert len(t.obstacles[4]) == 3


def test_extract_nominal():
    N = 5
    t = assemble_scenario_tree(N, DisturbanceTree([seq(0, 1, 1.0, N=N)]), predictions([0], N))
    with pytest.raises(MalformedTree):
        extract_nominal(t)
    t.inputs = np.arange(2 * t.size, dtype=float).reshape(-1, 2)
    U = extract_nominal(t)
    assert np.array_equal(U, t.inputs[:N])
    bad = TrajectoryTree(nodes=[TreeNode(0, None, 0)], obstacles=[np.zeros((0, 3))], obstacle_ids=[[]],
                         inputs=np.zeros((1, 2)))
    with pytest.raises(MalformedTree):
        extract_nominal(bad)


def test_tree_dumps():
    N = 4
    t = assemble_scenario_tree(N, DisturbanceTree([seq(0, 0, 1.0, N=N)]), predictions([0], N))
    d = t.to_dict()
    assert len(d["nodes"]) == t.size
    text = t.dump_text()
    assert text.count("k=") == t.size and "branch=1" in text


# ---------------------------------------------------------------- tree size
@pytest.mark.parametrize("n_agents", range(1, 7))
def test_tree_size_law(n_agents):
    N = 25
    w = DisturbanceTree([seq(a, 0, 1.0, N=N) for a in range(n_agents)])
    t = assemble_scenario_tree(N, w, predictions(range(n_agents), N))
    assert t.size == (N + 1) + n_agents * (N - 1) == node_count_bound(N, n_agents)


def build_times(agent_counts, N=25, reps=15):
    """Best-of-``reps`` assemble+transcribe time per agent count.

    Repetitions cycle through all counts so slow drifts of the machine hit
    every count alike.
    """
    cases = []
    for n in agent_counts:
        w = DisturbanceTree([seq(a, 0, 1.0, N=N) for a in range(n)])
        cases.append((w, predictions(range(n), N)))
    params = OcpParams(N=N)
    x0 = np.array([0, 0, 0, 25.0, 0])
    best = np.full(len(cases), math.inf)
    for _ in range(reps):
        for i, (w, preds) in enumerate(cases):
            t0 = time.perf_counter()
            t = assemble_scenario_tree(N, w, preds)
            build_branching(params, x0, t)
            best[i] = min(best[i], time.perf_counter() - t0)
    return best


def test_build_time_is_linear_in_agents():
    na = np.arange(1, 7)
    ts = build_times([int(n) for n in na], reps=25)
    slope, icpt = np.polyfit(na, ts, 1)
    quad = np.polyfit(na, ts, 2)[0]
    assert slope > 0
    # six agents cost less than six single-agent builds, and the quadratic
    # term stays below the linear one over the whole range
    assert ts[-1] < 6 * ts[0]
    assert abs(quad) * 36 < slope * 6


# -------------------------------------------------------- weight rules
@st.composite
def random_trees(draw):
    N = draw(st.integers(1, 12))
    n_br = draw(st.integers(0, 6))
    branch_at = [draw(st.integers(0, N - 1)) for _ in range(n_br)]
    nodes = [TreeNode(id=k, parent_id=(k - 1 if k else None), k=k) for k in range(N + 1)]
    for j, b in enumerate(branch_at, start=1):
        prev = b
        for k in range(b + 1, N + 1):
            nid = len(nodes)
            g = draw(st.floats(0.01, 10.0)) if k == b + 1 else 1.0
            nodes.append(TreeNode(id=nid, parent_id=prev, k=k, branch_id=j, gamma=g, nominal=False))
            prev = nid
    return nodes


@settings(max_examples=1000, deadline=None)
@given(random_trees())
def test_weight_principles(nodes):
    w = assign_weights(nodes)
    by_id = {n.id: n for n in w}
    assert w[0].beta == 1.0
    # weights at every time instant sum to one
    for k, group in by_depth(w).items():
        assert abs(sum(n.beta for n in group) - 1.0) <= 1e-12
    kids = {}
    for n in w:
        if n.parent_id is not None:
            kids.setdefault(n.parent_id, []).append(n)
    for pid, ch in kids.items():
        # children split their parent weight in proportion to their odds
        assert abs(sum(c.beta for c in ch) - by_id[pid].beta) <= 1e-12
        tot = sum(c.gamma for c in ch)
        for c in ch:
            assert abs(c.beta - by_id[pid].beta * c.gamma / tot) <= 1e-12


@settings(max_examples=300, deadline=None)
@given(random_trees(), st.data())
def test_adding_a_branch_keeps_relative_weights(nodes, data):
    N = max(n.k for n in nodes)
    before = {n.id: n.beta for n in assign_weights(nodes)}
    anchor = data.draw(st.sampled_from([n for n in nodes if n.k < N]))
    g = data.draw(st.floats(0.01, 10.0))
    grown = list(nodes)
    prev = anchor.id
    for k in range(anchor.k + 1, N + 1):
        nid = len(grown)
        grown.append(TreeNode(id=nid, parent_id=prev, k=k, branch_id=99, gamma=g if prev == anchor.id else 1.0,
                              nominal=False))
        prev = nid
    after = {n.id: n.beta for n in assign_weights(grown)}

    def descendants(i):
        out, stack = [], [i]
        while stack:
            j = stack.pop()
            for n in nodes:
                if n.parent_id == j:
                    out.append(n.id)
                    stack.append(n.id)
        return out

    old = descendants(anchor.id)
    for a in old:
        for b in old:
            assert after[a] / after[b] == pytest.approx(before[a] / before[b], rel=1e-12)


def test_skeleton_rejects_out_of_range_branch():
    with pytest.raises(ValueError):
        tree_skeleton(5, [6])
