"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
The highway batches (criterion 3) dominate the run time.
"""
import math
import time

import numpy as np
import pytest

import test_lattice
import test_obstacles
import test_ocp
import test_scenario_tree
from adsbmpc.harness import run_batch, run_episode
from adsbmpc.sim.config import default_config

HIGHWAY_EPISODES = 30
DENSITIES = (1.0, 1.5, 2.0)
WHITE, GRAY = 0, 1


def passes(fn, *args):
    try:
        fn(*args)
    except AssertionError:
        return False
    return True


# ---------------------------------------------------------------- shared runs
@pytest.fixture(scope="module")
def merge_runs():
    out = {}
    for planner in ("nominal", "adsb"):
        for disturbance in (False, True):
            cfg = default_config("merge")
            cfg.merge.disturbance = disturbance
            t0 = time.perf_counter()
            tr = run_episode(cfg, planner)
            out[planner, disturbance] = (tr, time.perf_counter() - t0, cfg)
    return out


@pytest.fixture(scope="module")
def highway_runs():
    out = {}
    for density in DENSITIES:
        for planner in ("nominal", "adsb"):
            cfg = default_config("highway")
            cfg.adversarial.prune_n = 2
            t0 = time.perf_counter()
            summary, traces = run_batch(cfg, planner, HIGHWAY_EPISODES, seed0=0, density=density)
            out[planner, density] = (summary, traces, time.perf_counter() - t0)
    return out


def entered_main_lane(tr, cfg):
    """Index of the first record with the ego centered closer to the main lane, else None."""
    mid = 0.5 * (cfg.merge.y_entry + cfg.merge.y_main)
    for i, r in enumerate(tr.records):
        if r.ego[1] > mid:
            return i
    return None


def target_x(record, tv_id):
    return float(next(row[1] for row in record.targets if int(row[0]) == tv_id))


# ---------------------------------------------------------------- criterion 1
def test_criterion_1_disturbance_free_merge(merge_runs, criterion):
    lines, ok = [], True
    for planner in ("nominal", "adsb"):
        tr, wall, cfg = merge_runs[planner, False]
        i = entered_main_lane(tr, cfg)
        merged = i is not None and abs(tr.records[-1].ego[1] - cfg.merge.y_main) < cfg.vehicle.w_lane / 2
        ok &= (not tr.crashed) and merged and wall < 60.0
        lines.append(f"{planner}: crashed={tr.crashed} merged={merged} {wall:.1f}s")
    tr, _, cfg = merge_runs["adsb", False]
    i = entered_main_lane(tr, cfg)
    early = [p for p, t in zip(tr.plans, tr.plan_times) if i is None or t < tr.records[i].t]
    white = sum(1 for p in early if any(a == WHITE for a, _, _ in p.sequences))
    gray = sum(1 for p in early if any(a == GRAY for a, _, _ in p.sequences))
    ok &= white >= 1 and gray == 0
    lines.append(f"early-phase steps with a white branch {white}/{len(early)}, with a gray branch {gray}")
    criterion(1, ok, "; ".join(lines))
    assert ok


# ---------------------------------------------------------------- criterion 2
def failure_time(tr, persistent=3):
    """Crash time, or start of the first run of ``persistent`` failed solves."""
    if tr.crashed:
        return tr.crash_time
    run = 0
    for p, t in zip(tr.plans, tr.plan_times):
        run = run + 1 if p.fallback else 0
        if run == persistent:
            return tr.plan_times[tr.plans.index(p) - persistent + 1]
    return None


def test_criterion_2_disturbance_merge(merge_runs, criterion):
    nom, _, cfg = merge_runs["nominal", True]
    ads, wall, _ = merge_runs["adsb", True]
    t_fail = failure_time(nom)
    onset = cfg.merge.t_on
    nominal_fails = t_fail is not None and 1.0 <= t_fail - onset <= 3.0
    i = entered_main_lane(ads, cfg)
    behind = i is not None and ads.records[i].ego[0] < target_x(ads.records[i], WHITE) \
        and ads.records[-1].ego[0] < target_x(ads.records[-1], WHITE)
    adsb_ok = not ads.crashed and behind

    def peak(tr):
        return max(p.u[1] for p, t in zip(tr.plans, tr.plan_times) if t < 1.8)

    lower = peak(ads) < peak(nom)
    ok = nominal_fails and adsb_ok and lower
    criterion(2, ok, f"nominal fails at {t_fail} s after onset {onset} s; adsb crashed={ads.crashed} "
                     f"merged behind white={behind} ({wall:.1f}s); peak accel before 1.8 s "
                     f"adsb {peak(ads):.3f} vs nominal {peak(nom):.3f}")
    assert ok


# ---------------------------------------------------------------- criterion 3
def test_criterion_3_highway_ordering(highway_runs, criterion):
    ok, parts = True, []
    for d in DENSITIES:
        sn, _, tn = highway_runs["nominal", d]
        sa, _, ta = highway_runs["adsb", d]
        ok &= sa.successes >= sn.successes
        if d == 2.0:
            ok &= 100.0 * (sa.successes - sn.successes) / HIGHWAY_EPISODES >= 10.0
        ok &= max(tn, ta) <= 30 * 60
        parts.append(f"d={d:g}: adsb {sa.successes}/{sa.episodes} ({sa.reward_pct:.1f}% reward, {ta / 60:.1f} min) "
                     f"nominal {sn.successes}/{sn.episodes} ({sn.reward_pct:.1f}%, {tn / 60:.1f} min)")
    criterion(3, ok, "; ".join(parts))
    assert ok


# ---------------------------------------------------------------- criterion 4
def test_criterion_4_tree_size_law(criterion):
    sizes = all(passes(test_scenario_tree.test_tree_size_law, n) for n in range(1, 7))
    linear = passes(test_scenario_tree.test_build_time_is_linear_in_agents)
    criterion(4, sizes and linear, f"size law N_a=1..6 {'holds' if sizes else 'violated'}; "
                                   f"build time {'linear' if linear else 'super-linear'}")
    assert sizes and linear


# ---------------------------------------------------------------- criterion 5
def test_criterion_5_weight_principles(criterion):
    ok = passes(test_scenario_tree.test_weight_principles) \
        and passes(test_scenario_tree.test_adding_a_branch_keeps_relative_weights)
    criterion(5, ok, "1000 random trees, tolerance 1e-12")
    assert ok


# ---------------------------------------------------------------- criterion 6
def disturbance_oracle_violates(seq, nom):
    """Re-integrate the sequence in closed form and test the slack-free kernel at the samples."""
    N, dt = nom.N, nom.dt
    y_lo, y_hi = -math.inf, math.inf
    if nom.lanes is not None:
        y_lo = nom.lanes.y_lo + nom.ego_geom.w_lane / 2
        y_hi = nom.lanes.y_hi - nom.ego_geom.w_lane / 2
    tv = nom.agents[seq.agent_id]
    X, Y, v = tv[seq.k_start, 0], tv[seq.k_start, 1], tv[seq.k_start, 3]
    poses = {}
    for t0, t1, a, u_y in seq.segments:
        cuts = sorted({t0, t1} | {j * dt for j in range(N + 1) if t0 < j * dt < t1})
        for a0, a1 in zip(cuts[:-1], cuts[1:]):
            X1, Y1, v = test_lattice.motion(X, Y, v, a, u_y, a1 - a0)
            # the lateral drift is monotone inside a segment, so clamping the end point is exact
            X, Y = X1, min(max(Y1, y_lo), y_hi)
            j = int(round(a1 / dt))
            if abs(a1 - j * dt) < 1e-9:
                poses[j] = (X, Y, math.atan(u_y))
    return any(test_lattice.kernel_violation(nom.ego[k, :3], poses[k], nom.ego_geom, nom.target_geom)
               for k in sorted(poses) if seq.k_start < k <= N)


def test_criterion_6_adversarial_validity(merge_runs, highway_runs, criterion):
    total = valid = 0
    traces = [tr for (planner, _), (tr, _, _) in merge_runs.items() if planner == "adsb"]
    traces += [tr for (planner, _), (_, trs, _) in highway_runs.items() if planner == "adsb" for tr in trs]
    for tr in traces:
        for p in tr.plans:
            for seq in p.disturbances:
                total += 1
                valid += disturbance_oracle_violates(seq, p.prediction)
    ok = total > 0 and valid == total
    criterion(6, ok, f"{valid}/{total} returned sequences replay to a slack-free violation")
    assert ok


# ---------------------------------------------------------------- criterion 7
def test_criterion_7_small_instance_optimality(criterion):
    dij = passes(test_lattice.test_dijkstra_matches_enumeration)
    ast = passes(test_lattice.test_astar_matches_enumeration)
    criterion(7, dij and ast, f"Dijkstra vs enumeration {'match' if dij else 'MISMATCH'} (50); "
                              f"A* vs enumeration {'match' if ast else 'MISMATCH'} (50)")
    assert dij and ast


# ---------------------------------------------------------------- criterion 8
def test_criterion_8_solver_quality(merge_runs, criterion):
    kkt = np.array([p.kkt for key in [(pl, d) for pl in ("nominal", "adsb") for d in (False, True)]
                    for p in merge_runs[key][0].plans])
    frac = float(np.mean(kkt <= 1e-6))
    grads = sum(passes(test_ocp.test_derivatives_match_finite_differences, s) for s in range(20))
    single = passes(test_ocp.test_single_branch_tree_matches_nominal_solution)
    ok = frac >= 0.95 and grads == 20 and single
    criterion(8, ok, f"KKT <= 1e-6 on {100 * frac:.1f}% of {kkt.size} merge steps; "
                     f"derivative checks {grads}/20; single-branch tree matches nominal: {single}")
    assert ok


# ---------------------------------------------------------------- criterion 9
def test_criterion_9_kernel_geometry(criterion):
    cases = [(1.4, 2.7), (1.4, 2.8), (0.5, 1.0), (3.0, 1.0)]
    good = sum(passes(test_obstacles.test_boundary_keeps_distance_from_centerline, D, R) for D, R in cases)
    criterion(9, good == len(cases), f"{good}/{len(cases)} geometries keep >= R - 1e-6 at 1000 directions")
    assert good == len(cases)
