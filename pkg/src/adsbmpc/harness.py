"""Closed-loop episodes, batches and their on-disk outputs."""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .planner import PlanStep, make_planner
from .sim.config import ScenarioConfig
from .sim.world import World, generate_highway_scenario, generate_merge_scenario, reward, step_world


@dataclass
class StepRecord:
    """World state right after one physics step."""

    t: float
    ego: np.ndarray
    u: np.ndarray            # input held during the step
    targets: np.ndarray      # (n, 5): id, X, Y, psi, v
    plan_index: int          # planner step that produced ``u``
    reward: float


@dataclass
class EpisodeTrace:
    planner: str
    seed: int
    density: float | None
    physics_dt: float
    initial: World
    records: list = field(default_factory=list)
    plans: list = field(default_factory=list)          # PlanStep per planner step
    plan_times: list = field(default_factory=list)     # world time at each planner call
    plan_rewards: list = field(default_factory=list)   # reward at the end of each planner step
    max_plan_steps: int = 0
    crashed: bool = False
    crash_reason: str = ""
    crash_time: float | None = None

    @property
    def accumulated_reward(self) -> float:
        return float(sum(self.plan_rewards))

    @property
    def reward_fraction(self) -> float:
        """Accumulated reward over the best possible (1.0 at every planner step of a full episode)."""
        return self.accumulated_reward / self.max_plan_steps if self.max_plan_steps else 0.0

    @property
    def fallbacks(self) -> int:
        return sum(1 for p in self.plans if p.fallback)

    @property
    def overruns(self) -> int:
        return sum(1 for p in self.plans if p.overrun)

    def ego_states(self) -> np.ndarray:
        return np.array([r.ego for r in self.records])

    def inputs(self) -> np.ndarray:
        return np.array([r.u for r in self.records])

    def summary(self) -> dict:
        return {"planner": self.planner, "seed": self.seed, "density": self.density,
                "crashed": self.crashed, "crash_reason": self.crash_reason, "crash_time": self.crash_time,
                "duration": self.records[-1].t if self.records else 0.0,
                "planner_steps": len(self.plans), "fallbacks": self.fallbacks, "overruns": self.overruns,
                "accumulated_reward": self.accumulated_reward,
                "reward_fraction": self.reward_fraction}


@dataclass
class BatchSummary:
    planner: str
    density: float | None
    episodes: int
    successes: int
    reward_pct: float
    seeds: list
    step_time_median: float = field(default=math.nan, compare=False)
    step_time_p95: float = field(default=math.nan, compare=False)

    def to_dict(self, timing=False) -> dict:
        d = {"planner": self.planner, "density": self.density, "episodes": self.episodes,
             "successes": self.successes, "reward_pct": self.reward_pct, "seeds": list(self.seeds)}
        if timing:
            d.update(step_time_median=self.step_time_median, step_time_p95=self.step_time_p95)
        return d


def make_world(cfg: ScenarioConfig, seed: int, density: float | None = None) -> World:
    if cfg.kind == "merge":
        return generate_merge_scenario(cfg)
    return generate_highway_scenario(cfg, seed, density)


def _targets_array(world: World) -> np.ndarray:
    return np.array([[tv.id, tv.X, tv.Y, tv.psi, tv.v] for tv in world.targets], float).reshape(-1, 5)


def _reward(world: World, cfg: ScenarioConfig) -> float:
    n = len(world.lane_centers)
    return reward(world.crashed, world.lane_of(world.ego[1]), float(world.ego[3]), cfg.reward, n_lanes=max(n, 2))


def run_episode(cfg: ScenarioConfig, planner: str, seed: int = 0, density: float | None = None,
                deadline_ms: float | None = None) -> EpisodeTrace:
    """Plan at every MPC sample and hold the input over the physics steps in between."""
    m = cfg.mpc
    ratio = int(round(m.dt / m.physics_dt))
    if ratio < 1 or abs(ratio * m.physics_dt - m.dt) > 1e-9:
        raise ValueError("the MPC sample time must be a multiple of the physics step")
    if cfg.kind == "highway" and density is None:
        density = cfg.traffic.density
    world = make_world(cfg, seed, density)
    pl = make_planner(planner, cfg, deadline_ms)
    n_plans = int(round(cfg.episode_length / m.dt))
    tr = EpisodeTrace(planner=planner, seed=seed, density=density if cfg.kind == "highway" else None,
                      physics_dt=m.physics_dt, initial=world.copy(), max_plan_steps=n_plans)
    for i in range(n_plans):
        tr.plan_times.append(world.t)
        st: PlanStep = pl.plan(world)
        tr.plans.append(st)
        for _ in range(ratio):
            # integer step count keeps timestamps free of accumulated rounding
            step_world(world, st.u, m.physics_dt)
            world.t = (len(tr.records) + 1) * m.physics_dt
            tr.records.append(StepRecord(t=world.t, ego=world.ego.copy(), u=np.asarray(st.u, float).copy(),
                                         targets=_targets_array(world), plan_index=i,
                                         reward=_reward(world, cfg)))
            if world.crashed:
                break
        tr.plan_rewards.append(_reward(world, cfg))
        if world.crashed:
            tr.crashed, tr.crash_reason, tr.crash_time = True, world.crash_reason, world.t
            break
    return tr


def replay(trace: EpisodeTrace) -> np.ndarray:
    """Re-simulate the logged inputs from the logged initial world; returns ego states."""
    world = trace.initial.copy()
    out = []
    for i, r in enumerate(trace.records):
        step_world(world, r.u, trace.physics_dt)
        world.t = (i + 1) * trace.physics_dt
        out.append(world.ego.copy())
    return np.array(out)


def _episode_job(args):
    cfg, planner, seed, density, deadline_ms = args
    return run_episode(cfg, planner, seed, density, deadline_ms)


def summarize(traces: list, planner: str, density=None) -> BatchSummary:
    times = [p.solve_time for t in traces for p in t.plans]
    n = len(traces)
    return BatchSummary(planner=planner, density=density, episodes=n,
                        successes=sum(1 for t in traces if not t.crashed),
                        reward_pct=100.0 * float(np.mean([t.reward_fraction for t in traces])) if n else 0.0,
                        seeds=[t.seed for t in traces],
                        step_time_median=float(np.median(times)) if times else math.nan,
                        step_time_p95=float(np.percentile(times, 95)) if times else math.nan)


def run_batch(cfg: ScenarioConfig, planner: str, episodes: int, seed0: int = 0, density: float | None = None,
              deadline_ms: float | None = None, jobs: int = 1, on_episode=None):
    """Episodes with seeds ``seed0 .. seed0+episodes-1``; returns (BatchSummary, traces)."""
    if episodes < 1:
        raise ValueError("episodes must be at least 1")
    if cfg.kind == "highway" and density is None:
        density = cfg.traffic.density
    args = [(cfg, planner, seed0 + i, density, deadline_ms) for i in range(episodes)]
    traces = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            for tr in ex.map(_episode_job, args):
                traces.append(tr)
                if on_episode:
                    on_episode(tr)
    else:
        for a in args:
            tr = _episode_job(a)
            traces.append(tr)
            if on_episode:
                on_episode(tr)
    return summarize(traces, planner, density if cfg.kind == "highway" else None), traces


# ---------------------------------------------------------------- outputs
def trace_columns(trace: EpisodeTrace) -> list:
    nx = trace.initial.ego.shape[0]
    ego = ["X", "Y", "psi", "v", "delta"][:nx]
    cols = ["t"] + [f"ego_{c}" for c in ego] + ["u0", "u1", "status", "kkt", "nodes", "fallback", "reward"]
    for tv in trace.initial.targets:
        cols += [f"tv{tv.id}_{c}" for c in ("X", "Y", "psi", "v")]
    return cols


def _fmt(x) -> str:
    return repr(float(x))


def _write_trace(path: Path, trace: EpisodeTrace):
    ids = [tv.id for tv in trace.initial.targets]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(trace_columns(trace))
        for r in trace.records:
            p = trace.plans[r.plan_index]
            row = [_fmt(r.t)] + [_fmt(x) for x in r.ego] + [_fmt(r.u[0]), _fmt(r.u[1]), p.status,
                                                             _fmt(p.kkt), p.nodes, int(p.fallback),
                                                             _fmt(r.reward)]
            by_id = {int(a[0]): a for a in r.targets}
            for i in ids:
                row += [_fmt(x) for x in by_id[i][1:]]
            w.writerow(row)


def _write_series(path: Path, trace: EpisodeTrace, period: float):
    """Positions and speeds sampled every ``period`` seconds, starting at t = 0."""
    every = int(round(period / trace.physics_dt))
    ids = [tv.id for tv in trace.initial.targets]
    rows = [(0.0, trace.initial.ego, _targets_array(trace.initial))]
    for i, r in enumerate(trace.records, start=1):
        if i % every == 0:
            rows.append((r.t, r.ego, r.targets))
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "ego_X", "ego_Y", "ego_v"] + [f"tv{i}_{c}" for i in ids for c in ("X", "Y", "v")])
        for t, ego, tg in rows:
            by_id = {int(a[0]): a for a in tg}
            w.writerow([_fmt(t), _fmt(ego[0]), _fmt(ego[1]), _fmt(ego[3])]
                       + [_fmt(by_id[i][j]) for i in ids for j in (1, 2, 4)])


def _name(trace: EpisodeTrace) -> str:
    d = "" if trace.density is None else f"_d{trace.density:g}"
    return f"{trace.planner}{d}_seed{trace.seed}"


def emit_outputs(traces: list, summary: BatchSummary, out_dir, series_period: float = 0.2) -> list:
    """Write traces, plot series and the batch summary; returns the written paths."""
    out = Path(out_dir)
    written = []
    try:
        (out / "traces").mkdir(parents=True, exist_ok=True)
        (out / "series").mkdir(parents=True, exist_ok=True)
        for tr in traces:
            p = out / "traces" / f"{_name(tr)}.csv"
            _write_trace(p, tr)
            q = out / "series" / f"{_name(tr)}.csv"
            _write_series(q, tr, series_period)
            written += [p, q]
        p = out / "summary.json"
        doc = {"summary": summary.to_dict(), "episodes": [t.summary() for t in traces]}
        p.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        written.append(p)
        # wall-clock numbers live apart so that every other file is reproducible
        p = out / "timing.json"
        p.write_text(json.dumps({"step_time_median": summary.step_time_median,
                                 "step_time_p95": summary.step_time_p95}, indent=2) + "\n")
        written.append(p)
    except OSError as exc:
        raise OSError(f"cannot write outputs under {os.fspath(out)}: {exc}") from exc
    return written
