"""``adsbmpc run ...``: batch episodes and write traces plus a summary."""
from __future__ import annotations

import argparse
import logging
import sys

from .harness import emit_outputs, run_batch
from .sim.config import ConfigError, default_config, load_config

log = logging.getLogger("adsbmpc")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="adsbmpc")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a batch of closed-loop episodes")
    r.add_argument("--scenario", choices=("merge", "highway"), required=True)
    r.add_argument("--planner", choices=("nominal", "adsb"), required=True)
    r.add_argument("--episodes", type=int, default=1)
    r.add_argument("--seed", type=int, default=None, help="first seed (default: from the config)")
    r.add_argument("--density", type=float, choices=(1.0, 1.5, 2.0), default=None)
    r.add_argument("--prune-n", type=int, default=None, help="keep this many sequences (negative: all)")
    r.add_argument("--out", required=True)
    r.add_argument("--deadline-ms", type=float, default=None)
    r.add_argument("--config", default=None, help="INI file overriding the scenario defaults")
    r.add_argument("--disturbance", action="store_true", help="merge: scripted acceleration of the white car")
    r.add_argument("--jobs", type=int, default=1, help="episodes run in parallel processes")
    r.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config, args.scenario) if args.config else default_config(args.scenario)
        if args.prune_n is not None:
            cfg.adversarial.prune_n = args.prune_n
        if args.disturbance:
            if cfg.kind != "merge":
                raise ConfigError("--disturbance applies to the merge scenario only")
            cfg.merge.disturbance = True
        if args.density is not None and cfg.kind != "highway":
            raise ConfigError("--density applies to the highway scenario only")
        if args.episodes < 1:
            raise ConfigError("--episodes must be at least 1")
        if args.deadline_ms is not None and args.deadline_ms <= 0:
            raise ConfigError("--deadline-ms must be positive")
    except ConfigError as exc:
        print(f"adsbmpc: configuration error: {exc}", file=sys.stderr)
        return 2
    seed = cfg.seed if args.seed is None else args.seed

    def progress(tr):
        log.info("%s seed %d: %s at %.1f s, reward %.3f", tr.planner, tr.seed,
                 "crash" if tr.crashed else "ok", tr.records[-1].t, tr.reward_fraction)

    summary, traces = run_batch(cfg, args.planner, args.episodes, seed, args.density,
                                args.deadline_ms, jobs=args.jobs, on_episode=progress)
    emit_outputs(traces, summary, args.out)
    print(f"{summary.planner}: {summary.successes}/{summary.episodes} successful, "
          f"reward {summary.reward_pct:.1f}%, step time median {summary.step_time_median:.3f} s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
