"""Command line entry point: ``nesywarn run|label|calibrate|metrics``."""
from __future__ import annotations

import argparse
import json
import sys

from .crash_history import CrashDbError
from .narsese import NarseseError
from .world import ScenarioError

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nesywarn", description="Collision-warning simulation and reasoning runs.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario end to end")
    r.add_argument("--scenario", required=True)
    r.add_argument("--knowledge", help="Narsese knowledge file (default: shipped rules)")
    r.add_argument("--profiles", help="JSON detector/sensor profiles overlaying the defaults")
    r.add_argument("--detector", default="yolov4_pretrained")
    r.add_argument("--sensor", default="radar", choices=("radar", "lidar", "depth"))
    r.add_argument("--crash-db")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", required=True)

    lb = sub.add_parser("label", help="write an auto-labelled dataset from a scenario")
    lb.add_argument("--scenario", required=True)
    lb.add_argument("--frames", type=int, required=True)
    lb.add_argument("--out", required=True)

    c = sub.add_parser("calibrate", help="find the box jitter giving a target mean IOU")
    c.add_argument("--profile", required=True)
    c.add_argument("--target-iou", type=float)
    c.add_argument("--samples", type=int, default=20000)

    m = sub.add_parser("metrics", help="recompute the metrics report of a finished run")
    m.add_argument("--trace", required=True)
    return p


def _run(args) -> int:
    from .pipeline import RunConfig, run_scenario

    trace = run_scenario(RunConfig(args.scenario, args.knowledge, args.profiles, args.detector, args.sensor,
                                   args.crash_db, args.seed, args.out))
    print(f"{trace.scenario} seed={trace.seed}: {len(trace.alerts)} alert(s), verdict {trace.verdict}")
    return EXIT_PASS if trace.verdict.passed else EXIT_FAIL


def _label(args) -> int:
    from .pipeline import label_run

    if args.frames < 0:
        raise ValueError("--frames must be non-negative")
    manifest = label_run(args.scenario, args.frames, args.out)
    print(json.dumps(manifest["counts"], sort_keys=True))
    return EXIT_PASS


def _calibrate(args) -> int:
    from .sensors import DETECTORS, calibrate_jitter

    if args.profile not in DETECTORS:
        raise KeyError(f"unknown detector profile {args.profile!r}")
    target = args.target_iou if args.target_iou is not None else DETECTORS[args.profile].iou_target
    if not 0 < target <= 1:
        raise ValueError("--target-iou must lie in (0, 1]")
    print(json.dumps({"profile": args.profile, "target_iou": target,
                      "jitter_frac": calibrate_jitter(target, n=args.samples)}, sort_keys=True))
    return EXIT_PASS


def _metrics(args) -> int:
    from .pipeline import RunTrace, emit_metrics

    print(json.dumps(emit_metrics(RunTrace.load(args.trace)), sort_keys=True, indent=1))
    return EXIT_PASS


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handler = {"run": _run, "label": _label, "calibrate": _calibrate, "metrics": _metrics}[args.command]
    try:
        return handler(args)
    except (ScenarioError, NarseseError, CrashDbError, KeyError, ValueError, OSError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"nesywarn: error: {msg}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
