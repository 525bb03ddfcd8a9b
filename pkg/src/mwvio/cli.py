"""Command line entry point.

Exit codes: 0 success, 1 usage, 2 data error, 3 solver or check failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigInvalid, NoOverlap, ParseError, SolverDiverged

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER = 0, 1, 2, 3

log = logging.getLogger("mwvio")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _intrinsics(args):
    from .camera import Intrinsics
    return Intrinsics(args.focal, args.focal, (args.width - 1) / 2.0, (args.height - 1) / 2.0,
                      args.width, args.height)


def _add_camera(p):
    p.add_argument("--focal", type=float, default=400.0)
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=480)


# -- subcommands --

def cmd_simulate(args):
    from .pipeline.dataio import read_config, write_dataset
    from .pipeline.sim import SimConfig, simulate_scene
    cfg = read_config(args.config, SimConfig) if args.config else SimConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    d = simulate_scene(cfg)
    write_dataset(d, args.out, images=args.images)
    print(f"wrote {len(d.frames)} frames to {args.out}")
    return EXIT_OK


def cmd_run(args):
    from .pipeline.dataio import read_config, read_dataset, write_tum
    from .pipeline.run import RunConfig, run_vio
    cfg = read_config(args.config, RunConfig) if args.config else RunConfig()
    if args.pixels:
        cfg.pixels = True
    if args.no_manhattan:
        cfg.use_manhattan = False
    if args.no_struct_lines:
        cfg.use_struct_lines = False
    data = Path(args.data)
    d = read_dataset(data)
    traj, diags = run_vio(d, cfg, data_dir=data if data.is_dir() else data.parent)
    write_tum(args.out, traj)
    if args.report:
        cases = {}
        for x in diags:
            cases[x["mf_case"]] = cases.get(x["mf_case"], 0) + 1
        report = {"frames": len(diags), "mf_cases": cases,
                  "verified": sum(x["verified"] for x in diags),
                  "aligned_at": next((x["frame"] for x in diags if x["aligned"]), None),
                  "diagnostics": diags}
        Path(args.report).write_text(json.dumps(report, indent=1) + "\n")
    print(f"wrote {len(traj.timestamps)} poses to {args.out}")
    return EXIT_OK


def cmd_evaluate(args):
    from .pipeline.dataio import read_tum
    from .pipeline.evaluate import ate_rmse
    ate = ate_rmse(read_tum(args.est), read_tum(args.gt))
    print(json.dumps({"ate_rmse": ate}) if args.json else f"ate_rmse {ate:.6f} m")
    return EXIT_OK


def cmd_track_lines(args):
    from .lineflow import DetectorParams, build_pyramid, detect_lines, read_pgm, track_lines
    from .lineflow.segment import LineSegment2D
    prev, cur = read_pgm(args.prev), read_pgm(args.cur)
    if (prev.width, prev.height) != (cur.width, cur.height):
        raise ParseError("images differ in size", 1, 1, args.cur)
    if args.lines:
        lines = [LineSegment2D(r["start"], r["end"], int(r.get("id", k)))
                 for k, r in enumerate(_read_jsonl(args.lines))]
    else:
        lines = [s.copy(id=k) for k, s in enumerate(detect_lines(prev, DetectorParams(target_count=args.max_lines)))]
    out = track_lines(build_pyramid(prev, args.levels), build_pyramid(cur, args.levels), lines)
    with open(args.out, "w") as fh:
        for seg, g, status in out:
            fh.write(json.dumps({"id": seg.id, "start": seg.start.tolist(), "end": seg.end.tolist(),
                                 "g": g.as_array().tolist(), "status": status.value}) + "\n")
    print(f"tracked {sum(s.value == 'Tracked' for _, _, s in out)} of {len(out)} lines")
    return EXIT_OK


def _read_jsonl(path):
    recs = []
    with open(path) as fh:
        for ln, text in enumerate(fh, 1):
            if not text.strip():
                continue
            try:
                recs.append(json.loads(text))
            except json.JSONDecodeError as e:
                raise ParseError(e.msg, ln, e.colno, path) from None
    return recs


def cmd_detect_mf(args):
    from .lineflow.segment import LineSegment2D
    from .manhattan import detect_mf_2line
    try:
        lines = [LineSegment2D(r["start"], r["end"], int(r.get("id", k)))
                 for k, r in enumerate(_read_jsonl(args.lines))]
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"bad line record: {e}", 1, 1, args.lines) from None
    mf = detect_mf_2line(lines, _intrinsics(args), rng=np.random.default_rng(args.seed))
    if mf is None:
        log.error("no Manhattan frame found")
        return EXIT_SOLVER
    Path(args.out).write_text(json.dumps({"r_cm": mf.r_cm.ravel().tolist(),
                                          "support": [int(s) for s in mf.support]}) + "\n")
    print(f"support per axis {list(mf.support)}")
    return EXIT_OK


def cmd_check_jacobians(args):
    from .jacobians import TOLERANCE, jacobian_report
    rep = jacobian_report(args.trials, args.seed)
    print(f"{'factor':<10} {'max rel err':>12}  result")
    for name, err in rep.items():
        print(f"{name:<10} {err:>12.3e}  {'ok' if err < TOLERANCE else 'FAIL'}")
    return EXIT_OK if all(e < TOLERANCE for e in rep.values()) else EXIT_SOLVER


# -- parser --

def build_parser():
    p = _Parser(prog="mwvio", description="Manhattan-world visual odometry core")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate a synthetic dataset")
    s.add_argument("--config", help="key = value simulator config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--images", action="store_true", help="also rasterize every frame to PGM")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("run", help="estimate a trajectory")
    s.add_argument("--data", required=True)
    s.add_argument("--config", help="key = value run config")
    s.add_argument("--pixels", action="store_true", help="detect and track lines on images")
    s.add_argument("--no-manhattan", action="store_true")
    s.add_argument("--no-struct-lines", action="store_true")
    s.add_argument("--out", required=True)
    s.add_argument("--report")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("evaluate", help="ATE RMSE between two TUM trajectories")
    s.add_argument("--est", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("track-lines", help="line optical flow between two PGM images")
    s.add_argument("--prev", required=True)
    s.add_argument("--cur", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--lines", help="JSON-Lines segments to track (default: detect in --prev)")
    s.add_argument("--levels", type=int, default=3)
    s.add_argument("--max-lines", type=int, default=100)
    s.set_defaults(func=cmd_track_lines)

    s = sub.add_parser("detect-mf", help="Manhattan frame from image line segments")
    s.add_argument("--lines", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    _add_camera(s)
    s.set_defaults(func=cmd_detect_mf)

    s = sub.add_parser("check-jacobians", help="finite-difference audit of factor Jacobians")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trials", type=int, default=100)
    s.set_defaults(func=cmd_check_jacobians)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ParseError, ConfigInvalid, NoOverlap, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except SolverDiverged as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
