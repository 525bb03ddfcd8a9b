"""Dataset, trajectory and config files.

A dataset directory holds ``dataset.jsonl`` (a header record, then one frame
per line), ``gt.tum`` and optionally ``images/*.pgm``. Floats are written with
``repr`` precision so a write/read cycle is exact.
"""
from __future__ import annotations

import json
from dataclasses import fields
from pathlib import Path

import numpy as np

from ..errors import ParseError
from ..geom import RigidTransform
from ..lineflow.image import read_pgm, write_pgm
from .evaluate import Trajectory
from .sim import Dataset, Frame, Scene, SimConfig

__all__ = ["read_dataset", "write_dataset", "read_tum", "write_tum", "read_config", "write_config",
           "parse_config", "read_pgm", "write_pgm"]

DATASET_FILE = "dataset.jsonl"
QUAT_NORM_TOL = 1e-3


# -- dataset --

def _pose(T: RigidTransform | None):
    return None if T is None else {"R": T.R.ravel().tolist(), "t": T.t.tolist()}


def _unpose(d):
    return None if d is None else RigidTransform(np.array(d["R"]).reshape(3, 3), d["t"])


def _config_dict(cfg):
    return {f.name: list(v) if isinstance(v := getattr(cfg, f.name), tuple) else v for f in fields(cfg)}


def _frame_record(f: Frame):
    return {"kind": "frame", "idx": f.idx, "timestamp": f.timestamp, "gt_pose": _pose(f.gt_pose),
            "odom": _pose(f.odom),
            "points": {str(i): np.asarray(p).tolist() for i, p in f.points.items()},
            "lines": {str(i): np.asarray(s).tolist() for i, s in f.lines.items()},
            "line_axes": {str(i): int(a) for i, a in f.line_axes.items()},
            "image_path": f.image_path}


def write_dataset(d: Dataset, out_dir, images=False, image_noise_seed=None):
    """Write ``d`` under ``out_dir``; with ``images`` also rasterize every frame to PGM."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if images:
        from .raster import rasterize
        (out / "images").mkdir(exist_ok=True)
        seed = d.config.seed if image_noise_seed is None else image_noise_seed
        for f in d.frames:
            rel = f"images/{f.idx:06d}.pgm"
            write_pgm(out / rel, rasterize(f, d.scene, d.intrinsics, d.T_cb, seed=seed))
            f.image_path = rel
    header = {"kind": "header", "version": 1, "config": _config_dict(d.config), "T_cb": _pose(d.T_cb),
              "init_pose": _pose(d.init_pose), "r_wm": d.r_wm.ravel().tolist(), "scene": None}
    if d.scene is not None:
        header["scene"] = {"lines": d.scene.lines.tolist(), "line_axes": d.scene.line_axes.tolist(),
                           "points": d.scene.points.tolist()}
    with open(out / DATASET_FILE, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for f in d.frames:
            fh.write(json.dumps(_frame_record(f)) + "\n")
    write_tum(out / "gt.tum", d.gt_trajectory())
    return out


def _sim_config(rec):
    kw = {}
    for f in fields(SimConfig):
        if f.name in rec:
            v = rec[f.name]
            kw[f.name] = tuple(v) if isinstance(v, list) else v
    return SimConfig(**kw)


def read_dataset(path) -> Dataset:
    """Read a dataset directory (or its ``dataset.jsonl``)."""
    path = Path(path)
    if path.is_dir():
        path = path / DATASET_FILE
    header, frames = None, []
    with open(path) as fh:
        for ln, text in enumerate(fh, 1):
            if not text.strip():
                continue
            try:
                rec = json.loads(text.rstrip("\r\n"))
            except json.JSONDecodeError as e:
                raise ParseError(e.msg, ln, e.colno, path) from None
            try:
                if rec.get("kind") == "header":
                    header = rec
                elif rec.get("kind") == "frame":
                    frames.append(_frame(rec))
                else:
                    raise ParseError(f"unknown record kind {rec.get('kind')!r}", ln, 1, path)
            except (KeyError, TypeError, ValueError) as e:
                raise ParseError(f"bad record: {e}", ln, 1, path) from None
            if len(frames) > 1 and frames[-1].timestamp <= frames[-2].timestamp:
                raise ParseError("timestamps must increase", ln, 1, path)
    if header is None:
        raise ParseError("missing header record", 1, 1, path)
    scene = None
    if header.get("scene") is not None:
        s = header["scene"]
        scene = Scene(np.array(s["lines"], dtype=float).reshape(-1, 2, 3), np.array(s["line_axes"], dtype=int),
                      np.array(s["points"], dtype=float).reshape(-1, 3))
        for f in frames:
            if any(i >= len(scene.points) for i in f.points) or any(i >= len(scene.lines) for i in f.lines):
                raise ParseError(f"frame {f.idx} observes a landmark missing from the scene", 1, 1, path)
    return Dataset(_sim_config(header["config"]), _unpose(header["T_cb"]), frames, _unpose(header["init_pose"]),
                   np.array(header["r_wm"], dtype=float).reshape(3, 3), scene)


def _frame(rec):
    return Frame(int(rec["idx"]), float(rec["timestamp"]), _unpose(rec["gt_pose"]), _unpose(rec["odom"]),
                 {int(i): np.array(p, dtype=float) for i, p in rec["points"].items()},
                 {int(i): np.array(s, dtype=float).reshape(2, 2) for i, s in rec["lines"].items()},
                 {int(i): int(a) for i, a in rec["line_axes"].items()}, rec.get("image_path"))


# -- TUM trajectories --

def write_tum(path, traj: Trajectory):
    """``timestamp tx ty tz qx qy qz qw``, nine decimals."""
    with open(path, "w") as fh:
        for t, p, q in zip(traj.timestamps, traj.positions, traj.quats):
            vals = [t, *p, q[1], q[2], q[3], q[0]]
            fh.write(" ".join(f"{v:.9f}" for v in vals) + "\n")


def read_tum(path) -> Trajectory:
    ts, ps, qs = [], [], []
    with open(path) as fh:
        for ln, text in enumerate(fh, 1):
            if not text.strip() or text.lstrip().startswith("#"):
                continue
            cols, vals = [], []
            pos = 0
            for tok in text.split():
                pos = text.index(tok, pos)
                cols.append(pos + 1)
                pos += len(tok)
                vals.append(tok)
            if len(vals) != 8:
                raise ParseError(f"expected 8 fields, got {len(vals)}", ln, 1, path)
            nums = []
            for tok, col in zip(vals, cols):
                try:
                    nums.append(float(tok))
                except ValueError:
                    raise ParseError(f"not a number: {tok!r}", ln, col, path) from None
            q = np.array([nums[7], nums[4], nums[5], nums[6]])
            if abs(np.linalg.norm(q) - 1.0) > QUAT_NORM_TOL:
                raise ParseError(f"quaternion norm {np.linalg.norm(q):.6f} is not 1", ln, cols[4], path)
            if ts and nums[0] <= ts[-1]:
                raise ParseError("timestamps must increase", ln, cols[0], path)
            ts.append(nums[0])
            ps.append(nums[1:4])
            qs.append(q)
    return Trajectory(np.array(ts), np.array(ps).reshape(-1, 3), np.array(qs).reshape(-1, 4))


# -- key = value configs --

def _parse_value(text, default):
    if isinstance(default, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        return tuple(float(v) for v in text.split(","))
    return text


def parse_config(text, cls, path=None):
    """Build dataclass ``cls`` from ``key = value`` lines; ``#`` starts a comment."""
    defaults = cls()
    names = {f.name for f in fields(cls)}
    kw = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        if "=" not in line:
            raise ParseError("expected key = value", ln, len(line) - len(line.lstrip()) + 1, path)
        key, val = line.split("=", 1)
        k = key.strip()
        if k not in names:
            raise ParseError(f"unknown key {k!r}", ln, raw.index(k) + 1 if k else 1, path)
        v = val.strip()
        col = len(key) + 2 + (len(val) - len(val.lstrip()))
        try:
            kw[k] = _parse_value(v, getattr(defaults, k))
        except ValueError as e:
            raise ParseError(str(e), ln, col, path) from None
    return cls(**kw)


def read_config(path, cls):
    return parse_config(Path(path).read_text(), cls, path)


def write_config(path, cfg):
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, (tuple, list)):
            v = ", ".join(repr(float(x)) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif not isinstance(v, (int, float, str)):
            continue
        lines.append(f"{f.name} = {v}")
    Path(path).write_text("\n".join(lines) + "\n")
