"""Track a handful of rasterized lines through a known similarity motion.

Each line is drawn, moved by a random (shift, rotation, length change),
drawn again, and tracked through a 3-level pyramid. The recovered motion
is printed next to the true one.
"""
import numpy as np

from mwvio.lineflow.flow import apply_motion, track_line
from mwvio.lineflow.image import build_pyramid
from mwvio.lineflow.segment import LineSegment2D
from mwvio.pipeline.raster import render_segments

rng = np.random.default_rng(0)
print(f"{'true g':>34}   {'recovered g':>34}   end err px  status")
for _ in range(6):
    a = rng.uniform([150, 120], [350, 300])
    th = rng.uniform(0, np.pi)
    b = a + rng.uniform(80, 200) * np.array([np.cos(th), np.sin(th)])
    g = np.r_[rng.uniform(-12, 12, 2), np.deg2rad(rng.uniform(-4, 4)), rng.uniform(-0.08, 0.08)]
    line = LineSegment2D(a, b)
    moved = apply_motion(line, g)
    prev = build_pyramid(render_segments([(a, b)], rng=rng), 3)
    cur = build_pyramid(render_segments([(moved.start, moved.end)], rng=rng), 3)
    out, gh, status = track_line(prev, cur, line)
    err = max(np.linalg.norm(out.start - moved.start), np.linalg.norm(out.end - moved.end))
    fmt = lambda v: " ".join(f"{x:7.3f}" for x in (v[0], v[1], np.rad2deg(v[2]), v[3]))
    print(f"{fmt(g):>34}   {fmt(gh.as_array()):>34}   {err:10.3f}  {status.value}")
print("columns: shift x, shift y (px), rotation (deg), relative length change")
