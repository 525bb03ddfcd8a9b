import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mwvio.errors import ConfigInvalid, ParseError, TooSmall
from mwvio.lineflow.detect import DetectorParams, detect_lines
from mwvio.lineflow.image import GrayImage, bilinear, build_pyramid, read_pgm, write_pgm
from mwvio.lineflow.maintain import (EXCLUSION_PX, _distance_to_segments, extend_endpoints,
                                     merge_collinear, replenish)
from mwvio.lineflow.segment import LineSegment2D
from mwvio.pipeline.raster import rasterize, render_segments
from mwvio.pipeline.sim import SimConfig, simulate_scene

from simtools import endpoint_error, manhattan_line_image

A, B = np.array([100.0, 100.0]), np.array([300.0, 200.0])


@pytest.fixture(scope="module")
def one_line():
    return render_segments([(A, B)], rng=np.random.default_rng(0))


# -- images and pyramids --

def test_pyramid_sizes():
    pyr = build_pyramid(GrayImage(np.zeros((480, 640))), 3)
    assert [(l.width, l.height) for l in pyr.levels] == [(640, 480), (320, 240), (160, 120)]


def test_pyramid_constant():
    pyr = build_pyramid(GrayImage(np.full((480, 640), 77.0)), 5)
    for lev in pyr.levels:
        assert np.all(lev.data == 77.0)


def test_pyramid_mean_preserved():
    img = GrayImage(np.random.default_rng(0).uniform(0, 255, (480, 640)))
    for lev in build_pyramid(img, 4).levels:
        assert abs(lev.data.mean() - img.data.mean()) < 1e-6


@pytest.mark.parametrize("shape,levels", [((480, 640), 1), ((480, 640), 6), ((31, 100), 2), ((60, 60), 3)])
def test_pyramid_too_small(shape, levels):
    with pytest.raises(TooSmall):
        build_pyramid(GrayImage(np.zeros(shape)), levels)


def test_image_checks():
    with pytest.raises(TooSmall):
        GrayImage.checked(np.zeros((31, 100)))
    with pytest.raises(ValueError):
        GrayImage.checked(np.full((40, 40), 300.0))
    img = GrayImage(np.zeros((40, 40)))
    with pytest.raises(ValueError):
        img.data[0, 0] = 1.0


def test_bilinear_exact_on_planes():
    Y, X = np.mgrid[0:40, 0:50].astype(float)
    a = 3 * X - 2 * Y + 5
    x, y = np.array([1.25, 20.5, 48.9]), np.array([0.5, 13.75, 38.1])
    v, inside = bilinear(a, x, y)
    assert np.allclose(v, 3 * x - 2 * y + 5) and inside.all()
    _, inside = bilinear(a, np.array([-0.1, 49.5]), np.array([3.0, 3.0]))
    assert not inside.any()


def test_pgm_round_trip(tmp_path):
    img = GrayImage(np.random.default_rng(1).integers(0, 256, (37, 53)).astype(float))
    write_pgm(tmp_path / "a.pgm", img)
    back = read_pgm(tmp_path / "a.pgm")
    assert np.array_equal(back.data, img.data)


def test_pgm_comments_and_errors(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n2 2\n255\n\x00\x01\x02\x03")
    assert read_pgm(p).data.tolist() == [[0, 1], [2, 3]]
    p.write_bytes(b"P2\n2 2\n255\n")
    with pytest.raises(ParseError) as e:
        read_pgm(p)
    assert (e.value.line, e.value.column) == (1, 1)
    p.write_bytes(b"P5\n2 x\n255\n")
    with pytest.raises(ParseError) as e:
        read_pgm(p)
    assert (e.value.line, e.value.column) == (2, 3)
    p.write_bytes(b"P5\n4 4\n255\n\x00")
    with pytest.raises(ParseError):
        read_pgm(p)


# -- detection --

def test_detector_params_positive():
    with pytest.raises(ConfigInvalid):
        DetectorParams(min_length=0)


def test_single_line(one_line):
    segs = detect_lines(one_line)
    assert len(segs) == 1
    assert endpoint_error(segs[0], (A, B)) < 3.0


def test_constant_image_empty():
    assert detect_lines(GrayImage(np.full((480, 640), 128.0))) == []


@pytest.mark.parametrize("seed", range(5))
def test_ten_line_scene(seed):
    img, gt = manhattan_line_image(seed)
    segs = detect_lines(img)
    matched = sum(min(endpoint_error(s, g) for s in segs) < 3.0 for g in gt)
    assert matched >= 9


def test_ids_unique_and_lengths():
    img, _ = manhattan_line_image(7)
    segs = detect_lines(img)
    assert sorted(s.id for s in segs) == list(range(len(segs)))
    assert all(s.length >= DetectorParams().min_length for s in segs)


def test_mask_suppresses(one_line):
    mask = np.ones((480, 640), dtype=bool)
    assert detect_lines(one_line, mask=mask) == []


# -- merging --

def test_merge_halves():
    d = (B - A) / np.linalg.norm(B - A)
    mid = 0.5 * (A + B)
    a = LineSegment2D(A, mid - 2.5 * d, id=3)
    b = LineSegment2D(mid + 2.5 * d, B, id=8)
    out = merge_collinear([a, b])
    assert len(out) == 1
    assert endpoint_error(out[0], (A, B)) < 1e-9


def test_merge_keeps_longer_id():
    a = LineSegment2D([0, 0], [50, 0], id=1)
    b = LineSegment2D([55, 0.5], [100, 0.5], id=2)
    c = LineSegment2D([104, 0], [200, 0], id=7)
    out = merge_collinear([a, b, c])
    assert len(out) == 1 and out[0].id == 7


def test_merge_perpendicular_unchanged():
    a = LineSegment2D([0, 0], [50, 0])
    b = LineSegment2D([50, 0], [50, 50])
    assert len(merge_collinear([a, b])) == 2


def _mergeable(a, b):
    if a.length < b.length:
        a, b = b, a
    if abs(a.direction @ b.direction) < np.cos(np.deg2rad(3.0)):
        return False
    ends = np.array([b.start, b.end]) - a.start
    if np.abs(ends @ a.normal).max() >= 2.0:
        return False
    t = ends @ a.direction
    return max(t.min() - a.length, -t.max()) < 10.0


def _random_segments(rng, n=100):
    # clustered around a few directions and offsets so merges actually happen
    out = []
    for k in range(n):
        th = rng.choice([0.0, 0.7, 1.6]) + rng.normal(scale=0.02)
        d = np.array([np.cos(th), np.sin(th)])
        off = rng.choice([0.0, 30.0, 60.0]) + rng.normal(scale=1.0)
        p = off * np.array([-d[1], d[0]]) + rng.uniform(-150, 150) * d
        out.append(LineSegment2D(p, p + rng.uniform(10, 60) * d, id=k))
    return out


def test_merge_postcondition_random():
    segs = merge_collinear(_random_segments(np.random.default_rng(0)))
    assert len(segs) < 100
    for i in range(len(segs)):
        for j in range(i + 1, len(segs)):
            assert not _mergeable(segs[i], segs[j])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_merge_idempotent(seed):
    once = merge_collinear(_random_segments(np.random.default_rng(seed), 40))
    twice = merge_collinear(once)
    assert len(once) == len(twice)
    for a, b in zip(once, twice):
        assert np.allclose(a.start, b.start) and np.allclose(a.end, b.end) and a.id == b.id


# -- endpoint extension --

def test_extend_recovers_shortened(one_line):
    d = (B - A) / np.linalg.norm(B - A)
    out = extend_endpoints(LineSegment2D(A + 10 * d, B - 10 * d), one_line)
    assert (A + 10 * d - out.start) @ d >= 8.0
    assert (out.end - (B - 10 * d)) @ d >= 8.0


def test_extend_saturates(one_line):
    out = extend_endpoints(LineSegment2D(A, B), one_line)
    assert np.linalg.norm(out.start - A) <= 1.0 and np.linalg.norm(out.end - B) <= 1.0


def test_extend_flat_region(one_line):
    line = LineSegment2D([400, 400], [500, 420])
    out = extend_endpoints(line, one_line)
    assert np.array_equal(out.start, line.start) and np.array_equal(out.end, line.end)


# -- replenishment --

@pytest.fixture(scope="module")
def sim_image():
    d = simulate_scene(SimConfig(seed=0, n_frames=12))
    return rasterize(d.frames[10], d.scene, d.intrinsics)


def test_replenish_noop(sim_image):
    p = DetectorParams(target_count=3)
    tracked = [LineSegment2D([10, 10 + 10 * k], [60, 10 + 10 * k], id=k) for k in range(3)]
    assert replenish(tracked, sim_image, p) == tracked


def test_replenish_fills(sim_image):
    p = DetectorParams(target_count=20)
    out = replenish([], sim_image, p)
    assert len(out) == 20
    assert len({s.id for s in out}) == 20


def test_replenish_respects_exclusion(sim_image):
    p = DetectorParams(target_count=30)
    tracked = detect_lines(sim_image, DetectorParams(target_count=15))[:15]
    out = replenish(tracked, sim_image, p)
    new = out[len(tracked):]
    assert new, "expected some new lines"
    assert {s.id for s in new}.isdisjoint(s.id for s in tracked)
    for s in new:
        assert _distance_to_segments(s.samples, tracked).min() >= EXCLUSION_PX
