import json

import numpy as np
import pytest

from mwvio.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from mwvio.lineflow import write_pgm
from mwvio.pipeline.dataio import read_tum
from mwvio.pipeline.raster import rasterize, true_segments
from mwvio.pipeline.sim import SimConfig, simulate_scene


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "sim.cfg").write_text("# short run\nseed = 4\nn_frames = 30\nodom_trans = 0.001\n")
    assert main(["simulate", "--config", str(root / "sim.cfg"), "--out", str(root / "data")]) == EXIT_OK
    return root


def test_simulate_run_evaluate(data, capsys):
    est, rep = data / "est.tum", data / "report.json"
    assert main(["run", "--data", str(data / "data"), "--out", str(est), "--report", str(rep)]) == EXIT_OK
    assert len(read_tum(est).timestamps) == 30
    report = json.loads(rep.read_text())
    assert report["frames"] == 30 and len(report["diagnostics"]) == 30
    assert report["aligned_at"] == 10
    capsys.readouterr()
    assert main(["evaluate", "--est", str(est), "--gt", str(data / "data" / "gt.tum"), "--json"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["ate_rmse"] < 0.05


def test_run_flags(data):
    out = data / "off.tum"
    assert main(["run", "--data", str(data / "data"), "--no-manhattan", "--no-struct-lines",
                 "--out", str(out)]) == EXIT_OK
    assert out.exists()


def test_usage_and_data_errors(data, tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["nonsense"])
    assert e.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as e:
        main(["run", "--data", str(data / "data")])
    assert e.value.code == EXIT_USAGE
    assert main(["run", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "x.tum")]) == EXIT_DATA
    bad = tmp_path / "bad.tum"
    bad.write_text("0.0 1 2 3 0 0 0 0.9\n")
    assert main(["evaluate", "--est", str(bad), "--gt", str(bad)]) == EXIT_DATA
    (tmp_path / "bad.cfg").write_text("seed = 1\nnot_a_key = 3\n")
    assert main(["simulate", "--config", str(tmp_path / "bad.cfg"), "--out", str(tmp_path / "d")]) == EXIT_DATA


def test_track_lines(tmp_path):
    d = simulate_scene(SimConfig(seed=0, n_frames=1000))
    fa, fb = d.frames[0], d.frames[1]
    write_pgm(tmp_path / "a.pgm", rasterize(fa, d.scene, d.intrinsics))
    write_pgm(tmp_path / "b.pgm", rasterize(fb, d.scene, d.intrinsics))
    segs = true_segments(fa, d.scene, d.intrinsics)
    with open(tmp_path / "lines.jsonl", "w") as fh:
        for i, s in segs.items():
            fh.write(json.dumps({"id": i, "start": s[0].tolist(), "end": s[1].tolist()}) + "\n")
    args = ["track-lines", "--prev", str(tmp_path / "a.pgm"), "--cur", str(tmp_path / "b.pgm"),
            "--out", str(tmp_path / "t.jsonl")]
    assert main(args + ["--lines", str(tmp_path / "lines.jsonl")]) == EXIT_OK
    recs = [json.loads(t) for t in (tmp_path / "t.jsonl").read_text().splitlines()]
    assert {r["id"] for r in recs} == set(segs)
    assert all(set(r) == {"id", "start", "end", "g", "status"} and len(r["g"]) == 4 for r in recs)
    assert sum(r["status"] == "Tracked" for r in recs) >= len(recs) // 2
    assert main(args) == EXIT_OK


def test_detect_mf(tmp_path):
    d = simulate_scene(SimConfig(seed=2, n_frames=2))
    f = d.frames[0]
    with open(tmp_path / "lines.jsonl", "w") as fh:
        for i, s in f.lines.items():
            fh.write(json.dumps({"id": i, "start": s[0].tolist(), "end": s[1].tolist()}) + "\n")
    assert main(["detect-mf", "--lines", str(tmp_path / "lines.jsonl"), "--out", str(tmp_path / "mf.json")]) == EXIT_OK
    out = json.loads((tmp_path / "mf.json").read_text())
    R = np.array(out["r_cm"]).reshape(3, 3)
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-9) and len(out["support"]) == 3
    gt = d.T_cb.R @ f.gt_pose.R.T
    # columns agree with the true axes up to order and sign
    assert np.allclose(np.sort(np.abs(gt.T @ R).max(0)), 1.0, atol=1e-3)
    (tmp_path / "bad.jsonl").write_text('{"start": [1, 2]}\n')
    assert main(["detect-mf", "--lines", str(tmp_path / "bad.jsonl"), "--out", str(tmp_path / "m.json")]) == EXIT_DATA


def test_check_jacobians(capsys):
    assert main(["check-jacobians", "--trials", "5"]) == EXIT_OK
    out = capsys.readouterr().out
    for name in ("line", "point", "mf", "struct", "odometry", "direction"):
        assert name in out
    assert "FAIL" not in out
