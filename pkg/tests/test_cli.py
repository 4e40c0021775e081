import json
import logging
import math

import numpy as np
import pytest

from convexflow.cli import main
from convexflow.convex_body import cube_points, fibonacci_sphere, write_points
from convexflow.discretization import icosphere
from convexflow.ricci_flow import TRACE_COLUMNS, read_checkpoint


@pytest.fixture
def cube_file(tmp_path):
    p = tmp_path / "cube.txt"
    write_points(p, cube_points())
    return p


def _csv_values(text):
    return [float(line.split(",")[2]) for line in text.splitlines()[1:]]


def test_ingest(tmp_path, cube_file, capsys):
    assert main(["ingest", str(cube_file), "-o", str(tmp_path / "hull.txt")]) == 0
    assert "vertices 8 " in capsys.readouterr().out
    flat = tmp_path / "flat.txt"
    write_points(flat, np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0.0]]))
    assert main(["ingest", str(flat), "-o", str(tmp_path / "x.txt")]) == 2
    assert "degenerate input" in capsys.readouterr().err


def test_ingest_ball_sample(tmp_path, capsys):
    p = tmp_path / "ball.txt"
    write_points(p, fibonacci_sphere(2000))
    assert main(["ingest", str(p), "-o", str(tmp_path / "hull.txt")]) == 0
    r = float(capsys.readouterr().out.split("inradius")[1])
    assert 0.99 < r < 1.0


def test_smooth(tmp_path, cube_file, capsys):
    out = tmp_path / "field.txt"
    assert main(["smooth", str(cube_file), "--lmax", "12", "--epsilon", "0.1", "-o", str(out)]) == 0
    assert "margin" in capsys.readouterr().out
    assert out.read_text().startswith("# config ")


def test_distance_on_hull(tmp_path, cube_file, capsys):
    assert main(["ingest", str(cube_file), "-o", str(tmp_path / "hull.txt")]) == 0
    capsys.readouterr()
    args = ["distance", str(tmp_path / "hull.txt"),
            "--pair", "0.5:0.5:0.5,-0.5:-0.5:-0.5", "--pair", "3,3", "--pair", "0.5:0:0,0:0.5:0"]
    assert main(args) == 0
    vals = _csv_values(capsys.readouterr().out)
    assert vals[0] == pytest.approx(math.sqrt(5), rel=1e-12)
    assert vals[1] == 0.0
    assert vals[2] == pytest.approx(1.0, rel=1e-12)


def test_flow_resume_and_sphere_distance(tmp_path, capsys):
    full, part = tmp_path / "full", tmp_path / "part"
    base = ["flow", "ball:1", "--level", "4", "--t-target", "0.05"]
    assert main(base + ["-o", str(full)]) == 0
    assert main(base + ["-o", str(part), "--steps", "10"]) == 0
    assert main(["flow", "--resume", str(part / "checkpoint.txt"), "--level", "4",
                 "-o", str(part)]) == 0
    a, _ = read_checkpoint(full / "checkpoint.txt")
    b, _ = read_checkpoint(part / "checkpoint.txt")
    assert a.time == b.time == 0.05
    np.testing.assert_array_equal(a.mesh.conformal, b.mesh.conformal)

    # antipodal distance on the unflowed round sphere
    z = tmp_path / "zero"
    assert main(["flow", "ball:1", "--level", "5", "--t-target", "0.01", "--steps", "0",
                 "-o", str(z)]) == 0
    d = icosphere(5).directions
    anti = int(np.argmin(d @ d[0]))
    capsys.readouterr()
    assert main(["distance", str(z / "checkpoint.txt"), "--pair", f"0,{anti}", "--pair", "7,7"]) == 0
    vals = _csv_values(capsys.readouterr().out)
    assert vals[0] == pytest.approx(math.pi, rel=0.01)
    assert vals[1] == 0.0


def test_flow_area_law_in_trace(tmp_path):
    assert main(["flow", "ball:1", "--level", "4", "--t-target", "0.1", "-o", str(tmp_path)]) == 0
    rows = [line.split(",") for line in (tmp_path / "trace.csv").read_text().splitlines()
            if not line.startswith(("#", "time"))]
    t = np.array([float(r[0]) for r in rows])
    area = np.array([float(r[TRACE_COLUMNS.index("area")]) for r in rows])
    assert np.abs(area - (area[0] - 8 * math.pi * t)).max() / area[0] < 1e-3


def test_flow_logs_rejection_at_cfl_one(tmp_path, cube_file, caplog, capsys):
    with caplog.at_level(logging.INFO, logger="convexflow"):
        code = main(["flow", str(cube_file), "--level", "4", "--cfl", "1.0", "--t-fraction", "0.5",
                     "-o", str(tmp_path), "-v"])
    assert code == 0
    assert any("rejected" in r.message for r in caplog.records)
    assert "rejected steps" in capsys.readouterr().out


def test_verify_ball_exit_zero_and_deterministic(tmp_path):
    cfg = tmp_path / "ball.cfg"
    cfg.write_text("input = ball:1\nlevel = 4\nlmax = 8\nepsilons = 0.2, 0.1\nt_fraction = 0.3\n"
                   "panel_size = 4\nn_samples = 5\n")
    outs = [tmp_path / "r1", tmp_path / "r2"]
    for o in outs:
        assert main(["verify", "--config", str(cfg), "-o", str(o)]) == 0
    for name in ("report.json", "trace_eps0.2.csv", "trace_eps0.1.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    doc = json.loads((outs[0] / "report.json").read_text())
    assert doc["all_pass"] is True and len(doc["config_hash"]) == 16


def test_verify_traces_fault_and_mismatch(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["flow", "ball:1", "--level", "3", "--t-target", "0.05", "-o", str(a)]) == 0
    assert main(["verify", "--traces", str(a / "trace.csv"), "-o", str(tmp_path / "ok")]) == 0
    lines = (a / "trace.csv").read_text().splitlines()
    cols = lines[-1].split(",")
    cols[TRACE_COLUMNS.index("area")] = str(float(cols[TRACE_COLUMNS.index("area")]) * 1.1)
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(lines[:-1] + [",".join(cols)]) + "\n")
    assert main(["verify", "--traces", str(bad), "-o", str(tmp_path / "v")]) == 1
    report = json.loads((tmp_path / "v" / "report.json").read_text())
    assert {c["name"] for c in report["checks"] if c["verdict"] == "fail"} == {"bad.area_law"}
    assert main(["flow", "ball:1", "--level", "3", "--cfl", "0.05", "--t-target", "0.05",
                 "-o", str(b)]) == 0
    code = main(["verify", "--traces", str(a / "trace.csv"), str(b / "trace.csv"),
                 "-o", str(tmp_path / "m")])
    assert code == 2


def test_input_errors(tmp_path, capsys):
    assert main(["flow"]) == 2
    assert main(["verify", "-o", str(tmp_path)]) == 2
    assert main(["ingest", str(tmp_path / "missing.txt"), "-o", str(tmp_path / "x")]) == 2
    assert main(["flow", "ball:1", "--jobs", "0"]) == 2
