from __future__ import annotations

import numpy as np
import pytest

from tactflow import io
from tactflow.cli import build_parser, main
from tactflow.force import ForceModel
from tactflow.simulator import ForceSample

COMMANDS = ("gen-pattern", "simulate", "track", "depth", "nhhd", "calibrate", "estimate", "run",
            "sweep", "bench")


def test_all_commands_registered():
    sub = next(a for a in build_parser()._actions if a.dest == "command")
    assert set(COMMANDS) <= set(sub.choices)


@pytest.fixture(scope="module")
def rendered(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-pattern", "--resolution", "300", "--patch-size", "0.3", "--r", "0.3",
                 "--print-area", "30", "-o", str(root / "p.png")]) == 0
    (root / "s.csv").write_text("shape,diameter,cx,cy,depth,sx,sy\n"
                                "sphere,10,0,0,0.5,0,0\nsphere,10,0,0,1.0,0.5,0\n")
    assert main(["simulate", "--pattern", str(root / "p.png"), "--pattern-mm", "30",
                 "--scenario", str(root / "s.csv"), "--raster", "120x100", "--px-per-mm", "5",
                 "-o", str(root / "frames")]) == 0
    return root


def test_gen_pattern_outputs(rendered):
    img = io.read_image(rendered / "p.png")
    assert img.shape == (300, 300, 3)
    assert "constraint_satisfaction_rate" in (rendered / "p.png.manifest.txt").read_text()


def test_chain_track_depth_nhhd_estimate(rendered, tmp_path):
    fr = rendered / "frames"
    assert sorted(p.name for p in fr.glob("frame_*.png")) == [
        "frame_00000.png", "frame_00001.png", "frame_00002.png"]
    seq = tmp_path / "seq"
    seq.mkdir()
    for k in (1, 2):
        (seq / f"f{k}.png").write_bytes((fr / f"frame_{k:05d}.png").read_bytes())
    assert main(["track", "--ref", str(fr / "frame_00000.png"), "--seq", str(seq),
                 "-o", str(tmp_path / "flows")]) == 0
    flo = tmp_path / "flows" / "flow_00002.flo"
    gt = io.read_flow(fr / "gt_00002.flo")
    est = io.read_flow(flo)
    m = est.valid_mask & gt.valid_mask
    assert np.hypot(*(est.u - gt.u)[m].T).mean() < 0.3

    assert main(["depth", "--flow", str(flo), "--frame", str(fr / "frame_00002.png"),
                 "-o", str(tmp_path / "d.dpth")]) == 0
    assert io.read_depth(tmp_path / "d.dpth").shape == (100, 120)
    assert main(["nhhd", "--flow", str(flo), "-o", str(tmp_path / "nh")]) == 0
    parts = [io.read_flow(tmp_path / "nh" / f"{n}.flo").u for n in "drh"]
    assert np.allclose(sum(parts), np.where(est.valid_mask[..., None], est.u, 0), atol=1e-5)

    A = np.zeros((3, 6))
    A[0, 0] = A[1, 0] = A[2, 3] = 1.0
    io.write_model(tmp_path / "m.txt", ForceModel(A))
    assert main(["estimate", "--flow", str(flo), "--depth", str(tmp_path / "d.dpth"),
                 "--model", str(tmp_path / "m.txt"), "--distribution",
                 "-o", str(tmp_path / "F.csv")]) == 0
    assert (tmp_path / "F_f_normal.dpth").exists()
    assert "F_normal" in (tmp_path / "F.csv").read_text()


def test_run_is_bit_deterministic(rendered, tmp_path):
    seq = rendered / "frames"
    for out in ("a", "b"):
        assert main(["run", "--seq", str(seq), "-o", str(tmp_path / out)]) == 0
    for name in ("flow_00001.flo", "depth_00002.dpth"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_calibrate_command(tmp_path):
    rng = np.random.default_rng(0)
    A = np.array([[1.0, 0.1, 0, 0, 0, 0], [0.5, 0, 0, 0.2, 0, 0], [0, 0.3, 0, 1.0, 0, 0]])
    data = []
    for _ in range(50):
        X = rng.normal(size=(6, 3))
        X[:, 2] = X[:, 1]
        X[3:, 0] = 0
        data.append(ForceSample(X, ForceModel(A).predict(X)))
    io.write_dataset(tmp_path / "d.csv", data)
    assert main(["calibrate", "--data", str(tmp_path / "d.csv"), "-o", str(tmp_path / "m.txt")]) == 0
    assert np.allclose(io.read_model(tmp_path / "m.txt").A, A, atol=1e-9)


def test_errors_return_code_2(tmp_path, capsys):
    assert main(["nhhd", "--flow", str(tmp_path / "missing.flo"), "-o", str(tmp_path / "x")]) == 2
    assert "error" in capsys.readouterr().err
    (tmp_path / "tiny.csv").write_text(",".join(io.FEATURE_COLUMNS + io.FORCE_COLUMNS) + "\n")
    assert main(["calibrate", "--data", str(tmp_path / "tiny.csv"), "-o", str(tmp_path / "m")]) == 2


def test_bench_command(capsys):
    assert main(["bench", "--raster", "64x48", "--length", "2", "--stride", "1"]) == 0
    assert "frames_per_s" in capsys.readouterr().out
