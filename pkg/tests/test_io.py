from __future__ import annotations

import numpy as np
import pytest

from tactflow import io
from tactflow.flow import FlowField
from tactflow.force import ForceModel
from tactflow.simulator import ForceSample


def test_flow_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    fl = FlowField(rng.normal(size=(7, 9, 2)).astype(np.float32).astype(np.float64),
                   rng.random((7, 9)) > 0.3)
    io.write_flow(tmp_path / "a.flo", fl)
    back = io.read_flow(tmp_path / "a.flo")
    assert np.array_equal(back.u, fl.u) and np.array_equal(back.valid_mask, fl.valid_mask)
    raw = (tmp_path / "a.flo").read_bytes()
    assert raw[:4] == b"PIEH" and len(raw) == 12 + 7 * 9 * 2 * 4


def test_flow_without_mask_and_bad_files(tmp_path):
    io.write_flow(tmp_path / "a.flo", FlowField(np.ones((3, 4, 2)), np.ones((3, 4), bool)))
    io.mask_path(tmp_path / "a.flo").unlink()
    assert io.read_flow(tmp_path / "a.flo").valid_mask.all()
    (tmp_path / "b.flo").write_bytes(b"XXXX" + bytes(8))
    with pytest.raises(ValueError, match="magic"):
        io.read_flow(tmp_path / "b.flo")
    (tmp_path / "c.flo").write_bytes((tmp_path / "a.flo").read_bytes()[:-4])
    with pytest.raises(ValueError, match="size"):
        io.read_flow(tmp_path / "c.flo")


def test_depth_and_image_roundtrip(tmp_path):
    d = np.linspace(-1, 1, 20).reshape(4, 5)
    io.write_depth(tmp_path / "d.dpth", d)
    assert np.allclose(io.read_depth(tmp_path / "d.dpth"), d, atol=1e-7)
    img = np.random.default_rng(1).integers(0, 256, (6, 8, 3)) / 255.0
    io.write_image(tmp_path / "i.png", img)
    assert np.allclose(io.read_image(tmp_path / "i.png"), img)


def test_heatmap_range():
    hm = io.heatmap(np.array([[0.0, 1.0], [2.0, 3.0]]))
    assert hm.shape == (2, 2, 3) and hm.min() == 0 and hm.max() == 1
    assert np.all(io.heatmap(np.ones((2, 2))) == 0)


def test_config_parsing(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("# header\na = 1  # trailing\n\n b=two \n")
    assert io.read_config(p) == {"a": "1", "b": "two"}
    p.write_text("oops\n")
    with pytest.raises(ValueError, match=":1:"):
        io.read_config(p)


def test_model_roundtrip_is_exact(tmp_path):
    A = np.random.default_rng(2).normal(size=(3, 6))
    A[0, 3:] = 0
    io.write_model(tmp_path / "m.txt", ForceModel(A, stride=2))
    m = io.read_model(tmp_path / "m.txt")
    assert np.array_equal(m.A, A) and m.stride == 2
    (tmp_path / "bad.txt").write_text("a_11 = 1\n")
    with pytest.raises(ValueError, match="a_12"):
        io.read_model(tmp_path / "bad.txt")


def test_dataset_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    data = [ForceSample(rng.normal(size=(6, 3)), rng.normal(size=3)) for _ in range(4)]
    io.write_dataset(tmp_path / "d.csv", data)
    back = io.read_dataset(tmp_path / "d.csv")
    for a, b in zip(data, back):
        assert np.array_equal(a.features_X, b.features_X)
        assert np.array_equal(a.measured_F, b.measured_F)


def test_read_scenarios_csv_and_keyvalue(tmp_path):
    (tmp_path / "s.csv").write_text("shape,diameter,cx,cy,depth,sx,sy\nsphere,10,1,0,2,0.5,0\n"
                                    "edge,8,0,0,1,0,0\n")
    a, b = io.read_scenarios(tmp_path / "s.csv")
    assert a.contact_radius_mm == pytest.approx(4.0) and a.shear_offset_mm == (0.5, 0.0)
    assert b.shape == "edge" and b.diameter_mm == 8
    (tmp_path / "s.txt").write_text("shape = star\ndepth = 1\ncontact_radius = 2\n")
    (c,) = io.read_scenarios(tmp_path / "s.txt")
    assert c.shape == "star" and c.contact_radius_mm == 2
