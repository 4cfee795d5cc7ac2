from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from tactflow import io
from tactflow.flow import FlowField, FlowParams
from tactflow.force import ForceModel
from tactflow.pipeline import (BenchReport, PipelineConfig, SweepSpec, bench, frame_features,
                               pattern_sweep, press_shear_script, render_stream, sweep_mean,
                               sweep_plot_data, sweep_scenarios)
from tactflow.simulator import CameraModel, displacement_field

SMALL = PipelineConfig(flow=FlowParams(pyramid_levels=3), raster=(120, 110), stride=1)


def test_config_mapping_roundtrip():
    cfg = replace(PipelineConfig(), stride=3, adaptive=False, model_path="m.txt")
    back = PipelineConfig.from_mapping(cfg.to_mapping())
    assert back == cfg
    with pytest.raises(ValueError, match="unknown"):
        PipelineConfig.from_mapping({"bogus": "1"})
    with pytest.raises(ValueError):
        PipelineConfig.from_mapping({"adaptive": "maybe"})
    with pytest.raises(ValueError):
        PipelineConfig.from_mapping({"stride": "0"})
    assert PipelineConfig(raster=(798, 586)).shape == (586, 798)


def test_frame_features_zero_flow(texture):
    h, w = texture.shape[:2]
    ff = frame_features(FlowField(np.zeros((h, w, 2)), np.ones((h, w), bool)), texture, SMALL)
    assert ff.X.shape == (6, 3) and np.allclose(ff.X, 0)


def _stream(texture, n=3):
    h, w = texture.shape[:2]
    cam = CameraModel(shape=(h, w), px_per_mm=5.0)
    return render_stream(texture, press_shear_script(cam, 10.0, 1.0, 1.0, steps=n)[:n], cam)


def test_run_pipeline_writes_outputs(tmp_path, texture):
    from tactflow.pipeline import run_pipeline

    frames, truths = _stream(texture)
    model = ForceModel(np.ones((3, 6)) * [[1], [1], [1]] * [1, 1, 1, 0, 0, 0])
    res = run_pipeline(SMALL, frames, model=model, out_dir=tmp_path)
    assert len(res) == len(truths) and all(r.error is None for r in res)
    assert (tmp_path / "forces.csv").exists() and (tmp_path / "config.txt").exists()
    assert io.read_flow(tmp_path / "flow_00001.flo").u.shape == texture.shape[:2] + (2,)
    normals = [r.forces.F[0] for r in res]
    assert normals == sorted(normals) and normals[-1] > 0


def test_run_pipeline_isolates_bad_frames(texture):
    from tactflow.pipeline import run_pipeline

    frames = [texture, texture[:-2], texture]
    res = run_pipeline(SMALL, frames, model=None)
    assert res[0].error is not None and res[1].error is None
    assert run_pipeline(SMALL, []) == []


def test_stream_tracks_ground_truth(texture):
    from tactflow.pipeline import run_pipeline

    frames, truths = _stream(texture)
    res = run_pipeline(SMALL, frames)
    gt = truths[-1].field
    fl = res[-1].flow
    assert np.hypot(*(fl.u - gt)[fl.valid_mask].T).mean() < 0.2


def test_sweep_scenarios_shape_and_fold_free():
    spec = SweepSpec()
    cam = spec.camera
    for shape in spec.indenters:
        sc = sweep_scenarios(spec, shape)
        assert len(sc) == 4 * (len(spec.depths_px) + 2)
        for s, ng, sg in sc:
            fld = displacement_field(s, cam, normal_gain=ng, shear_gain=sg).field
            jac = (1 + np.gradient(fld[..., 0], axis=1)) * (1 + np.gradient(fld[..., 1], axis=0)) \
                - np.gradient(fld[..., 0], axis=0) * np.gradient(fld[..., 1], axis=1)
            assert jac.min() > 0


def test_small_sweep_and_tables(tmp_path):
    spec = replace(SweepSpec(), d_values=(0.15,), r_values=(0.3,), indenters=("ellipsoid",),
                   depths_px=(2.0,), pattern_seeds=(0,), raster_px=96, contact_radius_mm=1.5)
    rows = pattern_sweep(spec, out_csv=tmp_path / "s.csv")
    assert len(rows) == 1 and rows[0]["error"] == ""
    assert 0 < rows[0]["dbar_px"] < 0.5
    assert sweep_mean(rows, 0.15, 0.3) == rows[0]["dbar_px"]
    assert math.isnan(sweep_mean(rows, 0.2, 0.3))
    assert sweep_plot_data(rows) == [{"d_mm": 0.15, "r": 0.3, "ellipsoid": rows[0]["dbar_mm"]}]
    assert (tmp_path / "s.plot.csv").exists()
    # a contact too large for the raster is recorded, not raised
    bad = pattern_sweep(replace(spec, contact_radius_mm=3.0))
    assert math.isnan(bad[0]["dbar_px"]) and "leaves" in bad[0]["error"]


def test_bench_small():
    cfg = replace(SMALL, raster=(96, 80))
    rep = bench(cfg, length=2)
    assert isinstance(rep, BenchReport) and rep.total_ms > 0 and rep.raster == (96, 80)
    with pytest.raises(ValueError):
        bench(cfg, length=0)


def test_static_stream_is_flat(texture):
    from tactflow.pipeline import run_pipeline

    A = np.zeros((3, 6))
    A[0, 0], A[1, 0], A[2, 3] = 1.0, 1.0, 1.0
    res = run_pipeline(SMALL, [texture] * 10, model=ForceModel(A))
    assert len(res) == 9 and res[-1].rebase_count == 0
    for r in res:
        assert np.abs(r.flow.u).max() <= 1e-3
        assert np.abs(r.depth.relative_depth).max() < 1e-6
        assert np.allclose(r.forces.F, 0, atol=1e-6)


def test_shear_total_reverses_with_direction(texture):
    from tactflow.pipeline import run_pipeline

    h, w = texture.shape[:2]
    cam = CameraModel(shape=(h, w), px_per_mm=5.0)
    script = press_shear_script(cam, 10.0, 1.0, 1.0, steps=2)
    frames, _ = render_stream(texture, script, cam)
    A = np.zeros((3, 6))
    A[1, 0], A[2, 3] = 1.0, 1.0
    res = run_pipeline(SMALL, frames, model=ForceModel(A))
    fx = [r.forces.F[1] for r in res]
    # frames 3-4 shear toward +x, the last frame sits at -x
    assert fx[3] > 0 and fx[-1] < 0
