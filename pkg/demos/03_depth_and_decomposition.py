"""
Depth and flow decomposition
============================

From one tracked indentation, build the relative depth map and split the
flow into its curl-free, divergence-free and harmonic parts.
"""

from pathlib import Path

import numpy as np

from tactflow import io
from tactflow.flow import FlowParams, dense_flow
from tactflow.force import nhhd, quick_total_force
from tactflow.depth import reconstruct_surface
from tactflow.pattern import PatternParams, generate_pattern
from tactflow.simulator import CameraModel, displacement_field, render_deformed, resample_to_raster, sphere_scenario

out = Path(__file__).with_name("out")
out.mkdir(exist_ok=True)

cam = CameraModel(shape=(160, 160), px_per_mm=5.0)
source = resample_to_raster(generate_pattern(PatternParams((500, 500), 0.3, 0.3, 50.0, seed=2)), cam)
gt = displacement_field(sphere_scenario(15.0, 2.0, shear_mm=(1.0, 0.0)), cam)
frame = render_deformed(source, gt, cam).image

flow = dense_flow(source, frame, FlowParams(pyramid_levels=3))
depth = reconstruct_surface(flow, frame)
io.write_image(out / "frame.png", frame)
io.write_image(out / "depth.png", io.heatmap(depth.processed))

parts = nhhd(flow)
for name in ("d", "r", "h"):
    mag = np.hypot(*np.moveaxis(getattr(parts, name), -1, 0))
    io.write_image(out / f"nhhd_{name}.png", io.heatmap(mag))
    print(f"{name}: mean magnitude {mag.mean():.4f} px")

normal, shear = quick_total_force(parts)
print(f"depth peak {depth.processed.max():.4f} at {np.unravel_index(depth.processed.argmax(), depth.processed.shape)}")
print(f"normal proxy {normal:.1f}, shear proxy ({shear[0]:.1f}, {shear[1]:.1f})")
