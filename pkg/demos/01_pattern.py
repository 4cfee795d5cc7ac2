"""
Dense color patterns
====================

Generate patterns at a few randomness settings, check the neighbor
constraint and save them as PNGs.
"""

from pathlib import Path

from tactflow import io
from tactflow.pattern import PatternParams, generate_pattern, validate_pattern

out = Path(__file__).with_name("out")
out.mkdir(exist_ok=True)

for r in (0.04, 0.3, 0.6):
    params = PatternParams(resolution_px=(300, 300), patch_size_mm=0.3, randomness=r,
                           print_area_mm=30.0, seed=0)
    img = generate_pattern(params)
    rep = validate_pattern(img)
    io.write_image(out / f"pattern_r{r}.png", img.pixels)
    print(f"r={r}: {params.grid_shape[0]}x{params.grid_shape[1]} patches, "
          f"satisfaction {rep.constraint_satisfaction_rate:.4f}, "
          f"min gap {rep.min_neighbor_gap:.3f}, fallbacks {rep.fallback_count}")
