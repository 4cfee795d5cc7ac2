from __future__ import annotations

import numpy as np
import pytest

from tactflow.pattern import PatternParams, generate_pattern
from tactflow.simulator import CameraModel, resample_to_raster


def textured_raster(shape=(120, 140), patch_px=3, r=0.3, seed=0) -> np.ndarray:
    """Pattern raster whose patches map to ``patch_px`` camera pixels."""
    h, w = shape
    n = int(np.ceil(max(h, w) / patch_px)) + 2
    params = PatternParams(resolution_px=(n * 4, n * 4), patch_size_mm=1.0, randomness=r,
                           print_area_mm=float(n), seed=seed)
    cam = CameraModel(shape=shape, px_per_mm=float(patch_px))
    return resample_to_raster(generate_pattern(params), cam)


@pytest.fixture(scope="session")
def texture():
    return textured_raster()


def shift_image(img: np.ndarray, tx: float, ty: float) -> np.ndarray:
    """Query frame whose content at ``x + t`` equals the reference at ``x``."""
    from tactflow.imaging import bilinear_sample, pixel_grid

    x, y = pixel_grid(img.shape[:2])
    out, _ = bilinear_sample(img, x - tx, y - ty)
    return out
