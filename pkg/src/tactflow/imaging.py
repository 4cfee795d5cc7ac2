"""Small raster helpers shared by the flow, simulator and depth modules."""

from __future__ import annotations

import numpy as np

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def luminance(image: np.ndarray) -> np.ndarray:
    """Return a float64 single-channel view of ``image``.

    Three-channel inputs are reduced with fixed Rec.601 weights; 2D inputs are
    returned as float64 unchanged.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] == 3:
        return img @ LUMA_WEIGHTS
    if img.ndim == 3 and img.shape[2] == 1:
        return img[..., 0]
    raise ValueError(f"expected HxW or HxWx3 image, got shape {img.shape}")


def pixel_grid(shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Return (x, y) coordinate arrays for an HxW raster (x = column)."""
    h, w = shape
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    return x, y


def bilinear_sample(arr: np.ndarray, x: np.ndarray, y: np.ndarray):
    """Sample ``arr`` at real positions with bilinear interpolation.

    ``arr`` is HxW or HxWxC. Positions outside ``[0, W-1] x [0, H-1]`` are
    clamped to the border and reported as ``False`` in the returned mask.

    Returns
    -------
    values : ndarray
        Shape ``x.shape`` (+ ``(C,)`` for multichannel input).
    inside : ndarray of bool
    """
    arr = np.asarray(arr)
    h, w = arr.shape[:2]
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    inside = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    xc = np.clip(x, 0, w - 1)
    yc = np.clip(y, 0, h - 1)
    x0 = np.minimum(np.floor(xc).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(yc).astype(np.intp), max(h - 2, 0))
    fx = xc - x0
    fy = yc - y0
    # flat gathers are much cheaper than 2D fancy indexing
    flat = arr.reshape(h * w, -1)
    i00 = (y0 * w + x0).ravel()
    dx = 1 if w > 1 else 0
    dy = w if h > 1 else 0
    fx = fx.reshape(-1, 1)
    fy = fy.reshape(-1, 1)
    top = flat[i00] * (1 - fx) + flat[i00 + dx] * fx
    bot = flat[i00 + dy] * (1 - fx) + flat[i00 + dy + dx] * fx
    out = top * (1 - fy) + bot * fy
    tail = arr.shape[2:]
    return out.reshape(x.shape + tail), inside


def warp_backward(image: np.ndarray, flow: np.ndarray):
    """Sample ``image`` at ``x + flow(x)`` for every pixel ``x``.

    With ``flow`` from reference to query this pulls the query back onto the
    reference grid. Returns the warped image and the in-bounds mask.
    """
    h, w = image.shape[:2]
    x, y = pixel_grid((h, w))
    return bilinear_sample(image, x + flow[..., 0], y + flow[..., 1])


def resize_bilinear(arr: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Pixel-center aligned bilinear resize of an HxW(xC) array."""
    h, w = arr.shape[:2]
    nh, nw = shape
    if (nh, nw) == (h, w):
        return np.array(arr, dtype=np.float64, copy=True)
    ys = (np.arange(nh) + 0.5) * (h / nh) - 0.5
    xs = (np.arange(nw) + 0.5) * (w / nw) - 0.5
    gx, gy = np.meshgrid(np.clip(xs, 0, w - 1), np.clip(ys, 0, h - 1))
    out, _ = bilinear_sample(np.asarray(arr, dtype=np.float64), gx, gy)
    return out
