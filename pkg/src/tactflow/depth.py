"""Relative contact depth from the density of displaced pixels.

Every valid source pixel deposits a unit-mass isotropic Gaussian at its
displaced position. Where the surface is pressed in, pixels spread apart and
the accumulated density drops below the zero-flow baseline; that deficit is
read as relative depth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, sparse

from .flow import FlowField
from .imaging import bilinear_sample, luminance, pixel_grid


@dataclass(frozen=True)
class DensityParams:
    sigma: float = 3.0
    # kernel half-width in units of sigma
    kernel_truncation: float = 4.5
    downsample_stride: int = 2

    def validate(self) -> None:
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not self.kernel_truncation > 0:
            raise ValueError("kernel_truncation must be positive")
        if int(self.downsample_stride) != self.downsample_stride or self.downsample_stride < 1:
            raise ValueError("downsample_stride must be an integer >= 1")


@dataclass
class DensityMap:
    density: np.ndarray
    processed: np.ndarray
    relative_depth: np.ndarray
    baseline: np.ndarray
    total_mass: float = 0.0


def _axis_weights(pos: np.ndarray, sigma: float, radius: int):
    """Per-point 1D kernel taps around ``round(pos)``, each row normalized to 1."""
    offs = np.arange(-radius, radius + 1)
    idx = np.rint(pos).astype(np.int64)[:, None] + offs[None, :]
    w = np.exp(-0.5 * ((idx - pos[:, None]) / sigma) ** 2)
    w /= w.sum(axis=1, keepdims=True)
    return idx, w


def splat(x: np.ndarray, y: np.ndarray, grid_shape: tuple[int, int], sigma: float,
          truncation: float, pad: int) -> np.ndarray:
    """Accumulate unit-mass truncated Gaussians at ``(x, y)`` on a padded grid.

    The kernel is separable, so the splat is ``Wy^T Wx`` with sparse per-point
    tap matrices. Returns an array of shape ``(H + 2 pad, W + 2 pad)`` whose
    pixel ``(i, j)`` sits at raster coordinate ``(j - pad, i - pad)``.
    """
    h, w = grid_shape
    ph, pw = h + 2 * pad, w + 2 * pad
    n = x.size
    if n == 0:
        return np.zeros((ph, pw))
    radius = int(math.ceil(truncation * sigma))
    ix, wx = _axis_weights(np.ravel(x) + pad, sigma, radius)
    iy, wy = _axis_weights(np.ravel(y) + pad, sigma, radius)
    if ix.min() < 0 or iy.min() < 0 or ix.max() >= pw or iy.max() >= ph:
        raise ValueError("splat support exceeds the padded grid; increase pad")
    rows = np.repeat(np.arange(n), 2 * radius + 1)
    Wx = sparse.csr_matrix((wx.ravel(), (rows, ix.ravel())), shape=(n, pw))
    Wy = sparse.csr_matrix((wy.ravel(), (rows, iy.ravel())), shape=(n, ph))
    return (Wy.T @ Wx).toarray()


def _baseline(valid: np.ndarray, sigma: float, truncation: float, pad: int) -> np.ndarray:
    # zero flow puts every source on a grid node, so the splat is a plain
    # separable convolution of the valid mask with one normalized kernel
    radius = int(math.ceil(truncation * sigma))
    k = np.exp(-0.5 * (np.arange(-radius, radius + 1) / sigma) ** 2)
    k /= k.sum()
    padded = np.pad(valid.astype(np.float64), pad)
    out = ndimage.convolve1d(padded, k, axis=0, mode="constant")
    return ndimage.convolve1d(out, k, axis=1, mode="constant")


def gaussian_density(flow: FlowField, params: DensityParams | None = None) -> DensityMap:
    """Splat every valid pixel at its displaced position and compare to zero flow.

    With ``downsample_stride`` s > 1 every s-th pixel is splatted with width
    ``sigma / s`` on a grid s times coarser, and the maps are upsampled
    bilinearly back to the flow raster. ``total_mass`` is the sum over the
    padded (uncropped) splat grid.
    """
    params = params or DensityParams()
    params.validate()
    u = np.asarray(flow.u, dtype=np.float64)
    valid = np.asarray(flow.valid_mask, dtype=bool)
    if u.ndim != 3 or u.shape[2] != 2 or valid.shape != u.shape[:2]:
        raise ValueError(f"malformed flow field: u {u.shape}, mask {valid.shape}")
    valid = valid & np.isfinite(u).all(axis=2)
    h, w = valid.shape
    s = int(params.downsample_stride)
    sig = params.sigma / s
    sub_u = u[::s, ::s] / s
    sub_valid = valid[::s, ::s]
    gh, gw = sub_valid.shape
    gx, gy = pixel_grid((gh, gw))
    reach = float(np.abs(sub_u[sub_valid]).max()) if sub_valid.any() else 0.0
    pad = int(math.ceil(params.kernel_truncation * sig)) + int(math.ceil(reach)) + 2
    px = gx[sub_valid] + sub_u[..., 0][sub_valid]
    py = gy[sub_valid] + sub_u[..., 1][sub_valid]
    dens = splat(px, py, (gh, gw), sig, params.kernel_truncation, pad)
    base = _baseline(sub_valid, sig, params.kernel_truncation, pad)
    total = float(dens.sum())
    crop = np.s_[pad:pad + gh, pad:pad + gw]
    dens, base = dens[crop], base[crop]
    if s > 1:
        fx, fy = pixel_grid((h, w))
        dens, _ = bilinear_sample(dens, fx / s, fy / s)
        base, _ = bilinear_sample(base, fx / s, fy / s)
    dens = np.maximum(dens, 0.0)
    rel = base - dens
    return DensityMap(dens, np.maximum(rel, 0.0), rel, base, total)


def brute_force_density(flow: FlowField, sigma: float) -> np.ndarray:
    """Untruncated O(N^2) density on the flow raster, normalized continuous Gaussians."""
    u = np.asarray(flow.u, dtype=np.float64)
    valid = np.asarray(flow.valid_mask, dtype=bool)
    gx, gy = pixel_grid(valid.shape)
    px = (gx + u[..., 0])[valid]
    py = (gy + u[..., 1])[valid]
    out = np.zeros(valid.shape)
    norm = 1.0 / (2 * math.pi * sigma * sigma)
    for a, b in zip(px, py):
        out += norm * np.exp(-((gx - a) ** 2 + (gy - b) ** 2) / (2 * sigma * sigma))
    return out


def _box(a: np.ndarray, radius: int) -> np.ndarray:
    return ndimage.uniform_filter(a, size=2 * radius + 1, mode="reflect")


def guided_filter(inp: DensityMap | np.ndarray, guide: np.ndarray, radius: int = 8,
                  eps: float = 1e-3):
    """Edge-preserving smoothing of the relative depth, guided by the frame.

    Within each box window the output is an affine function of the guide
    luminance, fitted by ridge-regularized least squares (``eps``); the
    per-window coefficients are averaged over all windows covering a pixel.
    Returns a :class:`DensityMap` when given one, else an array.
    """
    if int(radius) != radius or radius < 1:
        raise ValueError(f"radius must be an integer >= 1, got {radius}")
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    p = inp.relative_depth if isinstance(inp, DensityMap) else np.asarray(inp, dtype=np.float64)
    I = luminance(guide)
    if I.shape != p.shape:
        raise ValueError(f"guide {I.shape} does not match input {p.shape}")
    mI, mp = _box(I, radius), _box(p, radius)
    var = _box(I * I, radius) - mI * mI
    cov = _box(I * p, radius) - mI * mp
    a = cov / (var + eps)
    b = mp - a * mI
    q = _box(a, radius) * I + _box(b, radius)
    if not isinstance(inp, DensityMap):
        return q
    return DensityMap(inp.density, np.maximum(q, 0.0), q, inp.baseline, inp.total_mass)


def reconstruct_surface(flow: FlowField, frame: np.ndarray, params: DensityParams | None = None,
                        radius: int = 8, eps: float = 1e-3) -> DensityMap:
    """Density splat followed by guided filtering with the current frame."""
    return guided_filter(gaussian_density(flow, params), frame, radius, eps)
