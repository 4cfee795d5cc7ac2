"""Dense optical flow by polynomial expansion, with adaptive referencing.

The estimator follows Farneback's two-frame scheme: each image is locally
approximated by a quadratic polynomial, and the displacement that best maps
the reference expansion onto the query expansion is solved in a
neighborhood-weighted least-squares sense, coarse to fine over a pyramid.

Flow convention: ``u`` is defined on the reference grid and
``query(x + u(x)) ~= reference(x)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .imaging import bilinear_sample, luminance, pixel_grid, resize_bilinear, warp_backward

log = logging.getLogger(__name__)

# Tikhonov term on the 2x2 normal equations, in (0..255 intensity)^2 units
_DET_REG = 1e-3
_MIN_LEVEL_SIZE = 16


@dataclass(frozen=True)
class FlowParams:
    pyramid_levels: int = 4
    pyramid_scale: float = 0.5
    window_size: int = 21
    iterations_per_level: int = 3
    poly_neighborhood: int = 7
    poly_sigma: float = 1.5

    def validate(self) -> None:
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        if not 0.0 < self.pyramid_scale < 1.0:
            raise ValueError("pyramid_scale must lie in (0, 1)")
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise ValueError("window_size must be a positive odd integer")
        if self.iterations_per_level < 1:
            raise ValueError("iterations_per_level must be >= 1")
        if self.poly_neighborhood < 3 or self.poly_neighborhood % 2 == 0:
            raise ValueError("poly_neighborhood must be an odd integer >= 3")
        if self.poly_sigma <= 0:
            raise ValueError("poly_sigma must be positive")


@dataclass
class FlowField:
    u: np.ndarray
    valid_mask: np.ndarray

    @classmethod
    def zeros(cls, shape: tuple[int, int], valid: bool = True) -> FlowField:
        return cls(np.zeros(shape + (2,)), np.full(shape, valid))

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape[:2]


# -- polynomial expansion ---------------------------------------------------

def _expansion_filters(size: int, sigma: float):
    n = size // 2
    x = np.arange(-n, n + 1, dtype=np.float64)
    g = np.exp(-x * x / (2 * sigma * sigma))
    g /= g.sum()
    # Gram matrix of basis {1, x, y, x^2, y^2, xy} under applicability g(x)g(y)
    X, Y = np.meshgrid(x, x)
    a = np.outer(g, g)
    basis = np.stack([np.ones_like(X), X, Y, X * X, Y * Y, X * Y]).reshape(6, -1)
    gram = (basis * a.ravel()) @ basis.T
    return g, x * g, x * x * g, np.linalg.inv(gram)


def poly_expansion(image: np.ndarray, size: int = 7, sigma: float = 1.5) -> np.ndarray:
    """Per-pixel weighted least-squares quadratic fit.

    Returns an HxWx6 array of coefficients ``(c, bx, by, axx, ayy, axy)`` of
    ``f(x, y) ~= c + bx*x + by*y + axx*x^2 + ayy*y^2 + axy*x*y`` in local
    pixel coordinates (x along columns).
    """
    g, xg, xxg, inv_gram = _expansion_filters(size, sigma)
    img = np.asarray(image, dtype=np.float64)

    def sep(kx, ky):
        tmp = ndimage.correlate1d(img, ky, axis=0, mode="nearest")
        return ndimage.correlate1d(tmp, kx, axis=1, mode="nearest")

    moments = np.stack(
        [sep(g, g), sep(xg, g), sep(g, xg), sep(xxg, g), sep(g, xxg), sep(xg, xg)], axis=-1
    )
    return moments @ inv_gram.T


# -- pyramid ------------------------------------------------------------------

def _pyramid(img: np.ndarray, params: FlowParams) -> list[np.ndarray]:
    h, w = img.shape
    levels = [img]
    for k in range(1, params.pyramid_levels):
        s = params.pyramid_scale ** k
        shape = (int(round(h * s)), int(round(w * s)))
        if min(shape) < _MIN_LEVEL_SIZE:
            break
        blurred = ndimage.gaussian_filter(img, sigma=(1.0 / s - 1.0) * 0.5, mode="nearest")
        levels.append(resize_bilinear(blurred, shape))
    return levels


@dataclass
class Expansion:
    """Polynomial expansions of one image at every pyramid level."""

    coeffs: list[np.ndarray]
    shape: tuple[int, int]
    textured: bool

    @classmethod
    def of(cls, image: np.ndarray, params: FlowParams) -> Expansion:
        params.validate()
        lum = luminance(image) * 255.0
        coeffs = [poly_expansion(lvl, params.poly_neighborhood, params.poly_sigma)
                  for lvl in _pyramid(lum, params)]
        textured = bool(np.ptp(lum) > 1e-9)
        return cls(coeffs, lum.shape, textured)


# -- displacement estimation --------------------------------------------------

def _refine(r0: np.ndarray, r1: np.ndarray, flow: np.ndarray, window: int):
    h, w = r0.shape[:2]
    x, y = pixel_grid((h, w))
    u, v = flow[..., 0], flow[..., 1]
    r1w, inside = bilinear_sample(r1[..., 1:], x + u, y + v)
    a11 = 0.5 * (r0[..., 3] + r1w[..., 2])
    a22 = 0.5 * (r0[..., 4] + r1w[..., 3])
    a12 = 0.25 * (r0[..., 5] + r1w[..., 4])
    dbx = -0.5 * (r1w[..., 0] - r0[..., 1]) + a11 * u + a12 * v
    dby = -0.5 * (r1w[..., 1] - r0[..., 2]) + a12 * u + a22 * v
    wgt = inside.astype(np.float64)
    m = np.stack([
        (a11 * a11 + a12 * a12) * wgt,
        a12 * (a11 + a22) * wgt,
        (a12 * a12 + a22 * a22) * wgt,
        (a11 * dbx + a12 * dby) * wgt,
        (a12 * dbx + a22 * dby) * wgt,
    ])
    for k in range(5):
        m[k] = ndimage.uniform_filter(m[k], size=window, mode="nearest")
    g11, g12, g22, h1, h2 = m
    det = g11 * g22 - g12 * g12 + _DET_REG
    out = np.empty_like(flow)
    out[..., 0] = (g22 * h1 - g12 * h2) / det
    out[..., 1] = (g11 * h2 - g12 * h1) / det
    return out, (g11 + g22) > 1e-6


def flow_from_expansions(ref: Expansion, qry: Expansion, params: FlowParams) -> FlowField:
    if ref.shape != qry.shape:
        raise ValueError(f"frame size mismatch: {ref.shape} vs {qry.shape}")
    if not (ref.textured and qry.textured):
        return FlowField.zeros(ref.shape, valid=False)
    n = min(len(ref.coeffs), len(qry.coeffs))
    flow = None
    textured = None
    for k in reversed(range(n)):
        r0, r1 = ref.coeffs[k], qry.coeffs[k]
        shape = r0.shape[:2]
        if flow is None:
            flow = np.zeros(shape + (2,))
        else:
            sy, sx = shape[0] / flow.shape[0], shape[1] / flow.shape[1]
            flow = resize_bilinear(flow, shape)
            flow[..., 0] *= sx
            flow[..., 1] *= sy
        for _ in range(params.iterations_per_level):
            flow, textured = _refine(r0, r1, flow, params.window_size)
    x, y = pixel_grid(ref.shape)
    xs, ys = x + flow[..., 0], y + flow[..., 1]
    h, w = ref.shape
    inside = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    return FlowField(flow, inside & textured & np.isfinite(flow).all(axis=-1))


def dense_flow(reference: np.ndarray, query: np.ndarray, params: FlowParams | None = None) -> FlowField:
    """Estimate per-pixel displacement from ``reference`` to ``query``.

    Color frames are reduced to luminance first. Constant frames give zero
    flow with an all-false valid mask.
    """
    params = params or FlowParams()
    if np.shape(reference)[:2] != np.shape(query)[:2]:
        raise ValueError(
            f"frame size mismatch: {np.shape(reference)[:2]} vs {np.shape(query)[:2]}"
        )
    return flow_from_expansions(Expansion.of(reference, params), Expansion.of(query, params), params)


# -- adaptive referencing -----------------------------------------------------

def compose(first: FlowField, second: FlowField) -> FlowField:
    """Chain ``first`` (A -> B) with ``second`` (B -> C) into A -> C.

    ``total(x) = first(x) + second(x + first(x))``, sampled bilinearly;
    samples landing outside B's raster invalidate the pixel.
    """
    x, y = pixel_grid(first.shape)
    xs, ys = x + first.u[..., 0], y + first.u[..., 1]
    step, inside = bilinear_sample(second.u, xs, ys)
    ok, _ = bilinear_sample(second.valid_mask.astype(np.float64), xs, ys)
    return FlowField(first.u + step, first.valid_mask & inside & (ok > 0.999))


def photometric_error(reference: np.ndarray, frame: np.ndarray, flow: FlowField) -> float:
    """Mean absolute luminance error between ``reference`` and ``frame`` pulled back by ``flow``."""
    warped, inside = warp_backward(luminance(frame), flow.u)
    mask = inside & flow.valid_mask
    if not mask.any():
        return float("inf")
    return float(np.abs(warped - luminance(reference))[mask].mean())


@dataclass
class AdaptiveTrackerState:
    reference_frame: np.ndarray
    accumulated_flow: FlowField
    rebase_threshold: float = 6.0 / 255.0
    rebase_count: int = 0
    _expansion: Expansion | None = field(default=None, repr=False, compare=False)

    @classmethod
    def start(cls, frame: np.ndarray, rebase_threshold: float = 6.0 / 255.0) -> AdaptiveTrackerState:
        return cls(np.asarray(frame, dtype=np.float64),
                   FlowField.zeros(np.shape(frame)[:2]), rebase_threshold)


def adaptive_step(state: AdaptiveTrackerState, frame: np.ndarray,
                  params: FlowParams | None = None):
    """Track ``frame`` against the current reference and return the flow to the first frame.

    If the reference, compared with ``frame`` pulled back through the new
    flow, differs by more than ``rebase_threshold`` (mean absolute luminance),
    ``frame`` becomes the new reference and the flows are chained.
    """
    params = params or FlowParams()
    ref_exp = state._expansion or Expansion.of(state.reference_frame, params)
    qry_exp = Expansion.of(frame, params)
    step = flow_from_expansions(ref_exp, qry_exp, params)
    total = compose(state.accumulated_flow, step)
    err = photometric_error(state.reference_frame, frame, step)
    if err > state.rebase_threshold:
        log.debug("rebase: photometric error %.4f > %.4f", err, state.rebase_threshold)
        new = replace(state, reference_frame=np.asarray(frame, dtype=np.float64),
                      accumulated_flow=total, rebase_count=state.rebase_count + 1,
                      _expansion=qry_exp)
    else:
        new = replace(state, _expansion=ref_exp)
    return new, total


def track_stream(frames, params: FlowParams | None = None, rebase_threshold: float = 6.0 / 255.0,
                 adaptive: bool = True):
    """Yield cumulative flows (first frame -> frame k) for every frame after the first."""
    it = iter(frames)
    first = next(it)
    state = AdaptiveTrackerState.start(first, rebase_threshold if adaptive else np.inf)
    for frame in it:
        state, total = adaptive_step(state, frame, params)
        yield state, total


# -- evaluation ---------------------------------------------------------------

@dataclass
class TrackingErrorReport:
    mean: float
    n_used: int
    excluded: np.ndarray

    def __float__(self) -> float:
        return self.mean


def tracking_error_report(flow: FlowField, positions: np.ndarray,
                          displacements: np.ndarray) -> TrackingErrorReport:
    """Mean Euclidean error between flow and ground truth at marker positions.

    ``positions`` and ``displacements`` are Nx2 arrays in (x, y) pixel order.
    Markers whose bilinear footprint touches an invalid flow pixel are
    excluded and their indices reported.
    """
    p = np.asarray(positions, dtype=np.float64)
    gt = np.asarray(displacements, dtype=np.float64)
    est, inside = bilinear_sample(flow.u, p[:, 0], p[:, 1])
    ok, _ = bilinear_sample(flow.valid_mask.astype(np.float64), p[:, 0], p[:, 1])
    use = inside & (ok > 0.999)
    excluded = np.flatnonzero(~use)
    if excluded.size:
        log.info("tracking_error: %d of %d markers outside the valid region", excluded.size, len(p))
    if not use.any():
        return TrackingErrorReport(float("nan"), 0, excluded)
    err = np.hypot(*(est[use] - gt[use]).T)
    return TrackingErrorReport(float(err.mean()), int(use.sum()), excluded)


def tracking_error(flow: FlowField, positions: np.ndarray, displacements: np.ndarray) -> float:
    return tracking_error_report(flow, positions, displacements).mean


def endpoint_error(flow: FlowField, truth: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Mean endpoint error against a dense ground truth over valid pixels."""
    m = flow.valid_mask if mask is None else (flow.valid_mask & mask)
    return float(np.hypot(*(flow.u - truth)[m].T).mean())
