"""Synthetic indentation: ground-truth displacement fields, rendering, force datasets.

Distances in scenarios are millimetres measured from the raster center; the
camera model maps them to pixels. Every contact produces a smooth bump
``(1 - t^2)^2`` over its footprint (``t`` = normalized distance, 1 on the
contact boundary). Pressing adds a radial expansion shaped ``t (1 - t^2)^2``,
normalized so ``normal_gain * depth`` is the peak lateral displacement;
shearing translates the footprint by ``shear_gain * offset`` weighted by the
bump.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .imaging import bilinear_sample, pixel_grid
from .pattern import PatternImage

GEL_THICKNESS_MM = 12.0
MAX_SHEAR_MM = 10.0
SENSOR_SHAPE = (586, 798)
SENSOR_PX_PER_MM = 798 / 36.0

# lateral surface displacement per mm of press depth / shear travel
NORMAL_GAIN = 0.1
SHEAR_GAIN = 0.15

# max of t (1 - t^2)^2 on [0, 1], attained at t = 1/sqrt(5)
_EXPANSION_PEAK = 16.0 / (25.0 * math.sqrt(5.0))

SHAPES = ("sphere", "multi_dot", "edge", "ellipsoid", "hex_prism", "star", "ring")


@dataclass(frozen=True)
class CameraModel:
    shape: tuple[int, int] = SENSOR_SHAPE
    px_per_mm: float = SENSOR_PX_PER_MM
    noise_sigma: float = 0.0
    blur_sigma: float = 0.0
    gain: float = 1.0
    print_blur_mm: float = 0.0

    def validate(self) -> None:
        if self.px_per_mm <= 0:
            raise ValueError("px_per_mm must be positive")
        if self.noise_sigma < 0 or self.blur_sigma < 0 or self.print_blur_mm < 0:
            raise ValueError("noise and blur widths must be non-negative")
        if min(self.shape) < 2:
            raise ValueError(f"raster too small: {self.shape}")

    @property
    def center_px(self) -> tuple[float, float]:
        h, w = self.shape
        return (w - 1) / 2.0, (h - 1) / 2.0

    def to_px(self, xy_mm) -> tuple[float, float]:
        cx, cy = self.center_px
        return cx + xy_mm[0] * self.px_per_mm, cy + xy_mm[1] * self.px_per_mm


@dataclass(frozen=True)
class IndenterScenario:
    """One indenter pose.

    ``contact_radius_mm`` sets the footprint size (for ``edge`` its width,
    for ``ring`` its band half-width). ``diameter_mm`` sets the edge length
    and the ring diameter; for spheres it is informational.
    """

    shape: str = "sphere"
    center_mm: tuple[float, float] = (0.0, 0.0)
    press_depth_mm: float = 0.0
    shear_offset_mm: tuple[float, float] = (0.0, 0.0)
    contact_radius_mm: float = 4.0
    diameter_mm: float = 15.0
    count: int = 4
    spacing_mm: float = 6.0
    angle_deg: float = 0.0

    def validate(self) -> None:
        if self.shape not in SHAPES:
            raise ValueError(f"unknown indenter shape {self.shape!r}; expected one of {SHAPES}")
        if not 0.0 <= self.press_depth_mm <= GEL_THICKNESS_MM:
            raise ValueError(f"press depth {self.press_depth_mm} mm outside [0, {GEL_THICKNESS_MM}]")
        if math.hypot(*self.shear_offset_mm) > MAX_SHEAR_MM:
            raise ValueError(f"shear offset {self.shear_offset_mm} exceeds {MAX_SHEAR_MM} mm")
        if self.contact_radius_mm <= 0:
            raise ValueError("contact radius must be positive")
        if self.shape == "multi_dot" and self.count < 1:
            raise ValueError("multi_dot needs count >= 1")


def sphere_scenario(diameter_mm: float, depth_mm: float, center_mm=(0.0, 0.0),
                    shear_mm=(0.0, 0.0), min_radius_mm: float = 0.5) -> IndenterScenario:
    """Sphere pressed ``depth_mm`` deep; the footprint is the spherical cap chord."""
    a = math.sqrt(max(diameter_mm * depth_mm - depth_mm * depth_mm, 0.0))
    return IndenterScenario("sphere", tuple(center_mm), depth_mm, tuple(shear_mm),
                            max(a, min_radius_mm), diameter_mm)


@dataclass
class GroundTruthFlow:
    field: np.ndarray
    marker_positions: np.ndarray
    marker_displacements: np.ndarray


def marker_grid(shape: tuple[int, int], n: int = 13, margin: float = 0.08) -> np.ndarray:
    """Uniform n x n marker grid on integer pixel positions, (x, y) order."""
    h, w = shape
    xs = np.round(np.linspace(margin * (w - 1), (1 - margin) * (w - 1), n))
    ys = np.round(np.linspace(margin * (h - 1), (1 - margin) * (h - 1), n))
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


# -- contact footprints --------------------------------------------------------

def _rot(dx, dy, angle_deg):
    a = math.radians(angle_deg)
    c, s = math.cos(a), math.sin(a)
    return c * dx + s * dy, -s * dx + c * dy


def _gauge(shape: str, dx, dy, sc: IndenterScenario, ppm: float):
    """Normalized footprint coordinate: 0 at the center, 1 on the contact boundary."""
    R = sc.contact_radius_mm * ppm
    x, y = _rot(dx, dy, sc.angle_deg)
    if shape in ("sphere", "multi_dot"):
        return np.hypot(x, y) / R
    if shape == "ellipsoid":
        return np.hypot(x / R, y / (0.6 * R))
    if shape == "edge":
        half_len = 0.5 * sc.diameter_mm * ppm
        return ((x / half_len) ** 4 + (y / R) ** 4) ** 0.25
    if shape == "hex_prism":
        acc = 0.0
        for k in range(3):
            th = math.pi / 3 * k
            acc = acc + ((x * math.cos(th) + y * math.sin(th)) / R) ** 8
        return acc ** 0.125
    if shape == "star":
        theta = np.arctan2(y, x)
        boundary = R * (1.0 + 0.35 * np.cos(5 * theta)) / 1.35
        return np.hypot(x, y) / boundary
    raise ValueError(shape)


def _footprint_extent(sc: IndenterScenario, ppm: float) -> float:
    R = sc.contact_radius_mm * ppm
    if sc.shape == "edge":
        return max(0.5 * sc.diameter_mm * ppm, R) * 2 ** 0.25
    if sc.shape == "hex_prism":
        return R * 1.2
    if sc.shape == "ring":
        return 0.5 * sc.diameter_mm * ppm + R
    return R


def _parts(sc: IndenterScenario) -> list[tuple[float, float]]:
    """Centers (mm) of the single contacts making up an indenter."""
    cx, cy = sc.center_mm
    if sc.shape != "multi_dot" or sc.count == 1:
        return [(cx, cy)]
    rad = sc.spacing_mm / (2 * math.sin(math.pi / sc.count))
    out = []
    for k in range(sc.count):
        th = math.radians(sc.angle_deg) + math.pi / sc.count + 2 * math.pi * k / sc.count
        out.append((cx + rad * math.cos(th), cy + rad * math.sin(th)))
    return out


def evaluate_field(scenario: IndenterScenario, camera: CameraModel, x, y,
                   normal_gain: float = NORMAL_GAIN, shear_gain: float = SHEAR_GAIN) -> np.ndarray:
    """Closed-form displacement (px) at pixel positions ``x, y``."""
    ppm = camera.px_per_mm
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    out = np.zeros(x.shape + (2,))
    amp_n = normal_gain * scenario.press_depth_mm * ppm / _EXPANSION_PEAK
    amp_s = np.asarray(scenario.shear_offset_mm, dtype=np.float64) * shear_gain * ppm
    for part in _parts(scenario):
        px, py = camera.to_px(part)
        dx, dy = x - px, y - py
        rho = np.hypot(dx, dy)
        if scenario.shape == "ring":
            R_ring = 0.5 * scenario.diameter_mm * ppm
            width = scenario.contact_radius_mm * ppm
            s = (rho - R_ring) / width
            t = np.abs(s)
            bump = np.where(t < 1, (1 - t * t) ** 2, 0.0)
            safe = np.where(rho > 0, rho, 1.0)
            radial = amp_n * s * bump / safe
        else:
            t = _gauge(scenario.shape, dx, dy, scenario, ppm)
            bump = np.where(t < 1, (1 - t * t) ** 2, 0.0)
            # t * (unit vector) == (t / rho) * (dx, dy); t / rho is bounded
            safe = np.where(rho > 0, rho, 1.0)
            radial = amp_n * np.where(rho > 0, t / safe, 0.0) * bump
        out[..., 0] += radial * dx + amp_s[0] * bump
        out[..., 1] += radial * dy + amp_s[1] * bump
    return out


def displacement_field(scenario: IndenterScenario, camera: CameraModel | None = None,
                       normal_gain: float = NORMAL_GAIN, shear_gain: float = SHEAR_GAIN,
                       n_markers: int = 13) -> GroundTruthFlow:
    """Dense ground-truth flow of an indentation plus the marker-grid samples."""
    camera = camera or CameraModel()
    camera.validate()
    scenario.validate()
    h, w = camera.shape
    ext = _footprint_extent(scenario, camera.px_per_mm)
    for part in _parts(scenario):
        px, py = camera.to_px(part)
        if px - ext < 0 or py - ext < 0 or px + ext > w - 1 or py + ext > h - 1:
            raise ValueError(
                f"contact region of {scenario.shape} at {part} mm (extent {ext:.1f} px) "
                f"leaves the {w}x{h} raster: {scenario}"
            )
    x, y = pixel_grid((h, w))
    fld = evaluate_field(scenario, camera, x, y, normal_gain, shear_gain)
    markers = marker_grid((h, w), n_markers)
    disp, _ = bilinear_sample(fld, markers[:, 0], markers[:, 1])
    return GroundTruthFlow(fld, markers, disp)


# -- rendering ----------------------------------------------------------------

@dataclass
class RenderedFrame:
    image: np.ndarray
    valid: np.ndarray


def resample_to_raster(pattern: PatternImage | np.ndarray, camera: CameraModel,
                       pattern_px_per_mm: float | None = None, supersample: int = 4) -> np.ndarray:
    """Image the printed pattern onto the camera raster.

    Each camera pixel averages ``supersample**2`` point samples of the
    (optionally print-blurred) pattern, both centered on the raster center.
    Camera pixels beyond the printed area see the nearest pattern edge.
    """
    camera.validate()
    if isinstance(pattern, PatternImage):
        pix = pattern.pixels
        ppm_pat = pattern.params.px_per_mm
    else:
        pix = np.asarray(pattern, dtype=np.float64)
        if pattern_px_per_mm is None:
            raise ValueError("pattern_px_per_mm required for raw pattern arrays")
        ppm_pat = pattern_px_per_mm
    if camera.print_blur_mm > 0:
        s = camera.print_blur_mm * ppm_pat
        pix = ndimage.gaussian_filter(pix, sigma=(s, s, 0), mode="nearest")
    ph, pw = pix.shape[:2]
    h, w = camera.shape
    cx, cy = camera.center_px
    offs = (np.arange(supersample) + 0.5) / supersample - 0.5
    acc = np.zeros((h, w, pix.shape[2]))
    ratio = ppm_pat / camera.px_per_mm
    for oy in offs:
        for ox in offs:
            xs = ((np.arange(w) + ox - cx) * ratio + pw / 2.0)
            ys = ((np.arange(h) + oy - cy) * ratio + ph / 2.0)
            ix = np.clip(np.floor(xs).astype(np.intp), 0, pw - 1)
            iy = np.clip(np.floor(ys).astype(np.intp), 0, ph - 1)
            acc += pix[iy[:, None], ix[None, :]]
    return acc / (supersample * supersample)


def inverse_map(fld: np.ndarray, iterations: int = 30, tol: float = 1e-6):
    """Source positions ``x`` with ``x + u(x) = y`` for every output pixel ``y``.

    Solved by fixed-point iteration ``x <- y - u(x)`` until the largest update
    falls below ``tol`` px; a single iteration is the plain ``y - u(y)``
    backward map.
    """
    h, w = fld.shape[:2]
    gx, gy = pixel_grid((h, w))
    x, y = gx.copy(), gy.copy()
    for _ in range(iterations):
        # clamped sampling keeps the iteration defined near the border
        u, _ = bilinear_sample(fld, x, y)
        nx, ny = gx - u[..., 0], gy - u[..., 1]
        step = max(np.abs(nx - x).max(), np.abs(ny - y).max())
        x, y = nx, ny
        if step < tol:
            break
    return x, y


def render_deformed(source: np.ndarray, gt: GroundTruthFlow | np.ndarray,
                    camera: CameraModel | None = None, noise_seed: int = 0,
                    inverse_iterations: int = 30) -> RenderedFrame:
    """Warp a raster image by a forward displacement field and apply camera effects.

    ``source`` must already be on the camera raster (see
    :func:`resample_to_raster`). Output pixels whose source position falls
    outside the raster are flagged invalid.
    """
    camera = camera or CameraModel(shape=np.shape(source)[:2])
    fld = gt.field if isinstance(gt, GroundTruthFlow) else np.asarray(gt, dtype=np.float64)
    src = np.asarray(source, dtype=np.float64)
    if src.shape[:2] != fld.shape[:2] or src.shape[:2] != tuple(camera.shape):
        raise ValueError(
            f"dimension mismatch: source {src.shape[:2]}, field {fld.shape[:2]}, camera {camera.shape}"
        )
    if not fld.any():
        img = src.copy()
        valid = np.ones(src.shape[:2], dtype=bool)
    else:
        x, y = inverse_map(fld, inverse_iterations)
        img, valid = bilinear_sample(src, x, y)
    if camera.blur_sigma > 0:
        sig = (camera.blur_sigma, camera.blur_sigma) + (0,) * (img.ndim - 2)
        img = ndimage.gaussian_filter(img, sigma=sig, mode="nearest")
    if camera.gain != 1.0:
        img = img * camera.gain
    if camera.noise_sigma > 0:
        rng = np.random.default_rng(noise_seed)
        img = img + rng.normal(0.0, camera.noise_sigma, img.shape)
    if camera.gain != 1.0 or camera.noise_sigma > 0:
        img = np.clip(img, 0.0, 1.0)
    return RenderedFrame(img, valid)


# -- force datasets -------------------------------------------------------------

@dataclass
class ForceSample:
    features_X: np.ndarray
    measured_F: np.ndarray
    scenario: IndenterScenario | None = field(default=None, repr=False)


PROTOCOL_DIAMETERS_MM = (10.0, 12.0, 15.0, 18.0, 22.0)

# relative weights of a synthetic ground-truth force model; rows are rescaled
# to the target force ranges before use (see force.range_matched_model)
REFERENCE_A_SHAPE = np.array([
    [1.0, 0.2, 0.02, 0.0, 0.0, 0.0],
    [1.0, 0.1, 0.01, 0.2, 0.05, 0.01],
    [0.2, 0.05, 0.01, 1.0, 0.1, 0.01],
])


def protocol_scenarios(diameters=PROTOCOL_DIAMETERS_MM, position_step_mm: float = 2.0,
                       depths_mm=(0.4, 0.8, 1.2, 1.6, 2.0), shear_step_mm: float = 1.0):
    """Indentation grid shaped like the force-calibration protocol.

    Per indenter: 9 positions (3x3), each with 5 normal steps x 9 shear steps
    (3x3 offsets) plus one unloaded pose: 9 * (5 * 9 + 1) * 5 = 2070 poses.
    """
    out = []
    offs = (-1.0, 0.0, 1.0)
    for dia in diameters:
        for py in offs:
            for px in offs:
                center = (px * position_step_mm, py * position_step_mm)
                out.append(sphere_scenario(dia, 0.0, center))
                for depth in depths_mm:
                    for sy in offs:
                        for sx in offs:
                            out.append(sphere_scenario(dia, depth, center,
                                                       (sx * shear_step_mm, sy * shear_step_mm)))
    return out


def synth_force_dataset(ground_truth_A, scenarios, noise: float = 0.0, *, source=None,
                        camera: CameraModel | None = None, config=None, seed: int = 0,
                        features=None) -> list[ForceSample]:
    """Run each scenario through the sensing pipeline and label it with ``diag(A X) + noise``.

    ``features`` may carry precomputed 6x3 feature matrices (one per
    scenario) to relabel an existing dataset with a different model or noise.
    Normal forces are clipped at zero.
    """
    from .force import ForceModel
    from .pipeline import scenario_features

    model = ground_truth_A if isinstance(ground_truth_A, ForceModel) else ForceModel(np.asarray(ground_truth_A))
    model.check_constraints()
    if features is None:
        features = [scenario_features(sc, source=source, camera=camera, config=config)
                    for sc in scenarios]
    rng = np.random.default_rng(seed)
    out = []
    for sc, X in zip(scenarios, features):
        F = model.predict(X)
        if noise > 0:
            F = F + rng.normal(0.0, noise, 3)
            F[0] = max(F[0], 0.0)
        out.append(ForceSample(np.asarray(X, dtype=np.float64), F, sc))
    return out
