"""End-to-end orchestration: frame streams, feature extraction, pattern sweeps, benchmarks."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .depth import DensityMap, DensityParams, reconstruct_surface
from .flow import (AdaptiveTrackerState, FlowField, FlowParams, adaptive_step, dense_flow,
                   tracking_error_report)
from .force import ForceDistribution, ForceModel, build_features, force_distribution, nhhd
from .pattern import PatternParams, generate_pattern
from .simulator import (CameraModel, IndenterScenario, displacement_field, render_deformed,
                        resample_to_raster, sphere_scenario)

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    flow: FlowParams = field(default_factory=FlowParams)
    density: DensityParams = field(default_factory=DensityParams)
    rebase_threshold: float = 6.0 / 255.0
    model_path: str | None = None
    raster: tuple[int, int] = (798, 586)
    # subsampling of the decomposition and feature stage
    stride: int = 2
    guided_radius: int = 8
    guided_eps: float = 1e-3
    adaptive: bool = True
    threads: int = 1

    def validate(self) -> None:
        self.flow.validate()
        self.density.validate()
        if min(self.raster) < 1:
            raise ValueError(f"raster must be positive, got {self.raster}")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.rebase_threshold < 0:
            raise ValueError("rebase_threshold must be non-negative")

    @property
    def shape(self) -> tuple[int, int]:
        w, h = self.raster
        return h, w

    def to_mapping(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("flow", "density"):
                out.update({f"{f.name}.{k}": str(x) for k, x in asdict(v).items()})
            elif f.name == "raster":
                out["raster"] = f"{v[0]}x{v[1]}"
            elif v is not None:
                out[f.name] = str(v)
        return out

    @classmethod
    def from_mapping(cls, values: dict[str, str], base: PipelineConfig | None = None) -> PipelineConfig:
        """Overlay ``key = value`` settings on ``base`` (defaults when omitted)."""
        cfg = base or cls()
        flow_kw, dens_kw, top = {}, {}, {}
        types = {f.name: f.type for f in fields(cls)}
        for key, raw in values.items():
            sect, _, name = key.partition(".")
            if sect == "flow" and name:
                flow_kw[name] = _coerce(getattr(cfg.flow, name), raw, key)
            elif sect == "density" and name:
                dens_kw[name] = _coerce(getattr(cfg.density, name), raw, key)
            elif key == "raster":
                w, h = raw.lower().split("x")
                top["raster"] = (int(w), int(h))
            elif key in types:
                top[key] = raw if key == "model_path" else _coerce(getattr(cfg, key), raw, key)
            else:
                raise ValueError(f"unknown config key {key!r}")
        cfg = replace(cfg, flow=replace(cfg.flow, **flow_kw), density=replace(cfg.density, **dens_kw), **top)
        cfg.validate()
        return cfg


def _coerce(current, raw: str, key: str):
    if isinstance(current, bool):
        if raw.lower() not in ("true", "false", "1", "0"):
            raise ValueError(f"{key}: expected a boolean, got {raw!r}")
        return raw.lower() in ("true", "1")
    try:
        if isinstance(current, int):
            return int(raw)
        return float(raw)
    except ValueError:
        raise ValueError(f"{key}: cannot parse {raw!r}") from None


# -- per-frame stages ------------------------------------------------------------

@dataclass
class FrameFeatures:
    depth: DensityMap
    components: object
    x: np.ndarray
    X: np.ndarray


def frame_features(flow: FlowField, frame: np.ndarray, config: PipelineConfig | None = None) -> FrameFeatures:
    """Density, decomposition and force features for one tracked frame."""
    config = config or PipelineConfig()
    depth = reconstruct_surface(flow, frame, config.density, config.guided_radius, config.guided_eps)
    s = int(config.stride)
    sub = FlowField(flow.u[::s, ::s], flow.valid_mask[::s, ::s])
    comps = nhhd(sub)
    x, X = build_features(depth.processed[::s, ::s], comps, cell_area=float(s * s))
    return FrameFeatures(depth, comps, x, X)


# desk-scale sensor used for synthetic force datasets: 22.4 x 22.4 mm at 5 px/mm
DATASET_CAMERA = CameraModel(shape=(112, 112), px_per_mm=5.0)
DATASET_CONFIG = PipelineConfig(flow=FlowParams(pyramid_levels=3), raster=(112, 112), stride=1)
DATASET_PATTERN = PatternParams(resolution_px=(350, 350), patch_size_mm=0.3, randomness=0.3, seed=7)


@lru_cache(maxsize=4)
def _dataset_source(camera: CameraModel, pattern: PatternParams) -> np.ndarray:
    src = resample_to_raster(generate_pattern(pattern), camera)
    src.setflags(write=False)
    return src


def scenario_features(scenario: IndenterScenario, source: np.ndarray | None = None,
                      camera: CameraModel | None = None, config: PipelineConfig | None = None) -> np.ndarray:
    """Render ``scenario``, track it against the undeformed raster and return the 6x3 features."""
    camera = camera or DATASET_CAMERA
    config = config or (DATASET_CONFIG if camera == DATASET_CAMERA else PipelineConfig(raster=camera.shape[::-1]))
    if source is None:
        source = _dataset_source(camera, DATASET_PATTERN)
    gt = displacement_field(scenario, camera)
    frame = render_deformed(source, gt, camera).image
    flow = dense_flow(source, frame, config.flow)
    return frame_features(flow, frame, config).X


# -- streams -----------------------------------------------------------------------

@dataclass
class FrameResult:
    index: int
    flow: FlowField | None
    depth: DensityMap | None
    forces: ForceDistribution | None
    rebase_count: int
    error: str | None = None


def load_model(config: PipelineConfig) -> ForceModel | None:
    from .io import read_model

    if not config.model_path:
        log.warning("no force model configured; force stage disabled")
        return None
    p = Path(config.model_path)
    if not p.exists():
        log.warning("force model %s not found; force stage disabled", p)
        return None
    return read_model(p)


def run_pipeline(config: PipelineConfig, frames, model: ForceModel | None = None,
                 out_dir=None) -> list[FrameResult]:
    """Track a frame stream against its first frame and evaluate depth and forces.

    The first frame is the initial reference. Frames that fail are logged and
    reported with ``error`` set; the stream continues. With ``out_dir``, each
    frame's flow, depth and forces are written there.
    """
    from . import io

    config.validate()
    if model is None:
        model = load_model(config)
    it = iter(frames)
    try:
        first = np.asarray(next(it), dtype=np.float64)
    except StopIteration:
        return []
    state = AdaptiveTrackerState.start(first, config.rebase_threshold)
    out = []
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        io.write_config(out_dir / "config.txt", config.to_mapping())
        force_rows = []
    for k, frame in enumerate(it, start=1):
        try:
            frame = np.asarray(frame, dtype=np.float64)
            if config.adaptive:
                state, flow = adaptive_step(state, frame, config.flow)
            else:
                flow = dense_flow(first, frame, config.flow)
            feats = frame_features(flow, frame, config)
            forces = force_distribution(model, feats.x, feats.X) if model is not None else None
            res = FrameResult(k, flow, feats.depth, forces, state.rebase_count)
        except Exception as exc:  # keep the stream alive
            log.error("frame %d failed: %s", k, exc)
            res = FrameResult(k, None, None, None, state.rebase_count, str(exc))
        out.append(res)
        if out_dir is not None and res.flow is not None:
            io.write_flow(out_dir / f"flow_{k:05d}.flo", res.flow)
            io.write_depth(out_dir / f"depth_{k:05d}.dpth", res.depth)
            if res.forces is not None:
                force_rows.append({"frame": k, **dict(zip(("F_normal", "F_shearX", "F_shearY"),
                                                          map(float, res.forces.F)))})
    if out_dir is not None and model is not None:
        io.write_table(out_dir / "forces.csv", force_rows)
    return out


def press_shear_script(camera: CameraModel, diameter_mm: float = 15.0, depth_mm: float = 3.0,
                       shear_mm: float = 2.0, steps: int = 4):
    """Scenarios pressing in, shearing +x, then sweeping through to -x."""
    seq = [sphere_scenario(diameter_mm, depth_mm * (i + 1) / steps) for i in range(steps)]
    ramp = list(np.linspace(0, shear_mm, steps + 1)[1:]) + list(np.linspace(shear_mm, -shear_mm, 2 * steps + 1)[1:])
    seq += [sphere_scenario(diameter_mm, depth_mm, shear_mm=(float(s), 0.0)) for s in ramp]
    return seq


def render_stream(source: np.ndarray, scenarios, camera: CameraModel, noise_seed: int = 0, **gains):
    """Undeformed frame followed by one rendered frame per scenario, plus ground truths."""
    frames = [render_deformed(source, np.zeros(source.shape[:2] + (2,)), camera, noise_seed).image]
    truths = []
    for k, sc in enumerate(scenarios, start=1):
        gt = displacement_field(sc, camera, **gains)
        frames.append(render_deformed(source, gt, camera, noise_seed + k).image)
        truths.append(gt)
    return frames, truths


# -- pattern sweep -----------------------------------------------------------------

SWEEP_INDENTERS = ("multi_dot", "edge", "ellipsoid", "hex_prism", "star")


@dataclass
class SweepSpec:
    """Pattern-selection grid evaluated on a fixed desk-scale raster.

    The raster keeps the full sensor's 798 px / 36 mm scale; ``raster_px``
    squares of it are imaged. Depth and shear analogs are given directly as
    peak surface displacements in px.
    """

    d_values: tuple[float, ...] = (0.05, 0.075, 0.1, 0.15, 0.2)
    r_values: tuple[float, ...] = (0.1, 0.3, 0.5, 0.6)
    indenters: tuple[str, ...] = SWEEP_INDENTERS
    depths_px: tuple[float, ...] = (2.0, 4.0)
    shear_px: float = 6.0
    raster_px: int = 192
    pattern_px_per_patch: int = 4
    contact_radius_mm: float = 3.0
    noise_sigma: float = 4.0 / 255.0
    blur_sigma: float = 0.3
    print_blur_mm: float = 0.015
    flow: FlowParams = field(default_factory=FlowParams)
    pattern_seeds: tuple[int, ...] = (0, 1)

    def validate(self) -> None:
        if not (self.d_values and self.pattern_seeds and self.r_values and self.indenters and self.depths_px):
            raise ValueError("sweep grids must be non-empty")
        for s in self.indenters:
            IndenterScenario(s).validate()

    @property
    def camera(self) -> CameraModel:
        n = self.raster_px
        return CameraModel(shape=(n, n), noise_sigma=self.noise_sigma, blur_sigma=self.blur_sigma,
                           print_blur_mm=self.print_blur_mm)


def sweep_scenarios(spec: SweepSpec, shape: str) -> list[tuple[IndenterScenario, float, float]]:
    """(scenario, normal_gain, shear_gain) triples: 4 positions x (presses + shear both ways).

    The press depth is fixed at 1 mm and the gains are set so the peak
    expansion of a full-size contact equals the px analog; multi-dot contacts
    scale their amplitude with the dot size so no indenter folds the surface.
    """
    cam = spec.camera
    R = spec.contact_radius_mm
    off = 0.2 * R
    out = []
    for cx, cy in ((-off, -off), (off, -off), (-off, off), (off, off)):
        base = dict(shape=shape, center_mm=(cx, cy), contact_radius_mm=R, diameter_mm=1.4 * R,
                    count=4, spacing_mm=1.1 * R)
        if shape == "multi_dot":
            base["contact_radius_mm"] = 0.45 * R
        scale = base["contact_radius_mm"] / R / cam.px_per_mm
        for dpx in spec.depths_px:
            out.append((IndenterScenario(press_depth_mm=1.0, **base), dpx * scale, 0.0))
        top = spec.depths_px[-1] * scale
        for sgn in (1.0, -1.0):
            out.append((IndenterScenario(press_depth_mm=1.0, shear_offset_mm=(sgn, 0.0), **base),
                        top, spec.shear_px * base["contact_radius_mm"] / R / cam.px_per_mm))
    return out


def _sweep_sources(spec: SweepSpec, d: float, r: float, cam: CameraModel):
    """Noise-free raster and noisy reference frame for each pattern seed of a cell."""
    per_patch = spec.pattern_px_per_patch
    res = max(per_patch, int(round(cam.shape[1] / cam.px_per_mm / d)) * per_patch)
    out = []
    for seed in spec.pattern_seeds:
        pp = PatternParams(resolution_px=(res, res), patch_size_mm=d, randomness=r,
                           print_area_mm=res / per_patch * d, seed=seed)
        source = resample_to_raster(generate_pattern(pp), cam)
        ref = render_deformed(source, np.zeros(cam.shape + (2,)), cam, noise_seed=seed).image
        out.append((seed, source, ref))
    return out


def pattern_sweep(spec: SweepSpec | None = None, out_csv=None, progress=None) -> list[dict]:
    """Mean marker tracking error per (d, r, indenter) over scripted indentations.

    Each cell averages over ``spec.pattern_seeds`` pattern realizations. Cells
    that raise are recorded with ``dbar_px = nan`` and the error text.
    """
    spec = spec or SweepSpec()
    spec.validate()
    cam = spec.camera
    rows = []
    for d in spec.d_values:
        for r in spec.r_values:
            base = {"d_mm": d, "r": r, "patch_px": d * cam.px_per_mm}
            try:
                sources = _sweep_sources(spec, d, r, cam)
            except Exception as exc:
                log.error("sweep cell d=%g r=%g failed: %s", d, r, exc)
                rows.extend({**base, "indenter": s, "dbar_px": math.nan, "dbar_mm": math.nan,
                             "error": str(exc)} for s in spec.indenters)
                continue
            for shape in spec.indenters:
                errs, err_text = [], ""
                try:
                    for k, (sc, ng, sg) in enumerate(sweep_scenarios(spec, shape)):
                        gt = displacement_field(sc, cam, normal_gain=ng, shear_gain=sg)
                        for seed, source, ref in sources:
                            frame = render_deformed(source, gt, cam, noise_seed=seed + 1 + k).image
                            flow = dense_flow(ref, frame, spec.flow)
                            errs.append(tracking_error_report(flow, gt.marker_positions,
                                                              gt.marker_displacements).mean)
                    dbar = float(np.mean(errs))
                except Exception as exc:
                    log.error("sweep cell d=%g r=%g %s failed: %s", d, r, shape, exc)
                    dbar, err_text = math.nan, str(exc)
                rows.append({**base, "indenter": shape, "dbar_px": dbar,
                             "dbar_mm": dbar / cam.px_per_mm, "error": err_text})
                if progress:
                    progress(rows[-1])
    if out_csv is not None:
        from .io import write_table

        write_table(out_csv, rows)
        write_table(Path(out_csv).with_suffix(".plot.csv"), sweep_plot_data(rows))
    return rows


def sweep_plot_data(rows: list[dict]) -> list[dict]:
    """Stacked-column layout: one row per (d, r) cell, one column per indenter."""
    cells: dict[tuple, dict] = {}
    for row in rows:
        key = (row["d_mm"], row["r"])
        cell = cells.setdefault(key, {"d_mm": key[0], "r": key[1]})
        cell[row["indenter"]] = row["dbar_mm"]
    return list(cells.values())


def sweep_mean(rows: list[dict], d: float, r: float) -> float:
    vals = [row["dbar_px"] for row in rows if row["d_mm"] == d and row["r"] == r]
    return float(np.mean(vals)) if vals else math.nan


# -- benchmark -----------------------------------------------------------------------

STAGES = ("flow", "density", "nhhd", "features")


@dataclass
class BenchReport:
    flow_ms: float
    density_ms: float
    nhhd_ms: float
    features_ms: float
    total_ms: float
    frames_per_s: float
    raster: tuple[int, int]
    threads: int
    frames: int
    stride: int
    density_stride: int


def bench_stream(config: PipelineConfig, length: int, seed: int = 0) -> list[np.ndarray]:
    """Fixed-seed synthetic press stream on the configured raster."""
    h, w = config.shape
    cam = CameraModel(shape=(h, w), noise_sigma=1.0 / 255.0)
    pat = generate_pattern(PatternParams(resolution_px=(1400, 1400), patch_size_mm=0.1,
                                         randomness=0.5, seed=seed))
    source = resample_to_raster(pat, cam)
    radius = 0.2 * min(h, w) / cam.px_per_mm
    scen = [IndenterScenario(contact_radius_mm=radius, press_depth_mm=4.0 * (i + 1) / length)
            for i in range(length)]
    frames, _ = render_stream(source, scen, cam, noise_seed=seed)
    return frames


def bench(config: PipelineConfig | None = None, length: int = 10, seed: int = 0,
          frames=None) -> BenchReport:
    """Per-stage latency medians over a synthetic stream (first frame excluded as warmup)."""
    config = config or PipelineConfig()
    config.validate()
    if length < 1:
        raise ValueError("bench needs a stream of at least one frame")
    frames = frames if frames is not None else bench_stream(config, length + 1, seed)
    state = AdaptiveTrackerState.start(frames[0], config.rebase_threshold)
    times = {k: [] for k in STAGES}
    s = int(config.stride)
    for frame in frames[1:length + 2]:
        t0 = time.perf_counter()
        state, flow = adaptive_step(state, frame, config.flow)
        t1 = time.perf_counter()
        depth = reconstruct_surface(flow, frame, config.density, config.guided_radius, config.guided_eps)
        t2 = time.perf_counter()
        comps = nhhd(FlowField(flow.u[::s, ::s], flow.valid_mask[::s, ::s]))
        t3 = time.perf_counter()
        build_features(depth.processed[::s, ::s], comps, cell_area=float(s * s))
        t4 = time.perf_counter()
        for k, dt in zip(STAGES, (t1 - t0, t2 - t1, t3 - t2, t4 - t3)):
            times[k].append(dt * 1e3)
    med = {k: float(np.median(v[1:] if len(v) > 1 else v)) for k, v in times.items()}
    total = sum(med.values())
    return BenchReport(med["flow"], med["density"], med["nhhd"], med["features"], total,
                       1e3 / total if total > 0 else math.inf, config.raster, config.threads,
                       max(len(times["flow"]) - 1, 1), s, config.density.downsample_stride)
