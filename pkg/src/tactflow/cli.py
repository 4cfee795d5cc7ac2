"""Command-line entry point: ``tactflow <command> [options]``.

Every command that writes files also writes ``manifest.txt`` (or
``<output>.manifest.txt``) echoing its arguments, so runs can be repeated.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import io
from .depth import DensityParams, reconstruct_surface
from .flow import FlowField, FlowParams, track_stream
from .force import calibrate, force_distribution, build_features, nhhd, quick_total_force
from .pattern import PatternParams, generate_pattern, validate_pattern
from .pipeline import (PipelineConfig, SweepSpec, bench, pattern_sweep, run_pipeline,
                       sweep_mean)
from .simulator import (CameraModel, REFERENCE_A_SHAPE, displacement_field, protocol_scenarios,
                        render_deformed, resample_to_raster, synth_force_dataset)

log = logging.getLogger("tactflow")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _raster(text: str) -> tuple[int, int]:
    w, h = text.lower().split("x")
    return int(w), int(h)


def _manifest(path: Path, args: argparse.Namespace, extra: dict | None = None) -> None:
    values = {k: v for k, v in vars(args).items() if k != "func"}
    values.update(extra or {})
    io.write_config(path, values)


def _out_manifest(out: Path) -> Path:
    return out / "manifest.txt" if out.is_dir() else out.with_name(out.name + ".manifest.txt")


def _load_config(path) -> PipelineConfig:
    return PipelineConfig.from_mapping(io.read_config(path)) if path else PipelineConfig()


def _frames(seq: Path) -> list[Path]:
    files = sorted(p for p in seq.iterdir()
                   if p.suffix.lower() in (".png", ".ppm", ".pgm") and not p.name.endswith(".mask.png"))
    if not files:
        raise SystemExit(f"no .png/.ppm frames in {seq}")
    return files


# -- commands ---------------------------------------------------------------------

def cmd_gen_pattern(args) -> int:
    params = PatternParams((args.resolution, args.resolution), args.patch_size, args.r,
                           args.print_area, args.seed)
    img = generate_pattern(params)
    rep = validate_pattern(img)
    out = Path(args.output)
    io.write_image(out, img.pixels)
    _manifest(_out_manifest(out), args, {
        "constraint_satisfaction_rate": rep.constraint_satisfaction_rate,
        "min_neighbor_gap": rep.min_neighbor_gap, "fallback_count": rep.fallback_count,
        "patch_px": params.patch_px})
    print(f"{out}: {params.grid_shape[0]}x{params.grid_shape[1]} patches of {params.patch_px} px, "
          f"satisfaction {rep.constraint_satisfaction_rate:.6f}, min gap {rep.min_neighbor_gap:.4f}, "
          f"fallbacks {rep.fallback_count}")
    return 0


def _camera(args) -> CameraModel:
    w, h = args.raster
    return CameraModel(shape=(h, w), px_per_mm=args.px_per_mm, noise_sigma=args.noise,
                       blur_sigma=args.blur, gain=args.gain, print_blur_mm=args.print_blur)


def cmd_simulate(args) -> int:
    out = Path(args.output)
    if args.dataset:
        scen = protocol_scenarios()
        from .force import range_matched_model
        from .pipeline import scenario_features

        feats = [scenario_features(sc) for sc in scen]
        model = range_matched_model(REFERENCE_A_SHAPE, feats)
        data = synth_force_dataset(model, scen, args.force_noise, features=feats, seed=args.seed)
        io.write_dataset(out, data)
        io.write_model(out.with_suffix(".truth.txt"), model)
        _manifest(_out_manifest(out), args)
        print(f"{out}: {len(data)} samples")
        return 0
    if not args.pattern or not args.scenario:
        raise SystemExit("simulate needs --pattern and --scenario (or --dataset)")
    cam = _camera(args)
    pat = io.read_image(args.pattern)
    source = resample_to_raster(pat, replace(cam, noise_sigma=0.0),
                                pattern_px_per_mm=pat.shape[1] / args.pattern_mm)
    out.mkdir(parents=True, exist_ok=True)
    zero = np.zeros(cam.shape + (2,))
    io.write_image(out / "frame_00000.png", render_deformed(source, zero, cam, args.seed).image)
    k = 0
    for k, sc in enumerate(io.read_scenarios(args.scenario), start=1):
        gt = displacement_field(sc, cam)
        frame = render_deformed(source, gt, cam, args.seed + k)
        io.write_image(out / f"frame_{k:05d}.png", frame.image)
        io.write_flow(out / f"gt_{k:05d}.flo", FlowField(gt.field, frame.valid))
        np.savetxt(out / f"markers_{k:05d}.csv",
                   np.hstack([gt.marker_positions, gt.marker_displacements]),
                   delimiter=",", header="x,y,dx,dy", comments="")
    _manifest(out / "manifest.txt", args)
    print(f"{out}: rendered {k} frames")
    return 0


def cmd_track(args) -> int:
    cfg = _load_config(args.params)
    frames = [io.read_image(args.ref)] + [io.read_image(p) for p in _frames(Path(args.seq))]
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    k, rebases = 0, 0
    for k, (state, fl) in enumerate(track_stream(frames, cfg.flow, cfg.rebase_threshold,
                                                 adaptive=not args.static), start=1):
        io.write_flow(out / f"flow_{k:05d}.flo", fl)
        rebases = state.rebase_count
    _manifest(out / "manifest.txt", args, {**cfg.to_mapping(), "rebase_count": rebases})
    print(f"{out}: {k} flows, {rebases} rebases")
    return 0


def cmd_depth(args) -> int:
    flow = io.read_flow(args.flow)
    frame = io.read_image(args.frame)
    params = DensityParams(sigma=args.sigma, downsample_stride=args.stride)
    dm = reconstruct_surface(flow, frame, params, args.radius, args.eps)
    out = Path(args.output)
    io.write_depth(out, dm)
    io.write_image(out.with_suffix(".png"), io.heatmap(dm.processed))
    _manifest(_out_manifest(out), args)
    print(f"{out}: depth range [{dm.relative_depth.min():.4f}, {dm.relative_depth.max():.4f}]")
    return 0


def cmd_nhhd(args) -> int:
    flow = io.read_flow(args.flow)
    c = nhhd(flow)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("d", "r", "h"):
        io.write_flow(out / f"{name}.flo", FlowField(getattr(c, name), flow.valid_mask))
    normal, shear = quick_total_force(c)
    _manifest(out / "manifest.txt", args, {"normal_proxy": normal, "shear_proxy_x": shear[0],
                                           "shear_proxy_y": shear[1]})
    print(f"normal proxy {normal:.6g}, shear proxy ({shear[0]:.6g}, {shear[1]:.6g})")
    return 0


def cmd_calibrate(args) -> int:
    data = io.read_dataset(args.data)
    model, rep = calibrate(data, args.split, args.seed, stride=args.stride)
    out = Path(args.output)
    io.write_model(out, model)
    extra = {}
    for a in rep.axes:
        r2 = f"{a.adjusted_r2:.4f}" if a.r2_defined else "undefined"
        print(f"{a.axis:7s} adjusted R2 {r2}  RMSE {a.rmse:.4f} N")
        extra[f"{a.axis}.adjusted_r2"] = r2
        extra[f"{a.axis}.rmse"] = a.rmse
    _manifest(_out_manifest(out), args, {"n_train": rep.n_train, "n_test": rep.n_test, **extra})
    return 0


def cmd_estimate(args) -> int:
    flow = io.read_flow(args.flow)
    depth = io.read_depth(args.depth)
    model = io.read_model(args.model)
    s = int(model.stride)
    c = nhhd(FlowField(flow.u[::s, ::s], flow.valid_mask[::s, ::s]))
    x, X = build_features(np.maximum(depth, 0.0)[::s, ::s], c, cell_area=float(s * s))
    dist = force_distribution(model, x, X)
    out = Path(args.output)
    io.write_table(out, [dict(zip(("F_normal", "F_shearX", "F_shearY"), map(float, dist.F)))])
    if args.distribution:
        for name in ("f_normal", "f_shearX", "f_shearY"):
            io.write_depth(out.with_name(f"{out.stem}_{name}.dpth"), getattr(dist, name))
    _manifest(_out_manifest(out), args)
    print("F = ({:.4f}, {:.4f}, {:.4f}) N".format(*dist.F))
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args.config)
    if args.model:
        cfg = replace(cfg, model_path=args.model)
    frames = (io.read_image(p) for p in _frames(Path(args.seq)))
    res = run_pipeline(cfg, frames, out_dir=args.output)
    failed = sum(r.error is not None for r in res)
    _manifest(Path(args.output) / "manifest.txt", args)
    print(f"{args.output}: {len(res)} frames, {failed} failed, "
          f"{res[-1].rebase_count if res else 0} rebases")
    return 0


def cmd_sweep(args) -> int:
    spec = SweepSpec()
    if args.d:
        spec = replace(spec, d_values=_floats(args.d))
    if args.r:
        spec = replace(spec, r_values=_floats(args.r))
    if args.indenters:
        spec = replace(spec, indenters=tuple(args.indenters.split(",")))
    if args.seeds:
        spec = replace(spec, pattern_seeds=tuple(int(v) for v in args.seeds.split(",")))
    rows = pattern_sweep(spec, out_csv=args.output,
                         progress=lambda r: log.info("d=%g r=%g %s: %.4f px", r["d_mm"], r["r"],
                                                     r["indenter"], r["dbar_px"]))
    _manifest(_out_manifest(Path(args.output)), args)
    for d in spec.d_values:
        print(f"d={d:<6g} " + "  ".join(f"r={r:g}: {sweep_mean(rows, d, r):.4f}" for r in spec.r_values))
    return 0


def cmd_bench(args) -> int:
    cfg = _load_config(args.config)
    cfg = replace(cfg, raster=args.raster, stride=args.stride,
                  density=replace(cfg.density, downsample_stride=args.stride), threads=args.threads)
    rep = bench(cfg, args.length, args.seed)
    for k, v in asdict(rep).items():
        print(f"{k:14s} {v}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tactflow", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-pattern", help="generate a dense random color pattern")
    g.add_argument("--resolution", type=int, default=700)
    g.add_argument("--patch-size", type=float, default=0.15, help="patch side in mm")
    g.add_argument("--r", type=float, default=0.1, help="randomness factor in [0, 1)")
    g.add_argument("--print-area", type=float, default=35.0, help="printed side in mm")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_gen_pattern)

    s = sub.add_parser("simulate", help="render indentation frames or a force dataset")
    s.add_argument("--pattern", help="pattern image")
    s.add_argument("--pattern-mm", type=float, default=35.0, help="printed side of the pattern")
    s.add_argument("--scenario", help="scenario CSV or key=value file")
    s.add_argument("--raster", type=_raster, default=(798, 586), help="WxH")
    s.add_argument("--px-per-mm", type=float, default=798 / 36.0)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--blur", type=float, default=0.0)
    s.add_argument("--gain", type=float, default=1.0)
    s.add_argument("--print-blur", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dataset", action="store_true",
                   help="write the 2070-sample synthetic force dataset CSV instead of frames")
    s.add_argument("--force-noise", type=float, default=0.1)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("track", help="dense flow of a frame sequence against a reference")
    t.add_argument("--ref", required=True)
    t.add_argument("--seq", required=True, help="directory of frames")
    t.add_argument("--params", help="config file")
    t.add_argument("--static", action="store_true", help="disable adaptive referencing")
    t.add_argument("-o", "--output", required=True)
    t.set_defaults(func=cmd_track)

    d = sub.add_parser("depth", help="relative depth from a flow file")
    d.add_argument("--flow", required=True)
    d.add_argument("--frame", required=True)
    d.add_argument("--sigma", type=float, default=3.0)
    d.add_argument("--stride", type=int, default=2)
    d.add_argument("--radius", type=int, default=8)
    d.add_argument("--eps", type=float, default=1e-3)
    d.add_argument("-o", "--output", required=True)
    d.set_defaults(func=cmd_depth)

    n = sub.add_parser("nhhd", help="decompose a flow file")
    n.add_argument("--flow", required=True)
    n.add_argument("-o", "--output", required=True)
    n.set_defaults(func=cmd_nhhd)

    c = sub.add_parser("calibrate", help="fit the force model to a dataset CSV")
    c.add_argument("--data", required=True)
    c.add_argument("--split", type=float, default=0.8)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--stride", type=int, default=1, help="feature stride the dataset was built at")
    c.add_argument("-o", "--output", required=True)
    c.set_defaults(func=cmd_calibrate)

    e = sub.add_parser("estimate", help="force totals from a flow and depth file")
    e.add_argument("--flow", required=True)
    e.add_argument("--depth", required=True)
    e.add_argument("--model", required=True)
    e.add_argument("--distribution", action="store_true", help="also write per-cell force rasters")
    e.add_argument("-o", "--output", required=True)
    e.set_defaults(func=cmd_estimate)

    r = sub.add_parser("run", help="full pipeline over a frame sequence")
    r.add_argument("--seq", required=True)
    r.add_argument("--config")
    r.add_argument("--model")
    r.add_argument("-o", "--output", required=True)
    r.set_defaults(func=cmd_run)

    w = sub.add_parser("sweep", help="pattern-selection tracking-error sweep")
    w.add_argument("--d", help="comma-separated patch sizes (mm)")
    w.add_argument("--r", help="comma-separated randomness factors")
    w.add_argument("--indenters", help="comma-separated indenter shapes")
    w.add_argument("--seeds", help="comma-separated pattern seeds")
    w.add_argument("-o", "--output", required=True)
    w.set_defaults(func=cmd_sweep)

    b = sub.add_parser("bench", help="per-stage latency on a synthetic stream")
    b.add_argument("--config")
    b.add_argument("--raster", type=_raster, default=(798, 586))
    b.add_argument("--length", type=int, default=10)
    b.add_argument("--stride", type=int, default=2)
    b.add_argument("--threads", type=int, default=1)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
