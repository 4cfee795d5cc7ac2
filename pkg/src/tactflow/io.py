"""File formats: flow and depth rasters, images, model and config manifests, CSV tables."""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .depth import DensityMap
from .flow import FlowField
from .force import ForceModel

FLOW_MAGIC = b"PIEH"
DEPTH_MAGIC = b"DPTH"


def _write_raster(path, magic: bytes, data: np.ndarray) -> None:
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<ii", w, h))
        fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def _read_raster(path, magic: bytes, channels: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != magic:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}, expected {magic!r}")
    w, h = struct.unpack("<ii", raw[4:12])
    n = w * h * channels
    if len(raw) != 12 + 4 * n:
        raise ValueError(f"{path}: payload size does not match {w}x{h}x{channels}")
    data = np.frombuffer(raw, dtype="<f4", offset=12, count=n)
    return data.reshape((h, w, channels) if channels > 1 else (h, w)).astype(np.float32)


def mask_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".mask.png")


def write_flow(path, flow: FlowField) -> None:
    """Binary flow file plus an 8-bit valid-mask sidecar (``<stem>.mask.png``)."""
    _write_raster(path, FLOW_MAGIC, flow.u)
    Image.fromarray(flow.valid_mask.astype(np.uint8) * 255).save(mask_path(path))


def read_flow(path) -> FlowField:
    u = _read_raster(path, FLOW_MAGIC, 2)
    mp = mask_path(path)
    if mp.exists():
        valid = np.asarray(Image.open(mp)) > 127
    else:
        valid = np.isfinite(u).all(axis=2)
    return FlowField(u.astype(np.float64), valid)


def write_depth(path, depth: DensityMap | np.ndarray) -> None:
    arr = depth.relative_depth if isinstance(depth, DensityMap) else depth
    _write_raster(path, DEPTH_MAGIC, np.asarray(arr))


def read_depth(path) -> np.ndarray:
    return _read_raster(path, DEPTH_MAGIC, 1).astype(np.float64)


def read_image(path) -> np.ndarray:
    """Load an 8-bit image as float RGB in [0, 1]."""
    img = Image.open(path).convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def write_image(path, img: np.ndarray) -> None:
    Image.fromarray(to_uint8(img)).save(path)


def heatmap(values: np.ndarray) -> np.ndarray:
    """Map a scalar raster to a black-red-yellow-white RGB image in [0, 1]."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = float(np.min(v)), float(np.max(v))
    t = (v - lo) / (hi - lo) if hi > lo else np.zeros_like(v)
    return np.stack([np.clip(3 * t, 0, 1), np.clip(3 * t - 1, 0, 1), np.clip(3 * t - 2, 0, 1)], axis=-1)


# -- text manifests -------------------------------------------------------------

def read_config(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def write_config(path, values: dict) -> None:
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in values.items()))


def write_model(path, model: ForceModel) -> None:
    lines = [f"a_{i + 1}{j + 1} = {float(model.A[i, j])!r}" for i in range(3) for j in range(6)]
    lines += [f"feature_order = {model.feature_order}", f"stride = {model.stride}",
              f"units = {model.units}"]
    Path(path).write_text("\n".join(lines) + "\n")


def read_model(path) -> ForceModel:
    cfg = read_config(path)
    A = np.zeros((3, 6))
    for i in range(3):
        for j in range(6):
            key = f"a_{i + 1}{j + 1}"
            if key not in cfg:
                raise ValueError(f"{path}: missing coefficient {key}")
            A[i, j] = float(cfg[key])
    model = ForceModel(A, int(cfg.get("feature_order", 3)), int(cfg.get("stride", 1)),
                       cfg.get("units", "N"))
    model.check_constraints()
    return model


# -- CSV tables -------------------------------------------------------------------

FEATURE_COLUMNS = [f"X_{i + 1}{j + 1}" for i in range(6) for j in range(3)]
FORCE_COLUMNS = ["F_normal", "F_shearX", "F_shearY"]


def write_dataset(path, samples) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(FEATURE_COLUMNS + FORCE_COLUMNS)
        for s in samples:
            wr.writerow([repr(float(v)) for v in np.ravel(s.features_X)]
                        + [repr(float(v)) for v in s.measured_F])


def read_dataset(path):
    from .simulator import ForceSample

    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            X = np.array([float(row[c]) for c in FEATURE_COLUMNS]).reshape(6, 3)
            F = np.array([float(row[c]) for c in FORCE_COLUMNS])
            out.append(ForceSample(X, F))
    return out


def write_table(path, rows: list[dict]) -> None:
    if not rows:
        Path(path).write_text("")
        return
    keys = list(rows[0])
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=keys)
        wr.writeheader()
        wr.writerows(rows)


SCENARIO_COLUMNS = ("shape", "diameter", "cx", "cy", "depth", "sx", "sy")


def read_scenarios(path):
    """Scenarios from a CSV (one per row) or a single ``key = value`` file.

    Recognized columns/keys: shape, diameter, cx, cy, depth, sx, sy and
    optionally contact_radius, count, spacing, angle. Spheres without an
    explicit contact radius get the spherical-cap chord.
    """
    from .simulator import IndenterScenario, sphere_scenario

    text = Path(path).read_text()
    if "=" in text.split("\n", 1)[0]:
        rows = [read_config(path)]
    else:
        rows = list(csv.DictReader(text.splitlines()))
    out = []
    for row in rows:
        g = lambda k, d=0.0: float(row.get(k) or d)  # noqa: E731
        shape = row.get("shape", "sphere").strip()
        center, shear = (g("cx"), g("cy")), (g("sx"), g("sy"))
        if shape == "sphere" and not row.get("contact_radius"):
            out.append(sphere_scenario(g("diameter", 15.0), g("depth"), center, shear))
        else:
            out.append(IndenterScenario(shape, center, g("depth"), shear, g("contact_radius", 4.0),
                                        g("diameter", 15.0), int(g("count", 4)),
                                        g("spacing", 6.0), g("angle")))
    return out
