"""Dense random color patterns with a neighbor-contrast constraint.

A pattern is a square raster of constant-color square patches. Patches are
filled in row-major order; each new patch is drawn uniformly from the RGB cube
and redrawn until its squared difference to every already-filled 4-neighbor,
in every channel, is at least the randomness factor ``r``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_DRAWS = 1024
# redraws per level of the neighbor repair, and how deep it recurses
MAX_REPAIRS = 8
REPAIR_DEPTH = 2
# total redraws spent repairing a single patch
REPAIR_BUDGET = 256


@dataclass(frozen=True)
class PatternParams:
    """Geometry and randomness of a printed pattern.

    ``patch_size_mm`` is the side of one color patch; the pattern is printed
    on a ``print_area_mm`` square and rasterized at ``resolution_px``.
    """

    resolution_px: tuple[int, int] = (700, 700)
    patch_size_mm: float = 0.15
    randomness: float = 0.1
    print_area_mm: float = 35.0
    seed: int = 0

    @property
    def patch_px(self) -> int:
        return int(round(self.patch_size_mm / self.print_area_mm * self.resolution_px[1]))

    @property
    def grid_shape(self) -> tuple[int, int]:
        """Number of patches per column and row, trailing partial patches included."""
        p = self.patch_px
        h, w = self.resolution_px
        return (-(-h // p), -(-w // p))

    @property
    def px_per_mm(self) -> float:
        return self.resolution_px[1] / self.print_area_mm

    def validate(self) -> None:
        h, w = self.resolution_px
        if h != w or h < 1:
            raise ValueError(f"pattern resolution must be square and positive, got {self.resolution_px}")
        if not 0.0 <= self.randomness < 1.0:
            raise ValueError(f"randomness r must lie in [0, 1), got {self.randomness}")
        if self.patch_size_mm <= 0 or self.print_area_mm <= 0:
            raise ValueError("patch size and print area must be positive")
        if self.patch_px < 1:
            raise ValueError(
                f"patch of {self.patch_size_mm} mm maps to {self.patch_px} px at "
                f"{self.resolution_px[1]} px / {self.print_area_mm} mm; need >= 1"
            )


@dataclass
class PatternImage:
    pixels: np.ndarray
    params: PatternParams
    colors: np.ndarray | None = None
    fallback_mask: np.ndarray | None = None
    draws: np.ndarray | None = None
    repairs: int = 0

    @property
    def fallback_count(self) -> int:
        return 0 if self.fallback_mask is None else int(self.fallback_mask.sum())


@dataclass
class PatternReport:
    constraint_satisfaction_rate: float
    min_neighbor_gap: float
    fallback_count: int
    total_patches: int = 0
    satisfied: np.ndarray = field(default=None, repr=False)


def _gap(cands: np.ndarray, neighbors: np.ndarray) -> np.ndarray:
    # min over neighbors and channels of squared difference, per candidate
    d = cands[:, None, :] - neighbors[None, :, :]
    return (d * d).min(axis=(1, 2))


def _admissible(values, s: float) -> list[tuple[float, float]]:
    """Sub-intervals of [0, 1] at distance >= ``s`` from every value."""
    out = []
    lo = 0.0
    for v in sorted(values):
        a, b = v - s, v + s
        if a > lo:
            out.append((lo, min(a, 1.0)))
        lo = max(lo, b)
        if lo >= 1.0:
            break
    if lo < 1.0:
        out.append((lo, 1.0))
    return [(a, b) for a, b in out if b > a]


def _uniform_on(intervals, u: float) -> float:
    total = sum(b - a for a, b in intervals)
    t = u * total
    for a, b in intervals:
        if t <= b - a:
            return a + t
        t -= b - a
    return intervals[-1][1]


def _draw(rng: np.random.Generator, neighbors: np.ndarray, r: float):
    """Draw one color as capped rejection sampling against ``neighbors`` would.

    The acceptance test factorizes over channels, so the number of uniform
    draws until acceptance is geometric in the admissible volume and the
    accepted color is uniform on the admissible box. Both are sampled
    directly. Returns ``(color, n_draws, accepted)``; when the cap of
    ``MAX_DRAWS`` would be hit, ``color`` is ``None``.
    """
    if len(neighbors) == 0 or r == 0.0:
        return rng.random(3), 1, True
    s = float(np.sqrt(r))
    chans = [_admissible(neighbors[:, c].tolist(), s) for c in range(3)]
    p = 1.0
    for iv in chans:
        p *= sum(b - a for a, b in iv)
    if p <= 0.0:
        return None, MAX_DRAWS, False
    n = int(rng.geometric(min(p, 1.0)))
    if n > MAX_DRAWS:
        return None, MAX_DRAWS, False
    u = rng.random(3)
    return np.array([_uniform_on(iv, ui) for iv, ui in zip(chans, u)]), n, True


def _best_of_k(rng: np.random.Generator, neighbors: np.ndarray) -> np.ndarray:
    cands = rng.random((MAX_DRAWS, 3))
    return cands[int(np.argmax(_gap(cands, neighbors)))]


def _placed_neighbors(colors: np.ndarray, placed: np.ndarray, i: int, j: int) -> np.ndarray:
    gh, gw = placed.shape
    nb = [colors[a, b] for a, b in ((i, j - 1), (i - 1, j), (i, j + 1), (i + 1, j))
          if 0 <= a < gh and 0 <= b < gw and placed[a, b]]
    return np.array(nb).reshape(-1, 3)


def generate_pattern(params: PatternParams) -> PatternImage:
    """Fill a patch grid in row-major order and rasterize it.

    Each patch is constrained by its already-filled neighbors (left and up).
    When a patch cannot be accepted within the draw budget, its left and up
    neighbors are redrawn in turn under their own filled-neighbor constraints,
    recursively up to ``REPAIR_DEPTH`` levels. If that still fails, the best of
    ``MAX_DRAWS`` uniform candidates is kept and the patch is flagged as a
    fallback.
    """
    params.validate()
    rng = np.random.default_rng(params.seed)
    r = float(params.randomness)
    gh, gw = params.grid_shape
    colors = np.zeros((gh, gw, 3))
    placed = np.zeros((gh, gw), dtype=bool)
    fallback = np.zeros((gh, gw), dtype=bool)
    draws = np.zeros((gh, gw), dtype=np.int64)
    repairs = 0
    budget = 0

    def place(i: int, j: int, depth: int) -> bool:
        nonlocal repairs, budget
        color, n, ok = _draw(rng, _placed_neighbors(colors, placed, i, j), r)
        draws[i, j] += n
        targets = [(a, b) for a, b in ((i, j - 1), (i - 1, j))
                   if a >= 0 and b >= 0 and not fallback[a, b]]
        attempt = 0
        while not ok and depth > 0 and targets and attempt < MAX_REPAIRS and budget > 0:
            a, b = targets[attempt % len(targets)]
            attempt += 1
            budget -= 1
            # nested repairs may rewrite patches up/left of the target
            win = np.s_[max(0, a - depth):a + 1, max(0, b - depth):b + 1]
            saved = colors[win].copy()
            placed[a, b] = False
            if not place(a, b, depth - 1):
                colors[win] = saved
                placed[a, b] = True
                continue
            placed[a, b] = True
            repairs += 1
            color, n, ok = _draw(rng, _placed_neighbors(colors, placed, i, j), r)
            draws[i, j] += n
        if ok:
            colors[i, j] = color
        return ok

    for i in range(gh):
        for j in range(gw):
            budget = REPAIR_BUDGET
            if not place(i, j, REPAIR_DEPTH):
                colors[i, j] = _best_of_k(rng, _placed_neighbors(colors, placed, i, j))
                fallback[i, j] = True
            placed[i, j] = True

    pixels = rasterize(colors, params)
    return PatternImage(pixels=pixels, params=params, colors=colors,
                        fallback_mask=fallback, draws=draws, repairs=repairs)


def rasterize(colors: np.ndarray, params: PatternParams) -> np.ndarray:
    """Expand a patch color grid to pixels, cropping trailing partial patches."""
    p = params.patch_px
    h, w = params.resolution_px
    img = np.repeat(np.repeat(colors, p, axis=0), p, axis=1)
    return np.ascontiguousarray(img[:h, :w])


def patch_colors(image: PatternImage) -> np.ndarray:
    """Recover the per-patch color grid from the raster (top-left pixel of each patch)."""
    p = image.params.patch_px
    return image.pixels[::p, ::p]


def validate_pattern(image: PatternImage, params: PatternParams | None = None) -> PatternReport:
    """Re-scan a pattern against the full 4-neighbor constraint.

    A patch satisfies the constraint when the minimum squared channel
    difference to each of its existing neighbors is at least ``r``.
    """
    params = params or image.params
    params.validate()
    if image.pixels.shape[:2] != tuple(params.resolution_px) or image.pixels.shape[-1] != 3:
        raise ValueError(
            f"image of shape {image.pixels.shape} does not match resolution {params.resolution_px}"
        )
    c = patch_colors(PatternImage(image.pixels, params))
    gh, gw = c.shape[:2]
    inf = np.full((gh, gw), np.inf)
    horiz = ((c[:, 1:] - c[:, :-1]) ** 2).min(axis=2)
    vert = ((c[1:] - c[:-1]) ** 2).min(axis=2)
    worst = inf.copy()
    worst[:, 1:] = np.minimum(worst[:, 1:], horiz)
    worst[:, :-1] = np.minimum(worst[:, :-1], horiz)
    worst[1:] = np.minimum(worst[1:], vert)
    worst[:-1] = np.minimum(worst[:-1], vert)
    satisfied = worst >= params.randomness
    gaps = [g.min() for g in (horiz, vert) if g.size]
    return PatternReport(
        constraint_satisfaction_rate=float(satisfied.mean()),
        min_neighbor_gap=float(min(gaps)) if gaps else float("inf"),
        fallback_count=image.fallback_count,
        total_patches=gh * gw,
        satisfied=satisfied,
    )


def patch_variance(image: PatternImage) -> float:
    """Largest per-patch pixel variance (0 for a well-formed pattern)."""
    p = image.params.patch_px
    h, w = image.pixels.shape[:2]
    gh, gw = -(-h // p), -(-w // p)
    padded = np.full((gh * p, gw * p, 3), np.nan)
    padded[:h, :w] = image.pixels
    blocks = padded.reshape(gh, p, gw, p, 3)
    # deviations from the block's top-left pixel keep constant blocks exactly 0
    dev = blocks - blocks[:, :1, :, :1]
    mean = np.nanmean(dev, axis=(1, 3))
    return float(np.nanmax(np.nanmean(dev * dev, axis=(1, 3)) - mean * mean))
