"""Flow decomposition, cubic force features and the linear force model.

The flow is split into a curl-free part, a divergence-free part and a
harmonic remainder with free-space Poisson solves (no boundary conditions on
the raster edge). Normal force is modelled from powers of the processed
density, shear force from powers of the divergence-free plus harmonic flow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import fft

from .depth import DensityMap
from .flow import FlowField

FEATURE_ORDER = 3
AXES = ("normal", "shearX", "shearY")

# mean of ln(r) over the unit cell centered on the origin
_LOG_CELL_MEAN = math.log(math.sqrt(2.0) / 2.0) - 1.5 + math.pi / 4.0


@dataclass
class NHHDComponents:
    d: np.ndarray
    r: np.ndarray
    h: np.ndarray

    @property
    def V(self) -> np.ndarray:
        return self.d + self.r + self.h


@lru_cache(maxsize=8)
def _green_spectrum(h: int, w: int):
    """rFFT of the free-space Laplacian Green's function on a padded grid."""
    fh, fw = fft.next_fast_len(2 * h, real=True), fft.next_fast_len(2 * w, real=True)
    dy = np.arange(-(h - 1), h)
    dx = np.arange(-(w - 1), w)
    r = np.hypot(dx[None, :], dy[:, None])
    with np.errstate(divide="ignore"):
        g = np.log(r) / (2 * math.pi)
    g[h - 1, w - 1] = _LOG_CELL_MEAN / (2 * math.pi)
    return fft.rfft2(g, s=(fh, fw)), (fh, fw)


def solve_poisson_free(f: np.ndarray) -> np.ndarray:
    """Potential ``p`` with ``laplacian(p) = f`` and free-space decay (unit grid spacing)."""
    h, w = f.shape
    G, shape = _green_spectrum(h, w)
    conv = fft.irfft2(fft.rfft2(f, s=shape) * G, s=shape)
    return conv[h - 1:2 * h - 1, w - 1:2 * w - 1]


def divergence(V: np.ndarray) -> np.ndarray:
    return np.gradient(V[..., 0], axis=1) + np.gradient(V[..., 1], axis=0)


def curl(V: np.ndarray) -> np.ndarray:
    return np.gradient(V[..., 1], axis=1) - np.gradient(V[..., 0], axis=0)


def _field(V) -> np.ndarray:
    if isinstance(V, FlowField):
        u = np.where(V.valid_mask[..., None], V.u, 0.0)
    else:
        u = np.asarray(V, dtype=np.float64)
    if u.ndim != 3 or u.shape[2] != 2:
        raise ValueError(f"expected an HxWx2 vector field, got {u.shape}")
    if not np.isfinite(u).all():
        raise ValueError("vector field contains non-finite values")
    return u


def nhhd(V: FlowField | np.ndarray) -> NHHDComponents:
    """Natural Helmholtz-Hodge decomposition ``V = d + r + h``.

    Invalid pixels of a :class:`FlowField` are treated as zero motion.
    """
    u = _field(V)
    if not u.any():
        z = np.zeros_like(u)
        return NHHDComponents(z, z.copy(), z.copy())
    phi = solve_poisson_free(divergence(u))
    psi = solve_poisson_free(-curl(u))
    d = np.stack([np.gradient(phi, axis=1), np.gradient(phi, axis=0)], axis=-1)
    r = np.stack([np.gradient(psi, axis=0), -np.gradient(psi, axis=1)], axis=-1)
    return NHHDComponents(d, r, u - d - r)


def quick_total_force(c: NHHDComponents) -> tuple[float, np.ndarray]:
    """Pre-calibration proxies: summed curl-free magnitude and vector sum of the flow."""
    normal = float(np.hypot(c.d[..., 0], c.d[..., 1]).sum())
    shear = c.V.reshape(-1, 2).sum(axis=0)
    return normal, shear


def build_features(Dp: DensityMap | np.ndarray, c: NHHDComponents, cell_area: float = 1.0):
    """Per-point 6x3 feature stacks and their raster sums.

    Column 0 holds ``Dp, Dp^2, Dp^3`` over three zero rows; columns 1 and 2
    both hold ``sx, sx^2, sx^3, sy, sy^2, sy^3`` with ``s = h + r``.
    ``cell_area`` scales every point (use stride**2 on a subsampled raster).

    Returns
    -------
    x : ndarray, shape (H, W, 6, 3)
    X : ndarray, shape (6, 3)
    """
    D = Dp.processed if isinstance(Dp, DensityMap) else np.asarray(Dp, dtype=np.float64)
    s = c.h + c.r
    if D.shape != s.shape[:2]:
        raise ValueError(f"density raster {D.shape} does not match flow raster {s.shape[:2]}")
    if (D < 0).any():
        raise ValueError("processed density must be non-negative")
    H, W = D.shape
    x = np.zeros((H, W, 6, 3))
    for k in range(FEATURE_ORDER):
        x[:, :, k, 0] = D ** (k + 1)
        x[:, :, k, 1] = s[..., 0] ** (k + 1)
        x[:, :, k + 3, 1] = s[..., 1] ** (k + 1)
    x[:, :, :, 2] = x[:, :, :, 1]
    x *= cell_area
    return x, x.sum(axis=(0, 1))


@dataclass
class ForceModel:
    A: np.ndarray
    feature_order: int = FEATURE_ORDER
    stride: int = 1
    units: str = "N"

    def __post_init__(self):
        self.A = np.array(self.A, dtype=np.float64)
        if self.A.shape != (3, 6):
            raise ValueError(f"A must be 3x6, got {self.A.shape}")

    def check_constraints(self) -> None:
        if not np.isfinite(self.A).all():
            raise ValueError("force model has non-finite coefficients")
        if np.any(self.A[0, 3:] != 0):
            raise ValueError("normal row must not use shear features (a_14 = a_15 = a_16 = 0)")

    def predict(self, X: np.ndarray) -> np.ndarray:
        """``diag(A X)`` for a 6x3 feature matrix (or a stack of them)."""
        return np.einsum("kj,...jk->...k", self.A, np.asarray(X, dtype=np.float64))


@dataclass
class ForceDistribution:
    f_normal: np.ndarray
    f_shearX: np.ndarray
    f_shearY: np.ndarray
    F: np.ndarray


def force_distribution(model: ForceModel, x: np.ndarray, X: np.ndarray | None = None) -> ForceDistribution:
    f = model.predict(x)
    F = model.predict(X) if X is not None else f.reshape(-1, 3).sum(axis=0)
    return ForceDistribution(f[..., 0], f[..., 1], f[..., 2], F)


# -- calibration ---------------------------------------------------------------

# active feature rows per force axis (the rest are structurally zero)
ACTIVE = (slice(0, 3), slice(0, 6), slice(0, 6))


@dataclass
class AxisFit:
    axis: str
    adjusted_r2: float
    rmse: float
    r2_defined: bool


@dataclass
class FitReport:
    axes: list[AxisFit]
    n_train: int
    n_test: int
    train_index: np.ndarray = field(repr=False, default=None)
    test_index: np.ndarray = field(repr=False, default=None)

    def row(self, axis: str) -> AxisFit:
        return next(a for a in self.axes if a.axis == axis)


def adjusted_r2(y: np.ndarray, pred: np.ndarray, n_params: int) -> tuple[float, bool]:
    n = len(y)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0 or n - n_params - 1 <= 0:
        return float("nan"), False
    r2 = 1.0 - float(((y - pred) ** 2).sum()) / ss_tot
    return 1.0 - (1.0 - r2) * (n - 1) / (n - n_params - 1), True


def split_indices(n: int, train_fraction: float = 0.8, seed: int | None = 0):
    """Train/test index split; ``seed=None`` keeps dataset order."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    order = np.arange(n) if seed is None else np.random.default_rng(seed).permutation(n)
    k = int(round(train_fraction * n))
    return np.sort(order[:k]), np.sort(order[k:])


def calibrate(dataset, train_fraction: float = 0.8, seed: int | None = 0, stride: int = 1):
    """Fit ``A`` row by row with ordinary least squares on the training split.

    Columns are scaled to unit norm before solving (the cubic features span
    many orders of magnitude) and the solution is rescaled afterwards.
    """
    if len(dataset) < 20:
        raise ValueError(f"need at least 20 samples, got {len(dataset)}")
    X = np.stack([np.asarray(s.features_X, dtype=np.float64) for s in dataset])
    F = np.stack([np.asarray(s.measured_F, dtype=np.float64) for s in dataset])
    if not (np.isfinite(X).all() and np.isfinite(F).all()):
        raise ValueError("dataset contains non-finite features or forces")
    tr, te = split_indices(len(dataset), train_fraction, seed)
    A = np.zeros((3, 6))
    fits = []
    for k, axis in enumerate(AXES):
        cols = ACTIVE[k]
        design = X[:, cols, k]
        Dtr = design[tr]
        norms = np.linalg.norm(Dtr, axis=0)
        if (norms == 0).any() or np.linalg.matrix_rank(Dtr / np.where(norms > 0, norms, 1.0)) < Dtr.shape[1]:
            raise ValueError(
                f"design matrix for row {k + 1} ({axis}) is rank deficient; "
                "add scenarios with more diverse contact depths and shear directions"
            )
        coef, *_ = np.linalg.lstsq(Dtr / norms, F[tr, k], rcond=None)
        A[k, cols] = coef / norms
        pred = design[te] @ A[k, cols]
        yte = F[te, k]
        r2, ok = adjusted_r2(yte, pred, Dtr.shape[1])
        fits.append(AxisFit(axis, r2, float(np.sqrt(np.mean((yte - pred) ** 2))), ok))
    return ForceModel(A, stride=stride), FitReport(fits, len(tr), len(te), tr, te)


# reported force spans used to scale synthetic models: normal max, shear extremes
TARGET_RANGES = {"normal": 9.67, "shearX": (-2.49, 2.94), "shearY": (-2.82, 2.86)}


def range_matched_model(A_shape: np.ndarray, features, ranges=TARGET_RANGES) -> ForceModel:
    """Scale each row of ``A_shape`` so predicted forces over ``features`` span ``ranges``.

    Normal: the largest prediction equals the normal maximum. Shear: the
    largest absolute prediction equals the largest absolute bound.
    """
    A = np.array(A_shape, dtype=np.float64)
    pred = ForceModel(A).predict(np.stack(features))
    targets = (ranges["normal"], max(map(abs, ranges["shearX"])), max(map(abs, ranges["shearY"])))
    for k, t in enumerate(targets):
        peak = pred[:, k].max() if k == 0 else np.abs(pred[:, k]).max()
        if peak > 0:
            A[k] *= t / peak
    return ForceModel(A)
