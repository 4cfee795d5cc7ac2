from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tactflow.force import (AXES, ForceModel, NHHDComponents, adjusted_r2, build_features,
                            calibrate, curl, divergence, force_distribution, nhhd,
                            quick_total_force, range_matched_model, solve_poisson_free,
                            split_indices)
from tactflow.imaging import pixel_grid
from tactflow.simulator import ForceSample


def _grid(n=64):
    x, y = pixel_grid((n, n))
    c = (n - 1) / 2
    return x - c, y - c


def test_poisson_free_matches_point_source():
    n = 41
    f = np.zeros((n, n))
    f[20, 20] = 1.0
    p = solve_poisson_free(f)
    x, y = _grid(n)
    r = np.hypot(x, y)
    far = r > 5
    assert np.allclose(p[far], np.log(r[far]) / (2 * np.pi), atol=1e-12)


def test_disc_source_potential_is_pure_gradient():
    # uniform expansion inside a disc, decaying outside: the field is a gradient
    n, R = 96, 20.0
    x, y = _grid(n)
    r2 = x * x + y * y
    inside = r2 <= R * R
    scale = np.where(inside, 0.5, 0.5 * R * R / np.where(r2 > 0, r2, 1.0))
    V = np.stack([scale * x, scale * y], -1)
    c = nhhd(V)
    core = r2 <= (0.6 * R) ** 2
    err = np.hypot(*(c.d - V)[core].T).mean() / np.hypot(*V[core].T).mean()
    assert err < 1e-3
    # only stencil error at the kink of the disc edge survives in r
    assert np.hypot(*c.r[core].T).max() < 1e-3


def test_pure_rotation_lands_in_rotational_part():
    x, y = _grid(64)
    g = np.exp(-(x * x + y * y) / 100.0)
    V = np.stack([-y * g, x * g], -1)
    c = nhhd(V)
    mean = lambda a: np.hypot(*a.reshape(-1, 2).T).mean()  # noqa: E731
    assert mean(c.d) < 0.01 * mean(V)
    assert mean(c.r - V) < 0.03 * mean(V)


def test_constant_field_is_harmonic():
    V = np.broadcast_to([1.5, -0.5], (40, 50, 2)).copy()
    c = nhhd(V)
    assert np.allclose(c.d, 0) and np.allclose(c.r, 0)
    assert np.allclose(c.h, V)


@settings(max_examples=20, deadline=None)
@given(st.integers(4, 30), st.integers(4, 30), st.integers(0, 2**31 - 1))
def test_reconstruction_exact(h, w, seed):
    V = np.random.default_rng(seed).normal(size=(h, w, 2))
    c = nhhd(V)
    assert np.allclose(c.d + c.r + c.h, V, atol=1e-12)


def test_derivative_helpers_on_linear_field():
    x, y = pixel_grid((10, 12))
    V = np.stack([2 * x + 3 * y, -y + 5 * x], -1)
    assert np.allclose(divergence(V), 1.0)
    assert np.allclose(curl(V), 5.0 - 3.0)


def test_zero_and_invalid_inputs():
    z = nhhd(np.zeros((8, 8, 2)))
    assert not z.d.any() and not z.r.any() and not z.h.any()
    with pytest.raises(ValueError):
        nhhd(np.zeros((8, 8, 3)))
    bad = np.zeros((8, 8, 2))
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        nhhd(bad)


def test_quick_total_force():
    V = np.zeros((5, 5, 2))
    V[..., 0] = 1.0
    normal, shear = quick_total_force(NHHDComponents(np.zeros_like(V), np.zeros_like(V), V))
    assert normal == 0.0 and np.allclose(shear, [25.0, 0.0])


def test_build_features_layout():
    D = np.array([[0.0, 2.0]])
    s = np.zeros((1, 2, 2))
    s[0, 1] = [3.0, -1.0]
    c = NHHDComponents(np.zeros_like(s), np.zeros_like(s), s)
    x, X = build_features(D, c, cell_area=2.0)
    assert x.shape == (1, 2, 6, 3)
    assert np.allclose(X[:, 0], [4, 8, 16, 0, 0, 0])
    assert np.allclose(X[:, 1], [6, 18, 54, -2, 2, -2])
    assert np.array_equal(X[:, 1], X[:, 2])
    with pytest.raises(ValueError):
        build_features(-D, c)
    with pytest.raises(ValueError):
        build_features(np.zeros((2, 2)), c)


def _dataset(A, n=200, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        X = rng.normal(size=(6, 3))
        X[:, 2] = X[:, 1]
        X[3:, 0] = 0
        F = ForceModel(A).predict(X) + rng.normal(0, noise, 3) * (noise > 0)
        out.append(ForceSample(X, F))
    return out


A_TRUE = np.array([[2.0, -0.5, 0.1, 0, 0, 0],
                   [0.3, 0.2, 0.0, 1.0, 0.1, -0.05],
                   [1.0, -0.2, 0.05, 0.4, 0.0, 0.2]])


def test_calibrate_recovers_noiseless_model():
    model, rep = calibrate(_dataset(A_TRUE))
    assert np.allclose(model.A, A_TRUE, atol=1e-10)
    assert rep.n_train == 160 and rep.n_test == 40
    assert all(a.adjusted_r2 > 0.999999 for a in rep.axes)
    assert [a.axis for a in rep.axes] == list(AXES)


def test_calibrate_errors():
    with pytest.raises(ValueError, match="20"):
        calibrate(_dataset(A_TRUE, n=10))
    ds = _dataset(A_TRUE)
    for s in ds:
        s.features_X[1, 0] = 2 * s.features_X[0, 0]
    with pytest.raises(ValueError, match="row 1"):
        calibrate(ds)


def test_split_and_adjusted_r2():
    tr, te = split_indices(10, 0.8, seed=1)
    assert len(tr) == 8 and set(tr) | set(te) == set(range(10))
    assert np.array_equal(split_indices(10, 0.8, None)[0], np.arange(8))
    y = np.arange(10.0)
    assert adjusted_r2(y, y, 2) == (1.0, True)
    r2, ok = adjusted_r2(np.ones(5), np.ones(5), 1)
    assert not ok and np.isnan(r2)


def test_model_constraints_and_prediction():
    with pytest.raises(ValueError):
        ForceModel(np.zeros((2, 6)))
    bad = ForceModel(A_TRUE.copy())
    bad.A[0, 4] = 1.0
    with pytest.raises(ValueError):
        bad.check_constraints()
    X = np.arange(18.0).reshape(6, 3)
    assert np.allclose(ForceModel(A_TRUE).predict(X), [A_TRUE[k] @ X[:, k] for k in range(3)])


def test_force_distribution_sums_to_total():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(4, 5, 6, 3))
    dist = force_distribution(ForceModel(A_TRUE), x, x.sum(axis=(0, 1)))
    assert np.allclose([dist.f_normal.sum(), dist.f_shearX.sum(), dist.f_shearY.sum()], dist.F)


def test_range_matched_model_hits_targets():
    feats = [s.features_X for s in _dataset(np.abs(A_TRUE))]
    m = range_matched_model(np.abs(A_TRUE), feats, {"normal": 5.0, "shearX": (-1, 2), "shearY": (-3, 1)})
    pred = m.predict(np.stack(feats))
    assert pred[:, 0].max() == pytest.approx(5.0)
    assert np.abs(pred[:, 1]).max() == pytest.approx(2.0)
    assert np.abs(pred[:, 2]).max() == pytest.approx(3.0)


def test_quick_total_force_examples():
    z = nhhd(np.zeros((10, 10, 2)))
    assert quick_total_force(z)[0] == 0 and np.all(quick_total_force(z)[1] == 0)
    t = np.broadcast_to([0.5, -0.25], (10, 12, 2)).copy()
    assert np.allclose(quick_total_force(nhhd(t))[1], [60.0, -30.0])


def test_normal_proxy_grows_with_expansion():
    from tactflow.simulator import CameraModel, displacement_field, sphere_scenario

    cam = CameraModel((80, 80), 5.0)
    proxies = [quick_total_force(nhhd(displacement_field(sphere_scenario(15, 1.0), cam,
                                                         normal_gain=g).field))[0]
               for g in (0.02, 0.05, 0.1, 0.15, 0.2)]
    assert proxies[0] > 0 and np.all(np.diff(proxies) > 0)


def test_build_features_zero_single_and_brute_force():
    z = np.zeros((5, 6, 2))
    x, X = build_features(np.zeros((5, 6)), NHHDComponents(z, z, z))
    assert not x.any() and not X.any()

    D = np.zeros((5, 6))
    D[2, 3] = 0.7
    s = np.zeros((5, 6, 2))
    s[2, 3] = [0.2, -0.4]
    x, X = build_features(D, NHHDComponents(z, np.zeros_like(s), s))
    assert np.array_equal(X, x[2, 3])

    rng = np.random.default_rng(6)
    D = rng.random((8, 8))
    r, h = rng.normal(size=(8, 8, 2)), rng.normal(size=(8, 8, 2))
    _, X = build_features(D, NHHDComponents(np.zeros_like(r), r, h))
    oracle = np.zeros((6, 3))
    for i in range(8):
        for j in range(8):
            sx, sy = r[i, j] + h[i, j]
            for k in range(3):
                oracle[k, 0] += D[i, j] ** (k + 1)
                oracle[k, 1] += sx ** (k + 1)
                oracle[k + 3, 1] += sy ** (k + 1)
    oracle[:, 2] = oracle[:, 1]
    assert np.allclose(X, oracle, rtol=1e-12, atol=1e-12)


def test_calibrate_all_zero_forces():
    ds = _dataset(np.zeros((3, 6)))
    model, rep = calibrate(ds)
    assert np.all(model.A == 0)
    assert all(not a.r2_defined and np.isnan(a.adjusted_r2) for a in rep.axes)


def test_zero_features_give_zero_distribution():
    dist = force_distribution(ForceModel(A_TRUE), np.zeros((4, 4, 6, 3)))
    assert not dist.f_normal.any() and not dist.F.any()


def test_sphere_normal_force_is_confined_to_contact():
    from tactflow.flow import FlowField
    from tactflow.depth import gaussian_density
    from tactflow.simulator import CameraModel, displacement_field, sphere_scenario

    cam = CameraModel((100, 100), 5.0)
    sc = sphere_scenario(15, 1.0)
    fld = displacement_field(sc, cam).field
    fl = FlowField(fld, np.ones((100, 100), bool))
    x, _ = build_features(gaussian_density(fl).processed, nhhd(fl))
    A = np.zeros((3, 6))
    A[0, :3] = [1.0, 0.5, 0.1]
    f = force_distribution(ForceModel(A), x).f_normal
    yy, xx = np.mgrid[0:100, 0:100]
    r = np.hypot(xx - 49.5, yy - 49.5)
    R = sc.contact_radius_mm * cam.px_per_mm
    assert f[r < R].max() == f.max()
    assert f[r > 1.5 * R].max() <= 0.02 * f.max()
