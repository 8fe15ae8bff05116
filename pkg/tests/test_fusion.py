import numpy as np
import pytest

from gatedlidar.acquisition import CountCube, ScanPattern
from gatedlidar.fitting import FitConfig, fit_cube
from gatedlidar.fusion import (FusionConfig, PairGraph, build_weights, compute_color_differences,
                               compute_depth_weights, compute_intensity_weights, field_offsets, fuse,
                               negative_log_likelihood, rescale_rgb, subsample_scan_positions,
                               transform_colors, weighted_difference_sum, write_objective_csv)
from gatedlidar.model import erf_model

from oracles import bilinear_corner_aligned, color_differences_loop, poisson_nll_loop

# ------------------------------------------------------------------ rescale --


def test_rescale_identity_and_constant(rng):
    img = rng.integers(0, 256, (9, 7, 3)).astype(np.uint8)
    np.testing.assert_array_equal(rescale_rgb(img, 9, 7), img)
    const = np.full((5, 6, 3), (12, 200, 77), np.uint8)
    for shape in [(1, 1), (13, 4), (40, 40)]:
        out = rescale_rgb(const, *shape)
        assert out.shape == shape + (3,)
        assert np.all(out == np.array([12, 200, 77]))


def test_rescale_bilinear_oracle(rng):
    src = rng.uniform(0, 255, (2, 2, 3))
    out = rescale_rgb(src, 4, 4)
    np.testing.assert_allclose(out, bilinear_corner_aligned(src, 4, 4), atol=1e-12)
    for (i, j), (si, sj) in {(0, 0): (0, 0), (0, 3): (0, 1), (3, 0): (1, 0), (3, 3): (1, 1)}.items():
        np.testing.assert_array_equal(out[i, j], src[si, sj])
    src = rng.uniform(0, 255, (7, 5, 3))
    np.testing.assert_allclose(rescale_rgb(src, 11, 13), bilinear_corner_aligned(src, 11, 13), atol=1e-9)


def test_rescale_rejects_zero_dims():
    with pytest.raises(ValueError):
        rescale_rgb(np.zeros((2, 2, 3)), 0, 4)


# ------------------------------------------------------------------ weights --


def test_color_differences_constant_and_extreme():
    diff = compute_color_differences(np.full((6, 6, 3), 80.0), 5)
    assert np.all(diff[~np.isnan(diff)] == 0)
    img = np.zeros((1, 2, 3))
    img[0, 1] = 255
    diff = compute_color_differences(img, 3)
    right = 3 * 1 + 2  # offset (0, +1) in a 3x3 row-major field
    assert diff[0, 0, right] == 255


def test_color_differences_exhaustive_oracle(rng):
    img = rng.integers(0, 256, (8, 8, 3)).astype(float)
    np.testing.assert_allclose(compute_color_differences(img, 3), color_differences_loop(img, 3),
                               equal_nan=True, atol=1e-12)


def test_even_field_rejected():
    with pytest.raises(ValueError):
        compute_color_differences(np.zeros((4, 4, 3)), 4)


def test_intensity_kernel_values():
    diff = np.array([[[0.0, 10.0, 0.0, 20.0, 5.0]]])  # last axis need not be square here
    w = compute_intensity_weights(diff[:, :, :3], 10.0)
    assert w[0, 0, 0] == 1.0
    assert w[0, 0, 1] == 0.0  # centre of a 3-entry vector
    w = compute_intensity_weights(np.array([[[10.0, 0.0, 10.0]]]), 10.0)
    assert w[0, 0, 0] == pytest.approx(np.exp(-1), abs=1e-15)
    grid = np.linspace(0, 255, 200)
    vals = compute_intensity_weights(grid.reshape(1, 1, -1)[:, :, :199], 10.0)[0, 0]
    vals = np.delete(vals, 199 // 2)
    assert np.all(np.diff(vals) < 0)


def test_depth_weight_factor():
    w_r = np.ones((1, 1, 225))
    w_d = compute_depth_weights(w_r, 15, 1e12)
    np.testing.assert_allclose(w_d, 1.0, atol=1e-9)
    assert np.all(compute_depth_weights(np.zeros((2, 2, 225)), 15, 0.5) == 0)
    w_d = compute_depth_weights(w_r, 15, 0.5)[0, 0]
    dist = np.hypot(*field_offsets(15).T)
    order = np.argsort(dist, kind="stable")
    assert np.all(np.diff(w_d[order]) <= 0)


def test_weight_field_invariants(rng):
    img = rng.integers(0, 256, (12, 10, 3))
    w_d, w_r = build_weights(img, 5, 10.0, 0.5)
    for w in (w_d, w_r):
        assert np.all((w >= 0) & (w <= 1)) and np.all(np.isfinite(w))
        assert np.all(w[:, :, 12] == 0)
        # offsets falling off the image carry no weight
        assert np.all(w[0, 0, :5] == 0) and np.all(w[-1, -1, -5:] == 0)
    perm = build_weights(img[:, :, [2, 0, 1]], 5, 10.0, 0.5)
    np.testing.assert_array_equal(perm[0], w_d)
    np.testing.assert_array_equal(perm[1], w_r)


def test_constant_image_uniform_weights():
    _, w_r = build_weights(np.full((9, 9, 3), 42), 5, 10.0, 0.5)
    diff = compute_color_differences(np.full((9, 9, 3), 42.0), 5)
    inb = ~np.isnan(diff)
    inb[:, :, 12] = False
    assert np.all(w_r[inb] == 1.0)


@pytest.mark.parametrize("space", ["yuv", "ycrcb"])
def test_color_space_switch(space):
    out = transform_colors(np.full((2, 2, 3), 100.0), space)
    assert out.shape == (2, 2, 3) and out[0, 0, 0] == pytest.approx(100.0)


# -------------------------------------------------------------- pair graph --


def test_graph_penalty_matches_direct_sum(rng):
    img = rng.integers(0, 256, (14, 11, 3))
    w_d, _ = build_weights(img, 7, 25.0, 0.5)
    x = rng.normal(size=(14, 11))
    g = PairGraph(w_d)
    assert g.penalty(x) == pytest.approx(weighted_difference_sum(x, w_d), rel=1e-6)


def test_graph_adjoint(rng):
    w = build_weights(rng.integers(0, 256, (9, 8, 3)), 5)[1]
    g = PairGraph(w)
    x = rng.normal(size=(9, 8))
    p = rng.normal(size=g.zeros().shape).astype(g.zeros().dtype)
    lhs = float((g.forward(x) * p).sum())
    rhs = float((x * g.adjoint(p)).sum())
    assert lhs == pytest.approx(rhs, rel=1e-5)


# -------------------------------------------------------------- likelihood --


def test_nll_trivial_and_scalar():
    z = np.zeros((2, 2))
    obs = np.ones((2, 2), bool)
    assert negative_log_likelihood(z, z, np.zeros((4, 2, 2)), obs, 1.0) == 0.0
    # one pixel, one gate, with lambda equal to y
    d = np.array([[0.0]])
    r = np.array([[6.0]])
    lam = 0.5 * 6.0 * (1 + 0.0)
    counts = np.array([[[lam]]])
    expect = lam - lam * np.log(lam + 1e-12)
    assert negative_log_likelihood(d, r, counts, np.ones((1, 1), bool), 1.0) == pytest.approx(expect, abs=1e-9)


def test_nll_loop_oracle(rng):
    d = rng.uniform(5, 15, (3, 4))
    r = rng.uniform(1, 20, (3, 4))
    counts = rng.poisson(5.0, (20, 3, 4)).astype(float)
    obs = rng.random((3, 4)) > 0.3
    got = negative_log_likelihood(d, r, counts, obs, 1.3)
    assert got == pytest.approx(poisson_nll_loop(d, r, counts, obs, 1.3), rel=1e-12)


def test_nll_minimised_at_generating_values():
    k = np.arange(30.0)
    d0, r0 = 12.4, 25.0
    counts = erf_model(k, d0, r0, 1.0)[:, None, None]
    obs = np.ones((1, 1), bool)
    base = negative_log_likelihood(np.full((1, 1), d0), np.full((1, 1), r0), counts, obs, 1.0)
    for dd in np.linspace(-0.5, 0.5, 11):
        for dr in np.linspace(-5, 5, 11):
            v = negative_log_likelihood(np.full((1, 1), d0 + dd), np.full((1, 1), r0 + dr), counts, obs, 1.0)
            assert v >= base - 1e-9


def test_nll_dims_checked():
    with pytest.raises(ValueError):
        negative_log_likelihood(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((3, 2, 3)), np.ones((2, 2), bool), 1)


# ------------------------------------------------------------------ fusion --


def edge_cube(d, r, K=30, h=1.0):
    counts = erf_model(np.arange(K, dtype=float)[:, None, None], d[None], r[None], h)
    return CountCube(counts, np.full(d.shape, 256))


def test_data_term_only_matches_fit(rng):
    d = rng.uniform(8, 18, (10, 10))
    r = rng.uniform(10, 40, (10, 10))
    cube = edge_cube(d, r)
    fit = fit_cube(cube, FitConfig(h=1.0))
    w_d, w_r = build_weights(rng.integers(0, 256, (10, 10, 3)), 5)
    # start away from the fit so the solver has work to do
    cfg = FusionConfig(tau_d=0.0, tau_r=0.0, field_side=5, max_iters=60, rel_tol=1e-14)
    res = fuse(cube, np.ones((10, 10), bool), w_d, w_r, fit.d + 0.3, fit.r * 1.1, config=cfg, h=1.0)
    np.testing.assert_allclose(res.d, fit.d, atol=1e-4)
    np.testing.assert_allclose(res.r, fit.r, rtol=1e-4)


def test_constant_propagation(rng):
    H = W = 24
    d = np.full((H, W), 14.25)
    r = np.full((H, W), 30.0)
    cube = edge_cube(d, r)
    observed = rng.random((H, W)) < 0.5
    fit = fit_cube(cube, FitConfig(h=1.0))
    init_d = np.where(observed, fit.d, np.nan)
    w_d, w_r = build_weights(np.full((H, W, 3), 90), 7)
    cfg = FusionConfig(field_side=7, max_iters=80, inner_iters=40, rel_tol=1e-12)
    res = fuse(cube, observed, w_d, w_r, init_d + rng.normal(0, 0.05, (H, W)), np.where(observed, fit.r, np.nan),
               config=cfg, h=1.0)
    assert np.max(np.abs(res.d - 14.25)) <= 1e-3
    assert np.all(np.diff(res.objective) <= 0)


def test_anchoring_within_observed_hull():
    H, W = 16, 30
    d = np.where(np.arange(W)[None, :] < W // 2, 10.0, 13.0) * np.ones((H, 1))
    r = np.full((H, W), 25.0)
    cube = edge_cube(d, r)
    observed = np.ones((H, W), bool)
    observed[4:12, 10:20] = False  # one connected hole bridging both levels
    fit = fit_cube(cube, FitConfig(h=1.0))
    w_d, w_r = build_weights(np.full((H, W, 3), 128), 7)
    cfg = FusionConfig(field_side=7, max_iters=40)
    init_d = np.where(observed, fit.d, np.nan)
    res = fuse(cube, observed, w_d, w_r, init_d, np.where(observed, fit.r, np.nan), config=cfg, h=1.0)
    hole = ~observed
    assert np.all(res.d[hole] >= 10.0 - 1e-6) and np.all(res.d[hole] <= 13.0 + 1e-6)
    assert np.all(np.isfinite(res.d)) and np.all(np.isfinite(res.r))


def test_empty_mask_rejected():
    cube = edge_cube(np.full((4, 4), 10.0), np.full((4, 4), 10.0))
    w = build_weights(np.zeros((4, 4, 3)), 3)
    with pytest.raises(ValueError):
        fuse(cube, np.zeros((4, 4), bool), *w, np.full((4, 4), 10.0), np.full((4, 4), 10.0),
             config=FusionConfig(field_side=3))


def test_objective_csv(tmp_path):
    write_objective_csv(tmp_path / "o.csv", [3.0, 2.5])
    assert (tmp_path / "o.csv").read_text().splitlines() == ["iteration,objective", "0,3", "1,2.5"]


# ------------------------------------------------------------- subsampling --


def test_full_fraction_covers_crop():
    sub = subsample_scan_positions(ScanPattern(), 1.0, 0)
    assert sub.coverage == 1.0 and len(sub.positions) == 400


def test_nested_and_deterministic():
    pat = ScanPattern()
    a = subsample_scan_positions(pat, 0.05, 42)
    b = subsample_scan_positions(pat, 0.10, 42)
    assert set(a.positions) < set(b.positions)
    assert a.coverage < b.coverage
    again = subsample_scan_positions(pat, 0.05, 42)
    np.testing.assert_array_equal(again.positions, a.positions)
    np.testing.assert_array_equal(again.mask, a.mask)
    assert len(subsample_scan_positions(pat, 0.25, 1).positions) == 100


@pytest.mark.parametrize("fraction", [0.0, -0.1, 1.5])
def test_bad_fraction(fraction):
    with pytest.raises(ValueError):
        subsample_scan_positions(ScanPattern(), fraction, 0)
