import time

import numpy as np
import pytest
from scipy import ndimage

from semflow.core import CameraCalib, RigidMotion
from semflow.costs import stereo_cost_volume
from semflow.mrf import L1, PairwiseGraph, brute_force_map
from semflow.stereo import (
    StereoParams,
    build_candidates,
    refine_disparity,
    refine_frame,
    temporal_depth_cost,
)
from semflow.synth import NoiseRecipe, generate_scene

CALIB = CameraCalib(100.0, 0.5, 40.0, 20.0)


def plane_pair(rng, h=40, w=80, d=6, noise=0.0):
    """Textured fronto-parallel plane at integer disparity ``d``."""
    tex = ndimage.gaussian_filter(rng.random((h, w + d, 3)), (1.0, 1.0, 0))
    tex = (tex - tex.min()) / (tex.max() - tex.min())
    left = tex[:, :w]
    right = tex[:, d:]   # right[x - d] == left[x]
    if noise:
        left = np.clip(left + noise * rng.normal(size=left.shape), 0, 1)
        right = np.clip(right + noise * rng.normal(size=right.shape), 0, 1)
    return left, right


def test_candidates():
    v, ok = build_candidates(np.array([5.0]), 1, 100)
    assert v[0].tolist() == [4.0, 5.0, 6.0] and ok.all()
    v, ok = build_candidates(np.array([1.0]), 3, 100)
    assert (v[0][ok[0]] > 0).all() and ok[0].sum() == 4
    v, ok = build_candidates(np.array([2.5, 97.2]), 4, 100)
    assert np.all(np.diff(v, axis=1) == 1.0)
    assert ok[:, 4].all()
    np.testing.assert_array_equal(v[:, 4], [2.5, 97.2])


def test_params_validation():
    with pytest.raises(ValueError):
        StereoParams(tau1=-1)
    with pytest.raises(ValueError):
        StereoParams(K=0)


def test_unary_only_is_per_pixel_argmin(rng):
    left, right = plane_pair(rng, noise=0.05)
    seg = np.zeros(left.shape[:2], bool)
    seg[10:30, 20:60] = True
    init = np.full(seg.shape, 6.0) + rng.integers(-2, 3, seg.shape)
    p = StereoParams(tau1=0, tau2=0, K=3, subpixel=False)
    res = refine_disparity(seg, left, right, init, CALIB, p)
    ys, xs = np.nonzero(seg)
    vol = stereo_cost_volume(left, right, np.stack([xs, ys], 1), init[ys, xs], 3)
    np.testing.assert_array_equal(res.disparity[ys, xs], init[ys, xs] + vol.argmin(1) - 3)


def test_scanline_matches_brute_force(rng):
    for trial in range(10):
        left, right = plane_pair(np.random.default_rng(trial), 12, 20, 2, noise=0.1)
        seg = np.zeros((12, 20), bool)
        seg[6, 3:8] = True
        # init 1.5 with K=2: candidate -0.5 is clipped, leaving 4 per pixel
        init = np.full((12, 20), 1.5)
        p = StereoParams(tau1=0.02, tau2=0, K=2, subpixel=False)
        res = refine_disparity(seg, left, right, init, CALIB, p)
        xs = np.arange(3, 8)
        vol = stereo_cost_volume(left, right, np.stack([xs, np.full(5, 6)], 1), np.full(5, 1.5), 2)[:, 1:]
        z = [CALIB.depth_constant / (1.5 + np.arange(-1, 3.0))] * 5
        g = PairwiseGraph(vol, coords=[zz[::-1] for zz in z])
        # coordinates must ascend for the oracle; reverse the label order
        g = PairwiseGraph(vol[:, ::-1], coords=[zz[::-1] for zz in z])
        g.add_edges(np.arange(4), np.arange(1, 5), L1, 0.02)
        ref = brute_force_map(g)
        assert res.energy == pytest.approx(ref.energy, abs=1e-9)


def test_plane_rmse_improves(rng):
    left, right = plane_pair(rng, noise=0.03)
    seg = np.zeros(left.shape[:2], bool)
    seg[5:35, 15:70] = True
    init = 6.0 + rng.normal(scale=1.5, size=seg.shape)
    res = refine_disparity(seg, left, right, init, CALIB, StereoParams(tau1=0.01, K=6))
    rmse = lambda d: np.sqrt(np.mean((d[seg] - 6.0) ** 2))
    assert rmse(res.disparity) < rmse(init)
    assert rmse(res.disparity) < 0.3


def test_energy_not_above_init(rng):
    left, right = plane_pair(rng, noise=0.1)
    seg = np.zeros(left.shape[:2], bool)
    seg[8:32, 20:60] = True
    for tau in (0.0, 0.01, 0.5, 10.0):
        init = 6.0 + rng.normal(scale=2, size=seg.shape)
        res = refine_disparity(seg, left, right, init, CALIB, StereoParams(tau1=tau, K=4))
        assert res.energy <= res.init_energy + 1e-9
        outside = ~seg
        np.testing.assert_array_equal(res.disparity[outside], init[outside])


def test_huge_smoothness_gives_constant_depth(rng):
    left, right = plane_pair(rng, noise=0.1)
    seg = np.zeros(left.shape[:2], bool)
    seg[10:20, 30:50] = True
    init = 6.0 + rng.integers(-1, 2, seg.shape).astype(float)
    res = refine_disparity(seg, left, right, init, CALIB, StereoParams(tau1=1e6, K=3, subpixel=False))
    assert np.ptp(res.disparity[seg]) == 0.0


def test_translation_equivariance(rng):
    left, right = plane_pair(rng, 30, 90, 5, noise=0.05)
    seg = np.zeros((30, 90), bool)
    seg[5:25, 30:60] = True
    init = 5.0 + rng.integers(-2, 3, (30, 90)).astype(float)
    p = StereoParams(tau1=0.02, K=3)
    a = refine_disparity(seg, left, right, init, CALIB, p).disparity
    s = 7
    sh = lambda im: np.roll(im, s, axis=1)
    b = refine_disparity(sh(seg), sh(left), sh(right), sh(init), CALIB, p).disparity
    np.testing.assert_allclose(sh(a)[:, 20:80], b[:, 20:80], atol=1e-12)


def test_frame_independence_and_coverage(rng):
    left, right = plane_pair(rng, noise=0.05)
    labels = np.zeros(left.shape[:2], int)
    labels[5:20, 10:35] = 1
    labels[22:38, 40:75] = 2
    init = 6.0 + rng.normal(scale=1, size=labels.shape)
    p = StereoParams(tau1=0.01, K=4)
    full, res = refine_frame(labels, left, right, init, CALIB, p)
    assert set(res) == {0, 1, 2}
    assert np.all(full > 0)
    # every pixel was labelled: values are candidates plus a sub-pixel offset
    assert np.all(np.abs(full - init) <= 4.5)
    assert np.mean(np.abs(full[3:-3, 10:] - 6.0) < 0.5) > 0.9
    # order of processing is irrelevant
    a = refine_disparity(labels == 1, left, right, init, CALIB, p).disparity
    b = refine_disparity(labels == 2, left, right, a, CALIB, p).disparity
    c = refine_disparity(labels == 2, left, right, init, CALIB, p).disparity
    d = refine_disparity(labels == 1, left, right, c, CALIB, p).disparity
    np.testing.assert_array_equal(b, d)


def test_clean_scene_fixed_point():
    s = generate_scene(NoiseRecipe.clean(3), seed=3)
    inp, gt = s.inputs, s.gt
    out, _ = refine_frame(gt.masks1, inp.left1, inp.right1, gt.disparity1, inp.calib,
                          StereoParams(tau1=0.002, K=8))
    ok = gt.valid & (gt.disparity1 > 0)
    err = np.abs(out - gt.disparity1)[ok]
    assert np.mean(err < 0.5) >= 0.98


def test_empty_segment_raises(rng):
    left, right = plane_pair(rng)
    with pytest.raises(ValueError):
        refine_disparity(np.zeros(left.shape[:2], bool), left, right, np.ones(left.shape[:2]), CALIB)


def test_temporal_depth_cost_formula():
    pixels = np.array([[40.0, 20.0], [10.0, 5.0]])
    cand = np.array([[4.0, 5.0], [4.0, 5.0]])
    d2 = np.full((40, 80), 50.0 / 9.0)  # frame-2 depth 9 m everywhere
    flow = np.zeros((2, 2))
    m = RigidMotion(t=(0, 0, -1.0))
    cost = temporal_depth_cost(pixels, cand, m, flow, d2, CALIB)
    # depths 12.5 and 10 move to 11.5 and 9
    np.testing.assert_allclose(cost[0], [2.5, 0.0], atol=1e-12)
    # right-image match of the second target would leave the image: no cost
    cost = temporal_depth_cost(pixels, cand, m, flow, np.full((40, 80), 20.0), CALIB)
    assert np.all(cost[1] == 0) and np.all(cost[0] > 0)
    labels2 = np.zeros((40, 80), int)
    cost = temporal_depth_cost(pixels, cand, m, flow, d2, CALIB, labels2, label=3)
    assert np.all(cost == 0)


def test_temporal_term_pulls_towards_consistent_depth(rng):
    left, right = plane_pair(rng, noise=0.0)
    left = np.full_like(left, 0.5)  # no photometric information
    right = np.full_like(right, 0.5)
    seg = np.zeros(left.shape[:2], bool)
    seg[10:20, 30:50] = True
    init = np.full(seg.shape, 6.0)
    d2 = np.full(seg.shape, 8.0)
    tmp = dict(motions=RigidMotion(), flow=np.zeros(seg.shape + (2,)), disparity2=d2)
    res = refine_disparity(seg, left, right, init, CALIB, StereoParams(tau1=0, tau2=1.0, K=4, subpixel=False), tmp)
    assert np.all(res.disparity[seg] == 8.0)


def test_stereo_speed_200x200(rng):
    h = w = 200
    tex = ndimage.gaussian_filter(rng.random((h, w + 300, 3)), (1, 1, 0))
    left, right = tex[:, 0:200], tex[:, 100:300]
    seg = np.ones((h, w), bool)
    init = np.full((h, w), 100.0) + rng.normal(size=(h, w))
    p = StereoParams(tau1=0.01, K=100, max_candidates=201)
    refine_disparity(seg[:20, :20], left[:20, :20], right[:20, :20], init[:20, :20], CALIB, p)  # compile
    t0 = time.perf_counter()
    refine_disparity(seg, left, right, init, CALIB, p)
    assert time.perf_counter() - t0 <= 10.0
