import itertools

import numpy as np
import pytest
from scipy import ndimage

from semflow.costs import csad
from semflow.flow import (
    FlowParams,
    FuseParams,
    downsample,
    fuse_flow,
    fusion_graph,
    interpolate_full_res,
    refine_flow,
)
from semflow.mrf import brute_force_map


def texture(rng, h=40, w=50):
    img = ndimage.gaussian_filter(rng.random((h, w, 3)), sigma=(1.0, 1.0, 0))
    return (img - img.min()) / (img.max() - img.min())


def shifted_pair(rng, u=2, v=1, h=40, w=50):
    """``J(x + u, y + v) = I(x, y)`` for integer ``(u, v)``."""
    big = texture(rng, h + 20, w + 20)
    I = big[10:10 + h, 10:10 + w]
    J = big[10 - v:10 - v + h, 10 - u:10 - u + w]
    return I, J


def const_flow(shape, u, v):
    f = np.zeros(shape[:2] + (2,))
    f[..., 0], f[..., 1] = u, v
    return f


def test_params_validation():
    with pytest.raises(ValueError):
        FlowParams(eta1=-1)
    with pytest.raises(ValueError):
        FlowParams(W=0)
    with pytest.raises(ValueError):
        FlowParams(downsample=1.5)
    with pytest.raises(ValueError):
        FuseParams(omega2=-0.1)


def test_refine_recovers_translation(rng):
    I, J = shifted_pair(rng, 3, -2)
    seg = np.zeros(I.shape[:2], bool)
    seg[10:30, 12:38] = True
    init = const_flow(I.shape, 1.0, 0.0)
    res = refine_flow(seg, I, J, init, init, FlowParams(downsample=1, W=4, subpixel=False))
    err = np.abs(res.flow[seg] - [3, -2]).max(axis=1)
    assert (err < 0.5).mean() > 0.95
    assert res.energy <= res.init_energy
    np.testing.assert_array_equal(res.flow[~seg], init[~seg])


def test_refine_downsampled_energy_not_above_init(rng):
    I, J = shifted_pair(rng, 4, 2)
    seg = np.zeros(I.shape[:2], bool)
    seg[8:32, 10:40] = True
    init = const_flow(I.shape, 2.0, 2.0)
    res = refine_flow(seg, I, J, init, init, FlowParams())
    assert res.energy <= res.init_energy
    assert np.abs(res.flow[seg] - [4, 2]).mean() < 1.0


def test_large_anchor_returns_rounded_motion_flow(rng):
    I, J = shifted_pair(rng, 2, 1)
    seg = np.zeros(I.shape[:2], bool)
    seg[15:25, 15:30] = True
    motion = const_flow(I.shape, -1.3, 2.2)
    init = const_flow(I.shape, 0.0, 0.0)
    res = refine_flow(seg, I, J, motion, init, FlowParams(eta1=1e6, W=4, downsample=1, subpixel=False))
    np.testing.assert_array_equal(res.flow[seg], np.broadcast_to([-1.0, 2.0], (seg.sum(), 2)))


def test_unary_only_is_per_pixel_csad_argmin(rng):
    I, J = texture(rng, 20, 20), texture(rng, 20, 20)
    seg = np.zeros((20, 20), bool)
    seg[8:11, 7:10] = True
    init = const_flow(I.shape, 1.0, -1.0)
    W = 2
    res = refine_flow(seg, I, J, init, init, FlowParams(eta1=0, eta2=0, W=W, downsample=1, subpixel=False))
    for y, x in zip(*np.nonzero(seg)):
        best = min(((csad(I, (x, y), J, (x + 1 + du, y - 1 + dv)), (1 + du, -1 + dv))
                    for du in range(-W, W + 1) for dv in range(-W, W + 1)))
        np.testing.assert_array_equal(res.flow[y, x], best[1])


def test_three_node_brute_force(rng):
    I, J = texture(rng, 20, 20), texture(rng, 20, 20)
    seg = np.zeros((20, 20), bool)
    seg[10, 9:12] = True
    init = const_flow(I.shape, 0.0, 1.0)
    motion = const_flow(I.shape, 1.0, 0.0)
    eta1, eta2, W = 0.05, 0.08, 1
    res = refine_flow(seg, I, J, motion, init,
                      FlowParams(eta1=eta1, eta2=eta2, W=W, downsample=1, subpixel=False))
    labels = [(du, 1 + dv) for du in range(-W, W + 1) for dv in range(-W, W + 1)]
    xs = [9, 10, 11]
    unary = [[csad(I, (x, 10), J, (x + u, 10 + v)) + eta1 * (abs(u - 1) + abs(v)) for u, v in labels] for x in xs]
    best, arg = np.inf, None
    for combo in itertools.product(range(len(labels)), repeat=3):
        e = sum(unary[i][c] for i, c in enumerate(combo))
        for a, b in ((0, 1), (1, 2)):
            e += eta2 * (abs(labels[combo[a]][0] - labels[combo[b]][0]) + abs(labels[combo[a]][1] - labels[combo[b]][1]))
        if e < best:
            best, arg = e, combo
    assert res.energy == pytest.approx(best, abs=1e-9)
    np.testing.assert_array_equal(res.flow[10, 9:12], np.array([labels[c] for c in arg], float))


def test_refine_empty_segment_raises(rng):
    I = texture(rng, 10, 10)
    with pytest.raises(ValueError):
        refine_flow(np.zeros((10, 10), bool), I, I, const_flow(I.shape, 0, 0), const_flow(I.shape, 0, 0))


# ------------------------------------------------------------------ fusion


def test_fusion_prefers_optical_when_it_matches(rng):
    I, J = shifted_pair(rng, 2, 1)
    region = np.zeros(I.shape[:2], bool)
    region[10:20, 10:25] = True
    optical = const_flow(I.shape, 2.0, 1.0)
    motion = const_flow(I.shape, -1.0, 3.0)
    res = fuse_flow(optical, motion, I, J, region, FuseParams(omega2=0.0))
    assert not res.choice.any()
    np.testing.assert_array_equal(res.flow, optical)


def test_fusion_outside_targets_choose_motion(rng):
    I, J = shifted_pair(rng, 2, 1)
    region = np.zeros(I.shape[:2], bool)
    region[10:20, 10:25] = True
    optical = const_flow(I.shape, 100.0, 0.0)
    motion = const_flow(I.shape, 0.0, -80.0)
    res = fuse_flow(optical, motion, I, J, region, FuseParams(omega1=10.0))
    assert res.choice[region].all()
    np.testing.assert_array_equal(res.flow[region], motion[region])


def test_fusion_two_by_two_enumeration(rng):
    I, J = texture(rng, 12, 12), texture(rng, 12, 12)
    region = np.zeros((12, 12), bool)
    region[5:7, 5:7] = True
    optical = rng.integers(-2, 3, size=(12, 12, 2)).astype(float)
    motion = rng.integers(-2, 3, size=(12, 12, 2)).astype(float)
    optical[5, 6] = (20.0, 0.0)        # target leaves the image
    p = FuseParams(omega1=0.03, omega2=0.02)
    nodes = [(5, 5), (5, 6), (6, 5), (6, 6)]
    edges = [(0, 1), (0, 2), (1, 3), (2, 3)]
    cands = (optical, motion)

    def unary(k, l):
        y, x = nodes[k]
        f = cands[l][y, x]
        tx, ty = x + f[0], y + f[1]
        if 0 <= round(tx) <= 11 and 0 <= round(ty) <= 11:
            return csad(I, (x, y), J, (tx, ty))
        return p.omega1 * np.abs(f - motion[y, x]).sum()

    best = np.inf
    for combo in itertools.product((0, 1), repeat=4):
        e = sum(unary(k, l) for k, l in enumerate(combo))
        for a, b in edges:
            fa = cands[combo[a]][nodes[a]]
            fb = cands[combo[b]][nodes[b]]
            e += p.omega2 * np.abs(fa - fb).sum()
        best = min(best, e)
    res = fuse_flow(optical, motion, I, J, region, p)
    assert res.energy == pytest.approx(best, abs=1e-9)
    assert brute_force_map(fusion_graph(optical, motion, I, J, region, p)).energy == pytest.approx(best, abs=1e-9)


def test_fusion_selects_and_never_blends(rng):
    I, J = shifted_pair(rng, 1, 1)
    region = np.zeros(I.shape[:2], bool)
    region[5:30, 5:40] = True
    optical = rng.normal(scale=2, size=I.shape[:2] + (2,))
    motion = const_flow(I.shape, 1.0, 1.0)
    res = fuse_flow(optical, motion, I, J, region)
    from_opt = np.all(res.flow == optical, axis=-1)
    from_mot = np.all(res.flow == motion, axis=-1)
    assert np.all(from_opt | from_mot)
    assert res.energy <= min(res.energy_optical, res.energy_motion)
    np.testing.assert_array_equal(res.flow[~region], optical[~region])


def test_fusion_empty_region_raises(rng):
    I = texture(rng, 10, 10)
    f = const_flow(I.shape, 0, 0)
    with pytest.raises(ValueError):
        fuse_flow(f, f, I, I, np.zeros((10, 10), bool))


# ---------------------------------------------------------- interpolation


def test_interpolate_factor_one_is_identity(rng):
    coarse = rng.normal(size=(10, 12, 2))
    np.testing.assert_array_equal(interpolate_full_res(coarse, texture(rng, 10, 12), 1), coarse)


def test_interpolate_preserves_constants(rng):
    img = texture(rng, 21, 30)
    coarse = const_flow((11, 15), 1.25, -3.5)
    fine = interpolate_full_res(coarse, img, 2)
    np.testing.assert_allclose(fine, const_flow(img.shape, 1.25, -3.5), rtol=0, atol=1e-12)


def test_interpolate_keeps_colour_edges_sharp():
    h, w = 24, 32
    img = np.zeros((h, w, 3))
    img[:, 16:] = 1.0
    fine_true = np.where(np.arange(w)[None, :, None] < 16, 1.0, 5.0) * np.ones((h, w, 2))
    coarse = downsample(fine_true, 2)
    fine = interpolate_full_res(coarse, img, 2, sigma_img=0.1)
    far = np.abs(np.arange(w) - 15.5) >= 2
    np.testing.assert_array_less(np.abs(fine - fine_true)[:, far], 0.1)


def test_interpolate_invariant_to_colour_shift(rng):
    img = 0.5 * texture(rng, 20, 20)
    coarse = rng.normal(size=(5, 5, 2))
    a = interpolate_full_res(coarse, img, 4)
    b = interpolate_full_res(coarse, img + 0.3, 4)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_interpolate_size_mismatch(rng):
    with pytest.raises(ValueError):
        interpolate_full_res(np.zeros((4, 4, 2)), texture(rng, 20, 20), 2)
