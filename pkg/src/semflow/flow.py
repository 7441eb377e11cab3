"""Optical flow refinement guided by motion flow, and flow fusion.

``refine_flow`` solves a per-segment CRF over integer flow windows on a
downsampled grid::

    E = sum_i csad(I_i, J_{i + f_i}) + eta1 (|u_i - x_i| + |v_i - y_i|)
        + sum_{i~j} eta2 (|u_i - u_j| + |v_i - v_j|)

where ``(x, y)`` is the motion flow. ``fuse_flow`` then picks, per pixel,
either the refined optical flow or the motion flow with a binary CRF.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import correspond_flow
from .costs import CSAD_RADIUS, csad_pairs, flow_cost_volume
from .mrf import PairwiseGraph, TABLE, trw_map
from .mrf.graph import energy as graph_energy
from .mrf.grid import region_graph, window_bp, window_energy, window_icm


@dataclass
class FlowParams:
    eta1: float = 0.004
    eta2: float = 0.02
    W: int = 8
    downsample: int = 2
    bp_iters: int = 5
    subpixel: bool = True
    csad_radius: int = CSAD_RADIUS
    sigma_img: float = 0.1

    def __post_init__(self):
        if self.eta1 < 0 or self.eta2 < 0:
            raise ValueError("eta weights must be non-negative")
        if self.W < 1:
            raise ValueError("search half-width W must be at least 1")
        if int(self.downsample) != self.downsample or self.downsample < 1:
            raise ValueError("downsample factor must be a positive integer")


@dataclass
class FuseParams:
    omega1: float = 0.05
    omega2: float = 0.01

    def __post_init__(self):
        if self.omega1 < 0 or self.omega2 < 0:
            raise ValueError("omega weights must be non-negative")


@dataclass
class FlowResult:
    flow: np.ndarray          # full map, refined inside the segment
    energy: float             # coarse-grid CRF energy of the MAP labeling
    init_energy: float        # energy of the rounded initial flow


@dataclass
class FuseResult:
    flow: np.ndarray
    choice: np.ndarray        # True where motion flow was selected
    energy: float
    energy_optical: float
    energy_motion: float


# ------------------------------------------------------------------ resampling


def downsample(a, factor):
    """Block mean over ``factor x factor`` blocks (edge-padded)."""
    a = np.asarray(a, dtype=float)
    if factor == 1:
        return a.copy()
    h, w = a.shape[:2]
    H, W = -(-h // factor), -(-w // factor)
    pad = [(0, H * factor - h), (0, W * factor - w)] + [(0, 0)] * (a.ndim - 2)
    a = np.pad(a, pad, mode="edge")
    return a.reshape((H, factor, W, factor) + a.shape[2:]).mean(axis=(1, 3))


def _masked_block_mean(values, mask, factor):
    m = downsample(mask.astype(float), factor)
    v = downsample(np.where(mask[..., None], values, 0.0), factor)
    return v / np.maximum(m, 1e-12)[..., None], m


def interpolate_full_res(coarse, image, factor, sigma_img=0.1, sigma_s=None, radius=2,
                         coarse_mask=None):
    """Joint-bilateral upsampling of a coarse flow guided by ``image``.

    Fine pixel ``p`` averages the coarse samples ``q`` within ``radius``
    coarse cells, weighted by
    ``exp(-||I(p) - Ic(q)|| / sigma_img) * exp(-||p - q||^2 / (2 sigma_s^2))``
    with ``Ic`` the block-mean guide and positions in fine pixels.
    Samples outside ``coarse_mask`` (if given) are ignored.
    """
    coarse = np.asarray(coarse, dtype=float)
    image = np.asarray(image, dtype=float)
    if image.ndim == 2:
        image = image[..., None]
    h, w = image.shape[:2]
    H, W = -(-h // factor), -(-w // factor)
    if coarse.shape[:2] != (H, W):
        raise ValueError(f"coarse grid {coarse.shape[:2]} does not match {(H, W)} for factor {factor}")
    if factor == 1:
        return coarse.copy()
    sigma_s = float(factor) if sigma_s is None else sigma_s
    guide = downsample(image, factor)
    cmask = np.ones((H, W), bool) if coarse_mask is None else np.asarray(coarse_mask, bool)
    ys, xs = np.mgrid[0:h, 0:w]
    # coarse cell containing each fine pixel
    cy, cx = ys // factor, xs // factor
    num = np.zeros((h, w) + coarse.shape[2:])
    den = np.zeros((h, w))
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            qy, qx = cy + dy, cx + dx
            ok = (qy >= 0) & (qy < H) & (qx >= 0) & (qx < W)
            qy_c, qx_c = np.clip(qy, 0, H - 1), np.clip(qx, 0, W - 1)
            ok &= cmask[qy_c, qx_c]
            py = (qy_c + 0.5) * factor - 0.5
            px = (qx_c + 0.5) * factor - 0.5
            d2 = (py - ys) ** 2 + (px - xs) ** 2
            dc = np.sqrt(((image - guide[qy_c, qx_c]) ** 2).sum(-1))
            wgt = np.where(ok, np.exp(-dc / sigma_img - d2 / (2 * sigma_s**2)), 0.0)
            num += wgt.reshape(wgt.shape + (1,) * (coarse.ndim - 2)) * coarse[qy_c, qx_c]
            den += wgt
    out = np.zeros_like(num)
    has = den > 0
    out[has] = num[has] / den[has].reshape(-1, *([1] * (coarse.ndim - 2)))
    return out


# ------------------------------------------------------------------ flow CRF


def _labels_to_flow(x, centers, W):
    nw = 2 * W + 1
    return np.stack([centers[:, 0] + x // nw - W, centers[:, 1] + x % nw - W], axis=1).astype(float)


def _window_unary(I, J, pixels, centers, motion, W, eta1, radius):
    vol = flow_cost_volume(I, J, pixels, centers, W, radius)
    offs = np.arange(-W, W + 1)
    du = np.abs(centers[:, 0, None] + offs[None, :] - motion[:, 0, None])
    dv = np.abs(centers[:, 1, None] + offs[None, :] - motion[:, 1, None])
    vol = vol + eta1 * (du[:, :, None] + dv[:, None, :])
    return vol.reshape(len(pixels), -1)


def _parabola(cm, c0, cp):
    den = cm - 2 * c0 + cp
    ok = den > 1e-12
    off = np.where(ok, 0.5 * (cm - cp) / np.where(ok, den, 1.0), 0.0)
    return np.clip(off, -0.5, 0.5)


def _subpixel(x, unary, centers, W, w, ptr, nbr):
    """Per-axis parabola vertex of the local cost around the MAP label."""
    nw = 2 * W + 1
    n = len(x)
    rows = np.arange(n)
    a, b = x // nw, x % nw
    flow = _labels_to_flow(x, centers, W)
    src = np.repeat(rows, np.diff(ptr))

    def local(aa, bb):
        u = centers[:, 0] + aa - W
        v = centers[:, 1] + bb - W
        pair = w * (np.abs(u[src] - flow[nbr, 0]) + np.abs(v[src] - flow[nbr, 1]))
        return unary[rows, aa * nw + bb] + np.bincount(src, weights=pair, minlength=n)

    c0 = local(a, b)
    off = np.zeros((n, 2))
    ok_a = (a > 0) & (a < nw - 1)
    ok_b = (b > 0) & (b < nw - 1)
    am, ap = np.clip(a - 1, 0, nw - 1), np.clip(a + 1, 0, nw - 1)
    bm, bp = np.clip(b - 1, 0, nw - 1), np.clip(b + 1, 0, nw - 1)
    off[:, 0] = np.where(ok_a, _parabola(local(am, b), c0, local(ap, b)), 0.0)
    off[:, 1] = np.where(ok_b, _parabola(local(a, bm), c0, local(a, bp)), 0.0)
    return off


def refine_flow(segment, I, J, motion_flow, init_flow, params: FlowParams | None = None) -> FlowResult:
    """MAP flow over ``segment`` on the downsampled grid, upsampled back.

    Pixels outside the segment keep ``init_flow``.
    """
    params = params or FlowParams()
    segment = np.asarray(segment, dtype=bool)
    if not segment.any():
        raise ValueError("empty segment")
    s = int(params.downsample)
    init_flow = np.asarray(init_flow, dtype=float)
    motion_flow = np.asarray(motion_flow, dtype=float)
    Ic, Jc = downsample(I, s), downsample(J, s)
    init_c, cover = _masked_block_mean(init_flow / s, segment, s)
    motion_c, _ = _masked_block_mean(motion_flow / s, segment, s)
    region = cover >= 0.5
    if not region.any():
        region = cover > 0
    ys, xs, ptr, nbr, rev = region_graph(region)
    pixels = np.stack([xs, ys], axis=1)
    centers = np.rint(init_c[ys, xs]).astype(np.int64)
    W = int(params.W)
    unary = _window_unary(Ic, Jc, pixels, centers, motion_c[ys, xs], W, params.eta1, params.csad_radius)
    eta2 = float(params.eta2)
    x_init = np.full(len(ys), W * (2 * W + 1) + W, dtype=np.int64)
    e_init = window_energy(x_init, unary, centers, W, eta2, ptr, nbr)
    x_bp, _ = window_bp(unary, centers, W, eta2, ptr, nbr, rev, params.bp_iters)
    x_bp = window_icm(x_bp.copy(), unary, centers, W, eta2, ptr, nbr, 20)
    x_ic = window_icm(x_init.copy(), unary, centers, W, eta2, ptr, nbr, 20)
    e_bp = window_energy(x_bp, unary, centers, W, eta2, ptr, nbr)
    e_ic = window_energy(x_ic, unary, centers, W, eta2, ptr, nbr)
    x, e = (x_bp, e_bp) if e_bp <= e_ic else (x_ic, e_ic)
    fc = _labels_to_flow(x, centers, W)
    if params.subpixel:
        fc = fc + _subpixel(x, unary, centers, W, eta2, ptr, nbr)
    coarse = np.zeros(Ic.shape[:2] + (2,))
    coarse[ys, xs] = fc * s
    fine = interpolate_full_res(coarse, I, s, params.sigma_img, coarse_mask=region)
    out = init_flow.copy()
    out[segment] = fine[segment]
    return FlowResult(out, float(e), float(e_init))


# ------------------------------------------------------------------ fusion


def _fusion_problem(optical, motion, I, J, region, params: FuseParams):
    region = np.asarray(region, dtype=bool)
    shape = region.shape
    ys, xs, ptr, nbr, _ = region_graph(region)
    px = np.stack([xs, ys], axis=1).astype(float)
    cands = [np.asarray(optical, dtype=float)[ys, xs], np.asarray(motion, dtype=float)[ys, xs]]
    unary = np.zeros((len(ys), 2))
    for l, F in enumerate(cands):
        target, inside = correspond_flow(px, F, shape)
        cost = np.zeros(len(ys))
        if inside.any():
            cost[inside] = csad_pairs(I, px[inside], J, target[inside])
        out = ~inside
        cost[out] = params.omega1 * np.abs(F[out] - cands[1][out]).sum(axis=1)
        unary[:, l] = cost
    src = np.repeat(np.arange(len(ys)), np.diff(ptr))
    keep = nbr > src
    ei, ej = src[keep], nbr[keep]
    tabs = np.empty((len(ei), 2, 2))
    for a in range(2):
        for b in range(2):
            tabs[:, a, b] = params.omega2 * np.abs(cands[a][ei] - cands[b][ej]).sum(axis=1)
    g = PairwiseGraph(unary)
    if len(ei):
        g.add_edges(ei, ej, TABLE, tabs)
    return g, ys, xs


def fuse_flow(optical, motion, I, J, region, params: FuseParams | None = None) -> FuseResult:
    """Per-pixel choice between ``optical`` and ``motion`` flow on ``region``.

    Pixels outside ``region`` keep the optical flow. The returned labeling
    is never worse than choosing either field everywhere.
    """
    params = params or FuseParams()
    region = np.asarray(region, dtype=bool)
    if not region.any():
        raise ValueError("empty fusion region")
    g, ys, xs = _fusion_problem(optical, motion, I, J, region, params)
    n = len(ys)
    res = trw_map(g)
    zeros = np.zeros(n, dtype=np.int64)
    ones = np.ones(n, dtype=np.int64)
    e_opt, e_mot = graph_energy(g, zeros), graph_energy(g, ones)
    best, e = res.labeling, res.energy
    for cand, ec in ((zeros, e_opt), (ones, e_mot)):
        if ec < e:
            best, e = cand, ec
    out = np.asarray(optical, dtype=float).copy()
    choice = np.zeros(region.shape, dtype=bool)
    choice[ys, xs] = best.astype(bool)
    out[choice] = np.asarray(motion, dtype=float)[choice]
    return FuseResult(out, choice, float(e), float(e_opt), float(e_mot))


def fusion_graph(optical, motion, I, J, region, params: FuseParams | None = None) -> PairwiseGraph:
    """The binary fusion CRF over ``region`` in raster order (for auditing)."""
    return _fusion_problem(optical, motion, I, J, region, params or FuseParams())[0]

