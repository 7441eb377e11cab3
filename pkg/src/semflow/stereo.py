"""Per-segment disparity refinement CRF.

Unary: CSAD between left pixel ``i`` and its right-image match at the
candidate disparity, plus (optionally) ``tau2 * |z_i(M) - z2(P_f(i))|``,
the depth gap between the rigidly moved point and the second-frame depth
at the flow target. Pairwise: ``tau1 * |C/d_i - C/d_j|`` between
4-neighbours of the segment. Candidates are ``init + k`` for integer
``|k| <= K`` inside ``(0, width)``; inference is depth-domain min-sum BP.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import CameraCalib, RigidMotion
from .costs import CSAD_RADIUS, stereo_cost_volume
from .mrf.grid import forbid, ladder_bp, ladder_energy, ladder_icm, region_graph


@dataclass
class StereoParams:
    tau1: float = 0.05
    tau2: float = 0.05
    K: int = 100
    max_candidates: int = 201
    bp_iters: int = 5
    subpixel: bool = True
    csad_radius: int = CSAD_RADIUS

    def __post_init__(self):
        if self.tau1 < 0 or self.tau2 < 0:
            raise ValueError("tau weights must be non-negative")
        if self.K < 1:
            raise ValueError("K must be at least 1")

    @property
    def half_width(self) -> int:
        return int(min(self.K, (self.max_candidates - 1) // 2))


def build_candidates(init, K, width):
    """Candidate disparities ``init + k`` for ``|k| <= K`` and validity.

    Returns ``(values (..., 2K+1), valid (..., 2K+1))``; a candidate is valid
    when it lies in the open interval ``(0, width)``. The unshifted value
    (column ``K``) is always kept.
    """
    init = np.asarray(init, dtype=float)
    values = init[..., None] + np.arange(-K, K + 1)
    valid = (values > 0) & (values < width)
    valid[..., K] = True
    return values, valid


@dataclass
class StereoResult:
    disparity: np.ndarray      # full map, refined inside the segment
    labels: np.ndarray         # candidate index per segment pixel
    energy: float
    init_energy: float


def _fill_invalid(init, region):
    init = np.asarray(init, dtype=float)
    bad = region & ~(init > 0)
    if not bad.any():
        return init
    good = region & (init > 0)
    if not good.any():
        raise ValueError("segment has no valid initial disparity")
    _, (iy, ix) = ndimage.distance_transform_edt(~good, return_indices=True)
    out = init.copy()
    out[bad] = init[iy[bad], ix[bad]]
    return out


def temporal_depth_cost(pixels, cand, motions, flow, disparity2, calib, labels2=None, label=None):
    """``|z(M applied to candidate point) - z2 at P_f|`` per pixel/candidate.

    ``motions`` is one :class:`RigidMotion` per pixel (or a single one).
    Pixels whose flow target leaves the image, lands on an invalid
    second-frame disparity or on one whose stereo match leaves the right
    image get zero cost; so do targets whose frame-2
    label (``labels2``) differs from ``label``, which are likely occluded.
    """
    C = calib.depth_constant
    h, w = disparity2.shape
    n = len(pixels)
    tgt = pixels + flow
    rx = np.rint(tgt[:, 0]).astype(np.int64)
    ry = np.rint(tgt[:, 1]).astype(np.int64)
    ok = (rx >= 0) & (rx < w) & (ry >= 0) & (ry < h)
    d2 = np.full(n, -1.0)
    d2[ok] = disparity2[ry[ok], rx[ok]]
    # the frame-2 disparity is unverifiable where its stereo match leaves the image
    ok &= (d2 > 0) & (rx - d2 >= 0)
    if labels2 is not None:
        ok[ok] &= np.asarray(labels2)[ry[ok], rx[ok]] == label
    cost = np.zeros(cand.shape)
    if not ok.any():
        return cost
    if isinstance(motions, RigidMotion):
        motions = [motions] * n
    f = calib.focal_length
    z = C / np.where(cand > 0, cand, np.nan)
    X = (pixels[:, 0:1] - calib.cx) * z / f
    Y = (pixels[:, 1:2] - calib.cy) * z / f
    z2 = np.zeros(cand.shape)
    groups = {}
    for i, m in enumerate(motions):
        groups.setdefault(m, []).append(i)
    for m, idx in groups.items():
        R, t = m.rotation, m.translation
        z2[idx] = R[2, 0] * X[idx] + R[2, 1] * Y[idx] + R[2, 2] * z[idx] + t[2]
    target_z = C / np.where(ok, d2, 1.0)
    gap = np.abs(z2 - target_z[:, None])
    # points moved behind the camera have no usable depth; charge the far gap
    gap = np.where(z2 > 0, gap, np.abs(z - target_z[:, None]))
    cost[ok] = np.nan_to_num(gap[ok], nan=0.0)
    return cost


def refine_disparity(segment, left, right, init, calib: CameraCalib,
                     params: StereoParams | None = None, temporal: dict | None = None) -> StereoResult:
    """MAP disparity over ``segment`` (bool mask); other pixels untouched.

    ``temporal`` (optional): ``motions`` (per-pixel :class:`RigidMotion`
    list in segment raster order, or one motion), ``flow`` (full map) and
    ``disparity2`` (second-frame disparity on its own grid); optionally
    ``labels2`` (frame-2 instance map) and the segment's ``label``.
    """
    params = params or StereoParams()
    segment = np.asarray(segment, dtype=bool)
    if not segment.any():
        raise ValueError("empty segment")
    init = np.asarray(init, dtype=float)
    filled = _fill_invalid(init, segment)
    h, w = segment.shape
    C = calib.depth_constant
    K = params.half_width
    ys, xs, ptr, nbr, rev = region_graph(segment)
    pixels = np.stack([xs, ys], axis=1)
    centers = filled[ys, xs]
    cand, valid = build_candidates(centers, K, w)
    unary = stereo_cost_volume(left, right, pixels, centers, K, params.csad_radius)
    if temporal is not None and params.tau2 > 0:
        flow = np.asarray(temporal["flow"], dtype=float)[ys, xs]
        unary = unary + params.tau2 * temporal_depth_cost(
            pixels.astype(float), cand, temporal["motions"], flow,
            np.asarray(temporal["disparity2"], dtype=float), calib,
            temporal.get("labels2"), temporal.get("label"))
    unary = forbid(unary, valid)
    idx = np.arange(cand.shape[1])
    lo = np.where(valid, idx, cand.shape[1]).min(axis=1).astype(np.int64)
    hi = np.where(valid, idx, -1).max(axis=1).astype(np.int64)
    # forbidden labels still need a finite depth for the transforms
    z = C / np.where(valid, cand, 1.0)
    tau1 = float(params.tau1)

    x_init = np.full(len(ys), K, dtype=np.int64)
    e_init = ladder_energy(x_init, unary, z, tau1, ptr, nbr)
    x_bp, _ = ladder_bp(unary, z, centers, lo, hi, tau1, ptr, nbr, rev, params.bp_iters)
    x_bp = ladder_icm(x_bp.copy(), unary, z, lo, hi, tau1, ptr, nbr, 20)
    x_ic = ladder_icm(x_init.copy(), unary, z, lo, hi, tau1, ptr, nbr, 20)
    e_bp = ladder_energy(x_bp, unary, z, tau1, ptr, nbr)
    e_ic = ladder_energy(x_ic, unary, z, tau1, ptr, nbr)
    x, e = (x_bp, e_bp) if e_bp <= e_ic else (x_ic, e_ic)

    values = cand[np.arange(len(x)), x]
    if params.subpixel:
        values = values + _parabola_offset(x, unary, lo, hi)
    out = init.copy()
    out[ys, xs] = values
    return StereoResult(out, x, float(e), float(e_init))


def _parabola_offset(x, unary, lo, hi):
    """Vertex of the parabola through the data costs at ``x - 1, x, x + 1``.

    The smoothness term is left out: L1 in depth is cheaper at nearer
    depths and would bias every offset towards larger disparities.
    """
    rows = np.arange(len(x))
    ok = (x - 1 >= lo) & (x + 1 <= hi)
    if not ok.any():
        return np.zeros(len(x))
    cm = unary[rows, np.clip(x - 1, 0, unary.shape[1] - 1)]
    c0 = unary[rows, x]
    cp = unary[rows, np.clip(x + 1, 0, unary.shape[1] - 1)]
    den = cm - 2 * c0 + cp
    off = np.where(ok & (den > 1e-12), 0.5 * (cm - cp) / np.where(den > 1e-12, den, 1.0), 0.0)
    return np.clip(off, -0.5, 0.5)


def refine_frame(labels, left, right, init, calib: CameraCalib,
                 params: StereoParams | None = None, temporal: dict | None = None):
    """Refine every segment (instances and background) of one frame.

    Returns ``(disparity, {segment_id: StereoResult})``. ``temporal`` may
    carry ``motions`` as a ``{segment_id: RigidMotion}`` dict and ``labels2``
    to restrict the temporal term to same-label targets.
    """
    labels = np.asarray(labels)
    out = np.asarray(init, dtype=float).copy()
    results = {}
    for k in np.unique(labels):
        seg = labels == k
        if not (np.asarray(init)[seg] > 0).any():
            continue
        tmp = None
        if temporal is not None:
            mot = temporal["motions"]
            tmp = dict(temporal, motions=mot.get(int(k), RigidMotion()) if isinstance(mot, dict) else mot,
                       label=int(k))
        res = refine_disparity(seg, left, right, init, calib, params, tmp)
        out[seg] = res.disparity[seg]
        results[int(k)] = res
    return out, results
