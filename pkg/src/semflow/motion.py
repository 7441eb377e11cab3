"""Rigid SE(3) motion fitting for object instances and the background.

The flow-matching objective for motion ``M = (t, alpha, beta, gamma)`` on a
segment with disparities ``d_i`` and flow ``(u_i, v_i)`` is::

    nu * (rho(alpha) + rho(beta) + rho(gamma))
        + sum_i rho(x_i(M) - u_i) + rho(y_i(M) - v_i)

with ``rho`` the Charbonnier penalty and ``(x_i, y_i)`` the motion flow.
When the fitted motion disagrees with the second-frame silhouette, a
silhouette alignment objective is minimised instead.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_consistent_length, check_is_fitted, column_or_1d

from .core import (
    BoundingBox,
    CameraCalib,
    InvalidDisparityError,
    RigidMotion,
    backproject,
    motion_flow_at,
    pixel_grid,
)
from .costs import chamfer_map, charbonnier, charbonnier_grad

logger = logging.getLogger(__name__)

FLOW_MATCH = "flow-match"
SILHOUETTE = "silhouette"
SILHOUETTE_PADDING = 10


@dataclass
class MotionParams:
    nu: float = 10.0
    eps: float = 0.1
    alpha: float = 0.5
    threshold: float = 0.5
    max_iters: int = 200
    step: float = 1.0
    backtrack: float = 0.5
    armijo: float = 1e-4
    tol: float = 1e-12
    subsample: int = 4

    def __post_init__(self):
        if self.nu < 0:
            raise ValueError("nu must be non-negative")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 < self.backtrack < 1.0:
            raise ValueError("backtrack factor must lie in (0, 1)")


@dataclass
class MotionEstimate:
    motion: RigidMotion
    objective: float
    mode: str = FLOW_MATCH
    iterations: int = 0
    history: list = field(default_factory=list)
    silhouette: float | None = None


def _drot(angles):
    """Rotation matrix and its three partial derivatives."""
    a, b, g = angles
    ca, sa, cb, sb, cg, sg = np.cos(a), np.sin(a), np.cos(b), np.sin(b), np.cos(g), np.sin(g)
    Rx = np.array([[1, 0, 0], [0, ca, -sa], [0, sa, ca]])
    Ry = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]])
    Rz = np.array([[cg, -sg, 0], [sg, cg, 0], [0, 0, 1]])
    dRx = np.array([[0, 0, 0], [0, -sa, -ca], [0, ca, -sa]])
    dRy = np.array([[-sb, 0, cb], [0, 0, 0], [-cb, 0, -sb]])
    dRz = np.array([[-sg, -cg, 0], [cg, -sg, 0], [0, 0, 0]])
    R = Rz @ Ry @ Rx
    return R, (Rz @ Ry @ dRx, Rz @ dRy @ Rx, dRz @ Ry @ Rx)


class _FlowFit:
    """Segment data prepared once for repeated objective evaluations."""

    def __init__(self, pixels, disparity, flow, calib: CameraCalib):
        pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
        disparity = np.asarray(disparity, dtype=float).ravel()
        flow = np.asarray(flow, dtype=float).reshape(-1, 2)
        ok = disparity > 0
        if not ok.any():
            raise InvalidDisparityError("no valid disparity in segment")
        self.pixels = pixels[ok]
        self.flow = flow[ok]
        self.points = backproject(self.pixels, disparity[ok], calib)
        self.calib = calib

    def residuals(self, v, jacobian=False):
        R, dR = _drot(v[3:])
        P = self.points @ R.T + v[:3]
        z = P[:, 2]
        if np.any(z <= 1e-9):
            return None, None
        f = self.calib.focal_length
        proj = np.stack([f * P[:, 0] / z + self.calib.cx, f * P[:, 1] / z + self.calib.cy], axis=1)
        r = proj - self.pixels - self.flow
        if not jacobian:
            return r, None
        n = len(P)
        # d(proj)/dP, shape (n, 2, 3)
        dp = np.zeros((n, 2, 3))
        dp[:, 0, 0] = f / z
        dp[:, 1, 1] = f / z
        dp[:, 0, 2] = -f * P[:, 0] / z**2
        dp[:, 1, 2] = -f * P[:, 1] / z**2
        J = np.empty((n, 2, 6))
        J[:, :, :3] = dp
        for k in range(3):
            J[:, :, 3 + k] = np.einsum("nij,nj->ni", dp, self.points @ dR[k].T)
        return r, J


def _objective(fit: _FlowFit, v, nu, eps, need_grad=True):
    r, J = fit.residuals(v, jacobian=need_grad)
    if r is None:
        return np.inf, None, None
    ang = v[3:]
    value = float(charbonnier(r, eps).sum() + nu * charbonnier(ang, eps).sum())
    if not need_grad:
        return value, None, None
    psi = charbonnier_grad(r, eps)
    g = np.einsum("ni,nik->k", psi, J)
    g[3:] += nu * charbonnier_grad(ang, eps)
    # reweighted least-squares curvature, a positive definite metric
    wts = 1.0 / np.sqrt(r**2 + eps**2)
    H = np.einsum("ni,nik,nil->kl", wts, J, J)
    H[3:, 3:] += np.diag(nu / np.sqrt(ang**2 + eps**2))
    return value, g, H


def motion_objective(motion, pixels, disparity, flow, calib: CameraCalib, nu=10.0, eps=0.1):
    """Objective value and analytic gradient w.r.t. ``[t, angles]``.

    ``motion`` is a :class:`RigidMotion` or a 6-vector. Pixels with invalid
    disparity are ignored. Returns ``(inf, None)`` when a moved point falls
    behind the camera.
    """
    v = motion.as_vector() if isinstance(motion, RigidMotion) else np.asarray(motion, dtype=float)
    fit = _FlowFit(pixels, disparity, flow, calib)
    value, g, _ = _objective(fit, v, nu, eps)
    return value, g


def _segment_arrays(segment, disparity, flow, subsample=1):
    segment = np.asarray(segment, dtype=bool)
    if subsample > 1:
        keep = np.zeros_like(segment)
        keep[::subsample, ::subsample] = True
        segment = segment & keep
    grid = pixel_grid(segment.shape)
    return grid[segment], np.asarray(disparity, dtype=float)[segment], np.asarray(flow, dtype=float)[segment]


def _descend(fit, v0, params: MotionParams):
    v = np.asarray(v0, dtype=float).copy()
    value, g, H = _objective(fit, v, params.nu, params.eps)
    if not np.isfinite(value):
        raise ValueError("initial motion moves the segment behind the camera")
    history = [value]
    it = 0
    for it in range(1, params.max_iters + 1):
        try:
            p = -np.linalg.solve(H + 1e-12 * np.trace(H) * np.eye(6), g)
        except np.linalg.LinAlgError:
            p = -g
        slope = float(g @ p)
        if not slope < 0:
            p, slope = -g, -float(g @ g)
        if slope == 0.0:
            break
        step = params.step
        accepted = False
        while step > 1e-12:
            cand = v + step * p
            cv, _, _ = _objective(fit, cand, params.nu, params.eps, need_grad=False)
            if cv <= value + params.armijo * step * slope:
                accepted = True
                break
            step *= params.backtrack
        if not accepted:
            break
        moved = np.abs(cand - v).max()
        v = cand
        new_value, g, H = _objective(fit, v, params.nu, params.eps)
        assert new_value <= value, "descent step increased the objective"
        gain = value - new_value
        value = new_value
        history.append(value)
        if moved < 1e-12 or gain <= params.tol * max(1.0, abs(value)) or np.abs(g).max() < 1e-10:
            break
    return v, value, it, history


def estimate_motion(segment, disparity, flow, calib: CameraCalib, params: MotionParams | None = None,
                    init: RigidMotion | None = None, subsample: int = 1) -> MotionEstimate:
    """Fit one rigid motion to the flow of ``segment`` (bool mask).

    Backtracking (Armijo) descent along the gradient preconditioned by the
    reweighted least-squares curvature; every accepted step lowers the
    objective.
    """
    params = params or MotionParams()
    pixels, d, f = _segment_arrays(segment, disparity, flow, subsample)
    if len(pixels) == 0:
        raise ValueError("empty segment")
    fit = _FlowFit(pixels, d, f, calib)
    v0 = (init or RigidMotion()).as_vector()
    v, value, it, history = _descend(fit, v0, params)
    return MotionEstimate(RigidMotion.from_vector(v), value, FLOW_MATCH, it, history)


def estimate_background_motion(background, disparity, flow, calib: CameraCalib,
                               params: MotionParams | None = None, init=None,
                               subsample: int | None = None) -> MotionEstimate:
    """Camera ego-motion from the background pixels, on a subsampled grid."""
    params = params or MotionParams()
    step = params.subsample if subsample is None else subsample
    return estimate_motion(background, disparity, flow, calib, params, init, subsample=max(1, int(step)))


# ---------------------------------------------------------------- silhouettes


def warp_silhouette(motion: RigidMotion, mask1, disparity1, calib: CameraCalib, shape=None):
    """Rasterise the moved frame-1 mask into frame 2.

    Each valid mask pixel is splatted to its nearest target pixel, then a
    3x3 closing fills single-pixel holes. Returns ``(mask, any_inside)``.
    """
    mask1 = np.asarray(mask1, dtype=bool)
    shape = mask1.shape if shape is None else shape
    h, w = shape[:2]
    d = np.asarray(disparity1, dtype=float)
    sel = mask1 & (d > 0)
    out = np.zeros((h, w), dtype=bool)
    if not sel.any():
        return out, False
    pts = motion.apply(backproject(pixel_grid(mask1.shape)[sel], d[sel], calib))
    front = pts[:, 2] > 1e-9
    pts = pts[front]
    f = calib.focal_length
    x = np.rint(f * pts[:, 0] / pts[:, 2] + calib.cx).astype(np.int64)
    y = np.rint(f * pts[:, 1] / pts[:, 2] + calib.cy).astype(np.int64)
    ok = (x >= 0) & (x < w) & (y >= 0) & (y < h)
    if not ok.any():
        return out, False
    out[y[ok], x[ok]] = True
    padded = np.pad(out, 1)
    closed = ndimage.binary_closing(padded, structure=np.ones((3, 3), bool))[1:-1, 1:-1]
    return closed | out, True


def silhouette_cost(motion: RigidMotion, mask1, disparity1, mask2, calib: CameraCalib,
                    alpha: float = 0.5, box=None, with_flag: bool = False, occluders=None):
    """Normalised two-sided Chamfer disagreement between ``S(M)`` and ``mask2``.

    ``(1/|B|) sum alpha S(M) C(S2) + (1 - alpha) C(S(M)) S2`` where ``C`` is
    the distance to the nearest pixel of a mask and ``B`` defaults to the
    padded box of ``mask2``. When the moved mask leaves the image the cost
    is the sentinel ``image diagonal`` and the flag (returned when
    ``with_flag``) is ``True``. Moved pixels landing on ``occluders`` (other
    instances in frame 2) may be hidden and are not charged.
    """
    mask2 = np.asarray(mask2, dtype=bool)
    if not np.asarray(mask1, dtype=bool).any():
        raise ValueError("frame-1 mask is empty")
    if not mask2.any():
        raise ValueError("frame-2 mask is empty")
    if box is None:
        box = BoundingBox.from_mask(mask2, pad=SILHOUETTE_PADDING)
    size = box if isinstance(box, (int, np.integer)) else box.size
    S, inside = warp_silhouette(motion, mask1, disparity1, calib, mask2.shape)
    if not inside:
        cost = float(np.hypot(*mask2.shape))
    else:
        seen = S if occluders is None else S & ~np.asarray(occluders, dtype=bool)
        a = alpha * chamfer_map(mask2)[seen].sum()
        b = (1.0 - alpha) * chamfer_map(S)[mask2].sum()
        cost = float((a + b) / size)
    return (cost, not inside) if with_flag else cost


def _silhouette_scales(mask1, disparity1, calib):
    """Parameter changes that move the silhouette by roughly one pixel."""
    ys, xs = np.nonzero(mask1 & (np.asarray(disparity1) > 0))
    z = calib.depth_constant / np.median(np.asarray(disparity1)[ys, xs])
    f = calib.focal_length
    radius = max(2.0, 0.5 * max(np.ptp(xs), np.ptp(ys)))
    return np.array([z / f, z / f, z / radius, 1.0 / f, 1.0 / f, 1.0 / radius])


def _silhouette_descent(v0, objective, scales, max_iters=200, h0=4.0, h_min=0.25, backtrack=0.5):
    """Finite-difference descent in pixel-scaled coordinates.

    The silhouette cost is piecewise constant at sub-pixel scale, so the
    difference step starts at several pixels and halves whenever no
    descent step is found.
    """
    v = np.asarray(v0, dtype=float).copy()
    value = objective(v)
    h = h0
    it = 0
    history = [value]
    while it < max_iters and h >= h_min:
        it += 1
        g = np.empty(6)
        for k in range(6):
            e = np.zeros(6)
            e[k] = h * scales[k]
            g[k] = (objective(v + e) - objective(v - e)) / (2 * h)
        if not np.any(g):
            h *= 0.5
            continue
        p = -g / np.abs(g).max() * h * scales
        step = 4.0
        improved = False
        while step >= 0.25:
            cand = v + step * p
            cv = objective(cand)
            if cv < value:
                v, value, improved = cand, cv, True
                history.append(value)
                break
            step *= backtrack
        if not improved:
            h *= 0.5
    return v, value, it, history


def estimate_motion_with_recovery(mask1, disparity1, flow, mask2, calib: CameraCalib,
                                  params: MotionParams | None = None,
                                  init: RigidMotion | None = None, occluders=None) -> MotionEstimate:
    """Flow fit, falling back to silhouette alignment when it disagrees.

    If the silhouette cost of the flow-fitted motion exceeds
    ``params.threshold``, the flow term is replaced by the silhouette cost
    and the rotation-regularised objective is minimised from several
    starts; the result with the lower silhouette cost is returned.
    """
    params = params or MotionParams()
    mask1 = np.asarray(mask1, dtype=bool)
    mask2 = np.asarray(mask2, dtype=bool)
    est = estimate_motion(mask1, disparity1, flow, calib, params, init)
    box = BoundingBox.from_mask(mask2, pad=SILHOUETTE_PADDING)
    sil = silhouette_cost(est.motion, mask1, disparity1, mask2, calib, params.alpha, box, occluders=occluders)
    est.silhouette = sil
    if not sil > params.threshold:
        return est

    def objective(v):
        m = RigidMotion.from_vector(v)
        reg = params.nu * float(charbonnier(v[3:], params.eps).sum())
        return silhouette_cost(m, mask1, disparity1, mask2, calib, params.alpha, box, occluders=occluders) + reg

    scales = _silhouette_scales(mask1, disparity1, calib)
    starts = [est.motion.as_vector(), np.zeros(6), _centroid_start(mask1, disparity1, mask2, calib)]
    best = None
    for v0 in starts:
        v, value, it, history = _silhouette_descent(v0, objective, scales)
        if best is None or value < best[1]:
            best = (v, value, it, history)
    v, value, it, history = best
    motion = RigidMotion.from_vector(v)
    cost = silhouette_cost(motion, mask1, disparity1, mask2, calib, params.alpha, box, occluders=occluders)
    logger.debug("silhouette recovery: %.3f -> %.3f", sil, cost)
    if cost < sil:
        return MotionEstimate(motion, value, SILHOUETTE, it, history, cost)
    return est


def _centroid_start(mask1, disparity1, mask2, calib):
    # translation that carries the frame-1 centroid onto the frame-2 centroid
    d = np.asarray(disparity1, dtype=float)
    sel = mask1 & (d > 0)
    z = calib.depth_constant / np.median(d[sel])
    y1, x1 = np.nonzero(mask1)
    y2, x2 = np.nonzero(mask2)
    f = calib.focal_length
    return np.array([(x2.mean() - x1.mean()) * z / f, (y2.mean() - y1.mean()) * z / f, 0, 0, 0, 0])


class RigidMotionEstimator(BaseEstimator):
    """Scikit-learn style flow-to-motion fitter.

    ``fit(X, y)`` takes ``X = (pixels (n, 2), disparity (n,))`` and the
    observed flow ``y`` of shape ``(n, 2)``; ``predict`` renders the motion
    flow of the fitted motion at new pixels.
    """

    def __init__(self, calib=None, nu=10.0, eps=0.1, max_iters=200):
        self.calib = calib
        self.nu = nu
        self.eps = eps
        self.max_iters = max_iters

    def fit(self, X, y):
        if self.calib is None:
            raise ValueError("calib is required")
        pixels, disparity = X
        pixels = check_array(pixels, ensure_min_samples=3)
        disparity = column_or_1d(disparity)
        y = check_array(y)
        check_consistent_length(pixels, disparity, y)
        if pixels.shape[1] != 2 or y.shape[1] != 2:
            raise ValueError("pixels and flow must have two columns")
        params = MotionParams(nu=self.nu, eps=self.eps, max_iters=self.max_iters)
        fit = _FlowFit(pixels, disparity, y, self.calib)
        v, value, it, history = _descend(fit, np.zeros(6), params)
        self.motion_ = RigidMotion.from_vector(v)
        self.objective_ = value
        self.n_iter_ = it
        return self

    def predict(self, X):
        check_is_fitted(self, "motion_")
        pixels, disparity = X
        pixels = check_array(pixels)
        disparity = column_or_1d(disparity)
        check_consistent_length(pixels, disparity)
        return motion_flow_at(pixels, disparity, self.motion_, self.calib)
