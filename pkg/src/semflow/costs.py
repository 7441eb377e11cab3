"""Matching costs and similarity kernels shared by the CRF stages."""

from __future__ import annotations

import numba
import numpy as np
from scipy import ndimage

from .core import InvalidDisparityError

CSAD_RADIUS = 2
SIGMOID_BANDWIDTH = 3.0


def _as_channels(image) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[:, :, None]
    return np.ascontiguousarray(image)


@numba.njit(cache=True, inline="always")
def _sample(img, x, y, c):
    # bilinear lookup with border replication
    h, w = img.shape[0], img.shape[1]
    x = min(max(x, 0.0), w - 1.0)
    y = min(max(y, 0.0), h - 1.0)
    x0 = int(np.floor(x))
    y0 = int(np.floor(y))
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    top = img[y0, x0, c] * (1.0 - fx) + img[y0, x1, c] * fx
    bot = img[y1, x0, c] * (1.0 - fx) + img[y1, x1, c] * fx
    return top * (1.0 - fy) + bot * fy


@numba.njit(cache=True)
def _csad_pairs(A, ax, ay, B, bx, by, radius, truncation):
    n = ax.shape[0]
    out = np.empty(n)
    ha, wa, nc = A.shape
    hb, wb = B.shape[0], B.shape[1]
    for p in range(n):
        total = 0.0
        count = 0
        fallback = 0.0
        fcount = 0
        for ty in range(-radius, radius + 1):
            for tx in range(-radius, radius + 1):
                xa = ax[p] + tx
                ya = ay[p] + ty
                if xa < 0 or ya < 0 or xa > wa - 1 or ya > ha - 1:
                    continue
                xb = bx[p] + tx
                yb = by[p] + ty
                inside_b = xb >= 0 and yb >= 0 and xb <= wb - 1 and yb <= hb - 1
                s = 0.0
                for c in range(nc):
                    da = _sample(A, xa, ya, c) - _sample(A, ax[p], ay[p], c)
                    db = _sample(B, xb, yb, c) - _sample(B, bx[p], by[p], c)
                    s += abs(da - db)
                if inside_b:
                    total += s
                    count += 1
                else:
                    fallback += s
                    fcount += 1
        if count > 0:
            v = total / (count * nc)
        else:
            v = fallback / (max(fcount, 1) * nc)
        if truncation > 0.0 and v > truncation:
            v = truncation
        out[p] = v
    return out


def csad_pairs(imageA, pts_a, imageB, pts_b, radius=CSAD_RADIUS, truncation=None):
    """Vectorised CSAD for matched point lists ``(n, 2)`` of ``(x, y)``.

    Points may be fractional (bilinear sampling). Offsets count only when
    they fall inside both images; a correspondence whose whole window lies
    outside ``imageB`` falls back to border-replicated samples.
    """
    A = _as_channels(imageA)
    B = _as_channels(imageB)
    if A.shape[2] != B.shape[2]:
        raise ValueError("channel count mismatch")
    pa = np.asarray(pts_a, dtype=np.float64).reshape(-1, 2)
    pb = np.asarray(pts_b, dtype=np.float64).reshape(-1, 2)
    if pa.shape != pb.shape:
        raise ValueError("point lists must have equal length")
    return _csad_pairs(
        A, np.ascontiguousarray(pa[:, 0]), np.ascontiguousarray(pa[:, 1]),
        B, np.ascontiguousarray(pb[:, 0]), np.ascontiguousarray(pb[:, 1]),
        int(radius), float(truncation or 0.0),
    )


def csad(imageA, pixelA, imageB, pixelB, radius=CSAD_RADIUS, truncation=None) -> float:
    """Centralized sum of absolute differences between two windows.

    Mean over in-bounds offsets ``t`` and channels of
    ``|(A(a+t) - A(a)) - (B(b+t) - B(b))|``.
    """
    return float(csad_pairs(imageA, [pixelA], imageB, [pixelB], radius, truncation)[0])


@numba.njit(cache=True, fastmath=True)
def _stereo_volume(L, R, xs, ys, init, K, radius, truncation):
    # cost[p, k] for disparity init[p] + (k - K)
    n = xs.shape[0]
    nl = 2 * K + 1
    h, w, nc = L.shape
    nt = 2 * radius + 1
    span = nl + 2 * radius
    cost = np.empty((n, nl))
    row = np.empty((nt, span, nc))
    rin = np.empty((nt, span), dtype=np.bool_)
    da = np.empty((nt, nt, nc))
    ain = np.empty((nt, nt), dtype=np.bool_)
    for p in range(n):
        x = xs[p]
        y = ys[p]
        for ty in range(nt):
            for tx in range(nt):
                ya = y + ty - radius
                xa = x + tx - radius
                ain[ty, tx] = ya >= 0 and ya <= h - 1 and xa >= 0 and xa <= w - 1
                for c in range(nc):
                    da[ty, tx, c] = L[ya, xa, c] - L[y, x, c] if ain[ty, tx] else 0.0
        # right-image samples at column x - init - K - radius + j
        base = x - init[p] - K - radius
        for ty in range(nt):
            yy = min(max(y + ty - radius, 0), h - 1)
            for j in range(span):
                xb = base + j
                rin[ty, j] = xb >= 0.0 and xb <= w - 1.0
                xc = min(max(xb, 0.0), w - 1.0)
                x0 = int(np.floor(xc))
                x1 = min(x0 + 1, w - 1)
                fx = xc - x0
                for c in range(nc):
                    row[ty, j, c] = R[yy, x0, c] * (1.0 - fx) + R[yy, x1, c] * fx
        seen = 0.0
        nseen = 0
        for k in range(nl):
            # larger disparity -> smaller right column
            m = nl - 1 - k
            total = 0.0
            count = 0
            for ty in range(nt):
                for tx in range(nt):
                    if not ain[ty, tx]:
                        continue
                    j = m + tx
                    if not rin[ty, j]:
                        continue
                    s = 0.0
                    for c in range(nc):
                        s += abs(da[ty, tx, c] - (row[ty, j, c] - row[radius, m + radius, c]))
                    total += s
                    count += 1
            if count > 0:
                v = total / (count * nc)
                if truncation > 0.0 and v > truncation:
                    v = truncation
                cost[p, k] = v
                seen += v
                nseen += 1
            else:
                cost[p, k] = -1.0
        # a window entirely outside the right image carries no evidence:
        # charge the pixel's mean observable cost
        fill = seen / nseen if nseen > 0 else 0.0
        for k in range(nl):
            if cost[p, k] < 0.0:
                cost[p, k] = fill
    return cost


def stereo_cost_volume(left, right, pixels, init, K, radius=CSAD_RADIUS, truncation=None):
    """CSAD between left pixel ``i`` and right pixel ``P_d(i, init_i + k)``.

    ``pixels`` is ``(n, 2)`` integer ``(x, y)``; returns ``(n, 2K+1)`` with
    column ``k + K`` holding the cost of disparity ``init + k``.

    The right-image window is sampled along a single row, so ``tx`` in the
    left window pairs with column ``x - d + tx`` on the right.
    """
    L = _as_channels(left)
    R = _as_channels(right)
    pixels = np.asarray(pixels)
    return _stereo_volume(
        L, R,
        np.ascontiguousarray(pixels[:, 0], dtype=np.int64),
        np.ascontiguousarray(pixels[:, 1], dtype=np.int64),
        np.ascontiguousarray(init, dtype=np.float64),
        int(K), int(radius), float(truncation or 0.0),
    )


@numba.njit(cache=True)
def _flow_volume(I, J, xs, ys, cu, cv, W, radius, truncation):
    n = xs.shape[0]
    nw = 2 * W + 1
    h, w, nc = I.shape
    cost = np.empty((n, nw, nw))
    for p in range(n):
        x = xs[p]
        y = ys[p]
        for a in range(nw):
            for b in range(nw):
                bx = x + cu[p] + a - W
                by = y + cv[p] + b - W
                cbx = min(max(bx, 0), w - 1)
                cby = min(max(by, 0), h - 1)
                total = 0.0
                count = 0
                fb = 0.0
                fcount = 0
                for ty in range(-radius, radius + 1):
                    ya = y + ty
                    if ya < 0 or ya > h - 1:
                        continue
                    for tx in range(-radius, radius + 1):
                        xa = x + tx
                        if xa < 0 or xa > w - 1:
                            continue
                        xb = bx + tx
                        yb = by + ty
                        inside = xb >= 0 and yb >= 0 and xb <= w - 1 and yb <= h - 1
                        xb = min(max(xb, 0), w - 1)
                        yb = min(max(yb, 0), h - 1)
                        s = 0.0
                        for c in range(nc):
                            s += abs((I[ya, xa, c] - I[y, x, c]) - (J[yb, xb, c] - J[cby, cbx, c]))
                        if inside:
                            total += s
                            count += 1
                        else:
                            fb += s
                            fcount += 1
                if count > 0:
                    v = total / (count * nc)
                else:
                    v = fb / (max(fcount, 1) * nc)
                if truncation > 0.0 and v > truncation:
                    v = truncation
                cost[p, a, b] = v
    return cost


def flow_cost_volume(I, J, pixels, centers, W, radius=CSAD_RADIUS, truncation=None):
    """CSAD for integer flow labels ``center + (a - W, b - W)``.

    Returns ``(n, 2W+1, 2W+1)`` indexed ``[pixel, u-label, v-label]``.
    """
    I = _as_channels(I)
    J = _as_channels(J)
    pixels = np.asarray(pixels)
    centers = np.asarray(centers)
    return _flow_volume(
        I, J,
        np.ascontiguousarray(pixels[:, 0], dtype=np.int64),
        np.ascontiguousarray(pixels[:, 1], dtype=np.int64),
        np.ascontiguousarray(centers[:, 0], dtype=np.int64),
        np.ascontiguousarray(centers[:, 1], dtype=np.int64),
        int(W), int(radius), float(truncation or 0.0),
    )


def rho_img(color_a, color_b, sigma_img):
    """Color similarity ``exp(-||a - b|| / sigma_img)`` over the last axis."""
    diff = np.asarray(color_a, dtype=float) - np.asarray(color_b, dtype=float)
    return np.exp(-np.sqrt(np.sum(diff * diff, axis=-1)) / sigma_img)


def rho_disp(d_a, d_b, sigma_disp):
    return np.exp(-np.abs(np.asarray(d_a, dtype=float) - d_b) / sigma_disp)


def rho_depth(d_a, d_b, C):
    """Absolute depth difference ``|C/d_a - C/d_b|``."""
    d_a = np.asarray(d_a, dtype=float)
    d_b = np.asarray(d_b, dtype=float)
    if np.any(~(d_a > 0)) or np.any(~(d_b > 0)):
        raise InvalidDisparityError("rho_depth needs valid disparities")
    return np.abs(C / d_a - C / d_b)


def charbonnier(a, eps):
    a = np.asarray(a, dtype=float)
    return np.sqrt(a * a + eps * eps)


def charbonnier_grad(a, eps):
    a = np.asarray(a, dtype=float)
    return a / np.sqrt(a * a + eps * eps)


def signed_distance(mask) -> np.ndarray:
    """Euclidean signed distance to the mask border, positive inside."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any() or mask.all():
        raise ValueError("signed distance needs a mask with a border")
    return ndimage.distance_transform_edt(mask) - ndimage.distance_transform_edt(~mask)


def signed_distance_feature(mask, bandwidth=SIGMOID_BANDWIDTH) -> np.ndarray:
    """Logistic of the signed border distance, mapped into ``[0, 1]``."""
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    return 1.0 / (1.0 + np.exp(-signed_distance(mask) / bandwidth))


def chamfer_map(mask) -> np.ndarray:
    """Exact Euclidean distance from every pixel to the nearest mask pixel."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("chamfer map of an empty mask")
    return ndimage.distance_transform_edt(~mask)
