"""Sweep-schedule min-sum BP for pixel CRFs with L1 smoothness.

Two label layouts are supported, both with per-pixel label sets:

* depth ladders: pixel ``s`` has candidate disparities
  ``init[s] + (l - K)`` valid for ``lo[s] <= l <= hi[s]`` and passed as
  depths ``z = C / d``; the smoothness cost is ``w * |z_s - z_t|``. A message is one distance transform over
  the sender's depths followed by an exact bracket lookup at the
  receiver's depths.
* flow windows: pixel ``s`` has integer flows ``center[s] + (a - W, b - W)``;
  the smoothness cost is ``w * (|du| + |dv|)``. The sender's window is
  transformed separably and read back with an integer shift, extending
  linearly past its edges.

Both run the same schedule as :func:`semflow.mrf.bp.maxproduct_bp` with
``schedule="sweep"``.
"""

from __future__ import annotations

import numba
import numpy as np

from .graph import BIG

_OFFSETS4 = ((0, 1), (1, 0), (0, -1), (-1, 0))


def region_graph(region):
    """4-neighbour CSR adjacency over the ``True`` pixels of ``region``.

    Returns ``(ys, xs, ptr, nbr, rev)`` with nodes in raster order.
    """
    region = np.asarray(region, dtype=bool)
    h, w = region.shape
    ys, xs = np.nonzero(region)
    index = -np.ones(region.shape, dtype=np.int64)
    index[ys, xs] = np.arange(len(ys))
    src, dst = [], []
    for dy, dx in _OFFSETS4:
        ny, nx = ys + dy, xs + dx
        ok = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
        ok[ok] &= region[ny[ok], nx[ok]]
        src.append(index[ys[ok], xs[ok]])
        dst.append(index[ny[ok], nx[ok]])
    src = np.concatenate(src)
    dst = np.concatenate(dst)
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    ptr = np.zeros(len(ys) + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=len(ys)), out=ptr[1:])
    # slot of the reversed directed edge
    key = src * len(ys) + dst
    rkey = dst * len(ys) + src
    rev = np.searchsorted(key, rkey)
    return ys, xs, ptr, dst.astype(np.int64), rev.astype(np.int64)


# ----------------------------------------------------------------- depth ladder


@numba.njit(cache=True)
def _ladder_send(s, t, h, g, z, init, lo, hi, w, out):
    # transform over the sender's valid depths
    a0, a1 = lo[s], hi[s]
    for l in range(a0, a1 + 1):
        g[l] = h[l]
    for l in range(a0 + 1, a1 + 1):
        v = g[l - 1] + w * abs(z[s, l] - z[s, l - 1])
        if v < g[l]:
            g[l] = v
    for l in range(a1 - 1, a0 - 1, -1):
        v = g[l + 1] + w * abs(z[s, l] - z[s, l + 1])
        if v < g[l]:
            g[l] = v
    shift = init[t] - init[s]
    lowest = np.inf
    L = out.shape[0]
    for l in range(L):
        if l < lo[t] or l > hi[t]:
            out[l] = 0.0
            continue
        zt = z[t, l]
        f = int(np.floor(l + shift))
        a = min(max(f, a0), a1)
        b = min(max(f + 1, a0), a1)
        va = g[a] + w * abs(zt - z[s, a])
        vb = g[b] + w * abs(zt - z[s, b])
        v = va if va < vb else vb
        out[l] = v
        if v < lowest:
            lowest = v
    for l in range(lo[t], hi[t] + 1):
        out[l] -= lowest


@numba.njit(cache=True)
def _ladder_pair(s, ls, t, lt, z, w):
    return w * abs(z[s, ls] - z[t, lt])


@numba.njit(cache=True)
def ladder_bp(unary, z, init, lo, hi, w, ptr, nbr, rev, max_iters):
    n, L = unary.shape
    msg = np.zeros((nbr.shape[0], L))
    b = np.empty(L)
    h = np.empty(L)
    g = np.empty(L)
    out = np.empty(L)
    for it in range(max_iters):
        for sweep in range(2):
            for q in range(n):
                s = q if sweep == 0 else n - 1 - q
                for l in range(L):
                    b[l] = unary[s, l]
                for k in range(ptr[s], ptr[s + 1]):
                    for l in range(L):
                        b[l] += msg[k, l]
                for k in range(ptr[s], ptr[s + 1]):
                    t = nbr[k]
                    if (t > s) != (sweep == 0):
                        continue
                    for l in range(L):
                        h[l] = b[l] - msg[k, l]
                    _ladder_send(s, t, h, g, z, init, lo, hi, w, out)
                    r = rev[k]
                    for l in range(L):
                        msg[r, l] = out[l]
    # sequential decode
    x = np.zeros(n, dtype=np.int64)
    done = np.zeros(n, dtype=np.bool_)
    for s in range(n):
        best = np.inf
        arg = lo[s]
        for l in range(lo[s], hi[s] + 1):
            v = unary[s, l]
            for k in range(ptr[s], ptr[s + 1]):
                t = nbr[k]
                if done[t]:
                    v += _ladder_pair(s, l, t, x[t], z, w)
                else:
                    v += msg[k, l]
            if v < best:
                best = v
                arg = l
        x[s] = arg
        done[s] = True
    return x, msg


@numba.njit(cache=True)
def ladder_icm(x, unary, z, lo, hi, w, ptr, nbr, max_sweeps):
    n = unary.shape[0]
    for sweep in range(max_sweeps):
        changed = 0
        for s in range(n):
            best = np.inf
            arg = x[s]
            for l in range(lo[s], hi[s] + 1):
                v = unary[s, l]
                for k in range(ptr[s], ptr[s + 1]):
                    t = nbr[k]
                    v += _ladder_pair(s, l, t, x[t], z, w)
                if v < best - 1e-12:
                    best = v
                    arg = l
            if arg != x[s]:
                cur = unary[s, x[s]]
                for k in range(ptr[s], ptr[s + 1]):
                    cur += _ladder_pair(s, x[s], nbr[k], x[nbr[k]], z, w)
                if best < cur - 1e-12:
                    x[s] = arg
                    changed += 1
        if changed == 0:
            break
    return x


@numba.njit(cache=True)
def ladder_energy(x, unary, z, w, ptr, nbr):
    total = 0.0
    for s in range(unary.shape[0]):
        total += unary[s, x[s]]
        for k in range(ptr[s], ptr[s + 1]):
            t = nbr[k]
            if t > s:
                total += _ladder_pair(s, x[s], t, x[t], z, w)
    return total


# ------------------------------------------------------------------ flow window


@numba.njit(cache=True)
def _dt_axis(g, nw, w, axis):
    # in-place unit-spacing L1 transform of an (nw, nw) block along one axis
    for r in range(nw):
        for c in range(1, nw):
            if axis == 0:
                v = g[c - 1, r] + w
                if v < g[c, r]:
                    g[c, r] = v
            else:
                v = g[r, c - 1] + w
                if v < g[r, c]:
                    g[r, c] = v
        for c in range(nw - 2, -1, -1):
            if axis == 0:
                v = g[c + 1, r] + w
                if v < g[c, r]:
                    g[c, r] = v
            else:
                v = g[r, c + 1] + w
                if v < g[r, c]:
                    g[r, c] = v


@numba.njit(cache=True)
def _window_send(s, t, h, g, centers, nw, W, w, out):
    for a in range(nw):
        for b in range(nw):
            g[a, b] = h[a * nw + b]
    _dt_axis(g, nw, w, 0)
    _dt_axis(g, nw, w, 1)
    du = centers[t, 0] - centers[s, 0]
    dv = centers[t, 1] - centers[s, 1]
    lowest = np.inf
    for a in range(nw):
        pa = a + du
        ca = min(max(pa, 0), nw - 1)
        for b in range(nw):
            pb = b + dv
            cb = min(max(pb, 0), nw - 1)
            v = g[ca, cb] + w * (abs(pa - ca) + abs(pb - cb))
            out[a * nw + b] = v
            if v < lowest:
                lowest = v
    for l in range(nw * nw):
        out[l] -= lowest


@numba.njit(cache=True)
def _window_pair(s, ls, t, lt, centers, nw, w):
    us = centers[s, 0] + ls // nw
    vs = centers[s, 1] + ls % nw
    ut = centers[t, 0] + lt // nw
    vt = centers[t, 1] + lt % nw
    return w * (abs(us - ut) + abs(vs - vt))


@numba.njit(cache=True)
def window_bp(unary, centers, W, w, ptr, nbr, rev, max_iters):
    n, L = unary.shape
    nw = 2 * W + 1
    msg = np.zeros((nbr.shape[0], L))
    b = np.empty(L)
    h = np.empty(L)
    g = np.empty((nw, nw))
    out = np.empty(L)
    for it in range(max_iters):
        for sweep in range(2):
            for q in range(n):
                s = q if sweep == 0 else n - 1 - q
                for l in range(L):
                    b[l] = unary[s, l]
                for k in range(ptr[s], ptr[s + 1]):
                    for l in range(L):
                        b[l] += msg[k, l]
                for k in range(ptr[s], ptr[s + 1]):
                    t = nbr[k]
                    if (t > s) != (sweep == 0):
                        continue
                    for l in range(L):
                        h[l] = b[l] - msg[k, l]
                    _window_send(s, t, h, g, centers, nw, W, w, out)
                    r = rev[k]
                    for l in range(L):
                        msg[r, l] = out[l]
    x = np.zeros(n, dtype=np.int64)
    done = np.zeros(n, dtype=np.bool_)
    for s in range(n):
        best = np.inf
        arg = 0
        for l in range(L):
            v = unary[s, l]
            for k in range(ptr[s], ptr[s + 1]):
                t = nbr[k]
                if done[t]:
                    v += _window_pair(s, l, t, x[t], centers, nw, w)
                else:
                    v += msg[k, l]
            if v < best:
                best = v
                arg = l
        x[s] = arg
        done[s] = True
    return x, msg


@numba.njit(cache=True)
def window_icm(x, unary, centers, W, w, ptr, nbr, max_sweeps):
    n, L = unary.shape
    nw = 2 * W + 1
    for sweep in range(max_sweeps):
        changed = 0
        for s in range(n):
            cur = unary[s, x[s]]
            for k in range(ptr[s], ptr[s + 1]):
                cur += _window_pair(s, x[s], nbr[k], x[nbr[k]], centers, nw, w)
            best = cur
            arg = x[s]
            for l in range(L):
                v = unary[s, l]
                for k in range(ptr[s], ptr[s + 1]):
                    v += _window_pair(s, l, nbr[k], x[nbr[k]], centers, nw, w)
                if v < best - 1e-12:
                    best = v
                    arg = l
            if arg != x[s]:
                x[s] = arg
                changed += 1
        if changed == 0:
            break
    return x


@numba.njit(cache=True)
def window_energy(x, unary, centers, W, w, ptr, nbr):
    nw = 2 * W + 1
    total = 0.0
    for s in range(unary.shape[0]):
        total += unary[s, x[s]]
        for k in range(ptr[s], ptr[s + 1]):
            t = nbr[k]
            if t > s:
                total += _window_pair(s, x[s], t, x[t], centers, nw, w)
    return total


def forbid(unary, valid):
    """Copy of ``unary`` with :data:`BIG` on labels outside ``valid``."""
    out = np.array(unary, dtype=float)
    out[~valid] = BIG
    return out
