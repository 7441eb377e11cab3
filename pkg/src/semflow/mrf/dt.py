"""Linear-time L1 distance transforms (min-convolutions with ``w|x|``)."""

from __future__ import annotations

import numpy as np


def dt_message_l1(h, w, coords) -> np.ndarray:
    """``m[k] = min_j h[j] + w * |coords[k] - coords[j]|`` in O(n).

    ``coords`` must be strictly increasing.
    """
    h = np.asarray(h, dtype=float)
    coords = np.asarray(coords, dtype=float)
    if h.shape != coords.shape or h.ndim != 1:
        raise ValueError("h and coords must be 1-d arrays of equal length")
    if w < 0:
        raise ValueError("weight must be non-negative")
    if np.any(np.diff(coords) <= 0):
        raise ValueError("coords must be strictly increasing")
    if w == 0:
        return np.full_like(h, h.min())
    # forward pass: min_{j<=k} h[j] - w c[j], shifted back by w c[k]
    wc = w * coords
    fwd = np.minimum.accumulate(h - wc) + wc
    bwd = np.minimum.accumulate((h + wc)[::-1])[::-1] - wc
    return np.minimum(np.minimum(fwd, bwd), h)


def l1_envelope(h, w, src, dst) -> np.ndarray:
    """Evaluate ``min_j h[j] + w|x - src[j]|`` at every ``x`` in ``dst``.

    Between two neighbouring source coordinates the lower envelope is the
    smaller of the two transformed cones, so one transform plus a bracket
    lookup is exact.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    g = dt_message_l1(h, w, src)
    hi = np.clip(np.searchsorted(src, dst, side="left"), 0, len(src) - 1)
    lo = np.clip(hi - 1, 0, len(src) - 1)
    return np.minimum(g[lo] + w * np.abs(dst - src[lo]), g[hi] + w * np.abs(dst - src[hi]))


def min_convolution_l1_bruteforce(h, w, src, dst=None) -> np.ndarray:
    """O(n^2) reference for :func:`dt_message_l1` / :func:`l1_envelope`."""
    h = np.asarray(h, dtype=float)
    src = np.asarray(src, dtype=float)
    dst = src if dst is None else np.asarray(dst, dtype=float)
    return (h[None, :] + w * np.abs(dst[:, None] - src[None, :])).min(axis=1)
