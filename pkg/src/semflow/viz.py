"""Colour coding of flow, disparity and error maps (uint8 RGB arrays)."""

from __future__ import annotations

import cv2
import numpy as np

from .metrics import disparity_outliers, flow_outliers


def flow_to_color(flow, valid=None, max_magnitude: float | None = None) -> np.ndarray:
    """Hue encodes direction, saturation encodes magnitude; invalid pixels are black."""
    f = np.asarray(flow, dtype=float)
    mag = np.hypot(f[..., 0], f[..., 1])
    valid = np.ones(mag.shape, bool) if valid is None else np.asarray(valid, dtype=bool)
    if max_magnitude is None:
        max_magnitude = float(mag[valid].max()) if valid.any() else 1.0
    max_magnitude = max(max_magnitude, 1e-9)
    hsv = np.empty(mag.shape + (3,), dtype=np.uint8)
    angle = np.mod(np.arctan2(f[..., 1], f[..., 0]), 2 * np.pi)
    hsv[..., 0] = np.rint(angle / (2 * np.pi) * 179).astype(np.uint8)   # OpenCV hue range is [0, 180)
    hsv[..., 1] = np.rint(np.clip(mag / max_magnitude, 0, 1) * 255).astype(np.uint8)
    hsv[..., 2] = 255
    rgb = cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB)
    rgb[~valid] = 0
    return rgb


def disparity_to_color(disparity, max_disparity: float | None = None) -> np.ndarray:
    d = np.asarray(disparity, dtype=float)
    valid = d > 0
    if max_disparity is None:
        max_disparity = float(d[valid].max()) if valid.any() else 1.0
    gray = np.rint(np.clip(d / max(max_disparity, 1e-9), 0, 1) * 255).astype(np.uint8)
    rgb = cv2.applyColorMap(gray, cv2.COLORMAP_JET)[..., ::-1].copy()
    rgb[~valid] = 0
    return rgb


def error_to_color(outliers, valid) -> np.ndarray:
    """Outliers red, inliers green, unevaluated pixels black."""
    outliers = np.asarray(outliers, dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    rgb = np.zeros(outliers.shape + (3,), dtype=np.uint8)
    rgb[valid & outliers] = (220, 30, 30)
    rgb[valid & ~outliers] = (30, 160, 60)
    return rgb


def error_maps(estimate: dict, gt) -> dict:
    """Per-quantity outlier images for an estimate dict and its ground truth."""
    valid = (gt.disparity1 > 0) & (gt.disparity2 > 0) & gt.valid
    bad = {
        "D1": disparity_outliers(estimate["disparity1"], gt.disparity1),
        "D2": disparity_outliers(estimate["disparity2_ref"], gt.disparity2),
        "Fl": flow_outliers(estimate["flow"], gt.flow),
    }
    bad["SF"] = bad["D1"] | bad["D2"] | bad["Fl"]
    return {k: error_to_color(v, valid) for k, v in bad.items()}
