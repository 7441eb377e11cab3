"""Input checks shared by the public entry points."""

from __future__ import annotations

import numpy as np


def check_image(image, name="image") -> np.ndarray:
    """Float image in [0, 1], ``(h, w)`` or ``(h, w, c)``."""
    a = np.asarray(image, dtype=float)
    if a.ndim not in (2, 3) or min(a.shape[:2]) < 1:
        raise ValueError(f"{name} must be a non-empty (h, w) or (h, w, c) array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def check_disparity(disparity, name="disparity") -> np.ndarray:
    """``(h, w)`` map; non-positive entries mean invalid, NaN is rejected."""
    a = np.asarray(disparity, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if np.any(np.isnan(a)) or np.any(np.isinf(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def check_flow(flow, name="flow") -> np.ndarray:
    a = np.asarray(flow, dtype=float)
    if a.ndim != 3 or a.shape[2] != 2:
        raise ValueError(f"{name} must have shape (h, w, 2), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def check_labels(labels, name="masks") -> np.ndarray:
    """Integer instance map; 0 is background."""
    a = np.asarray(labels)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if a.dtype == bool:
        return a.astype(np.int64)
    if not np.issubdtype(a.dtype, np.integer):
        if not np.all(np.mod(a, 1) == 0):
            raise ValueError(f"{name} must hold integer ids")
        a = a.astype(np.int64)
    if a.size and a.min() < 0:
        raise ValueError(f"{name} ids must be non-negative")
    return a


def check_mask(mask, shape=None, name="mask") -> np.ndarray:
    a = np.asarray(mask, dtype=bool)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if shape is not None and a.shape != tuple(shape):
        raise ValueError(f"{name} has shape {a.shape}, expected {tuple(shape)}")
    return a


def check_same_shape(**arrays):
    """All arrays share their leading ``(h, w)``."""
    shapes = {k: np.shape(v)[:2] for k, v in arrays.items()}
    if len(set(shapes.values())) > 1:
        detail = ", ".join(f"{k}={s}" for k, s in shapes.items())
        raise ValueError(f"raster sizes differ: {detail}")
    return next(iter(shapes.values()), None)
