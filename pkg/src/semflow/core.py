"""Raster conventions, pinhole stereo camera and rigid motion geometry.

Coordinates: x right, y down, z forward (meters). Disparity is left column
minus right column and is strictly positive where valid; depth is
``C / d`` with ``C = focal * baseline``.

A rigid motion maps a 3D point ``X`` to ``R @ X + t`` where
``R = Rz(gamma) @ Ry(beta) @ Rx(alpha)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: Reserved marker for pixels without a usable disparity. Non-positive so
#: that validity is simply ``d > 0`` and maps stay totally ordered.
INVALID_DISPARITY = -1.0


class InvalidDisparityError(ValueError):
    """Raised when a disparity that must be valid is not (d <= 0)."""


class BehindCameraError(ValueError):
    """Raised when a point lies on or behind the image plane (z <= 0)."""


@dataclass(frozen=True)
class CameraCalib:
    focal_length: float
    baseline: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.focal_length > 0 and self.baseline > 0):
            raise ValueError("focal_length and baseline must be positive")

    @property
    def depth_constant(self) -> float:
        return self.focal_length * self.baseline


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _ry(b):
    c, s = np.cos(b), np.sin(b)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rz(g):
    c, s = np.cos(g), np.sin(g)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class RigidMotion:
    """SE(3) element stored as a translation and three axis angles."""

    t: tuple = (0.0, 0.0, 0.0)
    angles: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        t = tuple(float(v) for v in np.asarray(self.t, dtype=float).ravel())
        a = tuple(float(v) for v in np.asarray(self.angles, dtype=float).ravel())
        if len(t) != 3 or len(a) != 3:
            raise ValueError("t and angles must have three components")
        if not np.all(np.isfinite(t + a)):
            raise ValueError("rigid motion components must be finite")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "angles", a)

    @classmethod
    def identity(cls) -> "RigidMotion":
        return cls()

    @classmethod
    def from_vector(cls, v) -> "RigidMotion":
        """Build from ``[tx, ty, tz, alpha, beta, gamma]``."""
        v = np.asarray(v, dtype=float)
        return cls(t=v[:3], angles=v[3:6])

    @classmethod
    def from_matrix(cls, R, t) -> "RigidMotion":
        R = np.asarray(R, dtype=float)
        # R = Rz(g) Ry(b) Rx(a): R[2,0] = -sin(b)
        beta = np.arcsin(np.clip(-R[2, 0], -1.0, 1.0))
        alpha = np.arctan2(R[2, 1], R[2, 2])
        gamma = np.arctan2(R[1, 0], R[0, 0])
        return cls(t=t, angles=(alpha, beta, gamma))

    def as_vector(self) -> np.ndarray:
        return np.array(self.t + self.angles)

    @property
    def rotation(self) -> np.ndarray:
        a, b, g = self.angles
        return _rz(g) @ _ry(b) @ _rx(a)

    @property
    def translation(self) -> np.ndarray:
        return np.array(self.t)

    def apply(self, points) -> np.ndarray:
        """Transform ``(..., 3)`` points."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def compose(self, first: "RigidMotion") -> "RigidMotion":
        """Return the motion that applies ``first`` and then ``self``."""
        R = self.rotation @ first.rotation
        t = self.rotation @ first.translation + self.translation
        return RigidMotion.from_matrix(R, t)

    def is_identity(self) -> bool:
        return not any(self.t) and not any(self.angles)


@dataclass(frozen=True)
class BoundingBox:
    """Inclusive pixel box ``[x0, x1] x [y0, y1]``."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if self.x1 < self.x0 or self.y1 < self.y0:
            raise ValueError("empty bounding box")

    @classmethod
    def from_mask(cls, mask, pad: int = 0, shape=None) -> "BoundingBox":
        ys, xs = np.nonzero(mask)
        if xs.size == 0:
            raise ValueError("cannot box an empty mask")
        h, w = shape if shape is not None else np.shape(mask)
        return cls(
            max(int(xs.min()) - pad, 0),
            max(int(ys.min()) - pad, 0),
            min(int(xs.max()) + pad, w - 1),
            min(int(ys.max()) + pad, h - 1),
        )

    @property
    def width(self) -> int:
        return self.x1 - self.x0 + 1

    @property
    def height(self) -> int:
        return self.y1 - self.y0 + 1

    @property
    def size(self) -> int:
        return self.width * self.height

    @property
    def slices(self) -> tuple:
        return slice(self.y0, self.y1 + 1), slice(self.x0, self.x1 + 1)

    @property
    def center(self) -> tuple:
        return 0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1)

    def within(self, shape) -> bool:
        h, w = shape[:2]
        return self.x0 >= 0 and self.y0 >= 0 and self.x1 < w and self.y1 < h


def backproject(pixel, disparity, calib: CameraCalib) -> np.ndarray:
    """Lift pixels with disparity to camera-frame 3D points.

    ``pixel`` is ``(..., 2)`` as ``(x, y)``; returns ``(..., 3)``.
    """
    pixel = np.asarray(pixel, dtype=float)
    d = np.asarray(disparity, dtype=float)
    if np.any(~(d > 0)):
        raise InvalidDisparityError("disparity must be positive")
    z = calib.depth_constant / d
    x = (pixel[..., 0] - calib.cx) * z / calib.focal_length
    y = (pixel[..., 1] - calib.cy) * z / calib.focal_length
    return np.stack([x, y, z * np.ones_like(x)], axis=-1)


def project(points, calib: CameraCalib):
    """Pinhole projection; returns ``(pixel (..., 2), disparity (...))``."""
    points = np.asarray(points, dtype=float)
    z = points[..., 2]
    if np.any(~(z > 0)):
        raise BehindCameraError("point is behind the camera")
    f = calib.focal_length
    pixel = np.stack(
        [f * points[..., 0] / z + calib.cx, f * points[..., 1] / z + calib.cy],
        axis=-1,
    )
    return pixel, calib.depth_constant / z


def motion_flow_at(pixel, disparity, motion: RigidMotion, calib: CameraCalib) -> np.ndarray:
    """2D displacement of pixels whose 3D points undergo ``motion``."""
    pixel = np.asarray(pixel, dtype=float)
    pts = backproject(pixel, disparity, calib)
    if motion.is_identity():
        # exact zero rather than round-off from the projection round trip
        return np.zeros_like(pixel * np.asarray(disparity, dtype=float)[..., None])
    moved, _ = project(motion.apply(pts), calib)
    return moved - pixel


def disparity_after_motion(pixel, disparity, motion: RigidMotion, calib: CameraCalib):
    """Disparity of the rigidly moved 3D point seen from the same camera."""
    pts = backproject(pixel, disparity, calib)
    if motion.is_identity():
        return np.asarray(disparity, dtype=float) * np.ones(pts.shape[:-1])
    _, d2 = project(motion.apply(pts), calib)
    return d2


def correspond_stereo(pixel, disparity) -> np.ndarray:
    """Right-image location of a left-image pixel (sub-pixel allowed)."""
    pixel = np.asarray(pixel, dtype=float)
    out = pixel.copy()
    out[..., 0] = pixel[..., 0] - np.asarray(disparity, dtype=float)
    return out


def correspond_flow(pixel, flow, shape):
    """Next-frame location of a pixel and whether it lands inside the image.

    The inside test uses the target rounded to the nearest pixel.
    """
    target = np.asarray(pixel, dtype=float) + np.asarray(flow, dtype=float)
    h, w = shape[:2]
    rx = np.rint(target[..., 0])
    ry = np.rint(target[..., 1])
    inside = (rx >= 0) & (rx <= w - 1) & (ry >= 0) & (ry <= h - 1)
    return target, inside


def pixel_grid(shape) -> np.ndarray:
    """``(h, w, 2)`` array of ``(x, y)`` pixel coordinates."""
    h, w = shape[:2]
    ys, xs = np.mgrid[0:h, 0:w]
    return np.stack([xs, ys], axis=-1).astype(float)


def motion_flow_map(disparity, motion: RigidMotion, calib: CameraCalib, mask=None):
    """Dense motion flow over valid pixels (optionally restricted to ``mask``).

    Pixels that are invalid, masked out, or move behind the camera get
    zero flow and ``False`` in the returned validity map.
    """
    disparity = np.asarray(disparity, dtype=float)
    valid = disparity > 0
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    flow = np.zeros(disparity.shape + (2,))
    if not valid.any():
        return flow, valid
    if motion.is_identity():
        return flow, valid
    px = pixel_grid(disparity.shape)[valid]
    pts = motion.apply(backproject(px, disparity[valid], calib))
    front = pts[:, 2] > 1e-9
    moved = np.zeros_like(px)
    moved[front], _ = project(pts[front], calib)
    sub = np.zeros_like(px)
    sub[front] = moved[front] - px[front]
    flow[valid] = sub
    idx = np.flatnonzero(valid.ravel())
    valid.ravel()[idx[~front]] = False
    return flow, valid
