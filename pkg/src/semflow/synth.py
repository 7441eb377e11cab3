"""Ray-cast synthetic stereo scenes with exact ground truth.

A scene is a textured ground plane and back wall (static, moved only by the
camera ego-motion) plus textured boxes resting on the ground, each with its
own rigid motion. All motions map frame-1 camera coordinates to frame-2
camera coordinates. Texture is a smooth 3D value-noise field evaluated in
each surface's local frame, so every view of a surface point sees exactly
the same colour.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ._validation import check_disparity, check_flow, check_image, check_labels, check_same_shape
from .core import CameraCalib, RigidMotion, pixel_grid

GROUND_ID = -1
WALL_ID = -2


@dataclass
class Box:
    center: tuple            # frame-1 camera coordinates, meters
    size: tuple              # full extents along local x, y, z
    yaw: float = 0.0         # rotation about the vertical axis
    motion: RigidMotion = field(default_factory=RigidMotion)
    seed: int = 0

    @property
    def rotation(self) -> np.ndarray:
        return RigidMotion(angles=(0.0, self.yaw, 0.0)).rotation


@dataclass
class SceneGeometry:
    width: int = 160
    height: int = 96
    calib: CameraCalib = field(default_factory=lambda: CameraCalib(200.0, 0.54, 80.0, 40.0))
    ground_y: float = 1.6
    wall_z: float = 40.0
    boxes: list = field(default_factory=list)
    ego_motion: RigidMotion = field(default_factory=RigidMotion)
    seed: int = 0

    @property
    def shape(self):
        return (self.height, self.width)

    def motion_of(self, sid: int) -> RigidMotion:
        return self.boxes[sid - 1].motion if sid >= 1 else self.ego_motion


@dataclass
class NoiseRecipe:
    mask_radius: int = 2
    disp_sigma: float = 0.7
    disp_outliers: float = 0.15
    flow_sigma: float = 0.7
    flow_outliers: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if self.mask_radius < 0 or self.disp_sigma < 0 or self.flow_sigma < 0:
            raise ValueError("noise magnitudes must be non-negative")
        for p in (self.disp_outliers, self.flow_outliers):
            if not 0.0 <= p <= 1.0:
                raise ValueError("outlier fractions must lie in [0, 1]")

    @classmethod
    def clean(cls, seed=0) -> "NoiseRecipe":
        return cls(0, 0.0, 0.0, 0.0, 0.0, seed)


@dataclass
class SceneInput:
    left1: np.ndarray
    right1: np.ndarray
    left2: np.ndarray
    right2: np.ndarray
    calib: CameraCalib
    masks1: np.ndarray
    masks2: np.ndarray
    disparity1: np.ndarray
    disparity2: np.ndarray   # frame-2 disparity on the frame-2 grid
    flow: np.ndarray

    def __post_init__(self):
        self.left1, self.right1, self.left2, self.right2 = (
            check_image(im, n) for im, n in ((self.left1, "left1"), (self.right1, "right1"),
                                             (self.left2, "left2"), (self.right2, "right2")))
        self.masks1 = check_labels(self.masks1, "masks1")
        self.masks2 = check_labels(self.masks2, "masks2")
        self.disparity1 = check_disparity(self.disparity1, "disparity1")
        self.disparity2 = check_disparity(self.disparity2, "disparity2")
        self.flow = check_flow(self.flow)
        check_same_shape(left1=self.left1, right1=self.right1, left2=self.left2, right2=self.right2,
                         masks1=self.masks1, masks2=self.masks2, disparity1=self.disparity1,
                         disparity2=self.disparity2, flow=self.flow)
        if not isinstance(self.calib, CameraCalib):
            raise TypeError("calib must be a CameraCalib")

    @property
    def shape(self):
        return self.masks1.shape


@dataclass
class GroundTruth:
    masks1: np.ndarray
    masks2: np.ndarray
    disparity1: np.ndarray
    disparity2: np.ndarray         # frame-1 grid, disparity of the moved point
    disparity2_frame2: np.ndarray  # frame-2 grid
    flow: np.ndarray
    valid: np.ndarray              # non-occluded in all views
    motions: dict                  # {instance id (0 = background): RigidMotion}


@dataclass
class SyntheticScene:
    inputs: SceneInput
    gt: GroundTruth
    geometry: SceneGeometry
    recipe: NoiseRecipe


# ---------------------------------------------------------------- texture


def _lattice(seed):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, 1.0, (64, 64, 64, 3))


def _value_noise(table, p):
    """Trilinear smooth value noise on a periodic 64^3 lattice."""
    i = np.floor(p).astype(np.int64)
    f = p - i
    f = f * f * (3.0 - 2.0 * f)
    out = 0.0
    for dx in (0, 1):
        wx = f[:, 0] if dx else 1.0 - f[:, 0]
        for dy in (0, 1):
            wy = f[:, 1] if dy else 1.0 - f[:, 1]
            for dz in (0, 1):
                wz = f[:, 2] if dz else 1.0 - f[:, 2]
                v = table[(i[:, 0] + dx) % 64, (i[:, 1] + dy) % 64, (i[:, 2] + dz) % 64]
                out = out + (wx * wy * wz)[:, None] * v
    return out


def texture(points, seed, cell=0.15):
    """Colours in [0, 1] of local surface points ``(n, 3)``.

    ``cell`` is the finest lattice spacing in meters; coarser octaves add
    low-frequency shading.
    """
    table = _lattice(seed)
    points = np.asarray(points, dtype=float)
    col = 0.5 * _value_noise(table, points / cell) + 0.3 * _value_noise(table, points / (3 * cell) + 17.0)
    col = col + 0.2 * _value_noise(table, points / (10 * cell) + 31.0)
    return np.clip(col, 0.0, 1.0)


# finest texture cell per static surface, meters; boxes use the default
_CELL = {GROUND_ID: 0.3, WALL_ID: 0.8}


# ---------------------------------------------------------------- ray casting


def _rays(pixels, calib):
    d = np.ones((len(pixels), 3))
    d[:, 0] = (pixels[:, 0] - calib.cx) / calib.focal_length
    d[:, 1] = (pixels[:, 1] - calib.cy) / calib.focal_length
    return d


def _inverse(m: RigidMotion):
    R = m.rotation
    return R.T, -R.T @ m.translation


def _box_hit(o, d, box: Box):
    """Slab intersection in the box frame; returns (s, local point)."""
    R = box.rotation
    c = np.asarray(box.center, dtype=float)
    half = 0.5 * np.asarray(box.size, dtype=float)
    ol = (o - c) @ R      # R.T applied to row vectors
    dl = d @ R
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dl
        t1 = (-half - ol) * inv
        t2 = (half - ol) * inv
    tmin = np.nanmax(np.minimum(t1, t2), axis=1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=1)
    s = np.where((tmax >= tmin) & (tmin > 1e-6), tmin, np.inf)
    return s, ol + np.where(np.isfinite(s), s, 0.0)[:, None] * dl


def cast(geometry: SceneGeometry, pixels, frame: int, camera: str):
    """Ray-cast arbitrary (sub-)pixel positions of one view.

    Returns ``(colour (n, 3), depth (n,), surface id (n,), frame-1 point (n, 3))``;
    surface ids are ``GROUND_ID``, ``WALL_ID`` or the 1-based box index.
    The frame-1 point is the surface point in frame-1 camera coordinates.
    """
    calib = geometry.calib
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    n = len(pixels)
    d2 = _rays(pixels, calib)
    o2 = np.zeros((n, 3))
    if camera == "right":
        o2[:, 0] = calib.baseline
    elif camera != "left":
        raise ValueError("camera must be 'left' or 'right'")
    best = np.full(n, np.inf)
    sid = np.zeros(n, dtype=np.int64)
    local = np.zeros((n, 3))
    p1 = np.zeros((n, 3))

    def to_frame1(m):
        if frame == 1:
            return o2, d2
        Ri, ti = _inverse(m)
        return o2 @ Ri.T + ti, d2 @ Ri.T

    # static surfaces live in frame-1 coordinates, moved by ego-motion
    o, d = to_frame1(geometry.ego_motion)
    with np.errstate(divide="ignore", invalid="ignore"):
        s_g = np.where(d[:, 1] > 1e-9, (geometry.ground_y - o[:, 1]) / d[:, 1], np.inf)
        s_w = np.where(d[:, 2] > 1e-9, (geometry.wall_z - o[:, 2]) / d[:, 2], np.inf)
    s_g = np.where(s_g > 1e-6, s_g, np.inf)
    s_w = np.where(s_w > 1e-6, s_w, np.inf)
    for s, lab in ((s_g, GROUND_ID), (s_w, WALL_ID)):
        take = s < best
        best[take] = s[take]
        sid[take] = lab
        p1[take] = o[take] + s[take, None] * d[take]
        local[take] = p1[take]
    for k, box in enumerate(geometry.boxes, start=1):
        o, d = to_frame1(box.motion)
        s, loc = _box_hit(o, d, box)
        take = s < best
        best[take] = s[take]
        sid[take] = k
        local[take] = loc[take]
        p1[take] = o[take] + s[take, None] * d[take]
    if not np.all(np.isfinite(best)):
        raise ValueError("degenerate geometry: some rays hit nothing")
    colour = np.zeros((n, 3))
    for lab in np.unique(sid):
        sel = sid == lab
        seed = geometry.seed * 1000 + (lab + 10 if lab < 0 else geometry.boxes[lab - 1].seed + 100)
        colour[sel] = texture(local[sel], seed, _CELL.get(lab, 0.15))
    # rays have unit z-component, so the ray parameter is the depth
    return colour, best, sid, p1


def render(geometry: SceneGeometry, frame: int, camera: str):
    """Full image, depth and surface-id maps of one view."""
    px = pixel_grid(geometry.shape).reshape(-1, 2)
    colour, depth, sid, p1 = cast(geometry, px, frame, camera)
    h, w = geometry.shape
    return colour.reshape(h, w, 3), depth.reshape(h, w), sid.reshape(h, w), p1.reshape(h, w, 3)


def _instances(sid):
    return np.where(sid > 0, sid, 0)


# ---------------------------------------------------------------- generation


def random_geometry(seed: int, n_boxes: int | None = None, width: int = 160, height: int = 96) -> SceneGeometry:
    """Random street-like layout: boxes on the ground, forward ego-motion."""
    rng = np.random.default_rng(seed)
    calib = CameraCalib(200.0 * width / 160.0, 0.54, width / 2.0, height * 5.0 / 12.0)
    geom = SceneGeometry(width, height, calib, seed=seed)
    n_boxes = int(rng.integers(2, 4)) if n_boxes is None else n_boxes
    lanes = rng.permutation(np.linspace(-3.0, 3.0, 4))[:n_boxes]
    for k in range(n_boxes):
        z = rng.uniform(9.0, 15.0)
        size = (rng.uniform(1.4, 2.0), rng.uniform(1.2, 1.8), rng.uniform(1.5, 3.0))
        center = (lanes[k] + rng.uniform(-0.3, 0.3), geom.ground_y - size[1] / 2.0, z)
        yaw = rng.uniform(-0.4, 0.4)
        own_t = np.array([rng.uniform(-0.5, 0.5), 0.0, rng.uniform(-1.0, 1.0)])
        own_yaw = rng.uniform(-0.05, 0.05)
        geom.boxes.append(Box(center, size, yaw, RigidMotion(own_t, (0.0, own_yaw, 0.0)), seed=k))
    ego = RigidMotion((rng.uniform(-0.05, 0.05), 0.0, -rng.uniform(0.3, 0.8)),
                      (0.0, rng.uniform(-0.02, 0.02), 0.0))
    geom.ego_motion = ego
    # object motion relative to the ground, then the camera motion
    for b in geom.boxes:
        b.motion = ego.compose(_about_center(b.motion, b.center))
    return geom


def _about_center(m: RigidMotion, c):
    # rotate about the box centre rather than the camera centre
    R = m.rotation
    c = np.asarray(c, dtype=float)
    return RigidMotion(t=c - R @ c + m.translation, angles=m.angles)


def ground_truth(geometry: SceneGeometry):
    """Images and exact ground truth of a geometry."""
    C = geometry.calib.depth_constant
    f = geometry.calib.focal_length
    h, w = geometry.shape
    L1, z1, sid1, p1 = render(geometry, 1, "left")
    R1, _, _, _ = render(geometry, 1, "right")
    L2, z2, sid2, _ = render(geometry, 2, "left")
    R2, _, _, _ = render(geometry, 2, "right")
    masks1 = _instances(sid1)
    masks2 = _instances(sid2)
    disp1 = C / z1
    disp2_f2 = C / z2
    px = pixel_grid(geometry.shape)
    flow = np.zeros((h, w, 2))
    disp2 = np.zeros((h, w))
    motions = {0: geometry.ego_motion}
    motions.update({k: b.motion for k, b in enumerate(geometry.boxes, start=1)})
    for k, m in motions.items():
        sel = masks1 == k
        if not sel.any():
            continue
        q = m.apply(p1[sel])
        if np.any(q[:, 2] <= 1e-6):
            raise ValueError("degenerate geometry: point moves behind the camera")
        proj = np.stack([f * q[:, 0] / q[:, 2] + geometry.calib.cx,
                         f * q[:, 1] / q[:, 2] + geometry.calib.cy], axis=1)
        flow[sel] = proj - px[sel]
        disp2[sel] = C / q[:, 2]
    # visibility: right view of frame 1 and both views of frame 2
    valid = np.ones((h, w), dtype=bool)
    for frame, cam, pts, tgt_disp in ((1, "right", px - np.stack([disp1, 0 * disp1], -1), disp1),
                                      (2, "left", px + flow, disp2)):
        _, zz, ss, _ = cast(geometry, pts.reshape(-1, 2), frame, cam)
        valid &= np.abs(zz.reshape(h, w) - C / tgt_disp) < 1e-3 * C / tgt_disp + 1e-6
        valid &= ss.reshape(h, w) == sid1
    tgt = px + flow
    inside = (tgt[..., 0] >= 0) & (tgt[..., 0] <= w - 1) & (tgt[..., 1] >= 0) & (tgt[..., 1] <= h - 1)
    inside &= (px[..., 0] - disp1 >= 0)
    valid &= inside
    gt = GroundTruth(masks1, masks2, disp1, disp2, disp2_f2, flow, valid, motions)
    return (L1, R1, L2, R2), gt


def _noisy_masks(masks, radius, rng):
    if radius == 0:
        return masks.copy()
    out = np.zeros_like(masks)
    st = ndimage.generate_binary_structure(2, 1)
    for k in np.unique(masks):
        if k == 0:
            continue
        m = masks == k
        if rng.uniform() < 0.5:
            m2 = ndimage.binary_dilation(m, st, iterations=radius)
        else:
            m2 = ndimage.binary_erosion(m, st, iterations=radius)
            if not m2.any():
                m2 = m
        out[m2 & (out == 0)] = k
    return out


def _noisy_disparity(d, sigma, frac, rng):
    noisy = d + rng.normal(0.0, sigma, d.shape) if sigma > 0 else d.copy()
    if frac > 0:
        bad = _blobs(d.shape, frac, rng)
        jump = rng.uniform(4.0, 10.0, d.shape) * rng.choice([-1.0, 1.0], d.shape)
        noisy = np.where(bad, d + jump, noisy)
    return np.clip(noisy, 0.5, d.shape[1] - 1.0)


def _noisy_flow(flow, sigma, frac, rng):
    noisy = flow + rng.normal(0.0, sigma, flow.shape) if sigma > 0 else flow.copy()
    if frac > 0:
        bad = _blobs(flow.shape[:2], frac, rng)
        jump = rng.uniform(4.0, 10.0, flow.shape) * rng.choice([-1.0, 1.0], flow.shape)
        noisy = np.where(bad[..., None], flow + jump, noisy)
    return noisy


def _blobs(shape, frac, rng):
    # spatially clustered outliers, roughly ``frac`` of the pixels
    field_ = ndimage.gaussian_filter(rng.normal(size=shape), 2.0)
    return field_ > np.quantile(field_, 1.0 - frac)


def generate_scene(recipe: NoiseRecipe | None = None, geometry: SceneGeometry | None = None,
                   seed: int = 0) -> SyntheticScene:
    """Render a scene and corrupt its ground truth per ``recipe``."""
    recipe = recipe or NoiseRecipe(seed=seed)
    geometry = geometry or random_geometry(seed)
    (L1, R1, L2, R2), gt = ground_truth(geometry)
    rng = np.random.default_rng(recipe.seed)
    inputs = SceneInput(
        L1, R1, L2, R2, geometry.calib,
        _noisy_masks(gt.masks1, recipe.mask_radius, rng),
        _noisy_masks(gt.masks2, recipe.mask_radius, rng),
        _noisy_disparity(gt.disparity1, recipe.disp_sigma, recipe.disp_outliers, rng),
        _noisy_disparity(gt.disparity2_frame2, recipe.disp_sigma, recipe.disp_outliers, rng),
        _noisy_flow(gt.flow, recipe.flow_sigma, recipe.flow_outliers, rng),
    )
    return SyntheticScene(inputs, gt, geometry, recipe)


def suite(n: int = 10, recipe: NoiseRecipe | None = None, base_seed: int = 0):
    """The fixed evaluation suite: scenes ``base_seed .. base_seed + n - 1``."""
    out = []
    for k in range(n):
        r = recipe or NoiseRecipe()
        out.append(generate_scene(NoiseRecipe(r.mask_radius, r.disp_sigma, r.disp_outliers,
                                              r.flow_sigma, r.flow_outliers, seed=base_seed + k),
                                  random_geometry(base_seed + k), seed=base_seed + k))
    return out
