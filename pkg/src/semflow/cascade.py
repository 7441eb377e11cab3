"""Stage-wise cascade: segmentation, geometry, motion, flow and fusion.

Every stage refines, in order, the instance masks of both frames, the
disparities of both frames, one rigid motion per instance plus the
background, and the flow (per-segment refinement followed by fusion with
the motion flow). From ``config.temporal_from`` on, segmentation couples
the two frames through the flow, the frame-1 geometry is tied to the
second frame through the motions, and motion estimation may fall back to
silhouette alignment.
"""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_consistent_length, check_is_fitted

from .core import BoundingBox, CameraCalib, RigidMotion, backproject, motion_flow_map, pixel_grid
from .flow import FlowParams, FuseParams, fuse_flow, refine_flow
from .motion import MotionParams, estimate_background_motion, estimate_motion, estimate_motion_with_recovery
from .segmentation import BOX_PADDING, SegParams, SegProblem, resolve_instances, segment_instance
from .stereo import StereoParams, refine_frame
from .synth import SceneInput

logger = logging.getLogger(__name__)

STEPS = ("seg", "geom", "motion", "flow", "fuse")


@dataclass
class StageParams:
    seg: SegParams = field(default_factory=SegParams)
    stereo: StereoParams = field(default_factory=lambda: StereoParams(tau1=0.002, tau2=0.002, K=32))
    motion: MotionParams = field(default_factory=MotionParams)
    flow: FlowParams = field(default_factory=FlowParams)
    fuse: FuseParams = field(default_factory=FuseParams)


@dataclass
class CascadeConfig:
    stages: int = 3
    params: StageParams | list = field(default_factory=StageParams)
    temporal_from: int = 2
    early_exit: bool = True
    exit_tol: float = 1e-3
    steps: tuple = STEPS     # e.g. drop "seg" to keep the given masks fixed

    def __post_init__(self):
        if self.stages < 0:
            raise ValueError("stages must be non-negative")
        self.steps = tuple(self.steps)
        unknown = set(self.steps) - set(STEPS)
        if unknown:
            raise ValueError(f"unknown cascade steps {sorted(unknown)}")

    def stage_params(self, stage: int) -> StageParams:
        if isinstance(self.params, (list, tuple)):
            return self.params[min(stage, len(self.params)) - 1]
        return self.params


@dataclass
class SceneEstimate:
    masks1: np.ndarray
    masks2: np.ndarray
    disparity1: np.ndarray
    disparity2: np.ndarray        # frame-2 grid
    disparity2_ref: np.ndarray    # frame-2 disparity on the frame-1 grid
    flow: np.ndarray
    motions: dict = field(default_factory=dict)
    flagged: set = field(default_factory=set)
    stage: int = 0
    history: list = field(default_factory=list)
    audit: list = field(default_factory=list)

    def snapshot(self) -> "SceneEstimate":
        snap = copy.deepcopy(self)
        snap.history = []
        snap.audit = []
        return snap


def d2_from_flow(disparity2, flow):
    """Frame-2 disparity read at each frame-1 pixel's rounded flow target."""
    disparity2 = np.asarray(disparity2, dtype=float)
    h, w = disparity2.shape
    tgt = pixel_grid((h, w)) + flow
    rx = np.rint(tgt[..., 0]).astype(np.int64)
    ry = np.rint(tgt[..., 1]).astype(np.int64)
    ok = (rx >= 0) & (rx < w) & (ry >= 0) & (ry < h)
    out = np.full((h, w), -1.0)
    out[ok] = disparity2[ry[ok], rx[ok]]
    return np.where(out > 0, out, -1.0)


def initial_estimate(inputs: SceneInput) -> SceneEstimate:
    return SceneEstimate(
        np.asarray(inputs.masks1).copy(), np.asarray(inputs.masks2).copy(),
        np.asarray(inputs.disparity1, dtype=float).copy(), np.asarray(inputs.disparity2, dtype=float).copy(),
        d2_from_flow(inputs.disparity2, inputs.flow), np.asarray(inputs.flow, dtype=float).copy(),
    )


def predict_d2(disparity1, masks, motions, calib: CameraCalib, flagged=()):
    """Disparity of every moved frame-1 point, on the frame-1 grid.

    Pixels of flagged instances (or instances without a motion) use the
    background motion; points that move behind the camera are invalid.
    """
    disparity1 = np.asarray(disparity1, dtype=float)
    masks = np.asarray(masks)
    out = np.full(disparity1.shape, -1.0)
    px = pixel_grid(disparity1.shape)
    background = motions.get(0, RigidMotion())
    for k in np.unique(masks):
        m = motions.get(int(k), background)
        if int(k) in flagged:
            m = background
        sel = (masks == k) & (disparity1 > 0)
        if not sel.any():
            continue
        if m.is_identity():
            out[sel] = disparity1[sel]
            continue
        pts_px = px[sel]
        pts = m.apply(backproject(pts_px, disparity1[sel], calib))
        front = pts[:, 2] > 1e-9
        vals = np.full(len(pts), -1.0)
        vals[front] = calib.depth_constant / pts[front, 2]
        out[sel] = vals
    return out


def _instances(masks):
    return [int(k) for k in np.unique(masks) if k != 0]


def _audit(state, stage, step, key, energy, init_energy):
    state.audit.append((stage, step, key, float(energy), float(init_energy)))


# ------------------------------------------------------------------ steps


def segmentation_tasks(state: SceneEstimate, inputs: SceneInput, temporal: bool):
    """The per-instance segmentation problems of one stage.

    Yields ``(k, kind, problem)`` where ``kind`` is ``"joint"`` for a
    two-frame problem, else the frame number.
    """
    shape = state.masks1.shape
    ids1, ids2 = set(_instances(state.masks1)), set(_instances(state.masks2))
    for k in sorted(ids1 | ids2):
        m1, m2 = state.masks1 == k, state.masks2 == k
        if temporal and k in ids1 and k in ids2:
            box2 = BoundingBox.from_mask(m2, pad=BOX_PADDING, shape=shape)
            tmp = dict(flow=state.flow, image2=inputs.left2, mask2=m2, disparity2=state.disparity2, box2=box2)
            yield k, "joint", (m1, inputs.left1, state.disparity1, tmp)
            continue
        if k in ids1:
            yield k, 1, (m1, inputs.left1, state.disparity1, None)
        if k in ids2:
            yield k, 2, (m2, inputs.left2, state.disparity2, None)


def step_segmentation(state: SceneEstimate, inputs: SceneInput, stage: int, p: StageParams, temporal: bool):
    new1, new2 = {}, {}
    for k, kind, (mask, image, disp, tmp) in list(segmentation_tasks(state, inputs, temporal)):
        res = segment_instance(mask, image, disp, p.seg, temporal=tmp)
        if kind == "joint":
            new1[k], new2[k] = res.masks
        elif kind == 1:
            new1[k] = res.masks[0]
        else:
            new2[k] = res.masks[0]
        _audit(state, stage, "seg", (k, kind), res.energy, res.init_energy)
    state.masks1 = resolve_instances(new1, state.masks1.shape)
    state.masks2 = resolve_instances(new2, state.masks2.shape)


def step_geometry(state: SceneEstimate, inputs: SceneInput, stage: int, p: StageParams, temporal: bool):
    tmp = None
    if temporal and state.motions:
        bg = state.motions.get(0, RigidMotion())
        mot = {k: (bg if k in state.flagged else state.motions.get(k, bg)) for k in np.unique(state.masks1).tolist()}
        tmp = dict(motions=mot, flow=state.flow, disparity2=state.disparity2, labels2=state.masks2)
    d1, res1 = refine_frame(state.masks1, inputs.left1, inputs.right1, state.disparity1, inputs.calib, p.stereo, tmp)
    d2, res2 = refine_frame(state.masks2, inputs.left2, inputs.right2, state.disparity2, inputs.calib, p.stereo)
    for frame, res in ((1, res1), (2, res2)):
        for k, r in res.items():
            _audit(state, stage, "geom", (k, frame), r.energy, r.init_energy)
    state.disparity1, state.disparity2 = d1, d2


def step_motion(state: SceneEstimate, inputs: SceneInput, stage: int, p: StageParams, temporal: bool):
    calib = inputs.calib
    motions, flagged = {}, set()
    bg_mask = state.masks1 == 0
    try:
        est = estimate_background_motion(bg_mask, state.disparity1, state.flow, calib, p.motion,
                                          init=state.motions.get(0))
        motions[0] = est.motion
        _audit(state, stage, "motion", 0, est.history[-1], est.history[0])
    except ValueError as exc:
        logger.warning("background motion failed: %s", exc)
        motions[0] = state.motions.get(0, RigidMotion())
    ids2 = set(_instances(state.masks2))
    for k in _instances(state.masks1):
        m1 = state.masks1 == k
        init = state.motions.get(k)
        try:
            if temporal and k in ids2:
                m2 = state.masks2 == k
                est = estimate_motion_with_recovery(m1, state.disparity1, state.flow, m2, calib, p.motion,
                                                    init, occluders=(state.masks2 > 0) & ~m2)
            else:
                est = estimate_motion(m1, state.disparity1, state.flow, calib, p.motion, init)
            motions[k] = est.motion
            _audit(state, stage, "motion", k, est.history[-1], est.history[0])
        except ValueError as exc:
            logger.warning("motion of instance %d failed: %s", k, exc)
            motions[k] = state.motions.get(k, motions[0])
            flagged.add(k)
    state.motions = motions
    state.flagged = flagged


def _segment_motion_flow(state, calib, k, seg):
    m = state.motions.get(k, state.motions.get(0, RigidMotion()))
    if k in state.flagged:
        m = state.motions.get(0, RigidMotion())
    mf, ok = motion_flow_map(state.disparity1, m, calib, seg)
    # pixels without a usable disparity fall back to the current flow
    mf[seg & ~ok] = state.flow[seg & ~ok]
    return mf


def step_flow(state: SceneEstimate, inputs: SceneInput, stage: int, p: StageParams, temporal: bool,
              fuse: bool = True):
    flow = state.flow.copy()
    for k in np.unique(state.masks1).tolist():
        seg = state.masks1 == k
        mf = _segment_motion_flow(state, inputs.calib, k, seg)
        res = refine_flow(seg, inputs.left1, inputs.left2, mf, state.flow, p.flow)
        _audit(state, stage, "flow", k, res.energy, res.init_energy)
        flow[seg] = res.flow[seg]
    state.flow = flow
    if fuse:
        step_fuse(state, inputs, stage, p, temporal)


def step_fuse(state: SceneEstimate, inputs: SceneInput, stage: int, p: StageParams, temporal: bool):
    flow = state.flow.copy()
    for k in np.unique(state.masks1).tolist():
        seg = state.masks1 == k
        mf = _segment_motion_flow(state, inputs.calib, k, seg)
        res = fuse_flow(state.flow, mf, inputs.left1, inputs.left2, seg, p.fuse)
        _audit(state, stage, "fuse", k, res.energy, res.energy_optical)
        flow[seg] = res.flow[seg]
    state.flow = flow


def _proxies(a: SceneEstimate, b: SceneEstimate):
    """Relative changes used for the saturation test."""
    seg = float(np.mean(a.masks1 != b.masks1))
    v = (a.disparity1 > 0) & (b.disparity1 > 0)
    disp = float(np.mean(np.abs(a.disparity1[v] - b.disparity1[v])) / max(np.mean(b.disparity1[v]), 1e-12)) if v.any() else 0.0
    fl = float(np.mean(np.linalg.norm(a.flow - b.flow, axis=-1)) / max(np.mean(np.linalg.norm(b.flow, axis=-1)), 1e-12))
    return seg, disp, fl


def run_stage(state: SceneEstimate, inputs: SceneInput, stage: int, config: CascadeConfig | None = None,
              steps=None) -> SceneEstimate:
    """Apply one cascade stage (``stage`` counts from 1) and return the new state.

    ``steps`` defaults to ``config.steps``.
    """
    config = config or CascadeConfig()
    steps = config.steps if steps is None else steps
    p = config.stage_params(stage)
    temporal = stage >= config.temporal_from
    new = state.snapshot()
    new.history = state.history
    new.audit = state.audit
    t0 = time.perf_counter()
    if "seg" in steps:
        step_segmentation(new, inputs, stage, p, temporal)
    if "geom" in steps:
        step_geometry(new, inputs, stage, p, temporal)
    if "motion" in steps:
        step_motion(new, inputs, stage, p, temporal)
    if "flow" in steps:
        step_flow(new, inputs, stage, p, temporal, fuse="fuse" in steps)
    elif "fuse" in steps and new.motions:
        step_fuse(new, inputs, stage, p, temporal)
    if new.motions:
        new.disparity2_ref = predict_d2(new.disparity1, new.masks1, new.motions, inputs.calib, new.flagged)
    new.stage = stage
    logger.info("stage %d done in %.2fs", stage, time.perf_counter() - t0)
    return new


def run_cascade(inputs: SceneInput, config: CascadeConfig | None = None) -> SceneEstimate:
    """Run ``config.stages`` stages; ``history`` holds the state after each."""
    config = config or CascadeConfig()
    state = initial_estimate(inputs)
    for stage in range(1, config.stages + 1):
        prev = state
        state = run_stage(prev, inputs, stage, config)
        state.history = prev.history + [state.snapshot()]
        if config.early_exit and stage > 1 and max(_proxies(state, prev)) < config.exit_tol:
            logger.info("saturated after stage %d", stage)
            break
    return state


# ------------------------------------------------------------------ estimator


def training_problems(state: SceneEstimate, inputs: SceneInput, gt_masks1, gt_masks2,
                      params: SegParams | None = None, temporal: bool = False):
    """The stage's segmentation problems with their ground-truth labelings."""
    gts = {1: np.asarray(gt_masks1), 2: np.asarray(gt_masks2)}
    problems, labels = [], []
    for k, kind, (mask, image, disp, tmp) in segmentation_tasks(state, inputs, temporal):
        box = BoundingBox.from_mask(mask, pad=BOX_PADDING)
        problem = SegProblem(box, mask, image, disp, params, tmp)
        frames = (1, 2) if kind == "joint" else (kind,)
        y = [(gts[f][blk.box.slices] == k).ravel() for f, blk in zip(frames, problem.frames)]
        problems.append(problem)
        labels.append(np.concatenate(y).astype(np.int64))
    return problems, labels


def train_cascade(scenes, gts, config: CascadeConfig | None = None, learn=None) -> list:
    """Stage-wise training: stage ``s`` learns its segmentation weights on
    the training scenes as left by stages ``1 .. s-1``.

    ``scenes`` are :class:`SceneInput`, ``gts`` matching ``(masks1, masks2)``
    pairs. Returns one :class:`StageParams` per stage.
    """
    from .learning import LearnConfig, ssvm_train

    config = config or CascadeConfig()
    learn = learn or LearnConfig()
    states = [initial_estimate(x) for x in scenes]
    out = []
    for stage in range(1, config.stages + 1):
        p = copy.deepcopy(config.stage_params(stage))
        temporal = stage >= config.temporal_from
        problems, labels = [], []
        for st, x, (g1, g2) in zip(states, scenes, gts):
            ps, ls = training_problems(st, x, g1, g2, p.seg, temporal)
            problems += ps
            labels += ls
        if problems:
            p.seg = ssvm_train(problems, labels, replace(learn, train_temporal=temporal))
            logger.info("stage %d weights %s", stage, np.round(p.seg.lambdas, 3))
        out.append(p)
        if stage < config.stages:
            cfg = CascadeConfig(stages=config.stages, params=out + [p] * (config.stages - stage),
                                temporal_from=config.temporal_from)
            states = [run_stage(st, x, stage, cfg) for st, x in zip(states, scenes)]
    return out


class CascadedSceneFlow(BaseEstimator):
    """Scikit-learn style facade over the cascade.

    ``fit(X, y)`` learns per-stage segmentation weights from scenes ``X``
    (a list of :class:`SceneInput`) and ground-truth ``(masks1, masks2)``
    pairs ``y``; ``predict(X)`` returns one :class:`SceneEstimate` per scene.
    """

    def __init__(self, stages=3, params=None, learn_segmentation=True, epochs=20, seed=0):
        self.stages = stages
        self.params = params
        self.learn_segmentation = learn_segmentation
        self.epochs = epochs
        self.seed = seed

    def _config(self, params):
        return CascadeConfig(stages=self.stages, params=params)

    def fit(self, X, y=None):
        from .learning import LearnConfig

        if y is not None:
            check_consistent_length(X, y)
        params = copy.deepcopy(self.params or StageParams())
        if self.learn_segmentation and y is not None and self.stages > 0:
            params = train_cascade(list(X), list(y), self._config(params),
                                   LearnConfig(epochs=self.epochs, seed=self.seed))
        self.params_ = params
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        return [run_cascade(inp, self._config(self.params_)) for inp in X]
