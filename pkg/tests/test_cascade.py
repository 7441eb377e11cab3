import dataclasses

import numpy as np
import pytest
from sklearn.exceptions import NotFittedError

from semflow.cascade import (
    CascadeConfig,
    CascadedSceneFlow,
    StageParams,
    initial_estimate,
    predict_d2,
    run_cascade,
    run_stage,
)
from semflow.core import CameraCalib, RigidMotion
from semflow.metrics import disparity_outliers
from semflow.motion import MotionParams
from semflow.segmentation import SegParams
from semflow.stereo import StereoParams
from semflow.synth import suite


@pytest.fixture(scope="module")
def scene():
    return suite(1)[0]


@pytest.fixture(scope="module")
def two_stage(scene):
    return run_cascade(scene.inputs, CascadeConfig(stages=2, early_exit=False))


def test_config_validation_and_stage_lookup():
    with pytest.raises(ValueError):
        CascadeConfig(stages=-1)
    a, b = StageParams(), StageParams(motion=MotionParams(nu=1.0))
    cfg = CascadeConfig(stages=3, params=[a, b])
    assert cfg.stage_params(1) is a
    assert cfg.stage_params(2) is b
    assert cfg.stage_params(3) is b
    with pytest.raises(ValueError):
        CascadeConfig(steps=("seg", "warp"))


def test_config_steps_skip_segmentation(scene):
    inp = scene.inputs
    est = run_cascade(inp, CascadeConfig(stages=1, steps=("geom", "motion")))
    np.testing.assert_array_equal(est.masks1, inp.masks1)
    np.testing.assert_array_equal(est.flow, inp.flow)
    assert not np.array_equal(est.disparity1, inp.disparity1)


def test_zero_stages_returns_initialisation(scene):
    inp = scene.inputs
    est = run_cascade(inp, CascadeConfig(stages=0))
    np.testing.assert_array_equal(est.masks1, inp.masks1)
    np.testing.assert_array_equal(est.masks2, inp.masks2)
    np.testing.assert_array_equal(est.disparity1, inp.disparity1)
    np.testing.assert_array_equal(est.disparity2, inp.disparity2)
    np.testing.assert_array_equal(est.flow, inp.flow)
    assert est.history == []


def test_pinned_parameters_leave_state_unchanged(scene):
    inp = scene.inputs
    data_only = np.zeros(11)
    data_only[[0, 2]] = 1.0
    p = StageParams(seg=SegParams(lambdas=data_only),
                    stereo=StereoParams(tau1=0, tau2=0, K=1, max_candidates=1, subpixel=False))
    state = initial_estimate(inp)
    new = run_stage(state, inp, 1, CascadeConfig(stages=1, params=p), steps=("seg", "geom"))
    np.testing.assert_array_equal(new.masks1, state.masks1)
    np.testing.assert_array_equal(new.masks2, state.masks2)
    np.testing.assert_array_equal(new.disparity1, state.disparity1)
    np.testing.assert_array_equal(new.disparity2, state.disparity2)


def test_stage_one_lowers_foreground_disparity_outliers(scene, two_stage):
    gt = scene.gt
    fg = gt.valid & (gt.disparity1 > 0) & (gt.masks1 > 0)
    before = disparity_outliers(scene.inputs.disparity1, gt.disparity1)[fg].mean()
    after = disparity_outliers(two_stage.history[0].disparity1, gt.disparity1)[fg].mean()
    assert after < before


def test_history_and_audit(two_stage):
    assert len(two_stage.history) == 2
    assert [h.stage for h in two_stage.history] == [1, 2]
    for stage, step, key, energy, init in two_stage.audit:
        assert energy <= init + 1e-9, (stage, step, key)


def test_replay_is_bit_identical(scene, two_stage):
    cfg = CascadeConfig(stages=2, early_exit=False)
    again = run_stage(two_stage.history[0], scene.inputs, 2, cfg)
    ref = two_stage.history[1]
    for name in ("masks1", "masks2", "disparity1", "disparity2", "disparity2_ref", "flow"):
        np.testing.assert_array_equal(getattr(again, name), getattr(ref, name), err_msg=name)
    assert again.motions == ref.motions


def test_d2_validity_within_d1(two_stage):
    for h in two_stage.history:
        assert not np.any((h.disparity2_ref > 0) & ~(h.disparity1 > 0))


def test_failed_instance_is_flagged_and_falls_back(scene):
    inp = scene.inputs
    k = int(np.unique(inp.masks1)[1])
    d1 = inp.disparity1.copy()
    d1[inp.masks1 == k] = -1.0
    broken = dataclasses.replace(inp, disparity1=d1)
    est = run_stage(initial_estimate(broken), broken, 1, CascadeConfig(stages=1), steps=("motion",))
    assert k in est.flagged
    assert est.motions[k] == est.motions[0]


# ------------------------------------------------------------------ predict_d2


def test_predict_d2_identity_copies():
    d = np.full((10, 12), 7.5)
    d[0, 0] = -1
    masks = np.zeros((10, 12), int)
    masks[3:6, 3:6] = 1
    out = predict_d2(d, masks, {0: RigidMotion(), 1: RigidMotion()}, CameraCalib(100, 0.5, 6, 5))
    np.testing.assert_array_equal(out, d)


def test_predict_d2_forward_motion_matches_closed_form():
    calib = CameraCalib(100, 0.5, 6, 5)
    z = np.linspace(4.0, 12.0, 12)[None, :] * np.ones((10, 1))
    d = calib.depth_constant / z
    out = predict_d2(d, np.zeros((10, 12), int), {0: RigidMotion(t=(0, 0, -1.0))}, calib)
    np.testing.assert_allclose(out, calib.depth_constant / (z - 1.0), rtol=0, atol=1e-6)


def test_predict_d2_flagged_uses_background():
    calib = CameraCalib(100, 0.5, 6, 5)
    d = np.full((10, 12), 5.0)
    masks = np.zeros((10, 12), int)
    masks[2:5, 2:5] = 1
    bg = RigidMotion(t=(0, 0, -2.0))
    motions = {0: bg, 1: RigidMotion(t=(0, 0, 3.0))}
    out = predict_d2(d, masks, motions, calib, flagged={1})
    ref = predict_d2(d, np.zeros_like(masks), {0: bg}, calib)
    np.testing.assert_array_equal(out, ref)


def test_predict_d2_behind_camera_is_invalid():
    calib = CameraCalib(100, 0.5, 6, 5)
    d = np.full((4, 4), 10.0)          # depth 5 m
    out = predict_d2(d, np.zeros((4, 4), int), {0: RigidMotion(t=(0, 0, -6.0))}, calib)
    assert np.all(out == -1)


# ------------------------------------------------------------------ estimator


def test_estimator_without_training(scene):
    model = CascadedSceneFlow(stages=1, learn_segmentation=False)
    with pytest.raises(NotFittedError):
        model.predict([scene.inputs])
    model.fit([scene.inputs])
    (est,) = model.predict([scene.inputs])
    ref = run_cascade(scene.inputs, CascadeConfig(stages=1))
    np.testing.assert_array_equal(est.flow, ref.flow)


def test_estimator_length_check(scene):
    with pytest.raises(ValueError):
        CascadedSceneFlow(stages=1).fit([scene.inputs], [])
