"""Instance-level scene flow: cascaded refinement of segmentation, geometry, motion and flow."""

from .cascade import (
    CascadeConfig,
    CascadedSceneFlow,
    SceneEstimate,
    StageParams,
    predict_d2,
    run_cascade,
    run_stage,
    train_cascade,
)
from .core import BehindCameraError, BoundingBox, CameraCalib, InvalidDisparityError, RigidMotion
from .flow import FlowParams, FuseParams, fuse_flow, refine_flow
from .learning import LearnConfig, SegmentationSSVM, ssvm_train
from .metrics import MetricsReport, evaluate, evaluate_scene
from .motion import (
    MotionParams,
    RigidMotionEstimator,
    estimate_background_motion,
    estimate_motion,
    estimate_motion_with_recovery,
    motion_objective,
)
from .segmentation import SegParams, refine_segmentation, segment_instance
from .stereo import StereoParams, refine_disparity
from .synth import GroundTruth, NoiseRecipe, SceneInput, SyntheticScene, generate_scene, suite

__version__ = "0.1.0"

__all__ = [
    "BehindCameraError", "BoundingBox", "CameraCalib", "CascadeConfig", "CascadedSceneFlow",
    "FlowParams", "FuseParams", "GroundTruth", "InvalidDisparityError", "LearnConfig",
    "MetricsReport", "MotionParams", "NoiseRecipe", "RigidMotion", "RigidMotionEstimator",
    "SceneEstimate", "SceneInput", "SegParams", "SegmentationSSVM", "StageParams", "StereoParams",
    "SyntheticScene", "estimate_background_motion", "estimate_motion", "estimate_motion_with_recovery",
    "evaluate", "evaluate_scene", "fuse_flow", "generate_scene", "motion_objective", "predict_d2",
    "refine_disparity", "refine_flow", "refine_segmentation", "run_cascade", "run_stage",
    "segment_instance", "ssvm_train", "suite", "train_cascade",
]
