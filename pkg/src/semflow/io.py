"""Raster codecs, text formats and the scene directory layout.

Disparity rasters are 16-bit single-channel PNGs storing ``round(d * 256)``
with 0 marking invalid pixels. Flow rasters are 16-bit three-channel PNGs
storing ``round(u * 64) + 2**15``, the same for ``v``, and a validity
flag, in that (R, G, B) order.

A scene directory holds::

    image_L0.png image_R0.png image_L1.png image_R1.png   8-bit RGB
    disp_0.png disp_1.png flow.png                        initialisations
    masks_0.png masks_1.png                               16-bit instance ids
    calib.txt [params.txt] [gt/]

``disp_1`` is the second-frame disparity on its own grid. ``gt/`` repeats
the raster names with ground truth (``disp_1`` there is the frame-1 grid
disparity of the moved points) plus ``valid.png`` and ``motions.txt``.
Cascade output directories add ``disp_1_ref.png`` (frame-1 grid) and
``motions.txt``.
"""

from __future__ import annotations

import configparser
import dataclasses
from pathlib import Path

import cv2
import numpy as np

from .core import CameraCalib, RigidMotion
from .synth import GroundTruth, SceneInput, SyntheticScene

DISP_SCALE = 256.0
FLOW_SCALE = 64.0
FLOW_OFFSET = 2 ** 15
FLOW_LIMIT = 512.0

IMAGES = ("image_L0", "image_R0", "image_L1", "image_R1")


class SceneFormatError(ValueError):
    """A scene directory or one of its files is malformed."""


# ------------------------------------------------------------------ codecs


def encode_disparity(disparity) -> np.ndarray:
    """Disparity map -> uint16 raster; non-positive values become 0."""
    d = np.asarray(disparity, dtype=float)
    valid = d > 0
    if not np.all(np.isfinite(d[valid])):
        raise ValueError("disparity must be finite")
    if np.any(d[valid] >= 65535.5 / DISP_SCALE):
        raise ValueError("disparity out of the encodable range [0, 256)")
    stored = np.where(valid, np.rint(d * DISP_SCALE), 0.0)
    if np.any(valid & (stored == 0)):
        raise ValueError("positive disparity below 1/512 px is not representable")
    return stored.astype(np.uint16)


def decode_disparity(raster) -> np.ndarray:
    """uint16 raster -> disparity map with ``-1`` for invalid pixels."""
    r = np.asarray(raster)
    if r.dtype != np.uint16 or r.ndim != 2:
        raise SceneFormatError("disparity raster must be single-channel uint16")
    d = r.astype(float) / DISP_SCALE
    d[r == 0] = -1.0
    return d


def encode_flow(flow, valid=None) -> np.ndarray:
    """``(h, w, 2)`` flow -> ``(h, w, 3)`` uint16 raster ``(u, v, valid)``."""
    f = np.asarray(flow, dtype=float)
    if f.ndim != 3 or f.shape[2] != 2:
        raise ValueError("flow must have shape (h, w, 2)")
    valid = np.ones(f.shape[:2], bool) if valid is None else np.asarray(valid, dtype=bool)
    fv = f[valid]
    if not np.all(np.isfinite(fv)):
        raise ValueError("flow must be finite")
    stored = np.rint(f * FLOW_SCALE) + FLOW_OFFSET
    if np.any(np.abs(fv) >= FLOW_LIMIT) or np.any(stored[valid] < 0) or np.any(stored[valid] > 65535):
        raise ValueError("flow component out of the encodable range (-512, 512)")
    out = np.zeros(f.shape[:2] + (3,), dtype=np.uint16)
    out[..., :2] = np.where(valid[..., None], stored, FLOW_OFFSET)
    out[..., 2] = valid
    return out


def decode_flow(raster):
    """uint16 raster -> ``(flow, valid)``; invalid pixels carry zero flow."""
    r = np.asarray(raster)
    if r.dtype != np.uint16 or r.ndim != 3 or r.shape[2] != 3:
        raise SceneFormatError("flow raster must be three-channel uint16")
    valid = r[..., 2] > 0
    flow = (r[..., :2].astype(float) - FLOW_OFFSET) / FLOW_SCALE
    flow[~valid] = 0.0
    return flow, valid


# ------------------------------------------------------------------ files


def _write_png(path, array, rgb=False):
    a = np.asarray(array)
    if rgb and a.ndim == 3:
        a = a[..., ::-1]
    if not cv2.imwrite(str(path), np.ascontiguousarray(a)):
        raise OSError(f"could not write {path}")


def _read_png(path, rgb=False):
    path = Path(path)
    if not path.is_file():
        raise SceneFormatError(f"missing file {path}")
    a = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if a is None:
        raise SceneFormatError(f"unreadable image {path}")
    if rgb and a.ndim == 3:
        a = a[..., ::-1]
    return a


def write_disparity(path, disparity):
    _write_png(path, encode_disparity(disparity))


def read_disparity(path):
    return decode_disparity(_read_png(path))


def write_flow(path, flow, valid=None):
    _write_png(path, encode_flow(flow, valid), rgb=True)


def read_flow(path):
    return decode_flow(_read_png(path, rgb=True))


def write_image(path, image):
    """Float image in [0, 1] -> 8-bit RGB PNG."""
    img = np.asarray(image, dtype=float)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    _write_png(path, np.rint(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8), rgb=True)


def read_image(path):
    img = _read_png(path, rgb=True)
    if img.dtype != np.uint8:
        raise SceneFormatError(f"{path}: expected an 8-bit image")
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    return img.astype(float) / 255.0


def write_mask(path, labels):
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 65535:
        raise ValueError("instance ids must lie in [0, 65535]")
    _write_png(path, labels.astype(np.uint16))


def read_mask(path):
    m = _read_png(path)
    if m.ndim != 2:
        raise SceneFormatError(f"{path}: masks must be single-channel")
    return m.astype(np.int64)


def _read_keyvalues(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise SceneFormatError(f"missing file {path}")
    out = {}
    for n, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 2:
            raise SceneFormatError(f"{path}:{n}: expected 'key value'")
        out[parts[0]] = parts[1:]
    return out


def write_calib(path, calib: CameraCalib):
    Path(path).write_text(
        f"focal {calib.focal_length!r}\nbaseline {calib.baseline!r}\ncx {calib.cx!r}\ncy {calib.cy!r}\n")


def read_calib(path) -> CameraCalib:
    kv = _read_keyvalues(path)
    try:
        return CameraCalib(*(float(kv[k][0]) for k in ("focal", "baseline", "cx", "cy")))
    except KeyError as exc:
        raise SceneFormatError(f"{path}: missing calibration entry {exc}") from None
    except ValueError as exc:
        raise SceneFormatError(f"{path}: {exc}") from None


def write_motions(path, motions: dict):
    lines = [f"{k} " + " ".join(repr(float(v)) for v in m.as_vector()) for k, m in sorted(motions.items())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_motions(path) -> dict:
    out = {}
    for k, vals in _read_keyvalues(path).items():
        if len(vals) != 6:
            raise SceneFormatError(f"{path}: motion {k} needs 6 values")
        out[int(k)] = RigidMotion.from_vector([float(v) for v in vals])
    return out


# ------------------------------------------------------------------ parameters

_SECTIONS = ("seg", "stereo", "motion", "flow", "fuse")


def _format(v):
    return repr(bool(v)) if isinstance(v, (bool, np.bool_)) else repr(float(v)) if isinstance(v, float) else str(v)


def _coerce(template, text):
    if isinstance(template, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text}")
    if isinstance(template, int):
        return int(text)
    return float(text)


def _section_dict(obj) -> dict:
    if hasattr(obj, "as_dict"):
        return obj.as_dict()
    return {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}


def _apply(obj, values: dict, where: str):
    if hasattr(obj, "from_dict"):
        base = obj.as_dict()
        unknown = set(values) - set(base)
        if unknown:
            raise SceneFormatError(f"[{where}] unknown keys {sorted(unknown)}")
        return type(obj).from_dict({**base, **{k: float(v) for k, v in values.items()}})
    names = {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}
    unknown = set(values) - set(names)
    if unknown:
        raise SceneFormatError(f"[{where}] unknown keys {sorted(unknown)}")
    try:
        return dataclasses.replace(obj, **{k: _coerce(names[k], v) for k, v in values.items()})
    except ValueError as exc:
        raise SceneFormatError(f"[{where}] {exc}") from None


def write_params(path, config):
    """Write a :class:`~semflow.cascade.CascadeConfig` as INI text.

    Per-stage bundles after the first are written as ``[stageN.module]``
    sections holding only the values that differ from stage 1.
    """
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp["cascade"] = {"stages": str(config.stages), "temporal_from": str(config.temporal_from),
                     "early_exit": _format(config.early_exit), "exit_tol": _format(config.exit_tol),
                     "steps": ",".join(config.steps)}
    bundles = config.params if isinstance(config.params, (list, tuple)) else [config.params]
    first = bundles[0]
    for sec in _SECTIONS:
        cp[sec] = {k: _format(v) for k, v in _section_dict(getattr(first, sec)).items()}
    for n, b in enumerate(bundles[1:], 2):
        for sec in _SECTIONS:
            base = _section_dict(getattr(first, sec))
            diff = {k: _format(v) for k, v in _section_dict(getattr(b, sec)).items() if base[k] != v}
            if diff or sec == "seg":
                cp[f"stage{n}.{sec}"] = diff
    with open(path, "w") as fh:
        cp.write(fh)


def read_params(path):
    """Parse an INI parameter file into a :class:`~semflow.cascade.CascadeConfig`.

    Missing sections and keys keep their defaults.
    """
    from .cascade import CascadeConfig, StageParams

    cp = configparser.ConfigParser()
    cp.optionxform = str    # keys are case sensitive (``K``, ``W``)
    try:
        if not cp.read(path):
            raise SceneFormatError(f"missing parameter file {path}")
    except configparser.Error as exc:
        raise SceneFormatError(f"{path}: {exc}") from None
    known = {"cascade", *_SECTIONS}
    for name in cp.sections():
        head, _, tail = name.partition(".")
        if name not in known and not (head.startswith("stage") and head[5:].isdigit() and tail in _SECTIONS):
            raise SceneFormatError(f"{path}: unknown section [{name}]")
    base = StageParams()
    for sec in _SECTIONS:
        if cp.has_section(sec):
            base = dataclasses.replace(base, **{sec: _apply(getattr(base, sec), dict(cp[sec]), sec)})
    casc = dict(cp["cascade"]) if cp.has_section("cascade") else {}
    template = CascadeConfig()
    try:
        kw = {k: _coerce(getattr(template, k), v) for k, v in casc.items()
              if k in ("stages", "temporal_from", "early_exit", "exit_tol")}
    except ValueError as exc:
        raise SceneFormatError(f"{path}: [cascade] {exc}") from None
    if "steps" in casc:
        kw["steps"] = tuple(x.strip() for x in casc["steps"].split(",") if x.strip())
    unknown = set(casc) - {"stages", "temporal_from", "early_exit", "exit_tol", "steps"}
    if unknown:
        raise SceneFormatError(f"{path}: [cascade] unknown keys {sorted(unknown)}")
    stages = max([1] + [int(s.partition(".")[0][5:]) for s in cp.sections() if s.startswith("stage")])
    if stages == 1:
        params = base
    else:
        params = []
        for n in range(1, stages + 1):
            b = base
            for sec in _SECTIONS:
                name = f"stage{n}.{sec}"
                if cp.has_section(name):
                    b = dataclasses.replace(b, **{sec: _apply(getattr(b, sec), dict(cp[name]), name)})
            params.append(b)
    try:
        return CascadeConfig(params=params, **kw)
    except ValueError as exc:
        raise SceneFormatError(f"{path}: {exc}") from None


# ------------------------------------------------------------------ scenes


def write_scene(directory, inputs: SceneInput, gt: GroundTruth | None = None, config=None):
    """Write a scene directory (and its ``gt/`` subdirectory when given)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, img in zip(IMAGES, (inputs.left1, inputs.right1, inputs.left2, inputs.right2)):
        write_image(d / f"{name}.png", img)
    write_disparity(d / "disp_0.png", inputs.disparity1)
    write_disparity(d / "disp_1.png", inputs.disparity2)
    write_flow(d / "flow.png", inputs.flow)
    write_mask(d / "masks_0.png", inputs.masks1)
    write_mask(d / "masks_1.png", inputs.masks2)
    write_calib(d / "calib.txt", inputs.calib)
    if config is not None:
        write_params(d / "params.txt", config)
    if gt is not None:
        g = d / "gt"
        g.mkdir(exist_ok=True)
        write_disparity(g / "disp_0.png", gt.disparity1)
        write_disparity(g / "disp_1.png", gt.disparity2)
        write_disparity(g / "disp_1_frame2.png", gt.disparity2_frame2)
        write_flow(g / "flow.png", gt.flow, gt.disparity1 > 0)
        write_mask(g / "masks_0.png", gt.masks1)
        write_mask(g / "masks_1.png", gt.masks2)
        write_mask(g / "valid.png", gt.valid)
        write_motions(g / "motions.txt", gt.motions)


def save_synthetic(directory, scene: SyntheticScene, config=None):
    write_scene(directory, scene.inputs, scene.gt, config)


def read_scene(directory) -> SceneInput:
    d = Path(directory)
    if not d.is_dir():
        raise SceneFormatError(f"not a scene directory: {d}")
    imgs = [read_image(d / f"{n}.png") for n in IMAGES]
    flow, _ = read_flow(d / "flow.png")
    inputs = SceneInput(*imgs, read_calib(d / "calib.txt"), read_mask(d / "masks_0.png"),
                        read_mask(d / "masks_1.png"), read_disparity(d / "disp_0.png"),
                        read_disparity(d / "disp_1.png"), flow)
    shapes = {a.shape[:2] for a in (*imgs, inputs.masks1, inputs.masks2, inputs.disparity1,
                                     inputs.disparity2, inputs.flow)}
    if len(shapes) != 1:
        raise SceneFormatError(f"{d}: rasters differ in size {sorted(shapes)}")
    return inputs


def read_ground_truth(directory) -> GroundTruth:
    """Ground truth of a scene directory; ``directory`` may also be its ``gt/``."""
    g = Path(directory) / "gt"
    if not g.is_dir() and (Path(directory) / "motions.txt").is_file():
        g = Path(directory)
    if not g.is_dir():
        raise SceneFormatError(f"no ground truth under {directory}")
    flow, _ = read_flow(g / "flow.png")
    return GroundTruth(read_mask(g / "masks_0.png"), read_mask(g / "masks_1.png"),
                       read_disparity(g / "disp_0.png"), read_disparity(g / "disp_1.png"),
                       read_disparity(g / "disp_1_frame2.png"), flow,
                       read_mask(g / "valid.png") > 0, read_motions(g / "motions.txt"))


def write_estimate(directory, estimate):
    """Write a :class:`~semflow.cascade.SceneEstimate` to an output directory."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_disparity(d / "disp_0.png", estimate.disparity1)
    write_disparity(d / "disp_1.png", estimate.disparity2)
    write_disparity(d / "disp_1_ref.png", estimate.disparity2_ref)
    write_flow(d / "flow.png", estimate.flow)
    write_mask(d / "masks_0.png", estimate.masks1)
    write_mask(d / "masks_1.png", estimate.masks2)
    write_motions(d / "motions.txt", estimate.motions)


def read_estimate(directory) -> dict:
    """The rasters of an output (or ground-truth) directory as a dict of arrays."""
    d = Path(directory)
    if not d.is_dir():
        raise SceneFormatError(f"not a directory: {d}")
    flow, _ = read_flow(d / "flow.png")
    out = dict(disparity1=read_disparity(d / "disp_0.png"), disparity2=read_disparity(d / "disp_1.png"),
               flow=flow, masks1=read_mask(d / "masks_0.png"))
    # a ground-truth directory stores the frame-1 grid disparity as disp_1
    ref = d / "disp_1_ref.png"
    out["disparity2_ref"] = read_disparity(ref) if ref.is_file() else out["disparity2"]
    return out
