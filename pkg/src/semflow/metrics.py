"""Scene-flow error metrics with the benchmark outlier rule.

A disparity or flow estimate is an outlier when its error is at least
3 px and at least 5% of the true magnitude. A scene-flow pixel is an
outlier when any of D1, D2 or Fl is. Missing estimates (non-positive
disparity) count as outliers wherever the truth is valid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ABS_THRESHOLD = 3.0
REL_THRESHOLD = 0.05
METRICS = ("D1", "D2", "Fl", "SF")
REGIONS = ("bg", "fg", "all")


def disparity_outliers(est, gt):
    est = np.asarray(est, dtype=float)
    gt = np.asarray(gt, dtype=float)
    err = np.abs(est - gt)
    bad = (err >= ABS_THRESHOLD) & (err >= REL_THRESHOLD * np.abs(gt))
    return bad | ~(est > 0)


def flow_outliers(est, gt):
    err = np.linalg.norm(np.asarray(est, dtype=float) - gt, axis=-1)
    mag = np.linalg.norm(np.asarray(gt, dtype=float), axis=-1)
    return (err >= ABS_THRESHOLD) & (err >= REL_THRESHOLD * mag)


@dataclass
class MetricsReport:
    values: dict = field(default_factory=dict)    # "D1-fg" -> percent
    counts: dict = field(default_factory=dict)    # "bg"/"fg"/"all" -> evaluated pixels
    runtime: float = 0.0
    seg_error: float | None = None                # percent of mislabelled pixels
    epe: dict = field(default_factory=dict)       # "fg"/"bg"/"all" -> mean flow end-point error

    def __getitem__(self, key):
        return self.values[key]

    def to_text(self) -> str:
        lines = [f"{k} {v:.4f}" for k, v in self.values.items()]
        lines += [f"count-{k} {v}" for k, v in self.counts.items()]
        lines += [f"EPE-{k} {v:.6f}" for k, v in self.epe.items()]
        if self.seg_error is not None:
            lines.append(f"Seg {self.seg_error:.4f}")
        lines.append(f"runtime {self.runtime:.3f}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetricsReport":
        rep = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            key, value = line.split()
            if key.startswith("count-"):
                rep.counts[key[6:]] = int(value)
            elif key.startswith("EPE-"):
                rep.epe[key[4:]] = float(value)
            elif key == "Seg":
                rep.seg_error = float(value)
            elif key == "runtime":
                rep.runtime = float(value)
            else:
                rep.values[key] = float(value)
        return rep


def _percent(bad, sel):
    n = int(sel.sum())
    return 100.0 * float(bad[sel].sum()) / n if n else 0.0


def evaluate(disparity1, disparity2, flow, gt_disparity1, gt_disparity2, gt_flow, fg,
             valid=None, runtime: float = 0.0, masks=None, gt_masks=None) -> MetricsReport:
    """Outlier percentages of D1, D2, Fl and SF over bg / fg / all.

    ``disparity2`` and ``gt_disparity2`` live on the frame-1 grid. Pixels
    are evaluated where the truth is valid (positive disparities and, if
    given, ``valid``). ``masks``/``gt_masks`` add a segmentation error.
    """
    shapes = {np.shape(disparity1), np.shape(disparity2), np.shape(flow)[:2], np.shape(gt_disparity1),
              np.shape(gt_disparity2), np.shape(gt_flow)[:2], np.shape(fg)}
    if len(shapes) != 1:
        raise ValueError(f"raster shapes differ: {sorted(shapes)}")
    gt_disparity1 = np.asarray(gt_disparity1, dtype=float)
    gt_disparity2 = np.asarray(gt_disparity2, dtype=float)
    fg = np.asarray(fg, dtype=bool)
    ok = (gt_disparity1 > 0) & (gt_disparity2 > 0)
    if valid is not None:
        ok &= np.asarray(valid, dtype=bool)
    bad = {
        "D1": disparity_outliers(disparity1, gt_disparity1),
        "D2": disparity_outliers(disparity2, gt_disparity2),
        "Fl": flow_outliers(flow, gt_flow),
    }
    bad["SF"] = bad["D1"] | bad["D2"] | bad["Fl"]
    regions = {"bg": ok & ~fg, "fg": ok & fg, "all": ok}
    rep = MetricsReport(runtime=float(runtime))
    for m in METRICS:
        for r in REGIONS:
            rep.values[f"{m}-{r}"] = _percent(bad[m], regions[r])
    rep.counts = {r: int(sel.sum()) for r, sel in regions.items()}
    err = np.linalg.norm(np.asarray(flow, dtype=float) - gt_flow, axis=-1)
    rep.epe = {r: float(err[sel].mean()) if sel.any() else 0.0 for r, sel in regions.items()}
    if masks is not None and gt_masks is not None:
        rep.seg_error = 100.0 * float(np.mean(np.asarray(masks) != np.asarray(gt_masks)))
    return rep


def evaluate_scene(estimate, gt, runtime: float = 0.0) -> MetricsReport:
    """Score a :class:`~semflow.cascade.SceneEstimate` against synthetic truth."""
    return evaluate(estimate.disparity1, estimate.disparity2_ref, estimate.flow,
                    gt.disparity1, gt.disparity2, gt.flow, gt.masks1 > 0, gt.valid,
                    runtime, estimate.masks1, gt.masks1)
