"""Binary per-instance segmentation CRF with optional two-frame coupling.

For one instance the CRF lives on the pixels of its (padded) bounding box.
The energy is linear in the eleven weights::

    data   : (l1 + l2 phi) [s=0, s_init=1] + (l3 + l4 phi) [s=1, s_init=0]
    space  : (l5 + l6 rho_img + l7 rho_disp) [s_i != s_j]      (8-neighbours)
    time   : l8 [s1=0, s2=1] + l9 [s1=1, s2=0]
             + (l10 + l11 csad) [s1 = s2]                     (flow links)

where ``phi`` is the sigmoid of the signed distance to the initial mask
border. :class:`SegProblem` precomputes every feature so that the graph for
any weight vector, and the joint feature vector of any labeling, are cheap.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from .core import BoundingBox, correspond_flow, pixel_grid
from .costs import SIGMOID_BANDWIDTH, csad_pairs, rho_disp, rho_img, signed_distance_feature
from .mrf import PairwiseGraph, TABLE, trw_map
from .mrf.graph import energy as graph_energy

N_WEIGHTS = 11
BOX_PADDING = 10

_OFFSETS8 = ((0, 1), (1, -1), (1, 0), (1, 1))


@dataclass
class SegParams:
    lambdas: np.ndarray = field(
        default_factory=lambda: np.array(
            [0.122, 1.659, 1.984, -4.051, 0.0, 1.239, 1.213, 0.4, 0.4, 0.0, 1.0]
        )
    )
    sigma_img: float = 0.1
    sigma_disp: float = 1.0
    sigmoid_bandwidth: float = SIGMOID_BANDWIDTH

    def __post_init__(self):
        self.lambdas = np.asarray(self.lambdas, dtype=float).copy()
        if self.lambdas.shape != (N_WEIGHTS,):
            raise ValueError("SegParams needs exactly 11 weights")

    def with_lambdas(self, lambdas) -> "SegParams":
        return replace(self, lambdas=np.asarray(lambdas, dtype=float))

    def as_dict(self) -> dict:
        out = {f"lambda{k + 1}": float(v) for k, v in enumerate(self.lambdas)}
        for f in fields(self):
            if f.name != "lambdas":
                out[f.name] = float(getattr(self, f.name))
        return out

    @classmethod
    def from_dict(cls, values: dict) -> "SegParams":
        base = cls()
        lambdas = base.lambdas.copy()
        for k in range(N_WEIGHTS):
            lambdas[k] = values.get(f"lambda{k + 1}", lambdas[k])
        kw = {f.name: values.get(f.name, getattr(base, f.name)) for f in fields(cls) if f.name != "lambdas"}
        return cls(lambdas=lambdas, **kw)


# Each row ``a`` of these matrices is a constraint ``a @ lambdas >= 0``; the
# corners of the attainable feature ranges make every pairwise cost >= 0.
SPATIAL_GUARD = np.array(
    [[0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0],
     [0, 0, 0, 0, 1, 1, 0, 0, 0, 0, 0],
     [0, 0, 0, 0, 1, 0, 1, 0, 0, 0, 0],
     [0, 0, 0, 0, 1, 1, 1, 0, 0, 0, 0]], dtype=float)
# CSAD of [0, 1] images lies in [0, 2]
TEMPORAL_GUARD = np.array(
    [[0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0],
     [0, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0],
     [0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0],
     [0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 2]], dtype=float)


def satisfies_guard(lambdas, tol=1e-12) -> bool:
    lambdas = np.asarray(lambdas, dtype=float)
    return bool(np.all(SPATIAL_GUARD @ lambdas >= -tol) and np.all(TEMPORAL_GUARD @ lambdas >= -tol))


@dataclass
class _FrameBlock:
    box: BoundingBox
    init: np.ndarray     # (n,) bool, initial labels of the box pixels
    phi: np.ndarray      # (n,) signed-distance feature
    ei: np.ndarray
    ej: np.ndarray
    rho_img: np.ndarray
    rho_disp: np.ndarray


def _frame_block(box, init_mask, image, disparity, params, offset):
    sl = box.slices
    init = np.asarray(init_mask, dtype=bool)[sl]
    img = np.asarray(image, dtype=float)[sl]
    disp = np.asarray(disparity, dtype=float)[sl]
    h, w = init.shape
    full = np.asarray(init_mask, dtype=bool)
    if full.any() and not full.all():
        phi = signed_distance_feature(full, params.sigmoid_bandwidth)[sl]
    else:
        phi = np.full(init.shape, 1.0 if full.all() else 0.0)
    idx = np.arange(h * w).reshape(h, w)
    ei, ej, ri, rd = [], [], [], []
    for dy, dx in _OFFSETS8:
        y0, y1 = 0, h - dy
        x0, x1 = max(0, -dx), w - max(0, dx)
        if y1 <= y0 or x1 <= x0:
            continue
        a = (slice(y0, y1), slice(x0, x1))
        b = (slice(y0 + dy, y1 + dy), slice(x0 + dx, x1 + dx))
        ei.append(idx[a].ravel())
        ej.append(idx[b].ravel())
        ri.append(rho_img(img[a], img[b], params.sigma_img).ravel())
        da, db = disp[a], disp[b]
        ok = (da > 0) & (db > 0)
        rd.append(np.where(ok, rho_disp(np.where(ok, da, 1), np.where(ok, db, 1), params.sigma_disp), 0.0).ravel())
    cat = (lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dt))
    return _FrameBlock(
        box, init.ravel(), phi.ravel(),
        cat(ei, np.int64) + offset, cat(ej, np.int64) + offset,
        cat(ri, float), cat(rd, float),
    )


class SegProblem:
    """Precomputed features of one instance's segmentation CRF."""

    def __init__(self, box, init_mask, image, disparity, params: SegParams | None = None,
                 temporal: dict | None = None):
        params = params or SegParams()
        box = box if isinstance(box, BoundingBox) else BoundingBox(*box)
        if not box.within(np.shape(init_mask)):
            raise ValueError("bounding box outside the image")
        self.params = params
        self.shape = np.shape(init_mask)[:2]
        self.frames = [_frame_block(box, init_mask, image, disparity, params, 0)]
        self.t_i = np.zeros(0, np.int64)
        self.t_j = np.zeros(0, np.int64)
        self.t_csad = np.zeros(0)
        if temporal is not None:
            self._add_temporal(temporal, image, params)

    def _add_temporal(self, temporal, image, params):
        box2 = temporal.get("box2") or BoundingBox.from_mask(
            temporal["mask2"], pad=BOX_PADDING, shape=self.shape)
        if not isinstance(box2, BoundingBox):
            box2 = BoundingBox(*box2)
        n1 = self.n_frame1
        self.frames.append(_frame_block(box2, temporal["mask2"], temporal["image2"],
                                        temporal["disparity2"], params, n1))
        b1 = self.frames[0].box
        px = pixel_grid(self.shape)[b1.slices].reshape(-1, 2)
        flow = np.asarray(temporal["flow"], dtype=float)[b1.slices].reshape(-1, 2)
        target, inside = correspond_flow(px, flow, self.shape)
        rx = np.rint(target[:, 0]).astype(np.int64)
        ry = np.rint(target[:, 1]).astype(np.int64)
        inside &= (rx >= box2.x0) & (rx <= box2.x1) & (ry >= box2.y0) & (ry <= box2.y1)
        src = np.flatnonzero(inside)
        dst = (ry[inside] - box2.y0) * box2.width + (rx[inside] - box2.x0)
        self.t_i = src.astype(np.int64)
        self.t_j = (dst + n1).astype(np.int64)
        self.t_csad = csad_pairs(image, px[inside], temporal["image2"], target[inside])

    @property
    def n_frame1(self) -> int:
        return self.frames[0].box.size

    @property
    def n_nodes(self) -> int:
        return sum(f.box.size for f in self.frames)

    @property
    def init_labels(self) -> np.ndarray:
        return np.concatenate([f.init for f in self.frames]).astype(np.int64)

    def unaries(self, lambdas) -> np.ndarray:
        l1, l2, l3, l4 = lambdas[:4]
        parts = []
        for f in self.frames:
            u = np.zeros((f.box.size, 2))
            u[:, 0] = np.where(f.init, l1 + l2 * f.phi, 0.0)
            u[:, 1] = np.where(f.init, 0.0, l3 + l4 * f.phi)
            parts.append(u)
        return np.concatenate(parts)

    def graph(self, lambdas=None, unary_offset=None) -> PairwiseGraph:
        lam = self.params.lambdas if lambdas is None else np.asarray(lambdas, dtype=float)
        u = self.unaries(lam)
        if unary_offset is not None:
            u = u + unary_offset
        g = PairwiseGraph(u)
        for f in self.frames:
            wts = lam[4] + lam[5] * f.rho_img + lam[6] * f.rho_disp
            tabs = np.zeros((len(wts), 2, 2))
            tabs[:, 0, 1] = wts
            tabs[:, 1, 0] = wts
            g.add_edges(f.ei, f.ej, TABLE, tabs)
        if len(self.t_i):
            agree = lam[9] + lam[10] * self.t_csad
            tabs = np.empty((len(agree), 2, 2))
            tabs[:, 0, 0] = agree
            tabs[:, 1, 1] = agree
            tabs[:, 0, 1] = lam[7]
            tabs[:, 1, 0] = lam[8]
            g.add_edges(self.t_i, self.t_j, TABLE, tabs)
        return g

    def features(self, labels) -> np.ndarray:
        """Joint feature vector: ``energy(graph(l), labels) == l @ features``."""
        x = np.asarray(labels, dtype=np.int64)
        psi = np.zeros(N_WEIGHTS)
        off = 0
        for f in self.frames:
            s = x[off: off + f.box.size]
            off += f.box.size
            lost = (s == 0) & f.init
            gained = (s == 1) & ~f.init
            psi[0] += lost.sum()
            psi[1] += f.phi[lost].sum()
            psi[2] += gained.sum()
            psi[3] += f.phi[gained].sum()
            cut = x[f.ei] != x[f.ej]
            psi[4] += cut.sum()
            psi[5] += f.rho_img[cut].sum()
            psi[6] += f.rho_disp[cut].sum()
        if len(self.t_i):
            s1, s2 = x[self.t_i], x[self.t_j]
            psi[7] += ((s1 == 0) & (s2 == 1)).sum()
            psi[8] += ((s1 == 1) & (s2 == 0)).sum()
            same = s1 == s2
            psi[9] += same.sum()
            psi[10] += self.t_csad[same].sum()
        return psi

    def energy(self, labels, lambdas=None) -> float:
        return graph_energy(self.graph(lambdas), labels)

    def split(self, labels):
        """Full-frame boolean masks, one per frame in the problem."""
        x = np.asarray(labels, dtype=bool)
        out, off = [], 0
        for f in self.frames:
            m = np.zeros(self.shape, dtype=bool)
            m[f.box.slices] = x[off: off + f.box.size].reshape(f.box.height, f.box.width)
            off += f.box.size
            out.append(m)
        return out


def build_seg_graph(box, init_mask, image, disparity, params: SegParams | None = None,
                    temporal: dict | None = None) -> PairwiseGraph:
    """CRF over ``box`` for the binary mask ``init_mask`` (see module doc).

    ``temporal`` (optional) holds ``flow``, ``image2``, ``mask2`` and
    ``disparity2``; frame-2 box pixels then become extra nodes linked to
    the frame-1 pixels whose rounded flow target lands on them.
    """
    return SegProblem(box, init_mask, image, disparity, params, temporal).graph()


@dataclass
class SegResult:
    masks: list          # full-frame masks, one per frame in the problem
    energy: float
    init_energy: float


def segment_instance(init_mask, image, disparity, params: SegParams | None = None,
                     temporal: dict | None = None, box=None, max_iters=50) -> SegResult:
    """Refine one instance and report the CRF energies before and after."""
    init_mask = np.asarray(init_mask, dtype=bool)
    if not init_mask.any():
        raise ValueError("instance mask is empty")
    if box is None:
        box = BoundingBox.from_mask(init_mask, pad=BOX_PADDING)
    problem = SegProblem(box, init_mask, image, disparity, params, temporal)
    g = problem.graph()
    x = solve(problem, max_iters=max_iters)
    return SegResult(problem.split(x), graph_energy(g, x), graph_energy(g, problem.init_labels))


def refine_segmentation(init_mask, image, disparity, params: SegParams | None = None,
                        temporal: dict | None = None, box=None, max_iters=50):
    """Refine one instance; returns a list of full-frame masks (one per frame).

    The box defaults to the mask's bounding box padded by ``BOX_PADDING``.
    """
    return segment_instance(init_mask, image, disparity, params, temporal, box, max_iters).masks


def solve(problem: SegProblem, lambdas=None, unary_offset=None, max_iters=50) -> np.ndarray:
    """TRW MAP labeling, never worse than the initial labeling."""
    g = problem.graph(lambdas, unary_offset)
    res = trw_map(g, max_iters=max_iters)
    init = problem.init_labels
    if graph_energy(g, init) < res.energy:
        return init
    return res.labeling


def resolve_instances(masks, shape) -> np.ndarray:
    """Merge per-instance masks ``{k: mask}`` into one label map.

    Pixels claimed by several instances go to the one whose box center is
    nearest.
    """
    labels = np.zeros(shape, dtype=np.int64)
    best = np.full(shape, np.inf)
    grid = pixel_grid(shape)
    for k, m in sorted(masks.items()):
        m = np.asarray(m, dtype=bool)
        if not m.any():
            continue
        cx, cy = BoundingBox.from_mask(m).center
        dist = np.hypot(grid[..., 0] - cx, grid[..., 1] - cy)
        take = m & (dist < best)
        labels[take] = k
        best[take] = dist[take]
    return labels
