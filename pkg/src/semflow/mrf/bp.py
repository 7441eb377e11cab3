"""Min-sum (max-product) belief propagation with distance-transform messages."""

from __future__ import annotations

import numpy as np

from .dt import l1_envelope
from .graph import BIG, L1, POTTS, TABLE, InferenceResult, PairwiseGraph, energy


def _grid_axes(coords):
    """Per-axis coordinates if ``coords`` is a C-ordered Cartesian grid."""
    axes = [np.unique(coords[:, d]) for d in range(coords.shape[1])]
    if np.prod([len(a) for a in axes]) != len(coords):
        return None
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
    if not np.array_equal(mesh, coords):
        return None
    return axes


def _l1_message(h, w, src, dst):
    """``m[k] = min_j h[j] + w * |dst[k] - src[j]|_1`` for coordinate rows."""
    if src.shape[1] == 1:
        order = np.argsort(src[:, 0], kind="stable")
        s = src[order, 0]
        if np.all(np.diff(s) > 0):
            return l1_envelope(h[order], w, s, dst[:, 0])
    else:
        sa, da = _grid_axes(src), _grid_axes(dst)
        if sa is not None and da is not None:
            # separable: one envelope pass per axis
            cur = h.reshape([len(a) for a in sa])
            for d in range(len(sa)):
                cur = np.moveaxis(cur, d, -1)
                flat = cur.reshape(-1, cur.shape[-1])
                nxt = np.stack([l1_envelope(row, w, sa[d], da[d]) for row in flat])
                cur = np.moveaxis(nxt.reshape(cur.shape[:-1] + (len(da[d]),)), -1, d)
            return cur.ravel()
    return (h[None, :] + w * np.abs(dst[:, None, :] - src[None, :, :]).sum(-1)).min(axis=1)


class _Edge:
    __slots__ = ("i", "j", "kind", "param")

    def __init__(self, i, j, kind, param):
        self.i, self.j, self.kind, self.param = i, j, kind, param


def _edges(graph):
    out = []
    for b in graph.blocks():
        for k in range(len(b.i)):
            out.append(_Edge(int(b.i[k]), int(b.j[k]), b.kind, b.param[k]))
    return out


def _send(graph, e, src, h):
    """Message from ``src`` endpoint of ``e`` to the other endpoint."""
    dst = e.j if src == e.i else e.i
    ns, nd = graph.n_labels[src], graph.n_labels[dst]
    h = h[:ns]
    if e.kind == TABLE:
        t = e.param[:ns, :nd] if src == e.i else e.param[:nd, :ns].T
        m = (h[:, None] + t).min(axis=0)
    elif e.kind == POTTS:
        m = np.minimum(h, h.min() + e.param)
    else:
        m = _l1_message(h, e.param, graph.coords[src, :ns], graph.coords[dst, :nd])
    out = np.full(graph.unary.shape[1], BIG)
    out[:nd] = m - m.min()
    return out


def _pair_cost(graph, e, s, xs, t_label):
    """Cost of edge ``e`` as a vector over labels of ``s`` with the other end fixed."""
    ns = graph.n_labels[s]
    if e.kind == TABLE:
        return e.param[:ns, t_label] if s == e.i else e.param[t_label, :ns]
    other = e.j if s == e.i else e.i
    if e.kind == POTTS:
        return e.param * (np.arange(ns) != t_label)
    diff = np.abs(graph.coords[s, :ns] - graph.coords[other, t_label]).sum(-1)
    return e.param * diff


def maxproduct_bp(graph: PairwiseGraph, schedule: str = "sweep", max_iters: int = 50) -> InferenceResult:
    """Loopy min-sum BP; exact on trees once messages have converged.

    ``schedule`` is ``"sweep"`` (forward then backward pass in node order,
    each node sending to the nodes after/before it) or ``"synchronous"``.
    L1 edges use distance-transform messages (separable over grid-shaped
    multi-dimensional label sets); Potts edges use the O(L) rule.
    """
    if schedule not in ("sweep", "synchronous"):
        raise ValueError(f"unknown schedule {schedule!r}")
    for b in graph.blocks():
        if b.kind not in (TABLE, L1, POTTS):
            raise ValueError(f"edge kind {b.kind!r} unsupported by max-product BP")
    n, lmax = graph.unary.shape
    edges = _edges(graph)
    nbrs = [[] for _ in range(n)]
    for k, e in enumerate(edges):
        nbrs[e.i].append(k)
        nbrs[e.j].append(k)
    # msg[(k, dst)] holds the message along edge k into node dst
    msg = {}
    for k, e in enumerate(edges):
        msg[(k, e.i)] = np.zeros(lmax)
        msg[(k, e.j)] = np.zeros(lmax)

    def belief(s):
        b = graph.unary[s].copy()
        for k in nbrs[s]:
            b += msg[(k, s)]
        return b

    def update(s, later):
        b = belief(s)
        for k in nbrs[s]:
            e = edges[k]
            t = e.j if s == e.i else e.i
            if later is None or (t > s) == later:
                msg[(k, t)] = _send(graph, e, s, b - msg[(k, s)])

    it = 0
    for it in range(1, max_iters + 1):
        old = {key: v.copy() for key, v in msg.items()}
        if schedule == "sweep":
            for s in range(n):
                update(s, True)
            for s in range(n - 1, -1, -1):
                update(s, False)
        else:
            new = {}
            for s in range(n):
                b = graph.unary[s] + sum((old[(k, s)] for k in nbrs[s]), np.zeros(lmax))
                for k in nbrs[s]:
                    e = edges[k]
                    t = e.j if s == e.i else e.i
                    new[(k, t)] = _send(graph, e, s, b - old[(k, s)])
            msg.update(new)
        if all(np.allclose(old[key], msg[key], atol=1e-12, rtol=0) for key in msg):
            break

    x = np.zeros(n, dtype=np.int64)
    done = np.zeros(n, dtype=bool)
    for s in range(n):
        v = graph.unary[s, : graph.n_labels[s]].copy()
        for k in nbrs[s]:
            e = edges[k]
            t = e.j if s == e.i else e.i
            if done[t]:
                v += _pair_cost(graph, e, s, None, x[t])
            else:
                v += msg[(k, s)][: graph.n_labels[s]]
        x[s] = int(np.argmin(v))
        done[s] = True
    return InferenceResult(x, energy(graph, x), iterations=it)
