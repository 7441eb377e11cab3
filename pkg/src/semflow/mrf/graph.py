"""Pairwise energy model shared by all inference routines."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

#: Stand-in for forbidden labels; finite so that ``0 * BIG`` stays defined.
BIG = 1e12

TABLE, L1, POTTS = "table", "l1", "potts"


@dataclass
class InferenceResult:
    labeling: np.ndarray
    energy: float
    lower_bound: float | None = None
    iterations: int = 0
    bound_history: list = field(default_factory=list)


@dataclass
class _EdgeBlock:
    kind: str
    i: np.ndarray
    j: np.ndarray
    param: np.ndarray  # tables (m, Li, Lj) or weights (m,)


class PairwiseGraph:
    """Nodes with unary cost vectors plus typed pairwise edges.

    Edge kinds:

    * ``table``: explicit ``cost[x_i, x_j]``.
    * ``l1``: ``w * sum_d |coords_i[x_i, d] - coords_j[x_j, d]|``.
    * ``potts``: ``w * [x_i != x_j]``.

    Nodes may have different label counts; internally unaries are padded
    with :data:`BIG`.
    """

    def __init__(self, unaries, coords=None):
        if isinstance(unaries, np.ndarray) and unaries.ndim == 2:
            self.unary = np.array(unaries, dtype=float)
            self.n_labels = np.full(len(unaries), unaries.shape[1], dtype=np.int64)
        else:
            unaries = [np.asarray(u, dtype=float).ravel() for u in unaries]
            self.n_labels = np.array([len(u) for u in unaries], dtype=np.int64)
            lmax = int(self.n_labels.max()) if len(unaries) else 0
            self.unary = np.full((len(unaries), lmax), BIG)
            for k, u in enumerate(unaries):
                self.unary[k, : len(u)] = u
        if np.any(self.n_labels < 1):
            raise ValueError("every node needs at least one label")
        if not np.all(np.isfinite(self.unary)):
            raise ValueError("unary costs must be finite")
        self.coords = None
        if coords is not None:
            self.coords = self._pad_coords(coords)
        self._blocks: list[_EdgeBlock] = []

    def _pad_coords(self, coords):
        if isinstance(coords, np.ndarray) and coords.ndim >= 2 and coords.shape[0] == self.n_nodes:
            c = np.asarray(coords, dtype=float)
            return c[:, :, None] if c.ndim == 2 else c
        coords = [np.asarray(c, dtype=float) for c in coords]
        coords = [c[:, None] if c.ndim == 1 else c for c in coords]
        dim = coords[0].shape[1]
        out = np.zeros((self.n_nodes, self.unary.shape[1], dim))
        for k, c in enumerate(coords):
            if len(c) != self.n_labels[k]:
                raise ValueError("coordinate count must match label count")
            out[k, : len(c)] = c
            out[k, len(c):] = c[-1]
        return out

    @property
    def n_nodes(self) -> int:
        return len(self.n_labels)

    @property
    def n_edges(self) -> int:
        return sum(len(b.i) for b in self._blocks)

    def add_edges(self, i, j, kind=TABLE, param=None):
        """Add a batch of edges of one kind.

        ``param`` is an array of tables for ``table`` edges and an array
        (or scalar) of weights for ``l1``/``potts`` edges.
        """
        i = np.atleast_1d(np.asarray(i, dtype=np.int64))
        j = np.atleast_1d(np.asarray(j, dtype=np.int64))
        if i.shape != j.shape:
            raise ValueError("endpoint arrays differ in length")
        if np.any(i == j):
            raise ValueError("self loops are not allowed")
        if np.any((i < 0) | (j < 0) | (i >= self.n_nodes) | (j >= self.n_nodes)):
            raise ValueError("edge endpoint out of range")
        if kind == TABLE:
            param = np.asarray(param, dtype=float)
            if param.ndim == 2:
                param = param[None]
            if len(param) != len(i):
                raise ValueError("one table per edge required")
            lmax = self.unary.shape[1]
            for k in range(len(i)):
                if param[k].shape[0] < self.n_labels[i[k]] or param[k].shape[1] < self.n_labels[j[k]]:
                    raise ValueError("table does not match label counts")
            if param.shape[1:] != (lmax, lmax):
                padded = np.zeros((len(i), lmax, lmax))
                padded[:, : param.shape[1], : param.shape[2]] = param
                param = padded
        elif kind in (L1, POTTS):
            param = np.broadcast_to(np.asarray(param, dtype=float), i.shape).copy()
            if np.any(param < 0):
                raise ValueError(f"{kind} weights must be non-negative")
            if kind == L1 and self.coords is None:
                raise ValueError("l1 edges need label coordinates")
            if kind == POTTS and np.any(self.n_labels[i] != self.n_labels[j]):
                raise ValueError("potts edges need equal label counts")
        else:
            raise ValueError(f"unknown edge kind {kind!r}")
        if len(i):
            self._blocks.append(_EdgeBlock(kind, i, j, param))
        return self

    def add_edge(self, i, j, kind=TABLE, param=None):
        if kind == TABLE:
            param = np.asarray(param, dtype=float)[None]
        return self.add_edges([i], [j], kind, [param] if kind != TABLE else param)

    def blocks(self):
        return list(self._blocks)

    def edge_cost_tables(self):
        """Every edge as ``(i, j, tables)`` with padded dense tables."""
        lmax = self.unary.shape[1]
        ii, jj, tabs = [], [], []
        for b in self._blocks:
            ii.append(b.i)
            jj.append(b.j)
            if b.kind == TABLE:
                tabs.append(b.param)
            elif b.kind == POTTS:
                t = np.ones((lmax, lmax)) - np.eye(lmax)
                tabs.append(b.param[:, None, None] * t)
            else:
                ci = self.coords[b.i][:, :, None, :]
                cj = self.coords[b.j][:, None, :, :]
                tabs.append(b.param[:, None, None] * np.abs(ci - cj).sum(-1))
        if not ii:
            return (np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros((0, lmax, lmax)))
        return np.concatenate(ii), np.concatenate(jj), np.concatenate(tabs)


def check_labeling(graph: PairwiseGraph, labeling) -> np.ndarray:
    labeling = np.asarray(labeling, dtype=np.int64)
    if labeling.shape != (graph.n_nodes,):
        raise ValueError("labeling size does not match node count")
    if np.any((labeling < 0) | (labeling >= graph.n_labels)):
        raise ValueError("label index outside its node's label set")
    return labeling


def energy(graph: PairwiseGraph, labeling) -> float:
    """Sum of selected unary and pairwise costs."""
    x = check_labeling(graph, labeling)
    total = float(graph.unary[np.arange(graph.n_nodes), x].sum())
    for b in graph.blocks():
        xi, xj = x[b.i], x[b.j]
        if b.kind == TABLE:
            total += float(b.param[np.arange(len(b.i)), xi, xj].sum())
        elif b.kind == POTTS:
            total += float((b.param * (xi != xj)).sum())
        else:
            diff = np.abs(graph.coords[b.i, xi] - graph.coords[b.j, xj]).sum(-1)
            total += float((b.param * diff).sum())
    return total


MAX_BRUTE_FORCE_STATES = 2 ** 24


def brute_force_map(graph: PairwiseGraph) -> InferenceResult:
    """Exact minimiser by full enumeration (test oracle).

    Ties go to the lexicographically smallest labeling.
    """
    sizes = [int(k) for k in graph.n_labels]
    if np.prod(np.array(sizes, dtype=float)) > MAX_BRUTE_FORCE_STATES:
        raise ValueError("label space too large for exhaustive search")
    n = graph.n_nodes
    total = np.zeros(sizes)
    for k in range(n):
        shape = [1] * n
        shape[k] = sizes[k]
        total = total + graph.unary[k, : sizes[k]].reshape(shape)
    ii, jj, tabs = graph.edge_cost_tables()
    for i, j, t in zip(ii, jj, tabs):
        shape = [1] * n
        shape[i] = sizes[i]
        shape[j] = sizes[j]
        t = t[: sizes[i], : sizes[j]]
        total = total + (t if i < j else t.T).reshape(shape)
    flat = int(np.argmin(total))
    labeling = np.array(np.unravel_index(flat, sizes), dtype=np.int64)
    e = float(total.ravel()[flat])
    return InferenceResult(labeling, e, lower_bound=e)
