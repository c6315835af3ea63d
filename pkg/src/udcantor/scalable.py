"""Exact invariants for point sets too large for a dense distance matrix.

``up_constant_tree`` evaluates the same quantity as
``uniform_perfectness_constant`` with a KD-tree: for each point it walks
outward through its sorted distances, jumping over every stretch whose
consecutive ratios are provably at most the running maximum, and only
resolves the next distance exactly when no point lies in (r, c r].

``hierarchical_ud`` computes the uniform disconnectedness constant of a set
generated level by level by similarities (an IFS attractor sample or an
interleaved necklace set).  Each child cylinder is a similar copy of one
reference set per level, so its single-linkage dendrogram is computed once,
provided it is certified to be a node of the full dendrogram.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy.spatial import cKDTree

from .ifs import Similarity, hull_vertices, point_cloud_diameter
from .invariants import UpResult, ud_from_dendrogram
from .metric_core import FinitePointSet, MetricError, _same_height, single_linkage_dendrogram

LEAF_SIZE = 16


# ---------------------------------------------------------------- kd-tree


@numba.njit(cache=True)
def _build(points, leaf_size):
    n, dim = points.shape
    order = np.arange(n)
    max_nodes = 2 * (n // leaf_size + 1) * 2 + 1
    lo = np.empty((max_nodes, dim))
    hi = np.empty((max_nodes, dim))
    start = np.empty(max_nodes, np.int64)
    end = np.empty(max_nodes, np.int64)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    stack = np.empty(max_nodes, np.int64)
    start[0], end[0] = 0, n
    count, top = 1, 1
    stack[0] = 0
    while top > 0:
        top -= 1
        node = stack[top]
        s, e = start[node], end[node]
        for k in range(dim):
            lo[node, k] = np.inf
            hi[node, k] = -np.inf
        for i in range(s, e):
            p = order[i]
            for k in range(dim):
                v = points[p, k]
                if v < lo[node, k]:
                    lo[node, k] = v
                if v > hi[node, k]:
                    hi[node, k] = v
        if e - s <= leaf_size:
            continue
        axis = 0
        for k in range(1, dim):
            if hi[node, k] - lo[node, k] > hi[node, axis] - lo[node, axis]:
                axis = k
        seg = order[s:e].copy()
        keys = np.empty(e - s)
        for i in range(e - s):
            keys[i] = points[seg[i], axis]
        order[s:e] = seg[np.argsort(keys, kind="mergesort")]
        mid = (s + e) // 2
        a, b = count, count + 1
        count += 2
        start[a], end[a], start[b], end[b] = s, mid, mid, e
        left[node], right[node] = a, b
        stack[top] = a
        stack[top + 1] = b
        top += 2
    return order, lo[:count], hi[:count], start[:count], end[:count], left[:count], right[:count]


@numba.njit(cache=True)
def _box_bounds(x, lo, hi, node):
    mn = 0.0
    mx = 0.0
    for k in range(x.shape[0]):
        a = lo[node, k] - x[k]
        b = x[k] - hi[node, k]
        g = max(a, b, 0.0)
        mn += g * g
        f = max(abs(x[k] - lo[node, k]), abs(x[k] - hi[node, k]))
        mx += f * f
    return math.sqrt(mn), math.sqrt(mx)


@numba.njit(cache=True)
def _dist(points, p, x):
    s = 0.0
    for k in range(x.shape[0]):
        d = points[p, k] - x[k]
        s += d * d
    return math.sqrt(s)


@numba.njit(cache=True)
def _far_within(x, radius, points, order, lo, hi, start, end, left, right, stack):
    """Largest distance from x that is <= radius (0 if only x itself qualifies)."""
    best = 0.0
    top = 1
    stack[0] = 0
    while top > 0:
        top -= 1
        node = stack[top]
        mn, mx = _box_bounds(x, lo, hi, node)
        if mn > radius or mx <= best:
            continue
        if left[node] < 0:
            for i in range(start[node], end[node]):
                d = _dist(points, order[i], x)
                if best < d <= radius:
                    best = d
        else:
            # pop the child with the farther box corner first
            a, b = left[node], right[node]
            if _box_bounds(x, lo, hi, a)[1] > _box_bounds(x, lo, hi, b)[1]:
                a, b = b, a
            stack[top] = a
            stack[top + 1] = b
            top += 2
    return best


@numba.njit(cache=True)
def _near_beyond(x, radius, points, order, lo, hi, start, end, left, right, stack):
    """Smallest distance from x that is > radius (inf if none)."""
    best = np.inf
    top = 1
    stack[0] = 0
    while top > 0:
        top -= 1
        node = stack[top]
        mn, mx = _box_bounds(x, lo, hi, node)
        if mx <= radius or mn >= best:
            continue
        if left[node] < 0:
            for i in range(start[node], end[node]):
                d = _dist(points, order[i], x)
                if radius < d < best:
                    best = d
        else:
            # pop the child with the nearer box first
            a, b = left[node], right[node]
            if _box_bounds(x, lo, hi, a)[0] < _box_bounds(x, lo, hi, b)[0]:
                a, b = b, a
            stack[top] = a
            stack[top + 1] = b
            top += 2
    return best


@numba.njit(cache=True)
def _up_sweep(points, diam, floor, centers, order, lo, hi, start, end, left, right):
    stack = np.empty(4 * lo.shape[0] + 8, np.int64)
    best, best_i, best_r = 1.0, 0, diam
    for i in centers:
        x = points[i]
        dmax = _far_within(x, np.inf, points, order, lo, hi, start, end, left, right, stack)
        r = _near_beyond(x, 0.0, points, order, lo, hi, start, end, left, right, stack)
        if floor > 0:
            rf = _far_within(x, floor, points, order, lo, hi, start, end, left, right, stack)
            if rf > r:
                r = rf
        while r < dmax:
            jump = _far_within(x, best * r, points, order, lo, hi, start, end, left, right, stack)
            if jump > r:
                r = jump
                continue
            nxt = _near_beyond(x, r, points, order, lo, hi, start, end, left, right, stack)
            if nxt / r > best:
                best, best_i, best_r = nxt / r, i, nxt
            r = nxt
        if diam / dmax > best:
            best, best_i, best_r = diam / dmax, i, diam
    return best, best_i, best_r


@dataclass
class KdTree:
    points: np.ndarray
    order: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    start: np.ndarray
    end: np.ndarray
    left: np.ndarray
    right: np.ndarray

    @classmethod
    def build(cls, points, leaf_size: int = LEAF_SIZE) -> "KdTree":
        pts = np.ascontiguousarray(points, dtype=float)
        return cls(pts, *_build(pts, leaf_size))

    def _arrays(self):
        return self.order, self.lo, self.hi, self.start, self.end, self.left, self.right

    def far_within(self, x, radius: float) -> float:
        stack = np.empty(4 * len(self.lo) + 8, np.int64)
        return float(_far_within(np.asarray(x, float), radius, self.points, *self._arrays(), stack))

    def near_beyond(self, x, radius: float) -> float:
        stack = np.empty(4 * len(self.lo) + 8, np.int64)
        return float(_near_beyond(np.asarray(x, float), radius, self.points, *self._arrays(), stack))


def up_constant_tree(points, diam: float | None = None, scale_floor: float = 0.0,
                     centers=None) -> UpResult:
    """Uniform perfectness constant of a Euclidean point set without a distance matrix.

    ``centers`` restricts the maximum to balls about those point indices.
    """
    pts = np.ascontiguousarray(points, dtype=float)
    if len(pts) < 2:
        raise MetricError("need at least 2 points")
    if diam is None:
        diam = point_cloud_diameter(pts)
    tree = KdTree.build(pts)
    idx = np.arange(len(pts)) if centers is None else np.asarray(centers, dtype=np.int64)
    c, i, r = _up_sweep(pts, float(diam), scale_floor * (1 + 1e-9), idx, *tree._arrays())
    return UpResult(float(c), int(i), float(r))


# ---------------------------------------------------------------- hierarchical UD


class NotCertified(RuntimeError):
    """A child cylinder is not separated from its siblings by more than its own merge height."""


@dataclass
class LevelSummary:
    """Single-linkage data of one reference set Z_j (points in a similarity-invariant form)."""

    points: np.ndarray
    hull: np.ndarray
    diam: float
    root_height: float
    internal_ud: float


def _hull(points: np.ndarray) -> np.ndarray:
    return points[hull_vertices(points)]


def _base_summary(points: np.ndarray) -> LevelSummary:
    X = FinitePointSet(points)
    dg = single_linkage_dendrogram(X)
    return LevelSummary(points, _hull(points), X.cached_diameter, dg.nodes[dg.root].height,
                        ud_from_dendrogram(dg).constant)


def _child_distances(ref: np.ndarray, tree: cKDTree, maps: list[Similarity]):
    """Minimal distances between the similar copies maps[i](ref).

    Pairs are resolved in order of a bounding-sphere lower bound; once the
    resolved pairs connect all copies, pairs whose lower bound exceeds the
    largest spanning edge cannot affect single linkage and stay at inf.
    """
    n = len(maps)
    d = np.full((n, n), np.inf)
    c0 = ref.mean(axis=0, keepdims=True)
    centers = np.array([m(c0)[0] for m in maps])
    radii = np.array([m.scale * np.linalg.norm(ref - c0, axis=1).max() for m in maps])
    lower = np.linalg.norm(centers[:, None] - centers[None], axis=-1) - radii[:, None] - radii[None]
    pairs = sorted((lower[i, j], i, j) for i in range(n) for j in range(i + 1, n))
    for lb, i, j in pairs:
        if lb > 0 and lb > _spanning_height(d) * (1 + 1e-9):
            break
        img = maps[j].inverse()(maps[i](ref))
        dist, _ = tree.query(img, k=1)
        d[i, j] = d[j, i] = maps[j].scale * float(dist.min())
    return d, lower


def _spanning_height(d: np.ndarray) -> float:
    """Largest edge of a minimum spanning tree of the finite entries (inf if disconnected)."""
    n = len(d)
    best = np.full(n, np.inf)
    seen = np.zeros(n, bool)
    best[0] = 0.0
    top = 0.0
    for _ in range(n):
        cand = np.where(seen, np.inf, best)
        k = int(np.argmin(cand))
        if not np.isfinite(cand[k]):
            return math.inf
        seen[k] = True
        top = max(top, best[k])
        best = np.minimum(best, d[k])
    return top


def _merge_level(children: LevelSummary, maps: list[Similarity]) -> LevelSummary:
    ref = children.points
    tree = cKDTree(ref)
    hulls = [m(children.hull) for m in maps]
    d, _ = _child_distances(ref, tree, maps)
    n = len(maps)
    scales = np.array([m.scale for m in maps])
    sep = d.min(axis=1)
    inner = scales * children.root_height
    bad = np.nonzero(sep <= inner * (1 + 1e-9))[0]
    if len(bad):
        raise NotCertified(f"child {int(bad[0]) + 1}: separation {sep[bad[0]]:.6g} <= merge height {inner[bad[0]]:.6g}")
    # single linkage on the n child cylinders, processing equal heights together
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    members = {i: [i] for i in range(n)}
    diam = {i: scales[i] * children.diam for i in range(n)}
    edges = sorted((d[i, j], i, j) for i in range(n) for j in range(i + 1, n) if np.isfinite(d[i, j]))
    quotient = 0.0
    height = 0.0
    k = 0
    while k < len(edges):
        h = edges[k][0]
        batch = []
        while k < len(edges) and _same_height(edges[k][0], h):
            batch.append(edges[k])
            k += 1
        roots = {find(i) for _, i, j in batch if find(i) != find(j)} | {find(j) for _, i, j in batch if find(i) != find(j)}
        if not roots:
            continue
        height = h
        for _, i, j in batch:
            a, b = find(i), find(j)
            if a != b:
                parent[b] = a
                members[a] += members.pop(b)
                diam.pop(b)
        for a in {find(r) for r in roots}:
            diam[a] = point_cloud_diameter(np.concatenate([hulls[m] for m in members[a]]))
        # each merging component is separated by h from the rest; the component it joins
        # has diameter diam[find(r)]
        for r in roots:
            quotient = max(quotient, diam[find(r)] / h)
    points = np.concatenate([m(ref) for m in maps])
    hull = _hull(np.concatenate(hulls))
    return LevelSummary(points, hull, point_cloud_diameter(hull), height, max(children.internal_ud, quotient))


def hierarchical_ud(level_maps: list[list[Similarity]], base_point) -> float:
    """UD constant of {psi_w(p)} where level k uses the maps level_maps[k-1]."""
    p = np.atleast_2d(np.asarray(base_point, dtype=float))
    last = level_maps[-1]
    summary = _base_summary(np.concatenate([m(p) for m in last]))
    for maps in reversed(level_maps[:-1]):
        summary = _merge_level(summary, maps)
    return max(summary.internal_ud, 1.0)
