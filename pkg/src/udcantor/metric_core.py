"""Points of the compactified space, finite metric spaces and single-linkage merge trees.

Points live in R^n (n = 1, 2, 3) or are the point at infinity of S^n.  Two
metrics are available: the Euclidean one (finite points only) and the chordal
metric pulled back from the round sphere by stereographic projection,

    sigma(x, y)   = 2|x - y| / (sqrt(1 + |x|^2) sqrt(1 + |y|^2))
    sigma(x, inf) = 2 / sqrt(1 + |x|^2)
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DUPLICATE_TOL = 1e-12
HEIGHT_TIE_RTOL = 1e-12


class MetricError(ValueError):
    """Raised for ill-posed metric operations (dimension mismatch, infinity in R^n)."""


class MetricKind(enum.Enum):
    EUCLIDEAN = "euclidean"
    CHORDAL = "chordal"


@dataclass(frozen=True)
class AmbientPoint:
    coords: tuple[float, ...]
    at_infinity: bool = False

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(float(c) for c in self.coords))
        if not 1 <= len(self.coords) <= 3:
            raise MetricError(f"dimension must be 1, 2 or 3, got {len(self.coords)}")
        if not self.at_infinity and not all(math.isfinite(c) for c in self.coords):
            raise MetricError("finite point with non-finite coordinates")

    @classmethod
    def infinity(cls, dim: int) -> "AmbientPoint":
        return cls((0.0,) * dim, True)

    @property
    def dim(self) -> int:
        return len(self.coords)

    def array(self) -> np.ndarray:
        return np.asarray(self.coords, dtype=float)


def _check_pair(x: AmbientPoint, y: AmbientPoint, metric: MetricKind) -> None:
    if x.dim != y.dim:
        raise MetricError(f"dimension mismatch: {x.dim} vs {y.dim}")
    if metric is MetricKind.EUCLIDEAN and (x.at_infinity or y.at_infinity):
        raise MetricError("the Euclidean metric is undefined at infinity")


def distance(x: AmbientPoint, y: AmbientPoint, metric: MetricKind = MetricKind.EUCLIDEAN) -> float:
    _check_pair(x, y, metric)
    if metric is MetricKind.EUCLIDEAN:
        return float(np.linalg.norm(x.array() - y.array()))
    if x.at_infinity and y.at_infinity:
        return 0.0
    if x.at_infinity or y.at_infinity:
        p = y if x.at_infinity else x
        return 2.0 / math.sqrt(1.0 + float(p.array() @ p.array()))
    a, b = x.array(), y.array()
    return 2.0 * float(np.linalg.norm(a - b)) / math.sqrt((1.0 + a @ a) * (1.0 + b @ b))


def chordal_to_infinity(points: np.ndarray) -> np.ndarray:
    """Chordal distance from each row of ``points`` to infinity."""
    points = np.atleast_2d(points)
    return 2.0 / np.sqrt(1.0 + np.einsum("ij,ij->i", points, points))


def chordal_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise chordal distance between finite points (broadcasts like ``a - b``)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    num = 2.0 * np.linalg.norm(a - b, axis=-1)
    return num / np.sqrt((1.0 + np.sum(a * a, axis=-1)) * (1.0 + np.sum(b * b, axis=-1)))


def pairwise_distances(coords: np.ndarray, at_infinity: np.ndarray | None = None,
                       metric: MetricKind = MetricKind.EUCLIDEAN) -> np.ndarray:
    coords = np.asarray(coords, dtype=float)
    n = len(coords)
    inf = np.zeros(n, dtype=bool) if at_infinity is None else np.asarray(at_infinity, dtype=bool)
    sq = np.einsum("ij,ij->i", coords, coords)
    d = np.empty((n, n))
    step = max(1, 2_000_000 // max(n * coords.shape[1], 1))
    for start in range(0, n, step):
        diff = coords[start:start + step, None, :] - coords[None, :, :]
        d[start:start + step] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(d, 0.0)
    if metric is MetricKind.EUCLIDEAN:
        if inf.any():
            raise MetricError("the Euclidean metric is undefined at infinity")
        return d
    w = 1.0 / np.sqrt(1.0 + sq)
    d = 2.0 * d * w[:, None] * w[None, :]
    if inf.any():
        to_inf = 2.0 * w
        d[inf, :] = to_inf[None, :]
        d[:, inf] = to_inf[:, None]
        d[np.ix_(inf, inf)] = 0.0
    return d


class FinitePointSet:
    """An immutable finite subset of R^n or S^n with a chosen metric."""

    def __init__(self, coords, at_infinity=None, metric: MetricKind = MetricKind.EUCLIDEAN,
                 check_duplicates: bool = True):
        coords = np.array(coords, dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
        if coords.ndim != 2 or not 1 <= coords.shape[1] <= 3:
            raise MetricError(f"expected an (N, n) array with n in 1..3, got shape {coords.shape}")
        inf = np.zeros(len(coords), dtype=bool) if at_infinity is None else np.array(at_infinity, dtype=bool)
        if inf.shape != (len(coords),):
            raise MetricError("at_infinity mask has the wrong length")
        if inf.any():
            if metric is not MetricKind.CHORDAL:
                raise MetricError("sets containing infinity require the chordal metric")
            coords[inf] = 0.0
        if not np.isfinite(coords[~inf]).all():
            raise MetricError("non-finite coordinates")
        coords.setflags(write=False)
        inf.setflags(write=False)
        self.coords = coords
        self.at_infinity = inf
        self.metric = metric
        self._dist: np.ndarray | None = None
        if len(coords) >= 2:
            d = self.distance_matrix()
            if check_duplicates:
                off = np.where(np.eye(len(d), dtype=bool), np.inf, d)
                if off.min() < DUPLICATE_TOL:
                    i, j = np.unravel_index(np.argmin(off), off.shape)
                    raise MetricError(f"points {i} and {j} are closer than {DUPLICATE_TOL}")
            self.cached_diameter = float(d.max())
        else:
            self.cached_diameter = 0.0

    @classmethod
    def from_points(cls, points: Sequence[AmbientPoint], metric: MetricKind = MetricKind.EUCLIDEAN,
                    **kw) -> "FinitePointSet":
        if not points:
            raise MetricError("empty point list")
        dims = {p.dim for p in points}
        if len(dims) != 1:
            raise MetricError(f"mixed dimensions {sorted(dims)}")
        return cls([p.coords for p in points], [p.at_infinity for p in points], metric, **kw)

    def __len__(self) -> int:
        return len(self.coords)

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    def point(self, i: int) -> AmbientPoint:
        return AmbientPoint(tuple(self.coords[i]), bool(self.at_infinity[i]))

    def distance_matrix(self) -> np.ndarray:
        if self._dist is None:
            d = pairwise_distances(self.coords, self.at_infinity, self.metric)
            d.setflags(write=False)
            self._dist = d
        return self._dist

    def recompute_diameter(self) -> float:
        return float(pairwise_distances(self.coords, self.at_infinity, self.metric).max())

    def transformed(self, fn) -> "FinitePointSet":
        """Apply ``fn`` to the finite coordinate array; only valid without points at infinity."""
        if self.at_infinity.any():
            raise MetricError("cannot transform a set containing infinity")
        return FinitePointSet(fn(np.array(self.coords)), metric=self.metric)

    def to_csv(self, path, extra_columns: dict[str, Sequence] | None = None) -> None:
        extra = extra_columns or {}
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "z", "inf", *extra])
            for i, row in enumerate(self.coords):
                vals = [repr(float(v)) for v in row] + [""] * (3 - len(row))
                w.writerow([*vals, int(self.at_infinity[i]), *(extra[k][i] for k in extra)])

    @classmethod
    def from_csv(cls, path, metric: MetricKind | None = None) -> "FinitePointSet":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise MetricError(f"{path}: no points")
        dim = max(k for k, c in enumerate("xyz", 1) if rows[0].get(c, "") not in ("", None))
        coords = [[float(r[c]) for c in "xyz"[:dim]] for r in rows]
        inf = [r.get("inf", "0") in ("1", "true", "True") for r in rows]
        if metric is None:
            metric = MetricKind.CHORDAL if any(inf) else MetricKind.EUCLIDEAN
        return cls(coords, inf, metric)


@dataclass
class DendrogramNode:
    id: int
    children: tuple[int, ...]
    height: float
    diam: float
    min_leaf: int


@dataclass
class Dendrogram:
    """Binary single-linkage merge tree; leaves are ``0..n_leaves-1``, the root is the last node."""

    n_leaves: int
    nodes: list[DendrogramNode]
    parent: np.ndarray = field(repr=False)

    @property
    def root(self) -> int:
        return len(self.nodes) - 1

    def leaves_of(self, node: int) -> list[int]:
        out, stack = [], [node]
        while stack:
            v = stack.pop()
            if v < self.n_leaves:
                out.append(v)
            else:
                stack.extend(self.nodes[v].children)
        return sorted(out)

    def to_json(self) -> str:
        return json.dumps({"n_leaves": self.n_leaves,
                           "nodes": [{"id": v.id, "children": list(v.children),
                                      "height": v.height, "diam": v.diam} for v in self.nodes]})

    @classmethod
    def from_json(cls, text: str) -> "Dendrogram":
        data = json.loads(text)
        n = data["n_leaves"]
        nodes, parent = [], np.full(len(data["nodes"]), -1)
        for raw in data["nodes"]:
            ch = tuple(raw["children"])
            min_leaf = raw["id"] if not ch else min(nodes[c].min_leaf for c in ch)
            nodes.append(DendrogramNode(raw["id"], ch, raw["height"], raw["diam"], min_leaf))
            for c in ch:
                parent[c] = raw["id"]
        return cls(n, nodes, parent)


def minimum_spanning_edges(d: np.ndarray) -> list[tuple[float, int, int]]:
    """Prim's algorithm on a dense distance matrix, O(N^2)."""
    n = len(d)
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    best = d[0].copy()
    link = np.zeros(n, dtype=int)
    edges = []
    for _ in range(n - 1):
        cand = np.where(in_tree, np.inf, best)
        j = int(np.argmin(cand))
        edges.append((float(best[j]), int(min(j, link[j])), int(max(j, link[j]))))
        in_tree[j] = True
        closer = d[j] < best
        best = np.where(closer, d[j], best)
        link = np.where(closer, j, link)
    return edges


def single_linkage_dendrogram(X: FinitePointSet) -> Dendrogram:
    n = len(X)
    if n < 2:
        raise MetricError("single linkage needs at least 2 points")
    d = X.distance_matrix()
    edges = sorted(minimum_spanning_edges(d))
    uf = list(range(n))

    def find(a: int) -> int:
        while uf[a] != a:
            uf[a] = uf[uf[a]]
            a = uf[a]
        return a

    nodes = [DendrogramNode(i, (), 0.0, 0.0, i) for i in range(n)]
    comp_node = list(range(n))
    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    parent = np.full(2 * n - 1, -1)
    for h, i, j in edges:
        ri, rj = find(i), find(j)
        a, b = comp_node[ri], comp_node[rj]
        if nodes[a].min_leaf > nodes[b].min_leaf:
            a, b = b, a
        ma, mb = members.pop(a), members.pop(b)
        cross = float(d[np.ix_(ma, mb)].max())
        node_id = len(nodes)
        nodes.append(DendrogramNode(node_id, (a, b), h, max(nodes[a].diam, nodes[b].diam, cross),
                                    nodes[a].min_leaf))
        parent[a] = parent[b] = node_id
        members[node_id] = ma + mb
        uf[rj] = ri
        comp_node[ri] = node_id
    return Dendrogram(n, nodes, parent)


@dataclass(frozen=True)
class ChainLink:
    node: int
    diameter: float
    separation: float | None  # None for the root


def _same_height(a: float, b: float) -> bool:
    return abs(a - b) <= HEIGHT_TIE_RTOL * max(abs(a), abs(b))


def component_chain(dg: Dendrogram, x: int) -> list[ChainLink]:
    """Nested components containing leaf ``x``, leaf to root, with equal-height runs collapsed.

    A node that is created and absorbed at the same height is never a component of
    any threshold graph, so it is skipped; separations are then strictly increasing.
    """
    if not 0 <= x < dg.n_leaves:
        raise IndexError(f"leaf index {x} out of range")
    chain = []
    v = x
    while True:
        p = int(dg.parent[v])
        node = dg.nodes[v]
        if p < 0:
            chain.append(ChainLink(v, node.diam, None))
            break
        if v == x or not _same_height(node.height, dg.nodes[p].height):
            chain.append(ChainLink(v, node.diam, dg.nodes[p].height))
        v = p
    return chain


def set_separation(d: np.ndarray, members: Iterable[int]) -> float:
    """dist(E, X \\ E) by exhaustive search over the distance matrix."""
    mask = np.zeros(len(d), dtype=bool)
    mask[list(members)] = True
    if mask.all():
        return math.inf
    return float(d[np.ix_(mask, ~mask)].min())


def save_dendrogram(dg: Dendrogram, path) -> None:
    Path(path).write_text(dg.to_json())
