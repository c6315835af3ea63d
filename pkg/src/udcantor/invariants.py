"""Uniform perfectness and uniform disconnectedness constants of finite sets.

Both constants are computed in closed form at critical radii.  For a point x
with sorted distances d_1 < ... < d_m to the other points, the annulus
{y : r/c <= d(x, y) < r} is nonempty for every r in (d_1, diam X) iff c is at
least every ratio d_{i+1}/d_i and diam X / d_m; radii at or below the nearest
neighbour distance are below the resolution of the set and are ignored.

For uniform disconnectedness the best separated set E containing x with
diam E <= r is always a single-linkage component: if E contains x and
dist(E, X \\ E) >= h, then the h-component of x lies inside E, has
separation >= h and no larger diameter.  Sweeping r through the nested
components of x therefore gives the constant as the largest ratio
diam(next component) / separation(current component).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .ifs import (
    AttractorApproximation,
    IfsSystem,
    Similarity,
    Word,
    attractor_diameter,
    fixed_point_sample,
)
from .metric_core import (
    Dendrogram,
    FinitePointSet,
    MetricError,
    _same_height,
    component_chain,
    single_linkage_dendrogram,
)

BRUTE_FORCE_LIMIT = 12


@dataclass
class UpResult:
    constant: float
    point: int
    radius: float


@dataclass
class UdResult:
    constant: float
    point: int
    node: int
    separation: float
    next_diameter: float


def _require_points(X: FinitePointSet) -> None:
    if len(X) < 2:
        raise MetricError("invariants need at least two points")


def uniform_perfectness_constant(X: FinitePointSet, scale_floor: float = 0.0) -> UpResult:
    """Least c with a point in every annulus r/c <= d(x, .) < r, nn(x) < r < diam X.

    ``scale_floor`` additionally drops radii at or below a global resolution
    scale (the cylinder size of an attractor sample).
    """
    _require_points(X)
    d = X.distance_matrix()
    diam = X.cached_diameter
    cut = scale_floor * (1 + 1e-9)
    best = UpResult(1.0, 0, diam)
    for i in range(len(X)):
        row = np.sort(np.delete(d[i], i))
        ratios = np.where(row[1:] > cut, row[1:] / row[:-1], 0.0)
        if len(ratios):
            j = int(np.argmax(ratios))
            if ratios[j] > best.constant:
                best = UpResult(float(ratios[j]), i, float(row[j + 1]))
        tail = diam / row[-1]
        if tail > best.constant:
            best = UpResult(float(tail), i, diam)
    return best


def _top_of_run(dg: Dendrogram, v: int) -> int:
    """Highest ancestor of ``v`` created at the same height as ``v``."""
    h = dg.nodes[v].height
    while dg.parent[v] >= 0 and _same_height(dg.nodes[int(dg.parent[v])].height, h):
        v = int(dg.parent[v])
    return v


def ud_from_dendrogram(dg: Dendrogram) -> UdResult:
    best = None
    for v in range(len(dg.nodes) - 1):
        p = int(dg.parent[v])
        if v >= dg.n_leaves and _same_height(dg.nodes[v].height, dg.nodes[p].height):
            continue
        top = _top_of_run(dg, p)
        sep = dg.nodes[p].height
        ratio = dg.nodes[top].diam / sep
        if best is None or ratio > best.constant:
            best = UdResult(ratio, dg.nodes[v].min_leaf, v, sep, dg.nodes[top].diam)
    assert best is not None
    best.constant = max(best.constant, 1.0)
    return best


def uniform_disconnectedness_constant(X: FinitePointSet) -> UdResult:
    _require_points(X)
    return ud_from_dendrogram(single_linkage_dendrogram(X))


def ud_by_chains(X: FinitePointSet) -> float:
    """Same constant, evaluated leaf by leaf along ``component_chain``."""
    dg = single_linkage_dendrogram(X)
    best = 1.0
    for x in range(len(X)):
        chain = component_chain(dg, x)
        for cur, nxt in zip(chain, chain[1:]):
            best = max(best, nxt.diameter / cur.separation)
    return best


def brute_force_ud_oracle(X: FinitePointSet) -> float:
    """Exhaustive search over every subset E containing each point."""
    _require_points(X)
    n = len(X)
    if n > BRUTE_FORCE_LIMIT:
        raise MetricError(f"brute force oracle limited to {BRUTE_FORCE_LIMIT} points, got {n}")
    d = X.distance_matrix()
    diam_x = float(d.max())
    subsets = []
    for mask in range(1, 2 ** n - 1):
        members = [i for i in range(n) if mask >> i & 1]
        inside = np.array(members)
        outside = np.array([i for i in range(n) if not mask >> i & 1])
        sub_diam = float(d[np.ix_(inside, inside)].max())
        sep = float(d[np.ix_(inside, outside)].min())
        subsets.append((mask, sub_diam, sep))
    best = 1.0
    for x in range(n):
        cand = sorted((sd, sep) for mask, sd, sep in subsets if mask >> x & 1)
        radii = sorted({sd for sd, _ in cand if sd < diam_x} | {diam_x})
        best_sep, k = 0.0, 0
        for lo, hi in zip(radii, radii[1:]):
            while k < len(cand) and cand[k][0] <= lo:
                best_sep = max(best_sep, cand[k][1])
                k += 1
            best = max(best, hi / best_sep)
    return best


class DistortionFunction:
    """Increasing piecewise-linear gauge with eta(0) = 0, extended linearly past its last knot."""

    def __init__(self, t, values):
        t = np.asarray(t, dtype=float)
        v = np.asarray(values, dtype=float)
        if t[0] != 0.0:
            t, v = np.concatenate([[0.0], t]), np.concatenate([[0.0], v])
        if v[0] != 0.0:
            raise ValueError("a distortion function must vanish at 0")
        if len(t) < 2 or np.any(np.diff(t) <= 0) or np.any(np.diff(v) <= 0):
            raise ValueError("knots and values must be strictly increasing")
        self.t, self.v = t, v

    @classmethod
    def identity(cls, upto: float = 10.0, knots: int = 11) -> "DistortionFunction":
        t = np.linspace(0.0, upto, knots)
        return cls(t, t)

    @staticmethod
    def _interp(x, xs, ys):
        x = np.asarray(x, dtype=float)
        out = np.interp(x, xs, ys)
        slope = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
        return np.where(x > xs[-1], ys[-1] + slope * (x - xs[-1]), out)

    def __call__(self, x):
        return self._interp(x, self.t, self.v)

    def inverse(self, y):
        return self._interp(y, self.v, self.t)

    def theta(self) -> "DistortionFunction":
        """t -> 1 / eta^{-1}(1/t), the gauge of the inverse map, exact on knots."""
        pos = self.t > 0
        return DistortionFunction(np.sort(1.0 / self.v[pos]), np.sort(1.0 / self.t[pos]))

    def psi(self) -> "DistortionFunction":
        """t -> 1 / theta(1/t)."""
        th = self.theta()
        pos = th.t > 0
        return DistortionFunction(np.sort(1.0 / th.t[pos]), np.sort(1.0 / th.v[pos]))

    def samples(self) -> list[tuple[float, float]]:
        return list(zip(self.t.tolist(), self.v.tolist()))


@dataclass
class QssWitness:
    word: Word
    inverse_map: Similarity
    r0: float
    eta: DistortionFunction = field(repr=False)

    @property
    def is_identity(self) -> bool:
        return len(self.word) == 0


def _locate(approx: AttractorApproximation, x) -> int:
    if isinstance(x, (int, np.integer)):
        if not 0 <= x < len(approx):
            raise MetricError(f"representative index {x} out of range")
        return int(x)
    p = np.asarray(getattr(x, "coords", x), dtype=float).reshape(-1)
    dist = np.linalg.norm(approx.points - p, axis=1)
    i = int(np.argmin(dist))
    if dist[i] > 1e-9 * max(1.0, approx.base_diameter):
        raise MetricError("point is not a representative of the attractor approximation")
    return i


def qss_witness(approx: AttractorApproximation, x, r: float) -> QssWitness:
    """Similarity phi = phi_w^{-1} blowing the cylinder X_w around x up to all of X.

    w is the shortest prefix of x's address with diam X_w < r, which puts X_w
    inside the open ball B(x, r); phi maps it onto X, so r0 = diam X.
    """
    if not r > 0:
        raise ValueError("radius must be positive")
    i = _locate(approx, x)
    eta = DistortionFunction.identity()
    system = approx.system
    if r >= approx.base_diameter:
        return QssWitness((), Similarity.identity(system.dim), approx.base_diameter, eta)
    address = tuple(int(a) for a in approx.words[i])
    for k in range(1, len(address) + 1):
        w = address[:k]
        if approx.cylinder_diameter(w) < r:
            return QssWitness(w, system.word_map(w).inverse(), approx.base_diameter, eta)
    raise MetricError(f"radius {r} is below the resolution of the depth-{approx.depth} approximation")


@dataclass
class CantorCode:
    addresses: list[str]
    images: np.ndarray
    distortion_ratios: np.ndarray = field(repr=False)
    distortion_images: np.ndarray = field(repr=False)

    def empirical_eta(self, bins: int = 20) -> list[tuple[float, float]]:
        """Upper envelope of image ratio against source ratio, on log-spaced bins."""
        src, img = self.distortion_ratios, self.distortion_images
        if len(src) == 0:
            return []
        edges = np.geomspace(src.min(), src.max() * (1 + 1e-12), bins + 1)
        out, running = [], 0.0
        for hi in edges[1:]:
            sel = src <= hi
            if sel.any():
                running = max(running, float(img[sel].max()))
            out.append((float(hi), running))
        return out


def _addresses(dg: Dendrogram) -> list[str]:
    addr = [""] * dg.n_leaves
    stack = [(dg.root, "")]
    while stack:
        v, prefix = stack.pop()
        node = dg.nodes[v]
        if not node.children:
            addr[v] = prefix
            continue
        kids = sorted(node.children, key=lambda c: dg.nodes[c].min_leaf)
        for bit, c in enumerate(kids):
            stack.append((c, prefix + str(bit)))
    return addr


def cantor_code(X: FinitePointSet, triples: int = 2000, seed: int = 0) -> CantorCode:
    """Binary addresses from the single-linkage tree, sent to sum 2 b_i 3^{-i}.

    Simultaneous merges are already separate binary nodes ordered by minimal leaf
    index, which makes multi-way merges into caterpillars.
    """
    _require_points(X)
    dg = single_linkage_dendrogram(X)
    addr = _addresses(dg)
    images = np.array([sum(2 * int(b) * 3.0 ** -(k + 1) for k, b in enumerate(a)) for a in addr])
    d = X.distance_matrix()
    rng = np.random.default_rng(seed)
    n = len(X)
    src, img = [], []
    if n >= 3:
        for _ in range(triples):
            x, a, b = rng.choice(n, 3, replace=False)
            src.append(d[x, a] / d[x, b])
            img.append(abs(images[x] - images[a]) / abs(images[x] - images[b]))
    return CantorCode(addr, images, np.array(src), np.array(img))


@dataclass
class InvariantReport:
    up: float
    ud: float
    up_witness: dict
    ud_witness: dict
    depth: int | None
    r_min: float
    diam: float
    n_points: int

    def to_dict(self) -> dict:
        return {"up": self.up, "ud": self.ud,
                "witnesses": {"up": self.up_witness, "ud": self.ud_witness},
                "depth": self.depth, "r_min": self.r_min, "diam": self.diam,
                "n_points": self.n_points}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def invariant_report(X: FinitePointSet, depth: int | None = None, scale_floor: float = 0.0) -> InvariantReport:
    up = uniform_perfectness_constant(X, scale_floor)
    ud = uniform_disconnectedness_constant(X)
    d = X.distance_matrix()
    r_min = float(np.where(np.eye(len(d), dtype=bool), np.inf, d).min())
    return InvariantReport(up.constant, ud.constant, asdict(up), asdict(ud), depth,
                           max(r_min, scale_floor), X.cached_diameter, len(X))


def attractor_sample(system: IfsSystem, depth: int) -> tuple[FinitePointSet, float]:
    """Fixed-point images at ``depth`` and their resolution (largest cylinder diameter)."""
    pts = fixed_point_sample(system, depth)
    floor = system.max_scale ** depth * attractor_diameter(system).value
    return FinitePointSet(pts), floor


def attractor_report(system: IfsSystem, depth: int) -> InvariantReport:
    X, floor = attractor_sample(system, depth)
    return invariant_report(X, depth, floor)
