"""Iterated function systems of contracting similarities and their attractors."""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .metric_core import FinitePointSet, MetricKind

Word = tuple[int, ...]


class IfsError(ValueError):
    pass


@dataclass(frozen=True)
class Similarity:
    """x -> scale * rotation @ x + translation, with ``rotation`` orthogonal."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=float, ndmin=2)
        tr = np.array(self.translation, dtype=float).reshape(-1)
        if rot.shape != (len(tr), len(tr)):
            raise IfsError(f"rotation shape {rot.shape} does not match translation of length {len(tr)}")
        if not self.scale > 0:
            raise IfsError("similarity scale must be positive")
        if not np.allclose(rot @ rot.T, np.eye(len(tr)), atol=1e-10):
            raise IfsError("rotation is not orthogonal")
        rot.setflags(write=False)
        tr.setflags(write=False)
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tr)

    @classmethod
    def identity(cls, dim: int) -> "Similarity":
        return cls(1.0, np.eye(dim), np.zeros(dim))

    @classmethod
    def scaling(cls, factor: float, dim: int, center=None) -> "Similarity":
        c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
        return cls(factor, np.eye(dim), c - factor * c)

    @classmethod
    def translation_by(cls, vector) -> "Similarity":
        v = np.asarray(vector, dtype=float)
        return cls(1.0, np.eye(len(v)), v)

    @property
    def dim(self) -> int:
        return len(self.translation)

    @property
    def orientation(self) -> int:
        return 1 if np.linalg.det(self.rotation) > 0 else -1

    @property
    def linear(self) -> np.ndarray:
        return self.scale * self.rotation

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x @ self.linear.T + self.translation

    def compose(self, inner: "Similarity") -> "Similarity":
        """self o inner."""
        return Similarity(self.scale * inner.scale, self.rotation @ inner.rotation,
                          self.linear @ inner.translation + self.translation)

    def inverse(self) -> "Similarity":
        rt = self.rotation.T
        return Similarity(1.0 / self.scale, rt, -(rt @ self.translation) / self.scale)

    def fixed_point(self) -> np.ndarray:
        if self.scale == 1.0 and np.allclose(self.rotation, np.eye(self.dim)):
            raise IfsError("a translation has no fixed point")
        return np.linalg.solve(np.eye(self.dim) - self.linear, self.translation)

    def to_dict(self) -> dict:
        return {"scale": self.scale, "rotation": self.rotation.reshape(-1).tolist(),
                "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Similarity":
        t = np.asarray(data["translation"], dtype=float)
        return cls(data["scale"], np.asarray(data["rotation"], dtype=float).reshape(len(t), len(t)), t)


@dataclass(frozen=True)
class RoundBall:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.array(self.center, dtype=float).reshape(-1)
        if not self.radius > 0:
            raise IfsError("ball radius must be positive")
        c.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))

    def image(self, phi: Similarity) -> "RoundBall":
        return RoundBall(phi(self.center), phi.scale * self.radius)

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "radius": self.radius}


@dataclass
class OscCheck:
    passed: bool
    containment: list[float]
    separation: dict[tuple[int, int], float]

    @property
    def min_margin(self) -> float:
        return min([*self.containment, *self.separation.values()])


def check_strong_ball_osc(maps: Sequence[Similarity] | "IfsSystem", ball: RoundBall) -> OscCheck:
    """Signed margins for phi_i(closed ball) inside the open ball and pairwise disjoint.

    Containment margin of map i is radius - (|phi_i(c) - c| + s_i radius); the
    separation margin of (i, j) is |phi_i(c) - phi_j(c)| - (s_i + s_j) radius.
    Both must be strictly positive.
    """
    if isinstance(maps, IfsSystem):
        maps = maps.maps
    images = [ball.image(m) for m in maps]
    contain = [ball.radius - (float(np.linalg.norm(im.center - ball.center)) + im.radius) for im in images]
    sep = {}
    for i, j in itertools.combinations(range(len(images)), 2):
        gap = float(np.linalg.norm(images[i].center - images[j].center))
        sep[(i + 1, j + 1)] = gap - images[i].radius - images[j].radius
    ok = all(m > 0 for m in contain) and all(m > 0 for m in sep.values())
    return OscCheck(ok, contain, sep)


@dataclass
class IfsSystem:
    maps: list[Similarity]
    osc_ball: RoundBall | None = None
    label: str = ""

    def __post_init__(self):
        if not self.maps:
            raise IfsError("an IFS needs at least one map")
        dims = {m.dim for m in self.maps}
        if len(dims) != 1:
            raise IfsError(f"maps of mixed dimensions {sorted(dims)}")
        bad = [i + 1 for i, m in enumerate(self.maps) if not m.scale < 1]
        if bad:
            raise IfsError(f"maps {bad} are not contractions")
        if self.osc_ball is not None:
            chk = check_strong_ball_osc(self.maps, self.osc_ball)
            if not chk.passed:
                raise IfsError(f"strong ball open set condition fails (min margin {chk.min_margin:.3g})")

    @property
    def dim(self) -> int:
        return self.maps[0].dim

    @property
    def n_maps(self) -> int:
        return len(self.maps)

    @property
    def max_scale(self) -> float:
        return max(m.scale for m in self.maps)

    def word_map(self, w: Word) -> Similarity:
        """phi_w = phi_{w1} o ... o phi_{wk}; the empty word gives the identity."""
        out = Similarity.identity(self.dim)
        for letter in w:
            out = out.compose(self.maps[self._letter(letter)])
        return out

    def word_scale(self, w: Word) -> float:
        return math.prod(self.maps[self._letter(a)].scale for a in w)

    def _letter(self, a: int) -> int:
        if not 1 <= a <= self.n_maps:
            raise IfsError(f"letter {a} outside alphabet 1..{self.n_maps}")
        return a - 1

    def fixed_points(self) -> np.ndarray:
        return np.array([m.fixed_point() for m in self.maps])

    def to_json(self) -> str:
        return json.dumps({"label": self.label, "dim": self.dim,
                           "maps": [m.to_dict() for m in self.maps],
                           "osc_ball": None if self.osc_ball is None else self.osc_ball.to_dict()})

    @classmethod
    def from_json(cls, text: str) -> "IfsSystem":
        data = json.loads(text)
        ball = data.get("osc_ball")
        return cls([Similarity.from_dict(m) for m in data["maps"]],
                   None if ball is None else RoundBall(ball["center"], ball["radius"]),
                   data.get("label", ""))


def _embed_1d(scale: float, offset: float) -> Similarity:
    return Similarity(scale, np.eye(1), np.array([offset]))


def standard_system(name: str, **params) -> IfsSystem:
    """Named systems: middle_third, epsilon_family(eps), c_n(n), necklace_balls(n), necklace_tori(n)."""
    if name == "middle_third":
        return IfsSystem([_embed_1d(1 / 3, 0.0), _embed_1d(1 / 3, 2 / 3)], label="middle_third")
    if name == "epsilon_family":
        eps = float(params["eps"])
        if not 0 < eps < 0.5:
            raise IfsError(f"epsilon must lie in (0, 1/2), got {eps}")
        s = (1 - eps) / 2
        return IfsSystem([_embed_1d(s, 0.0), _embed_1d(s, (1 + eps) / 2)], label=f"epsilon_family({eps:g})")
    if name == "c_n":
        n = int(params["n"])
        if n < 2:
            raise IfsError("C_n needs n >= 2")
        s = 1.0 / (2 * n - 1)
        maps = [Similarity(s, np.eye(3), np.array([s * (2 * i - 2), 0.0, 0.0])) for i in range(1, n + 1)]
        return IfsSystem(maps, label=f"c_n({n})")
    if name in ("necklace_balls", "necklace_tori"):
        from .necklace import build_chain

        chain = build_chain(int(params["n"]), **{k: v for k, v in params.items() if k != "n"})
        return chain.ball_system() if name == "necklace_balls" else chain.torus_system()
    raise IfsError(f"unknown system {name!r}")


def parse_system(text: str) -> IfsSystem:
    """CLI shorthand: ``middle_third``, ``epsilon:0.125``, ``c_n:3``, ``necklace_tori:20``."""
    name, _, arg = text.partition(":")
    aliases = {"epsilon": "epsilon_family", "cn": "c_n", "middle-third": "middle_third"}
    name = aliases.get(name, name)
    if name == "epsilon_family":
        return standard_system(name, eps=float(arg))
    if name in ("c_n", "necklace_balls", "necklace_tori"):
        return standard_system(name, n=int(arg))
    return standard_system(name)


def iterate_points(system: IfsSystem, depth: int, base: np.ndarray) -> np.ndarray:
    """phi_w(p) for every word of length ``depth``, in lexicographic word order."""
    pts = np.atleast_2d(np.asarray(base, dtype=float))
    for _ in range(depth):
        pts = np.concatenate([m(pts) for m in system.maps])
    return pts


def all_words(n_letters: int, depth: int) -> np.ndarray:
    if depth == 0:
        return np.zeros((1, 0), dtype=int)
    return np.array(list(itertools.product(range(1, n_letters + 1), repeat=depth)), dtype=int)


def _affine_reduce(points: np.ndarray) -> np.ndarray:
    """Coordinates of ``points`` in their affine span (drops degenerate directions)."""
    centered = points - points.mean(axis=0)
    _, sv, vt = np.linalg.svd(centered, full_matrices=False)
    rank = int(np.sum(sv > 1e-10 * max(sv[0], 1e-300)))
    return centered @ vt[:rank].T


def hull_vertices(points: np.ndarray) -> np.ndarray:
    """Indices of a subset of ``points`` containing every convex hull vertex."""
    if len(points) <= 8:
        return np.arange(len(points))
    red = _affine_reduce(points)
    if red.shape[1] == 0:
        return np.array([0])
    if red.shape[1] == 1:
        return np.unique([np.argmin(red[:, 0]), np.argmax(red[:, 0])])
    from scipy.spatial import ConvexHull

    return np.asarray(ConvexHull(red).vertices)


def point_cloud_diameter(points: np.ndarray) -> float:
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        return 0.0
    pts = pts[hull_vertices(pts)]
    best = 0.0
    for start in range(0, len(pts), 1024):
        blk = pts[start:start + 1024]
        d2 = np.sum((blk[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
        best = max(best, float(d2.max()))
    return math.sqrt(best)


@dataclass
class DiameterEstimate:
    value: float
    error_bound: float
    exact: bool
    depth: int


def attractor_diameter(system: IfsSystem, depth: int = 6) -> DiameterEstimate:
    """diam X of the attractor.

    In 1-D with orientation-preserving maps the attractor's hull is the interval
    between the extreme fixed points, so the value is exact.  Otherwise the
    hull of the depth-``depth`` fixed-point images is iterated (only hull
    vertices are kept, which preserves the diameter) and the value carries the
    error bound 2 (max scale)^depth R, R the radius of a ball containing X.
    """
    fps = system.fixed_points()
    if system.dim == 1 and all(m.orientation > 0 for m in system.maps):
        return DiameterEstimate(float(fps.max() - fps.min()), 0.0, True, 0)
    pts = fps
    for _ in range(depth):
        pts = np.concatenate([m(pts) for m in system.maps])
        pts = pts[hull_vertices(pts)]
    value = point_cloud_diameter(pts)
    if system.osc_ball is not None:
        radius = system.osc_ball.radius
    else:
        # every point of X is within max_i |fix_i - c| + s R of c; solve for R
        c = fps.mean(axis=0)
        radius = max(float(np.linalg.norm(f - c)) for f in fps) / (1 - system.max_scale)
        radius = max(radius, 1e-300)
    err = 2 * system.max_scale ** depth * radius
    return DiameterEstimate(value, err, False, depth)


@dataclass
class AttractorApproximation:
    """Depth-k cylinder representatives phi_w(p) with exact cylinder diameters."""

    system: IfsSystem
    depth: int
    words: np.ndarray
    points: np.ndarray
    base_point: np.ndarray
    diameter: DiameterEstimate = field(repr=False)

    @property
    def base_diameter(self) -> float:
        return self.diameter.value

    def __len__(self) -> int:
        return len(self.points)

    def entries(self) -> dict[Word, np.ndarray]:
        return {tuple(int(a) for a in w): p for w, p in zip(self.words, self.points)}

    def cylinder_diameter(self, w: Word) -> float:
        return self.system.word_scale(w) * self.base_diameter

    def point_set(self, metric: MetricKind = MetricKind.EUCLIDEAN) -> FinitePointSet:
        return FinitePointSet(self.points, metric=metric)

    def prefix_indices(self, w: Word) -> np.ndarray:
        w = np.asarray(w, dtype=int)
        if len(w) == 0:
            return np.arange(len(self.points))
        return np.nonzero((self.words[:, :len(w)] == w).all(axis=1))[0]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["x", "y", "z", "inf", "word"])
            for w, p in zip(self.words, self.points):
                vals = [repr(float(v)) for v in p] + [""] * (3 - len(p))
                out.writerow([*vals, 0, "".join(str(a) if a < 10 else f"({a})" for a in w)])


def attractor(system: IfsSystem, depth: int, base_point=None, diameter_depth: int = 6) -> AttractorApproximation:
    if depth < 1:
        raise IfsError("depth must be at least 1")
    p = system.maps[0].fixed_point() if base_point is None else np.asarray(base_point, dtype=float).reshape(-1)
    if len(p) != system.dim:
        raise IfsError("base point has the wrong dimension")
    pts = iterate_points(system, depth, p)
    return AttractorApproximation(system, depth, all_words(system.n_maps, depth), pts, p,
                                  attractor_diameter(system, max(depth, diameter_depth)))


def cylinder_diameter(system: IfsSystem, w: Word, base_diameter: float | None = None) -> float:
    if base_diameter is None:
        base_diameter = attractor_diameter(system).value
    return system.word_scale(w) * base_diameter


def fixed_point_sample(system: IfsSystem, depth: int, tol: float = 1e-12) -> np.ndarray:
    """Images phi_w(fix_i) over all words of length ``depth`` and all maps i.

    Every such point lies on the attractor, and each depth-k cylinder contains
    the images of all fixed points, so in 1-D both cylinder endpoints are
    present and cylinder diameters and gaps are exact.
    """
    pts = iterate_points(system, depth, system.fixed_points())
    if len(pts) > 1:
        order = np.lexsort(pts.T[::-1])
        srt = pts[order]
        keep = np.ones(len(srt), dtype=bool)
        keep[1:] = np.linalg.norm(np.diff(srt, axis=0), axis=1) > tol
        pts = srt[keep]
    return pts


def cylinder_balls(system: IfsSystem, ball: RoundBall, depth: int) -> tuple[np.ndarray, np.ndarray]:
    centers = iterate_points(system, depth, ball.center)
    radii = np.array([ball.radius * system.word_scale(tuple(w)) for w in all_words(system.n_maps, depth)])
    return centers, radii


def balls_pairwise_disjoint(centers: np.ndarray, radii: np.ndarray) -> tuple[bool, float]:
    """Closed balls pairwise disjoint?  Returns the flag and the minimal gap."""
    from scipy.spatial import cKDTree

    centers = np.asarray(centers, dtype=float)
    radii = np.asarray(radii, dtype=float)
    if len(centers) < 2:
        return True, math.inf
    tree = cKDTree(centers)
    rmax = float(radii.max())
    best = math.inf
    for i, j in tree.query_pairs(2 * rmax + 1e-9 + 4 * rmax):
        gap = float(np.linalg.norm(centers[i] - centers[j])) - radii[i] - radii[j]
        best = min(best, gap)
    if best == math.inf:
        best = float(tree.query(centers, k=2)[0][:, 1].min() - 2 * rmax)
    return best > 0, best
