"""Antoine chains of round solid tori and the interleaved ball/torus IFS.

The reference torus T has its core circle of radius R in the xy-plane around
the origin and tube radius rho, with R + rho < 1 so that T sits in the unit
ball.  Link j is the image of T under x -> c_j + s Q_j x, where c_j lies on the
core of T at angle 2 pi j / n and Q_j turns the axis of T by j * beta about the
local tangent of the core (beta = pi floor(n/2) / n, a quarter turn for even
n), so consecutive links sit in nearly perpendicular planes through the core.
Link j is centred on the core of T, so each link passes through the holes of
its two neighbours once s R exceeds half the distance between centres.

Every link is a scaled copy of T, so its outer radius s (R + rho) must fit in
the tube of T while its hole must still admit the neighbouring link.  Chains
with few links cannot satisfy both; ``build_chain`` reports the violations.
"""

from __future__ import annotations

import functools
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .ifs import IfsSystem, RoundBall, Similarity, Word, all_words, balls_pairwise_disjoint
from .linking import PolyCurve, circle_curve, linking_number

CORE_VERTICES = 64
MAX_WORDS = 5_000_000


class NecklaceError(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


@dataclass(frozen=True)
class SolidTorus:
    center: np.ndarray
    normal: np.ndarray
    radius: float
    tube: float

    def __post_init__(self):
        if not 0 < self.tube < self.radius:
            raise ValueError("a round solid torus needs 0 < tube < radius")

    def core(self, n_vertices: int = CORE_VERTICES) -> PolyCurve:
        return circle_curve(self.center, self.normal, self.radius, n_vertices)

    def image(self, phi: Similarity) -> "SolidTorus":
        return SolidTorus(phi(self.center), phi.rotation @ self.normal, phi.scale * self.radius,
                          phi.scale * self.tube)

    def distance_to_core(self, points: np.ndarray) -> np.ndarray:
        v = np.atleast_2d(points) - self.center
        nrm = self.normal / np.linalg.norm(self.normal)
        h = v @ nrm
        planar = np.linalg.norm(v - np.outer(h, nrm), axis=1)
        return np.hypot(h, planar - self.radius)

    def core_points(self, m: int = 720) -> np.ndarray:
        return self.core(m).vertices


def _frame(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    nrm = normal / np.linalg.norm(normal)
    a = np.cross(nrm, [1.0, 0.0, 0.0])
    if np.linalg.norm(a) < 1e-6:
        a = np.cross(nrm, [0.0, 1.0, 0.0])
    a /= np.linalg.norm(a)
    return a, np.cross(nrm, a)


def core_distance(t1: SolidTorus, t2: SolidTorus, samples: int = 720, refine: bool = True) -> float:
    """Minimal distance between the two core circles (sampled, then refined)."""
    a, b = _frame(t1.normal)

    def point(theta):
        return t1.center + t1.radius * (np.cos(theta)[..., None] * a + np.sin(theta)[..., None] * b)

    theta = np.linspace(0, 2 * math.pi, samples, endpoint=False)
    dist = t2.distance_to_core(point(theta))
    best = float(dist.min())
    if not refine:
        return best
    step = 2 * math.pi / samples
    for k in np.argsort(dist)[:4]:
        res = minimize_scalar(lambda th: float(t2.distance_to_core(point(np.array([th])))[0]),
                              bounds=(theta[k] - step, theta[k] + step), method="bounded",
                              options={"xatol": 1e-12})
        best = min(best, float(res.fun))
    return best


def _rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass
class ChainGeometry:
    n: int
    core_radius: float
    tube: float
    link_scale: float
    ball_radius: float

    @property
    def twist(self) -> float:
        return math.pi * (self.n // 2) / self.n

    def frames(self) -> list[tuple[np.ndarray, np.ndarray]]:
        out = []
        for j in range(self.n):
            theta = 2 * math.pi * j / self.n
            rot = _rot_z(theta) @ _rot_y(j * self.twist)
            center = self.core_radius * np.array([math.cos(theta), math.sin(theta), 0.0])
            out.append((center, rot))
        return out


@dataclass
class NecklaceSystem:
    geometry: ChainGeometry
    torus: SolidTorus
    torus_maps: list[Similarity]
    ball_maps: list[Similarity]
    margins: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.geometry.n

    def torus_system(self) -> IfsSystem:
        return IfsSystem(list(self.torus_maps), label=f"necklace_tori({self.n})")

    def ball_system(self) -> IfsSystem:
        return IfsSystem(list(self.ball_maps), RoundBall(np.zeros(3), 1.0), label=f"necklace_balls({self.n})")

    def links(self) -> list[SolidTorus]:
        return [self.torus.image(m) for m in self.torus_maps]

    def to_json(self) -> str:
        g = self.geometry
        return json.dumps({"n": g.n, "core_radius": g.core_radius, "tube": g.tube,
                           "link_scale": g.link_scale, "ball_radius": g.ball_radius,
                           "torus_maps": [m.to_dict() for m in self.torus_maps],
                           "ball_maps": [m.to_dict() for m in self.ball_maps],
                           "margins": self.margins})


def _pairs(n: int):
    # for even n link j+2 is a rotated copy of link j, so pairs starting at 0 or 1 suffice
    firsts = (0, 1) if n % 2 == 0 else range(n)
    return [(i, j) for i in firsts for j in range(i + 1, n)]


def chain_margins(g: ChainGeometry, check_links: bool = True, refine: bool = True) -> dict:
    """Signed margins of every chain requirement; all must be positive."""
    T = SolidTorus(np.zeros(3), np.array([0.0, 0.0, 1.0]), g.core_radius, g.tube)
    frames = g.frames()
    maps = [Similarity(g.link_scale, rot, c) for c, rot in frames]
    links = [T.image(m) for m in maps]
    link_tube = g.link_scale * g.tube
    margins = {"in_unit_ball": 1.0 - (g.core_radius + g.tube),
               "tube_ratio": g.tube - 1e-9}
    margins["link_inside_T"] = min(g.tube - link_tube - float(T.distance_to_core(L.core_points()).max())
                                   for L in links)
    sep = math.inf
    for i, j in _pairs(g.n):
        if np.linalg.norm(links[i].center - links[j].center) > 2 * links[i].radius + 2 * link_tube + 1e-3:
            continue
        sep = min(sep, core_distance(links[i], links[j], 360, refine) - 2 * link_tube)
    margins["links_disjoint"] = sep
    centers = np.array([c for c, _ in frames])
    ok, gap = balls_pairwise_disjoint(centers, np.full(g.n, g.ball_radius))
    margins["balls_disjoint"] = gap
    margins["balls_inside_T"] = g.tube - g.ball_radius
    if check_links:
        bad = 0
        for i, j in _pairs(g.n):
            lk = linking_number(links[i].core(), links[j].core())
            adjacent = (j - i) % g.n in (1, g.n - 1)
            bad += (abs(lk) != 1) if adjacent else (lk != 0)
        margins["chain_linking"] = 1.0 if bad == 0 else -float(bad)
    return margins


def _score(n: int, aspect: float, s: float, outer: float) -> tuple[float, ChainGeometry]:
    R = outer / (1 + aspect)
    rho = aspect * R
    g = ChainGeometry(n, R, rho, s, 0.8 * min(rho, R * math.sin(math.pi / n)))
    if not (0 < aspect < 1 and 0 < s < 1):
        return -math.inf, g
    m = chain_margins(g, check_links=False, refine=False)
    return min(m["link_inside_T"] / rho, m["links_disjoint"] / (s * rho)), g


@functools.lru_cache(maxsize=None)
def default_geometry(n: int, outer: float = 0.9) -> ChainGeometry:
    """Proportions maximising the smallest relative chain margin (T fills radius ``outer``).

    A coarse grid over (tube / core radius, link scale) is polished by Nelder-Mead.
    """
    best, best_x = -math.inf, None
    for aspect in np.linspace(0.2, 0.7, 26):
        for s in np.linspace(0.02, 0.6, 59):
            if s * outer / (1 + aspect) <= outer / (1 + aspect) * math.sin(math.pi / n):
                continue  # too small to reach through the neighbouring hole
            score, _ = _score(n, aspect, s, outer)
            if score > best:
                best, best_x = score, (aspect, s)
    assert best_x is not None
    res = minimize(lambda x: -_score(n, x[0], x[1], outer)[0], best_x, method="Nelder-Mead",
                   options={"xatol": 1e-5, "fatol": 1e-7, "maxiter": 300})
    x = res.x if -res.fun > best else best_x
    return _score(n, x[0], x[1], outer)[1]


def build_chain(n: int, core_radius: float | None = None, tube: float | None = None,
                link_scale: float | None = None, ball_radius: float | None = None) -> NecklaceSystem:
    if n < 4:
        raise NecklaceError([f"n = {n}: a chain needs at least 4 links"])
    if None in (core_radius, tube, link_scale):
        g = default_geometry(n)
        core_radius = g.core_radius if core_radius is None else core_radius
        tube = g.tube if tube is None else tube
        link_scale = g.link_scale if link_scale is None else link_scale
    if ball_radius is None:
        ball_radius = 0.8 * min(tube, core_radius * math.sin(math.pi / n))
    g = ChainGeometry(n, float(core_radius), float(tube), float(link_scale), float(ball_radius))
    if not 0 < g.tube < g.core_radius:
        raise NecklaceError([f"tube {g.tube} must lie in (0, core radius {g.core_radius})"])
    margins = chain_margins(g)
    bad = [f"{k} (margin {v:.4g})" for k, v in margins.items() if not v > 0]
    if bad:
        raise NecklaceError(bad)
    T = SolidTorus(np.zeros(3), np.array([0.0, 0.0, 1.0]), g.core_radius, g.tube)
    frames = g.frames()
    torus_maps = [Similarity(g.link_scale, rot, c) for c, rot in frames]
    ball_maps = [Similarity(g.ball_radius, rot, c) for c, rot in frames]
    return NecklaceSystem(g, T, torus_maps, ball_maps, margins)


def minimal_chain_size(n_max: int = 40) -> int | None:
    """Smallest even n whose default proportions validate."""
    for n in range(4, n_max + 1, 2):
        try:
            build_chain(n)
            return n
        except NecklaceError:
            continue
    return None


# ---------------------------------------------------------------- interleaving


def is_ball_level(level: int) -> bool:
    """Level 1 and every power of two use the ball maps."""
    return level >= 1 and level & (level - 1) == 0


def ball_levels(depth: int) -> list[int]:
    return [k for k in range(1, depth + 1) if is_ball_level(k)]


def word_similarity(sys: NecklaceSystem, w: Word) -> Similarity:
    out = Similarity.identity(3)
    for level, letter in enumerate(w, start=1):
        maps = sys.ball_maps if is_ball_level(level) else sys.torus_maps
        out = out.compose(maps[letter - 1])
    return out


@dataclass
class InterleavedAttractor:
    system: NecklaceSystem
    depth: int
    words: np.ndarray
    points: np.ndarray
    ball_level_flags: list[bool]

    def similarity(self, w: Word) -> Similarity:
        return word_similarity(self.system, w)

    def core_curve(self, w: Word) -> PolyCurve:
        if len(w) == 0 or is_ball_level(len(w)):
            raise ValueError(f"level {len(w)} is a ball level; no core curve")
        phi = self.similarity(w)
        return self.system.torus.core().transformed(phi.linear, phi.translation)


def interleaved_points(sys: NecklaceSystem, depth: int, base=None) -> np.ndarray:
    """psi_w(p) for every word of length ``depth``, lexicographic order."""
    p = np.array([sys.geometry.core_radius, 0.0, 0.0]) if base is None else np.asarray(base, dtype=float)
    pts = np.atleast_2d(p)
    for level in range(depth, 0, -1):
        maps = sys.ball_maps if is_ball_level(level) else sys.torus_maps
        pts = np.concatenate([m(pts) for m in maps])
    return pts


def interleaved_attractor(sys: NecklaceSystem, depth: int, base=None) -> InterleavedAttractor:
    if depth < 1:
        raise ValueError("depth must be at least 1")
    if sys.n ** depth > MAX_WORDS:
        raise ValueError(f"{sys.n}^{depth} words exceeds the limit {MAX_WORDS}")
    pts = interleaved_points(sys, depth, base)
    return InterleavedAttractor(sys, depth, all_words(sys.n, depth), pts,
                                [is_ball_level(k) for k in range(1, depth + 1)])


def level_balls(sys: NecklaceSystem, level: int) -> tuple[np.ndarray, np.ndarray]:
    """Centres and radii of psi_w(closed unit ball) for all words of length ``level``."""
    centers = interleaved_points(sys, level, np.zeros(3))
    radius = 1.0
    for k in range(1, level + 1):
        radius *= sys.geometry.ball_radius if is_ball_level(k) else sys.geometry.link_scale
    return centers, np.full(len(centers), radius)


def check_ball_levels(sys: NecklaceSystem, depth: int) -> dict[int, float]:
    """Minimal gap between cylinder balls at each ball level up to ``depth``."""
    out = {}
    for level in ball_levels(depth):
        if not is_ball_level(level):
            continue
        c, r = level_balls(sys, level)
        out[level] = balls_pairwise_disjoint(c, r)[1]
    return out


@dataclass
class LinkEntry:
    words: tuple[Word, Word]
    linking: int
    reason: str


@dataclass
class LinkReport:
    entries: list[LinkEntry]

    @property
    def consistent(self) -> bool:
        return all(e.reason != "unexpected" for e in self.entries)

    def matrix(self, n: int) -> np.ndarray:
        m = np.zeros((n, n), dtype=int)
        for e in self.entries:
            i, j = e.words[0][-1] - 1, e.words[1][-1] - 1
            m[i, j] = m[j, i] = e.linking
        return m

    def to_json(self) -> str:
        return json.dumps({"entries": [{"words": [list(w) for w in e.words], "linking": e.linking,
                                        "reason": e.reason} for e in self.entries],
                           "consistent": self.consistent})


def link_report(sys: NecklaceSystem, parent: Word) -> LinkReport:
    """Linking numbers between the core curves of the children of ``parent``."""
    level = len(parent) + 1
    if is_ball_level(level):
        raise ValueError(f"children of a length-{len(parent)} word sit at ball level {level}")
    children = [tuple(parent) + (i,) for i in range(1, sys.n + 1)]
    phis = [word_similarity(sys, w) for w in children]
    core = sys.torus.core()
    curves = [core.transformed(p.linear, p.translation) for p in phis]
    entries = []
    for i, j in itertools.combinations(range(sys.n), 2):
        lk = linking_number(curves[i], curves[j])
        adjacent = (j - i) % sys.n in (1, sys.n - 1)
        expected = abs(lk) == 1 if adjacent else lk == 0
        reason = ("linked neighbours" if adjacent else "unlinked") if expected else "unexpected"
        entries.append(LinkEntry((children[i], children[j]), lk, reason))
    return LinkReport(entries)


def separated_pair(sys: NecklaceSystem, w1: Word, w2: Word) -> LinkEntry:
    """Two torus-level cylinders whose words first differ at a ball level lie in disjoint balls."""
    if len(w1) != len(w2) or w1 == w2:
        raise ValueError("need two distinct words of equal length")
    k = next(i for i, (a, b) in enumerate(zip(w1, w2)) if a != b) + 1
    if not is_ball_level(k):
        raise ValueError(f"words first differ at torus level {k}")
    b1, b2 = word_similarity(sys, w1[:k]), word_similarity(sys, w2[:k])
    gap = float(np.linalg.norm(b1.translation - b2.translation)) - b1.scale - b2.scale
    c1 = sys.torus.core().transformed(*_lin(word_similarity(sys, w1)))
    c2 = sys.torus.core().transformed(*_lin(word_similarity(sys, w2)))
    lk = linking_number(c1, c2)
    reason = "unlinked by ball separation" if gap > 0 and lk == 0 else "unexpected"
    return LinkEntry((tuple(w1), tuple(w2)), lk, reason)


def _lin(phi: Similarity):
    return phi.linear, phi.translation


def torus_mesh_ply(torus: SolidTorus, path, nu: int = 48, nv: int = 16) -> None:
    a, b = _frame(torus.normal)
    nrm = torus.normal / np.linalg.norm(torus.normal)
    verts = []
    for i in range(nu):
        u = 2 * math.pi * i / nu
        radial = math.cos(u) * a + math.sin(u) * b
        for j in range(nv):
            v = 2 * math.pi * j / nv
            verts.append(torus.center + (torus.radius + torus.tube * math.cos(v)) * radial
                         + torus.tube * math.sin(v) * nrm)
    faces = []
    for i in range(nu):
        for j in range(nv):
            p = i * nv + j
            q = ((i + 1) % nu) * nv + j
            r = ((i + 1) % nu) * nv + (j + 1) % nv
            s = i * nv + (j + 1) % nv
            faces.append((p, q, r, s))
    with open(path, "w") as fh:
        fh.write(f"ply\nformat ascii 1.0\nelement vertex {len(verts)}\nproperty float x\n"
                 f"property float y\nproperty float z\nelement face {len(faces)}\n"
                 "property list uchar int vertex_indices\nend_header\n")
        for v in verts:
            fh.write(f"{v[0]:.6f} {v[1]:.6f} {v[2]:.6f}\n")
        for f in faces:
            fh.write(f"4 {' '.join(map(str, f))}\n")


def interleaved_invariants(sys: NecklaceSystem, depth: int, base=None) -> dict:
    """Exact UP (KD-tree sweep) and UD (level-by-level single linkage) of the depth-k point set."""
    from .scalable import hierarchical_ud, up_constant_tree

    p = np.array([sys.geometry.core_radius, 0.0, 0.0]) if base is None else np.asarray(base, dtype=float)
    level_maps = [sys.ball_maps if is_ball_level(k) else sys.torus_maps for k in range(1, depth + 1)]
    pts = interleaved_points(sys, depth, p)
    up = up_constant_tree(pts)
    return {"depth": depth, "n_points": int(len(pts)), "up": up.constant, "ud": hierarchical_ud(level_maps, p)}
