"""A hyperbolic UQR map on S^n whose Julia set is a tame Cantor set.

G = Phi o g~ where g doubles the polar angle of the first two coordinates,
g~ agrees with g away from three small balls around p0, p1, p2 and is an
exact translation on the inner balls, and Phi is the inversion in the sphere
|x - p0| = b (swapping p0 and infinity).  Points are arrays of shape (m, n)
with a boolean mask marking the point at infinity; coordinates of masked rows
are ignored.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

BOUNDARY_SPACING = 1 / 200  # boundary grid spacing as a fraction of a


class TrapConfigError(ValueError):
    def __init__(self, violations: list["Violation"]):
        super().__init__("; ".join(str(v) for v in violations))
        self.violations = violations


@dataclass
class Violation:
    name: str
    witness: list[float] | None = None
    amount: float = float("nan")

    def __str__(self):
        if self.witness is None:
            return self.name
        return f"{self.name} (worst witness {np.round(self.witness, 6).tolist()}, excess {self.amount:.3g})"


def anchors(n: int) -> np.ndarray:
    """p0, p1, p2 as rows."""
    p = np.zeros((3, n))
    p[0, 0], p[1, 1], p[2, 1] = -1.0, 1.0, -1.0
    return p


def polar_doubling(x: np.ndarray) -> np.ndarray:
    """Double the polar angle of the first two coordinates; the axis x1 = x2 = 0 is fixed."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = x.copy()
    u, v = x[:, 0], x[:, 1]
    r = np.hypot(u, v)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(r > 0, r, 1.0)
    out[:, 0] = (u * u - v * v) / scale
    out[:, 1] = 2 * u * v / scale
    return out


def polar_halving(y: np.ndarray, near: np.ndarray) -> np.ndarray:
    """The preimage of y under polar_doubling on the side of ``near`` (half-plane branch)."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    r = np.hypot(y[:, 0], y[:, 1])
    theta = np.arctan2(y[:, 1], y[:, 0]) / 2
    ref = math.atan2(near[1], near[0])
    theta = np.where(np.cos(theta - ref) < 0, theta + math.pi, theta)
    out = y.copy()
    out[:, 0], out[:, 1] = r * np.cos(theta), r * np.sin(theta)
    return out


def _sphere_points(n: int, count: int) -> np.ndarray:
    """Nearly uniform unit vectors in R^n (equally spaced circle, Fibonacci sphere)."""
    if n == 2:
        t = np.linspace(0, 2 * math.pi, count, endpoint=False)
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    k = np.arange(count) + 0.5
    z = 1 - 2 * k / count
    phi = math.pi * (1 + math.sqrt(5)) * k
    r = np.sqrt(1 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def boundary_grid(n: int, center, radius: float, spacing: float) -> np.ndarray:
    if n == 2:
        count = max(16, math.ceil(2 * math.pi * radius / spacing))
    else:
        count = max(64, math.ceil(4 * math.pi * radius ** 2 / spacing ** 2))
    return np.asarray(center) + radius * _sphere_points(n, count)


def to_sphere(x: np.ndarray, inf: np.ndarray) -> np.ndarray:
    """Stereographic lift to the unit sphere in R^(n+1); chordal distance is Euclidean there."""
    x = np.atleast_2d(x)
    s = np.sum(x * x, axis=1)
    with np.errstate(invalid="ignore", over="ignore"):
        lift = np.concatenate([2 * x, (s - 1)[:, None]], axis=1) / (s + 1)[:, None]
    north = np.zeros(x.shape[1] + 1)
    north[-1] = 1.0
    big = ~np.isfinite(s) | (s > 1e300)
    return np.where((np.asarray(inf) | big)[:, None], north, lift)


def chordal(x, xinf, y, yinf) -> np.ndarray:
    return np.linalg.norm(to_sphere(x, xinf) - to_sphere(y, yinf), axis=-1)


def chordal_matrix_min(x, xinf, y, yinf, chunk: int = 2048) -> np.ndarray:
    """For each row of x, the chordal distance to the nearest row of y."""
    from scipy.spatial import cKDTree

    tree = cKDTree(to_sphere(y, yinf))
    d, _ = tree.query(to_sphere(x, xinf), k=1)
    return d


@dataclass(frozen=True)
class TrapConfig:
    n: int
    r0: float
    a: float
    b: float

    @property
    def p(self) -> np.ndarray:
        return anchors(self.n)

    @property
    def g_p0(self) -> np.ndarray:
        q = np.zeros(self.n)
        q[0] = 1.0
        return q

    def to_dict(self) -> dict:
        return {"n": self.n, "r0": self.r0, "a": self.a, "b": self.b}


def _worst(points: np.ndarray, excess: np.ndarray, name: str) -> Violation | None:
    k = int(np.argmax(excess))
    if excess[k] >= 0:
        return Violation(name, points[k].tolist(), float(excess[k]))
    return None


def validate_config(cfg: TrapConfig, injectivity_grid: int = 60) -> list[Violation]:
    """Every violated requirement of the construction, with its worst boundary witness."""
    n, r0, a, b = cfg.n, cfg.r0, cfg.a, cfg.b
    out: list[Violation] = []
    if n not in (2, 3):
        return [Violation(f"dimension {n} not in {{2, 3}}")]
    if min(r0, a, b) <= 0:
        return [Violation("r0, a, b must be positive")]
    if not b < a / 2:
        out.append(Violation("b < a/2"))
    p = cfg.p
    h = BOUNDARY_SPACING * a
    gap = min(np.linalg.norm(p[i] - p[j]) for i in range(3) for j in range(i + 1, 3)) - 2 * a
    if gap <= 0:
        out.append(Violation("a-balls pairwise disjoint", None, -gap))
    if r0 >= 1:
        out.append(Violation("B(p0, r0) must avoid the branch axis (r0 < 1)"))
    checks = []
    for i in (1, 2):
        # (i) g(B(p_i, a)) inside B(p0, r0): check the image of the boundary sphere
        s = boundary_grid(n, p[i], a, h)
        checks.append(_worst(s, np.linalg.norm(polar_doubling(s) - p[0], axis=1) - r0, f"constraint (i) at p{i}"))
        # (ii) B(p0, b) inside g(B(p_i, a)): preimages of the b-sphere on the p_i side stay in B(p_i, a)
        s = boundary_grid(n, p[0], b, h)
        pre = polar_halving(s, p[i])
        checks.append(_worst(s, np.linalg.norm(pre - p[i], axis=1) - a, f"constraint (ii) at p{i}"))
    s = boundary_grid(n, p[0], b, h)
    checks.append(_worst(s, np.linalg.norm(polar_doubling(s) - cfg.g_p0, axis=1) - a,
                         "constraint (iii): g(B(p0,b)) in B(g(p0),a)"))
    s = boundary_grid(n, cfg.g_p0, a, h)
    pre = polar_halving(s, p[0])
    checks.append(_worst(s, np.linalg.norm(pre - p[0], axis=1) - r0, "constraint (iii): B(g(p0),a) in g(B(p0,r0))"))
    out += [c for c in checks if c is not None]
    if not out:
        comps = preimage_components(cfg)
        if comps != 2:
            out.append(Violation(f"g^-1(B(p0, r0)) has {comps} components, expected 2"))
        bad = blend_injectivity(cfg, injectivity_grid)
        if bad is not None:
            out.append(bad)
    return out


def preimage_components(cfg: TrapConfig, cells: int = 400) -> int:
    """Connected components of g^-1(B(p0, r0)) on a planar grid (the extra axes are inert)."""
    t = np.linspace(-2, 2, cells)
    xx, yy = np.meshgrid(t, t, indexing="ij")
    pts = np.zeros((cells * cells, cfg.n))
    pts[:, 0], pts[:, 1] = xx.ravel(), yy.ravel()
    inside = np.linalg.norm(polar_doubling(pts) - cfg.p[0], axis=1) < cfg.r0
    _, count = ndimage.label(inside.reshape(cells, cells))
    return int(count)


def blend_injectivity(cfg: TrapConfig, m: int = 60) -> Violation | None:
    """Positive Jacobian determinant of the annulus blend on a polar grid, for all three balls."""
    tmap = TrapMap(cfg, validated=True)
    eps = 1e-7 * cfg.a
    rho = np.linspace(cfg.b, cfg.a, m)[1:-1]
    dirs = _sphere_points(cfg.n, 8 * m if cfg.n == 2 else 12 * m * m // 4)
    for i in range(3):
        pts = (cfg.p[i] + rho[:, None, None] * dirs[None]).reshape(-1, cfg.n)
        jac = np.stack([(tmap.g_tilde(pts + eps * e) - tmap.g_tilde(pts - eps * e)) / (2 * eps)
                        for e in np.eye(cfg.n)], axis=-1)
        det = np.linalg.det(jac)
        k = int(np.argmin(det))
        if det[k] <= 0:
            return Violation(f"blend injectivity on annulus at p{i}", pts[k].tolist(), float(-det[k]))
    return None


class TrapMap:
    """G = Phi o g~ for a validated configuration."""

    def __init__(self, cfg: TrapConfig, validated: bool = False):
        if not validated:
            bad = validate_config(cfg)
            if bad:
                raise TrapConfigError(bad)
        self.cfg = cfg
        self.p = cfg.p
        # inner balls: p1, p2 translate onto p0; p0 moves onto g(p0) by a half-turn in the
        # first coordinate plane, matching the orientation of g there so the blend has no fold
        self.shift = np.stack([cfg.g_p0 - self.p[0], self.p[0] - self.p[1], self.p[0] - self.p[2]])
        self.half_turn = np.eye(cfg.n)
        self.half_turn[0, 0] = self.half_turn[1, 1] = -1.0

    def inner_map(self, i: int, x: np.ndarray) -> np.ndarray:
        if i == 0:
            return self.cfg.g_p0 + (x - self.p[0]) @ self.half_turn.T
        return x + self.shift[i]

    @property
    def n(self) -> int:
        return self.cfg.n

    def g_tilde(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = polar_doubling(x)
        a, b = self.cfg.a, self.cfg.b
        for i in range(3):
            rho = np.linalg.norm(x - self.p[i], axis=1)
            inner = rho < b
            out[inner] = self.inner_map(i, x[inner])
            ann = (rho >= b) & (rho < a)
            t = ((rho[ann] - b) / (a - b))[:, None]
            out[ann] = (1 - t) * self.inner_map(i, x[ann]) + t * out[ann]
        return out

    def phi(self, y: np.ndarray, yinf: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Inversion in the sphere |y - p0| = b, with p0 <-> infinity."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        yinf = np.asarray(yinf, dtype=bool)
        v = y - self.p[0]
        s = np.sum(v * v, axis=1)
        at_pole = (s == 0) & ~yinf
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self.p[0] + self.cfg.b ** 2 * v / s[:, None]
        out[yinf] = self.p[0]
        out[at_pole] = 0.0
        return out, at_pole

    def apply(self, x, xinf=None) -> tuple[np.ndarray, np.ndarray]:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        xinf = np.zeros(len(x), bool) if xinf is None else np.asarray(xinf, dtype=bool)
        y = self.g_tilde(np.where(xinf[:, None], 0.0, x))
        return self.phi(y, xinf)

    def apply_point(self, x) -> np.ndarray | None:
        """Single-point convenience: None stands for infinity."""
        if x is None:
            out, inf = self.apply(np.zeros((1, self.n)), np.array([True]))
        else:
            out, inf = self.apply(np.asarray(x, float)[None])
        return None if inf[0] else out[0]

    def in_trap(self, x, xinf) -> np.ndarray:
        return ~np.asarray(xinf) & (np.linalg.norm(np.atleast_2d(x) - self.p[0], axis=1) < self.cfg.b)

    def in_b_balls(self, x, xinf) -> np.ndarray:
        x = np.atleast_2d(x)
        ok = np.zeros(len(x), bool)
        for i in (1, 2):
            ok |= np.linalg.norm(x - self.p[i], axis=1) < self.cfg.b
        return ok & ~np.asarray(xinf)

    def inverse_branch(self, i: int, y, yinf=None) -> np.ndarray:
        """Phi(y) + p_i - p0, the preimage of y inside B(p_i, b)."""
        if i not in (1, 2):
            raise ValueError("branch index must be 1 or 2")
        y = np.atleast_2d(np.asarray(y, dtype=float))
        yinf = np.zeros(len(y), bool) if yinf is None else np.asarray(yinf, dtype=bool)
        closed = ~yinf & (np.linalg.norm(y - self.p[0], axis=1) <= self.cfg.b)
        if np.any(closed):
            raise ValueError("no inverse branch on the closed ball B(p0, b)")
        out, _ = self.phi(y, yinf)
        return out + self.p[i] - self.p[0]

    def branch_derivative_bound(self, y) -> np.ndarray:
        """|D branch| at y (a similarity factor: b^2 / |y - p0|^2)."""
        y = np.atleast_2d(y)
        return self.cfg.b ** 2 / np.sum((y - self.p[0]) ** 2, axis=1)

    def branch_fixed_point(self, i: int, tol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
        x = self.p[i][None].copy()
        for _ in range(max_iter):
            nxt = self.inverse_branch(i, x)
            if np.linalg.norm(nxt - x) < tol:
                return nxt[0]
            x = nxt
        return x[0]

    def to_dict(self) -> dict:
        return {"config": self.cfg.to_dict(), "branch_set": self.branch_set_description()}

    def branch_set_description(self) -> str:
        return "{0, inf}" if self.n == 2 else "{x1 = x2 = 0} u {inf}"


def build_trap_map(n: int, r0: float, a: float, b: float) -> TrapMap:
    cfg = TrapConfig(n, float(r0), float(a), float(b))
    bad = validate_config(cfg)
    if bad:
        raise TrapConfigError(bad)
    return TrapMap(cfg, validated=True)


def default_config(n: int = 2) -> TrapConfig:
    """First triple of the grid r0 in {0.2, 0.3}, a in {0.05, 0.1}, b < a/2 that validates (largest b first)."""
    for r0 in (0.3, 0.2):
        for a in (0.1, 0.05):
            for frac in (0.4, 0.3, 0.2):
                cfg = TrapConfig(n, r0, a, round(frac * a, 6))
                if not validate_config(cfg):
                    return cfg
    raise RuntimeError("no parameter triple on the default grid validates")


# ---------------------------------------------------------------- orbits


@dataclass
class OrbitRecord:
    seed: list[float] | None
    iterates: np.ndarray  # points on the unit sphere S^n (stereographic lift)
    kind: str  # "Trapped", "Persisting" or "Undecided"
    step: int

    def __str__(self):
        return f"{self.kind}({self.step})"


def classify_orbits(G: TrapMap, seeds, N: int, seeds_inf=None) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised classification: (kind codes 0 = Trapped, 1 = Persisting, 2 = Undecided, step)."""
    if N < 1:
        raise ValueError("N must be at least 1")
    x = np.atleast_2d(np.asarray(seeds, dtype=float)).copy()
    xinf = np.zeros(len(x), bool) if seeds_inf is None else np.asarray(seeds_inf, bool).copy()
    kind = np.full(len(x), 2)
    step = np.full(len(x), N)
    alive = np.ones(len(x), bool)
    persisting = np.ones(len(x), bool)
    for t in range(N + 1):
        trapped = alive & G.in_trap(x, xinf)
        kind[trapped], step[trapped] = 0, t
        alive &= ~trapped
        if t == N or not alive.any():
            break
        if t >= 1:
            persisting &= ~alive | G.in_b_balls(x, xinf)
        idx = np.nonzero(alive)[0]
        x[idx], xinf[idx] = G.apply(x[idx], xinf[idx])
    if N >= 1:
        persisting &= ~alive | G.in_b_balls(x, xinf)
    kind[alive & persisting] = 1
    return kind, step


def classify_orbit(G: TrapMap, x, N: int) -> OrbitRecord:
    """Iterate until B(p0, b) is entered, or N steps elapse."""
    if N < 1:
        raise ValueError("N must be at least 1")
    pt = np.zeros((1, G.n)) if x is None else np.asarray(x, dtype=float)[None].copy()
    inf = np.array([x is None])
    lifts = [to_sphere(pt, inf)[0]]
    kind, step = "Undecided", N
    persisting = True
    for t in range(N + 1):
        if G.in_trap(pt, inf)[0]:
            kind, step = "Trapped", t
            break
        if t >= 1 and not G.in_b_balls(pt, inf)[0]:
            persisting = False
        if t == N:
            break
        pt, inf = G.apply(pt, inf)
        lifts.append(to_sphere(pt, inf)[0])
    if kind == "Undecided" and persisting:
        kind = "Persisting"
    seed = None if x is None else [float(v) for v in np.asarray(x)]
    return OrbitRecord(seed, np.array(lifts), kind, step)


# ---------------------------------------------------------------- Julia set


@dataclass
class JuliaApproximation:
    method: str
    points: np.ndarray
    radii: np.ndarray
    resolution: float
    depth: int
    words: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.points)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("x,y,z,word,method\n")
            for k, p in enumerate(self.points):
                c = [float(v) for v in p] + [0.0] * (3 - len(p))
                w = self.words[k] if self.words else ""
                fh.write(f"{c[0]!r},{c[1]!r},{c[2]!r},{w},{self.method}\n")


def backward_orbit(G: TrapMap, depth: int, seed=None) -> JuliaApproximation:
    """All branch words of length ``depth`` applied to a Julia point (default: the branch-1 fixed point)."""
    if depth < 0:
        raise ValueError("depth must be non-negative")
    pts = np.atleast_2d(G.branch_fixed_point(1) if seed is None else np.asarray(seed, dtype=float))
    words = [""]
    for _ in range(depth):
        pts = np.concatenate([G.inverse_branch(1, pts), G.inverse_branch(2, pts)])
        words = ["1" + w for w in words] + ["2" + w for w in words]
    res = orbit_resolution(G, depth)
    return JuliaApproximation("backward_orbit", pts, np.full(len(pts), res), res, depth, words)


def orbit_resolution(G: TrapMap, depth: int) -> float:
    """A word's cylinder has diameter at most lip^depth * (diameter of the b-ball pair)."""
    lip = float(G.branch_derivative_bound(G.p[1:] + G.cfg.b * (G.p[0] - G.p[1:]) / np.sqrt(2)).max())
    return lip ** depth * (float(np.linalg.norm(G.p[1] - G.p[2])) + 2 * G.cfg.b)


def _moebius_ball_image(G: TrapMap, i: int, c: np.ndarray, r: np.ndarray):
    """Image of balls B(c, r) under x -> Phi(x - p_i + p0): a ball, or the exterior of one
    when the pole p_i lies inside (flagged by the third return value)."""
    v = c - G.p[i]
    s = np.sum(v * v, axis=1)
    denom = s - r * r
    with np.errstate(divide="ignore", invalid="ignore"):
        center = G.p[0] + G.cfg.b ** 2 * v / denom[:, None]
        radius = G.cfg.b ** 2 * r / np.abs(denom)
    return center, radius, denom <= 0


def cell_escape(G: TrapMap, h: float, N: int = 40, extra_levels: int = 3) -> JuliaApproximation:
    """Cells of circumradius <= h covering B(p1,b) u B(p2,b) that meet the Julia set.

    A cell is discarded once the exact image of its circumscribed ball under the
    branch-wise Moebius pieces of G stops meeting both inner balls (so no point
    of the cell can stay in them); the ball image contains the cell's image,
    hence no Julia point is ever discarded.  Survivors are subdivided.  Cells
    of radius <= h are kept only if a descendant ``extra_levels`` finer
    survives, which removes cells that merely border the Julia set.
    """
    n, b = G.n, G.cfg.b
    centers = np.concatenate([G.p[1:2], G.p[2:3]])
    half = np.full(2, b)  # half side of the cube cells
    offsets = np.array(np.meshgrid(*[[-0.5, 0.5]] * n, indexing="ij")).reshape(n, -1).T
    level, target, anc = 0, None, None
    while True:
        keep = _cells_survive(G, centers, half * math.sqrt(n), N)
        centers, half = centers[keep], half[keep]
        if anc is not None:
            anc = anc[keep]
        if len(centers) == 0:
            break
        if target is None and (half * math.sqrt(n)).max() <= h:
            target = (centers.copy(), half.copy(), level)
            anc = np.arange(len(centers))
            stop = level + extra_levels
        if target is not None and level >= stop:
            break
        centers = (centers[:, None, :] + offsets[None] * half[:, None, None]).reshape(-1, n)
        half = np.repeat(half / 2, len(offsets))
        if anc is not None:
            anc = np.repeat(anc, len(offsets))
        level += 1
    if target is None or anc is None or len(anc) == 0:
        return JuliaApproximation("cell_escape", np.zeros((0, n)), np.zeros(0), h, level)
    idx = np.unique(anc)
    c, hf, lev = target
    radii = hf[idx] * math.sqrt(n)
    return JuliaApproximation("cell_escape", c[idx], radii, float(radii.max()), lev)


def _cells_survive(G: TrapMap, centers: np.ndarray, radius: np.ndarray, N: int) -> np.ndarray:
    b = G.cfg.b
    # follow each ball through every inner ball it meets (an over-approximation of the orbit of the cell)
    owner = np.arange(len(centers))
    c, r = centers.copy(), radius.copy()
    survive = np.zeros(len(centers), bool)
    for _ in range(N):
        nc, nr, no = [], [], []
        for i in (1, 2):
            meets = np.linalg.norm(c - G.p[i], axis=1) < b + r
            if not meets.any():
                continue
            ic, ir, exterior = _moebius_ball_image(G, i, c[meets], r[meets])
            # an exterior image that still reaches an inner ball cannot be followed further
            reach = np.zeros(len(ic), bool)
            for j in (1, 2):
                reach |= np.linalg.norm(ic - G.p[j], axis=1) + b > ir
            survive[owner[meets][exterior & reach]] = True
            ok = ~exterior
            nc.append(ic[ok])
            nr.append(ir[ok])
            no.append(owner[meets][ok])
        if not nc:
            break
        c, r, owner = np.concatenate(nc), np.concatenate(nr), np.concatenate(no)
        undecided = ~survive[owner]
        c, r, owner = c[undecided], r[undecided], owner[undecided]
        if len(c) == 0:
            break
    survive[owner] = True
    return survive


def hausdorff(A: np.ndarray, B: np.ndarray) -> float:
    from scipy.spatial import cKDTree

    d1, _ = cKDTree(B).query(A, k=1)
    d2, _ = cKDTree(A).query(B, k=1)
    return float(max(d1.max(), d2.max()))


def julia_approximation(G: TrapMap, method: str = "backward_orbit", size: float = 12, **kw) -> JuliaApproximation:
    if method == "backward_orbit":
        return backward_orbit(G, int(size), **kw)
    if method == "cell_escape":
        return cell_escape(G, float(size), **kw)
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------- high precision orbits


def _mp_apply(G: TrapMap, x, mp):
    """G on a single point given as a list of mpf (None is infinity)."""
    if x is None:
        return [mp.mpf(v) for v in G.p[0]]
    p = [[mp.mpf(v) for v in row] for row in G.p]
    a, b = mp.mpf(G.cfg.a), mp.mpf(G.cfg.b)
    u, v = x[0], x[1]
    r = mp.sqrt(u * u + v * v)
    gx = list(x)
    if r > 0:
        gx[0], gx[1] = (u * u - v * v) / r, 2 * u * v / r
    y = gx
    for i in range(3):
        rho = mp.sqrt(sum((xi - pi) ** 2 for xi, pi in zip(x, p[i])))
        if rho >= a:
            continue
        if i == 0:
            inner = [mp.mpf(G.cfg.g_p0[k]) + G.half_turn[k, k] * (x[k] - p[0][k]) for k in range(G.n)]
        else:
            inner = [x[k] + p[0][k] - p[i][k] for k in range(G.n)]
        if rho < b:
            y = inner
        else:
            t = (rho - b) / (a - b)
            y = [(1 - t) * inner[k] + t * gx[k] for k in range(G.n)]
        break
    w = [y[k] - p[0][k] for k in range(G.n)]
    s = sum(c * c for c in w)
    if s == 0:
        return None
    return [p[0][k] + b * b * w[k] / s for k in range(G.n)]


def mp_branch_fixed_point(G: TrapMap, i: int, digits: int):
    """The fixed point of inverse branch i to ``digits`` significant digits (mpmath)."""
    import mpmath

    mp = mpmath.mp.clone() if hasattr(mpmath.mp, "clone") else mpmath.mp
    mp.dps = digits
    p = [[mp.mpf(v) for v in row] for row in G.p]
    b = mp.mpf(G.cfg.b)
    x = list(p[i])
    tol = mp.mpf(10) ** (-digits + 5)
    for _ in range(10 * digits):
        w = [x[k] - p[0][k] for k in range(G.n)]
        s = sum(c * c for c in w)
        nxt = [p[0][k] + b * b * w[k] / s + p[i][k] - p[0][k] for k in range(G.n)]
        if max(abs(nxt[k] - x[k]) for k in range(G.n)) < tol:
            return nxt
        x = nxt
    return x


def classify_orbit_precise(G: TrapMap, x, N: int, digits: int | None = None) -> OrbitRecord:
    """classify_orbit in multiprecision arithmetic; ``x`` may hold mpf coordinates.

    Orbits near the Julia set lose about log10(expansion) digits per step, so
    deciding persistence through N steps needs roughly 3.5 N digits here.
    """
    import mpmath

    if N < 1:
        raise ValueError("N must be at least 1")
    digits = digits or 20 + 4 * N
    with mpmath.workdps(digits):
        mp = mpmath.mp
        pt = None if x is None else [mp.mpf(v) for v in x]
        p = [[mp.mpf(v) for v in row] for row in G.p]
        b = mp.mpf(G.cfg.b)

        def dist(q, i):
            return mp.sqrt(sum((q[k] - p[i][k]) ** 2 for k in range(G.n)))

        lifts, kind, step, persisting = [], "Undecided", N, True
        for t in range(N + 1):
            arr = np.zeros((1, G.n)) if pt is None else np.array([[float(c) for c in pt]])
            lifts.append(to_sphere(arr, np.array([pt is None]))[0])
            if pt is not None and dist(pt, 0) < b:
                kind, step = "Trapped", t
                break
            if t >= 1 and (pt is None or min(dist(pt, 1), dist(pt, 2)) >= b):
                persisting = False
            if t == N:
                break
            pt = _mp_apply(G, pt, mp)
        if kind == "Undecided" and persisting:
            kind = "Persisting"
    seed = None if x is None else [float(v) for v in x]
    return OrbitRecord(seed, np.array(lifts), kind, step)


# ---------------------------------------------------------------- distortion


@dataclass
class DistortionEstimate:
    """Raw max of sigma_max / sigma_min over sampled Jacobians (a numeric proxy for K)."""

    region: str
    ratios: np.ndarray
    iterates: int = 1

    @property
    def K_estimate(self) -> float:
        return float(self.ratios.max()) if len(self.ratios) else 1.0

    def to_dict(self) -> dict:
        return {"region": self.region, "iterates": self.iterates, "K_estimate": self.K_estimate,
                "samples": int(len(self.ratios))}


def _phi_jacobian(G: TrapMap, y: np.ndarray) -> np.ndarray:
    v = y - G.p[0]
    s = np.sum(v * v, axis=1)[:, None, None]
    eye = np.eye(G.n)[None]
    return G.cfg.b ** 2 / s * (eye - 2 * v[:, :, None] * v[:, None, :] / s)


def jacobian(G: TrapMap, x: np.ndarray, step: float = 1e-7) -> np.ndarray:
    """DG at finite points: central differences for g~, the exact derivative of the inversion."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    h = step * np.maximum(1.0, np.linalg.norm(x, axis=1))[:, None]
    dg = np.stack([(G.g_tilde(x + h * e) - G.g_tilde(x - h * e)) / (2 * h) for e in np.eye(G.n)], axis=-1)
    return _phi_jacobian(G, G.g_tilde(x)) @ dg


def distortion_estimate(G: TrapMap, points, k: int = 1, region: str = "") -> DistortionEstimate:
    """sigma_max / sigma_min of D(G^k) by the chain rule along each orbit.

    Orbits that reach infinity or the pole p0 of the inversion are dropped.
    """
    x = np.atleast_2d(np.asarray(points, dtype=float)).copy()
    D = np.broadcast_to(np.eye(G.n), (len(x), G.n, G.n)).copy()
    ok = np.ones(len(x), bool)
    for _ in range(k):
        J = jacobian(G, x)
        D = J @ D
        y, inf = G.apply(x)
        ok &= ~inf & np.all(np.isfinite(D), axis=(1, 2))
        x = np.where(inf[:, None], 0.0, y)
    sv = np.linalg.svd(D[ok], compute_uv=False)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = sv[:, 0] / sv[:, -1]
    return DistortionEstimate(region, ratios[np.isfinite(ratios)], k)


def ball_samples(n: int, center, radius: float, count: int, rng: np.random.Generator) -> np.ndarray:
    u = rng.normal(size=(count, n))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return np.asarray(center) + radius * rng.random((count, 1)) ** (1 / n) * u


def global_distortion(G: TrapMap, count: int = 20000, seed: int = 0) -> DistortionEstimate:
    """K_estimate of G itself: a box around the anchors plus dense samples of the three a-balls."""
    rng = np.random.default_rng(seed)
    pts = [rng.uniform(-2.5, 2.5, size=(count, G.n))]
    for i in range(3):
        pts.append(ball_samples(G.n, G.p[i], G.cfg.a, count, rng))
    return distortion_estimate(G, np.concatenate(pts), 1, "global")


# ---------------------------------------------------------------- hyperbolicity


def _distance_to_branch_set(G: TrapMap, lifts: np.ndarray) -> np.ndarray:
    """Chordal distance from lifted points to the lift of the branch set (closed under infinity)."""
    north = np.zeros(G.n + 1)
    north[-1] = 1.0
    if G.n == 2:
        south = -north
        return np.minimum(np.linalg.norm(lifts - north, axis=1), np.linalg.norm(lifts - south, axis=1))
    # the axis x1 = x2 = 0 lifts to the great circle in the (x3, last) coordinate plane
    q = lifts.copy()
    q[:, :2] = 0.0
    nq = np.linalg.norm(q, axis=1, keepdims=True)
    return np.linalg.norm(lifts - q / np.where(nq > 0, nq, 1.0), axis=1)


def branch_orbit_points(G: TrapMap, iterates: int = 30, count: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Forward orbits of a grid on the branch set (0 and infinity for n = 2)."""
    if G.n == 2:
        x = np.zeros((2, 2))
        inf = np.array([False, True])
    else:
        t = np.tan(np.linspace(-math.pi / 2, math.pi / 2, count + 2)[1:-1])
        x = np.zeros((count + 1, 3))
        x[:-1, 2] = t
        inf = np.zeros(count + 1, bool)
        inf[-1] = True
    pts, infs = [x], [inf]
    for _ in range(iterates):
        x, inf = G.apply(x, inf)
        pts.append(x)
        infs.append(inf)
    return np.concatenate(pts), np.concatenate(infs)


def ball_distance(G: TrapMap, lifts: np.ndarray, spacing: float | None = None) -> float:
    """Chordal distance from lifted points to the closed ball B(p0, b) (via its boundary sphere)."""
    from scipy.spatial import cKDTree

    s = boundary_grid(G.n, G.p[0], G.cfg.b, spacing or G.cfg.b / 400)
    d, _ = cKDTree(to_sphere(s, np.zeros(len(s), bool))).query(lifts, k=1)
    return float(d.min())


def post_branch_margin(G: TrapMap, J: JuliaApproximation, iterates: int = 30) -> dict:
    lifts = to_sphere(J.points, np.zeros(len(J), bool))
    north = np.zeros(G.n + 1)
    north[-1] = 1.0
    orb, orb_inf = branch_orbit_points(G, iterates)
    parts = {
        "closed_ball_p0": ball_distance(G, lifts),
        "branch_set": float(_distance_to_branch_set(G, lifts).min()),
        "infinity": float(np.linalg.norm(lifts - north, axis=1).min()),
        "branch_orbits": float(chordal_matrix_min(J.points, np.zeros(len(J), bool), orb, orb_inf).min()),
    }
    parts["margin"] = min(parts.values())
    return parts


def _neighbourhood_boundary(G: TrapMap, J: JuliaApproximation, eps: float, directions: int) -> np.ndarray:
    """Points at chordal distance eps from J (eps-spheres around J samples, outside all others)."""
    u = _sphere_points(G.n, directions)
    x = J.points[:, None, :]
    A = (1 + np.sum(J.points ** 2, axis=1))[:, None]
    xu = np.einsum("kd,md->km", J.points, u)
    t = _chordal_step(A, xu, eps)
    pts = (x + t[..., None] * u[None]).reshape(-1, G.n)
    d = chordal_matrix_min(pts, np.zeros(len(pts), bool), J.points, np.zeros(len(J), bool))
    return pts[d >= eps * (1 - 1e-9)]


def _chordal_step(A, xu, r):
    """Euclidean t > 0 with sigma(x, x + t u) = r for unit u (A = 1 + |x|^2, xu = x . u)."""
    a = 4 - r * r * A
    bb = -2 * r * r * A * xu
    c = -r * r * A * A
    return (-bb + np.sqrt(bb * bb - 4 * a * c)) / (2 * a)


def _branch_words(G, pts: np.ndarray, N: int) -> np.ndarray:
    out = pts
    for _ in range(N):
        out = np.concatenate([G.inverse_branch(1, out), G.inverse_branch(2, out)])
    return out


def absorption_depth(G: TrapMap, J: JuliaApproximation, eps: float, n_max: int = 10,
                     directions: int = 64, J_sample: int = 64) -> int | None:
    """Least N such that every branch word of length N maps the closed eps-neighbourhood of J
    into its open interior (tested on its boundary and on J itself)."""
    sub = J.points[np.linspace(0, len(J) - 1, min(J_sample, len(J))).astype(int)]
    Js = JuliaApproximation(J.method, sub, J.radii[:len(sub)], J.resolution, J.depth)
    bd = _neighbourhood_boundary(G, Js, eps, directions)
    if ball_distance(G, to_sphere(bd, np.zeros(len(bd), bool))) <= 0:
        return None
    for N in range(1, n_max + 1):
        img = _branch_words(G, np.concatenate([bd, sub]), N)
        d = chordal_matrix_min(img, np.zeros(len(img), bool), J.points, np.zeros(len(J), bool))
        if d.max() < eps:
            return N
    return None


def _partners(G: TrapMap, y: np.ndarray) -> np.ndarray:
    """Candidate second preimages: the other inner-ball translate and the planar half-turn."""
    out = [-y * np.r_[1.0, 1.0, np.ones(G.n - 2)] if G.n > 2 else -y]
    out[0] = y.copy()
    out[0][:, :2] *= -1
    for i in (1, 2):
        for j in (1, 2):
            if i != j:
                out.append(y - G.p[i] + G.p[j])
    return np.stack(out, axis=1)


def injectivity_radius(G: TrapMap, J: JuliaApproximation, radii=None, samples: int = 2000,
                       J_sample: int = 16, seed: int = 0) -> float:
    """Largest tested r with no sampled pair y != y' in B(x, r), G(y) = G(y'), for x in J samples."""
    rng = np.random.default_rng(seed)
    radii = np.sort(np.asarray(radii if radii is not None else 2.0 ** -np.arange(0, 12)))[::-1]
    sub = J.points[np.linspace(0, len(J) - 1, min(J_sample, len(J))).astype(int)]
    best = 0.0
    for r in radii[::-1]:
        bad = False
        for x in sub:
            y = ball_samples(G.n, x, r, samples, rng)
            cand = _partners(G, y)
            inside = np.linalg.norm(cand - x, axis=2) < r
            if not inside.any():
                continue
            k, m = np.nonzero(inside)
            gy, iy = G.apply(y[k])
            gc, ic = G.apply(cand[k, m])
            same = chordal(gy, iy, gc, ic) < 1e-9
            moved = np.linalg.norm(y[k] - cand[k, m], axis=1) > 1e-9
            if np.any(same & moved):
                bad = True
                break
        if bad:
            break
        best = float(r)
    return best


@dataclass
class HyperbolicityReport:
    margin: dict
    absorption_N: int | None
    epsilon: float
    injectivity_radius: float
    K_global: float
    distortion: list[dict]

    @property
    def hyperbolic(self) -> bool:
        return self.margin["margin"] > 0 and self.absorption_N is not None

    def to_json(self) -> str:
        return json.dumps({"margin": self.margin, "absorption_N": self.absorption_N, "epsilon": self.epsilon,
                           "injectivity_radius_estimate": self.injectivity_radius, "K_global": self.K_global,
                           "distortion": self.distortion, "hyperbolic": self.hyperbolic})


def julia_adjacent_grid(G: TrapMap, J: JuliaApproximation, count: int = 400, spread: float = 4.0,
                        seed: int = 0) -> np.ndarray:
    """Points within ``spread`` times the branch-cluster size of the Julia approximation."""
    rng = np.random.default_rng(seed)
    scale = spread * G.cfg.b ** 2 / 2
    idx = rng.integers(0, len(J), count)
    return J.points[idx] + scale * rng.uniform(-1, 1, size=(count, G.n))


def hyperbolicity_report(G: TrapMap, J: JuliaApproximation, k_max: int = 15, seed: int = 0) -> HyperbolicityReport:
    margin = post_branch_margin(G, J)
    eps = margin["margin"] / 2
    N = absorption_depth(G, J, eps) if eps > 0 else None
    r1 = injectivity_radius(G, J, seed=seed)
    rng = np.random.default_rng(seed)
    trap = ball_samples(G.n, G.p[0], G.cfg.b / 2, 2000, rng)
    near = julia_adjacent_grid(G, J, seed=seed)
    table = []
    for k in range(1, k_max + 1):
        a = distortion_estimate(G, trap, k, "B(p0, b/2)")
        c = distortion_estimate(G, near, k, "near J")
        table.append({"k": k, "trap": a.K_estimate, "near_J": c.K_estimate})
    K = global_distortion(G, seed=seed).K_estimate
    return HyperbolicityReport(margin, N, eps, r1, K, table)


# ---------------------------------------------------------------- expansion data


def chordal_sphere(x: np.ndarray, r: float, directions: int) -> np.ndarray:
    """Points y with sigma(x, y) = r along ``directions`` nearly uniform unit vectors."""
    u = _sphere_points(len(x), directions)
    t = _chordal_step(1 + float(x @ x), u @ x, r)
    return x + t[:, None] * u


def stretch(G: TrapMap, x: np.ndarray, r: float, k: int, directions: int = 64) -> float:
    """L_{G^k}(x, r) = max over sigma(y, x) = r of sigma(G^k y, G^k x), over sampled directions."""
    y = np.concatenate([x[None], chordal_sphere(x, r, directions)])
    inf = np.zeros(len(y), bool)
    for _ in range(k):
        y, inf = G.apply(y, inf)
    return float(chordal(y[1:], inf[1:], y[:1], inf[:1]).max())


@dataclass
class ExpansionData:
    x: list[float]
    r: float
    M: int
    L: list[float]  # L_{G^k}(x, 2r) for k = 0..M
    r2: float
    delta: float
    absorption_N: int

    @property
    def sandwich(self) -> bool:
        if self.M == 0:
            return True
        return self.delta <= self.L[-1] <= self.r2 and self.L[-2] < self.delta

    def to_dict(self) -> dict:
        return {"x": self.x, "r": self.r, "M": self.M, "L": self.L, "r2": self.r2, "delta": self.delta,
                "absorption_N": self.absorption_N, "sandwich": self.sandwich}


@dataclass
class ExpansionScales:
    """r2 below the numeric estimates of r1, eps0 and sigma(J, P); delta = sigma(boundary of g^-1(U), J)."""

    r2: float
    delta: float
    absorption_N: int
    estimates: dict


def expansion_scales(G: TrapMap, J: JuliaApproximation, report: HyperbolicityReport | None = None,
                     directions: int = 64) -> ExpansionScales:
    rep = report or hyperbolicity_report(G, J, k_max=1)
    est = {"r1": rep.injectivity_radius, "eps0": rep.epsilon, "sigma_J_P": rep.margin["margin"]}
    r2 = 0.5 * min(est.values())
    N = absorption_depth(G, J, r2, directions=directions)
    if N is None:
        raise ValueError("no absorption depth for the r2-neighbourhood")
    sub = J.points[np.linspace(0, len(J) - 1, min(64, len(J))).astype(int)]
    Js = JuliaApproximation(J.method, sub, J.radii[:len(sub)], J.resolution, J.depth)
    # g = G^N; the boundary of g^-1(U) is the image of the boundary of U under the length-N branch words
    bd = _branch_words(G, _neighbourhood_boundary(G, Js, r2, 4 * directions), N)
    zero = np.zeros(len(J), bool)
    delta = float(chordal_matrix_min(bd, np.zeros(len(bd), bool), J.points, zero).min())
    return ExpansionScales(r2, delta, N, est)


def expansion_data(G: TrapMap, x, r: float, scales: ExpansionScales, directions: int = 64,
                   max_iter: int = 60) -> ExpansionData:
    """Minimal M with L_{G^M}(x, 2r) >= delta; M = 0 (the identity) when r >= delta / 2."""
    x = np.asarray(x, dtype=float)
    L = [stretch(G, x, 2 * r, 0, directions)]
    if r >= scales.delta / 2:
        return ExpansionData(x.tolist(), r, 0, L, scales.r2, scales.delta, scales.absorption_N)
    for k in range(1, max_iter + 1):
        L.append(stretch(G, x, 2 * r, k, directions))
        if L[-1] >= scales.delta:
            return ExpansionData(x.tolist(), r, k, L, scales.r2, scales.delta, scales.absorption_N)
    raise RuntimeError(f"L_G^k(x, 2r) stayed below delta for k <= {max_iter}")


# ---------------------------------------------------------------- conjugation


@dataclass(frozen=True)
class Inversion:
    """The Moebius map x -> c + s^2 (x - c) / |x - c|^2 (its own inverse; c <-> infinity)."""

    center: np.ndarray
    radius: float

    def __call__(self, x, xinf=None) -> tuple[np.ndarray, np.ndarray]:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        xinf = np.zeros(len(x), bool) if xinf is None else np.asarray(xinf, bool)
        v = x - self.center
        s = np.sum(v * v, axis=1)
        at_c = (s == 0) & ~xinf
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self.center + self.radius ** 2 * v / s[:, None]
        out[xinf] = self.center
        out[at_c] = 0.0
        return out, at_c

    def inverse(self) -> "Inversion":
        return self

    def lipschitz_on(self, x: np.ndarray) -> float:
        return float((self.radius ** 2 / np.sum((np.atleast_2d(x) - self.center) ** 2, axis=1)).max())


def _as_moebius(F):
    """Wrap a similarity so that it acts on (points, infinity mask) pairs."""
    from .ifs import Similarity

    if isinstance(F, Inversion):
        return F, F.inverse(), F.lipschitz_on
    if isinstance(F, Similarity):
        inv = F.inverse()

        def fwd(x, xinf=None, f=F):
            x = np.atleast_2d(np.asarray(x, dtype=float))
            xinf = np.zeros(len(x), bool) if xinf is None else np.asarray(xinf, bool)
            return np.where(xinf[:, None], 0.0, f(x)), xinf.copy()

        def bwd(x, xinf=None):
            return fwd(x, xinf, inv)

        return fwd, bwd, lambda _x: F.scale
    raise TypeError("F must be a Similarity or an Inversion")


class ConjugateMap:
    """f = F o G o F^-1 with inverse branches F o branch_i o F^-1 and J(f) = F(J(G))."""

    def __init__(self, G: TrapMap, F):
        self.G = G
        self.F = F
        self.fwd, self.bwd, self._lip = _as_moebius(F)

    @property
    def n(self) -> int:
        return self.G.n

    def apply(self, x, xinf=None) -> tuple[np.ndarray, np.ndarray]:
        y, yinf = self.bwd(x, xinf)
        z, zinf = self.G.apply(y, yinf)
        return self.fwd(z, zinf)

    def inverse_branch(self, i: int, y, yinf=None) -> np.ndarray:
        u, uinf = self.bwd(y, yinf)
        out, inf = self.fwd(self.G.inverse_branch(i, u, uinf))
        if inf.any():
            raise ValueError("branch image is the point at infinity")
        return out

    def branch_fixed_point(self, i: int, tol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
        x = self.fwd(self.G.p[i][None])[0]
        for _ in range(max_iter):
            nxt = self.inverse_branch(i, x)
            if np.linalg.norm(nxt - x) < tol:
                return nxt[0]
            x = nxt
        return x[0]

    def backward_orbit(self, depth: int) -> JuliaApproximation:
        pts = self.branch_fixed_point(1)[None]
        words = [""]
        for _ in range(depth):
            pts = np.concatenate([self.inverse_branch(1, pts), self.inverse_branch(2, pts)])
            words = ["1" + w for w in words] + ["2" + w for w in words]
        res = orbit_resolution(self.G, depth) * self._lip(self.bwd(pts)[0])
        return JuliaApproximation("backward_orbit", pts, np.full(len(pts), res), res, depth, words)


def conjugate(G: TrapMap, F) -> ConjugateMap:
    return ConjugateMap(G, F)
