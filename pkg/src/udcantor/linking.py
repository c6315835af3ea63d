"""Linking numbers of closed polygonal curves in R^3."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

GOLDEN = (1 + math.sqrt(5)) / 2


class CurveError(ValueError):
    pass


@dataclass(frozen=True)
class PolyCurve:
    """Closed polygon; the last vertex connects back to the first."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 3 or len(v) < 8:
            raise CurveError(f"need at least 8 vertices in R^3, got shape {v.shape}")
        if np.any(np.linalg.norm(v - np.roll(v, -1, axis=0), axis=1) == 0):
            raise CurveError("consecutive vertices coincide")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices, np.roll(self.vertices, -1, axis=0)

    def transformed(self, linear: np.ndarray, shift: np.ndarray) -> "PolyCurve":
        return PolyCurve(self.vertices @ np.asarray(linear).T + np.asarray(shift))

    def to_csv_rows(self) -> list[tuple[float, float, float]]:
        return [tuple(map(float, p)) for p in self.vertices]


def circle_curve(center, normal, radius: float, n_vertices: int = 64) -> PolyCurve:
    center = np.asarray(center, dtype=float)
    nrm = np.asarray(normal, dtype=float)
    nrm = nrm / np.linalg.norm(nrm)
    a = np.cross(nrm, [1.0, 0.0, 0.0])
    if np.linalg.norm(a) < 1e-6:
        a = np.cross(nrm, [0.0, 1.0, 0.0])
    a /= np.linalg.norm(a)
    b = np.cross(nrm, a)
    t = np.linspace(0.0, 2 * math.pi, n_vertices, endpoint=False)
    return PolyCurve(center + radius * (np.cos(t)[:, None] * a + np.sin(t)[:, None] * b))


def segment_distances(a0, a1, b0, b1) -> np.ndarray:
    """Pairwise minimal distances between segments [a0, a1] and [b0, b1] (all pairs)."""
    a0, a1, b0, b1 = (np.asarray(x, dtype=float) for x in (a0, a1, b0, b1))
    p, q = a0[:, None, :], b0[None, :, :]
    u, v = (a1 - a0)[:, None, :], (b1 - b0)[None, :, :]
    w = p - q
    a = np.sum(u * u, -1)
    b = np.sum(u * v, -1)
    c = np.sum(v * v, -1)
    d = np.sum(u * w, -1)
    e = np.sum(v * w, -1)
    den = a * c - b * b
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(den > 1e-14 * a * c, np.clip((b * e - c * d) / den, 0, 1), 0.0)
        t = np.clip((b * s + e) / c, 0, 1)
        s = np.clip((b * t - d) / a, 0, 1)
    diff = w + s[..., None] * u - t[..., None] * v
    return np.linalg.norm(diff, axis=-1)


def curve_distance(c1: PolyCurve, c2: PolyCurve) -> float:
    a0, a1 = c1.segments()
    b0, b1 = c2.segments()
    return float(segment_distances(a0, a1, b0, b1).min())


def _direction(k: int) -> np.ndarray:
    """k-th point of a golden-ratio spiral on the sphere (deterministic, equidistributed)."""
    z = 1 - 2 * ((k + 0.5) * (GOLDEN - 1) % 1.0)
    phi = 2 * math.pi * ((k * GOLDEN) % 1.0) + 0.37
    r = math.sqrt(max(0.0, 1 - z * z))
    return np.array([r * math.cos(phi), r * math.sin(phi), z])


def _signed_crossings(c1: PolyCurve, c2: PolyCurve, u: np.ndarray, tol: float = 1e-9):
    """Signed crossing sum of the projections along ``u``; None if the projection is not generic."""
    u = u / np.linalg.norm(u)
    e1 = np.cross(u, [1.0, 0.0, 0.0])
    if np.linalg.norm(e1) < 0.1:
        e1 = np.cross(u, [0.0, 1.0, 0.0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(u, e1)
    a0, a1 = c1.segments()
    b0, b1 = c2.segments()
    P = np.stack([a0 @ e1, a0 @ e2], -1)[:, None, :]
    R = np.stack([(a1 - a0) @ e1, (a1 - a0) @ e2], -1)[:, None, :]
    Q = np.stack([b0 @ e1, b0 @ e2], -1)[None, :, :]
    S = np.stack([(b1 - b0) @ e1, (b1 - b0) @ e2], -1)[None, :, :]
    cross = R[..., 0] * S[..., 1] - R[..., 1] * S[..., 0]
    qp = Q - P
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (qp[..., 0] * S[..., 1] - qp[..., 1] * S[..., 0]) / cross
        s = (qp[..., 0] * R[..., 1] - qp[..., 1] * R[..., 0]) / cross
    scale = np.sqrt(np.sum(R * R, -1) * np.sum(S * S, -1))
    if np.any(np.abs(cross) < tol * scale):
        # parallel projected segments: only harmless if they are far apart
        near = np.abs(cross) < tol * scale
        if np.any(near & (np.abs(t) < 2) & (np.abs(s) < 2)):
            return None
    hit = (t > -tol) & (t < 1 + tol) & (s > -tol) & (s < 1 + tol)
    if np.any(hit & ((np.abs(t) < tol) | (np.abs(t - 1) < tol) | (np.abs(s) < tol) | (np.abs(s - 1) < tol))):
        return None
    ii, jj = np.nonzero(hit)
    total = 0
    da, db = a1 - a0, b1 - b0
    for i, j in zip(ii, jj):
        pa = a0[i] + t[i, j] * da[i]
        pb = b0[j] + s[i, j] * db[j]
        dh = float((pa - pb) @ u)
        if abs(dh) < tol:
            return None
        over, under = (da[i], db[j]) if dh > 0 else (db[j], da[i])
        total += 1 if float(np.cross(over, under) @ u) > 0 else -1
    return total


def linking_number(c1: PolyCurve, c2: PolyCurve, start: int = 0, max_tries: int = 64) -> int:
    """Half the signed crossing count in a generic projection (an exact integer)."""
    if curve_distance(c1, c2) <= 1e-12:
        raise CurveError("curves intersect")
    for k in range(start, start + max_tries):
        total = _signed_crossings(c1, c2, _direction(k))
        if total is not None:
            if total % 2:
                raise CurveError(f"odd crossing sum {total}; projection not generic")
            return total // 2
    raise CurveError("no generic projection direction found")


def linking_number_along(c1: PolyCurve, c2: PolyCurve, direction) -> int | None:
    """Linking number read off the projection along ``direction``; None if not generic."""
    total = _signed_crossings(c1, c2, np.asarray(direction, dtype=float))
    return None if total is None else total // 2


def gauss_linking_integral(c1: PolyCurve, c2: PolyCurve) -> float:
    """Exact Gauss integral of two closed polygons via segment-pair solid angles."""
    a0, a1 = c1.segments()
    b0, b1 = c2.segments()
    p1, p2 = a0[:, None, :], a1[:, None, :]
    p3, p4 = b0[None, :, :], b1[None, :, :]
    r13, r14, r23, r24 = p3 - p1, p4 - p1, p3 - p2, p4 - p2

    def unit(v):
        return v / np.linalg.norm(v, axis=-1, keepdims=True)

    n1 = unit(np.cross(r13, r14))
    n2 = unit(np.cross(r14, r24))
    n3 = unit(np.cross(r24, r23))
    n4 = unit(np.cross(r23, r13))

    def asin_dot(x, y):
        return np.arcsin(np.clip(np.sum(x * y, -1), -1.0, 1.0))

    omega = asin_dot(n1, n2) + asin_dot(n2, n3) + asin_dot(n3, n4) + asin_dot(n4, n1)
    sign = np.sign(np.sum(np.cross(p4 - p3, p2 - p1) * r13, -1))
    return float(np.sum(omega * sign) / (4 * math.pi))
