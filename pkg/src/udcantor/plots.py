"""Static SVG renderings of CLI artifacts (no raster or plotting dependencies)."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

KINDS = ("scatter2d", "scatter3d-projection", "constants-vs-depth", "link-matrix")
SIZE = 480
PAD = 40


def _frame(lo: np.ndarray, hi: np.ndarray):
    span = float(max(hi - lo)) or 1.0
    scale = (SIZE - 2 * PAD) / span

    def tx(p):
        return PAD + (p[0] - lo[0]) * scale, SIZE - PAD - (p[1] - lo[1]) * scale

    return tx, scale


def _svg(body: list[str], title: str) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" '
            f'viewBox="0 0 {SIZE} {SIZE}">\n<rect width="100%" height="100%" fill="white"/>\n'
            f'<text x="{PAD}" y="24" font-family="sans-serif" font-size="14">{title}</text>\n')
    return head + "\n".join(body) + "\n</svg>\n"


def _read_csv(path) -> tuple[np.ndarray, str]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError("empty CSV")
    pts = np.array([[float(r["x"]), float(r["y"]), float(r["z"])] for r in rows])
    return pts, rows[0].get("method", "")


def _anchor_radii(path) -> tuple[float, float]:
    report = Path(path).with_suffix(".json")
    if report.exists():
        cfg = json.loads(report.read_text())["result"]["config"]["config"]
        return cfg["a"], cfg["b"]
    from .trap import default_config

    cfg = default_config(2)
    return cfg.a, cfg.b


def scatter2d(path) -> str:
    pts, method = _read_csv(path)
    a, b = _anchor_radii(path)
    anchors = np.array([[-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    lo = np.minimum(pts[:, :2].min(axis=0), anchors.min(axis=0) - a)
    hi = np.maximum(pts[:, :2].max(axis=0), anchors.max(axis=0) + a)
    tx, scale = _frame(lo, hi)
    body = []
    for i, c in enumerate(anchors):
        x, y = tx(c)
        for r, dash in ((a, ' stroke-dasharray="4 3"'), (b, "")):
            body.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{r * scale:.2f}" fill="none" stroke="#555"{dash}/>')
        body.append(f'<text x="{x + 6:.1f}" y="{y - 6:.1f}" font-size="11">p{i}</text>')
    for p in pts:
        x, y = tx(p)
        body.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="1.2" fill="#b22"/>')
    return _svg(body, f"{len(pts)} points ({method})")


def scatter3d_projection(path) -> str:
    pts, method = _read_csv(path)
    proj = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.35]])  # oblique projection
    q = pts @ proj
    tx, _ = _frame(q.min(axis=0), q.max(axis=0))
    order = np.argsort(pts[:, 2])
    body = [f'<circle cx="{tx(q[k])[0]:.2f}" cy="{tx(q[k])[1]:.2f}" r="1.2" fill="#226"/>' for k in order]
    return _svg(body, f"{len(pts)} points, oblique projection ({method})")


def constants_vs_depth(path) -> str:
    rows = json.loads(Path(path).read_text())["result"]["rows"]
    d = np.array([r["depth"] for r in rows], float)
    body = []
    vals = np.array([[r["up"], r["ud"]] for r in rows])
    lo = np.array([d.min() - 0.5, 0.0])
    hi = np.array([d.max() + 0.5, vals.max() * 1.1])
    sx = (SIZE - 2 * PAD) / (hi[0] - lo[0])
    sy = (SIZE - 2 * PAD) / (hi[1] - lo[1])

    def tx(x, y):
        return PAD + (x - lo[0]) * sx, SIZE - PAD - (y - lo[1]) * sy

    body.append(f'<line x1="{PAD}" y1="{SIZE - PAD}" x2="{SIZE - PAD}" y2="{SIZE - PAD}" stroke="black"/>')
    body.append(f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{SIZE - PAD}" stroke="black"/>')
    for k, (name, color) in enumerate((("UP", "#26a"), ("UD", "#a26"))):
        pts = " ".join(f"{tx(x, y)[0]:.2f},{tx(x, y)[1]:.2f}" for x, y in zip(d, vals[:, k]))
        body.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        x, y = tx(d[-1], vals[-1, k])
        body.append(f'<text x="{x + 4:.1f}" y="{y:.1f}" font-size="12" fill="{color}">{name}</text>')
    for x in d:
        px, _ = tx(x, 0)
        body.append(f'<text x="{px - 3:.1f}" y="{SIZE - PAD + 16}" font-size="11">{int(x)}</text>')
    for y in np.linspace(0, hi[1], 5)[1:]:
        _, py = tx(lo[0], y)
        body.append(f'<text x="4" y="{py + 4:.1f}" font-size="11">{y:.3g}</text>')
    return _svg(body, "constants vs depth")


def link_matrix(path) -> str:
    m = np.array(json.loads(Path(path).read_text())["result"]["link_matrix"])
    n = len(m)
    cell = (SIZE - 2 * PAD) / n
    colors = {-1: "#2a6fb0", 0: "#f2f2f2", 1: "#c0392b"}
    body = []
    for i in range(n):
        for j in range(n):
            body.append(f'<rect x="{PAD + j * cell:.2f}" y="{PAD + i * cell:.2f}" width="{cell:.2f}" '
                        f'height="{cell:.2f}" fill="{colors.get(int(m[i, j]), "#000")}" stroke="white"/>')
    return _svg(body, f"linking numbers of {n} chain links")


def render(path, kind: str) -> str:
    fn = {"scatter2d": scatter2d, "scatter3d-projection": scatter3d_projection,
          "constants-vs-depth": constants_vs_depth, "link-matrix": link_matrix}[kind]
    return fn(path)
