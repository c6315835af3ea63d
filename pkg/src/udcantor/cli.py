"""Batch front end: named experiments from flags or a JSON config to CSV/JSON/SVG artifacts.

Exit codes: 0 when every check of the run passes, 1 when a check fails,
2 for configuration errors (nothing is written in that case).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import plots

SUBCOMMANDS = ("invariants", "julia", "expansion", "necklace", "conjugate", "oracle-check", "plot")


class ConfigError(ValueError):
    pass


# option name -> (type, default); the same names are the accepted JSON config keys
TRAP_OPTIONS = {"n": (int, 2), "r0": (float, None), "a": (float, None), "b": (float, None)}
OPTIONS = {
    "invariants": {"system": (str, "middle_third"), "depth": (str, "6"), "out": (str, None)},
    "julia": {**TRAP_OPTIONS, "method": (str, "backward"), "depth": (int, 12), "cells": (float, 1e-4),
              "iters": (int, 40), "out": (str, None), "report": (str, None)},
    "expansion": {**TRAP_OPTIONS, "depth": (int, 12), "samples": (int, 100), "seed": (int, 0),
                  "out": (str, None)},
    "necklace": {"links": (int, 20), "depth": (int, 4), "seed": (int, 0), "out": (str, None),
                 "ply": (str, None)},
    "conjugate": {**TRAP_OPTIONS, "depth": (int, 10), "scale": (float, 2.0), "shift": (str, "0"),
                  "out": (str, None)},
    "oracle-check": {"max_points": (int, 12), "trials": (int, 50), "seed": (int, 7), "out": (str, None)},
    "plot": {"artifact": (str, None), "kind": (str, "scatter2d"), "out": (str, None)},
}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="udcantor", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, opts in OPTIONS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON file whose keys are option names")
        for key, (typ, _) in opts.items():
            sp.add_argument("--" + key.replace("_", "-"), dest=key, type=typ, default=None)
    return ap


def resolve(command: str, args: dict, config: dict | None) -> dict:
    """Merge defaults < config file < explicit flags; unknown config keys are rejected."""
    opts = OPTIONS[command]
    cfg = dict(config or {})
    if "command" in cfg:
        if cfg["command"] != command:
            raise ConfigError(f"config is for command {cfg['command']!r}, not {command!r}")
        del cfg["command"]
    unknown = sorted(set(cfg) - set(opts))
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")
    out = {}
    for key, (typ, default) in opts.items():
        value = args.get(key)
        if value is None:
            value = cfg.get(key, default)
        if value is not None and not isinstance(value, typ):
            try:
                value = typ(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{key}: cannot convert {value!r} to {typ.__name__}") from exc
        out[key] = value
    return out


def _trap_map(cfg: dict):
    from .trap import TrapConfigError, build_trap_map, default_config

    n = cfg["n"]
    if n not in (2, 3):
        raise ConfigError(f"--n must be 2 or 3, got {n}")
    base = default_config(n)
    r0 = base.r0 if cfg["r0"] is None else cfg["r0"]
    a = base.a if cfg["a"] is None else cfg["a"]
    b = base.b if cfg["b"] is None else cfg["b"]
    try:
        return build_trap_map(n, r0, a, b)
    except TrapConfigError as exc:
        raise ConfigError(f"trap parameters rejected: {exc}") from exc


def _depths(text: str) -> list[int]:
    try:
        depths = [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"--depth must be an integer or a comma list, got {text!r}") from exc
    if not depths or min(depths) < 1:
        raise ConfigError("depths must be positive")
    return depths


# ---------------------------------------------------------------- commands


def cmd_invariants(cfg: dict) -> tuple[dict, dict, dict]:
    from .ifs import IfsError, parse_system
    from .invariants import attractor_report

    depths = _depths(cfg["depth"])
    name, _, arg = cfg["system"].partition(":")
    rows = []
    if name == "necklace":
        from .necklace import NecklaceError, build_chain, interleaved_invariants

        try:
            chain = build_chain(int(arg or 20))
        except (NecklaceError, ValueError) as exc:
            raise ConfigError(f"necklace: {exc}") from exc
        rows = [interleaved_invariants(chain, k) for k in depths]
    else:
        try:
            system = parse_system(cfg["system"])
        except (IfsError, ValueError, KeyError) as exc:
            raise ConfigError(f"--system {cfg['system']!r}: {exc}") from exc
        for k in depths:
            rep = attractor_report(system, k)
            rows.append({"depth": k, "n_points": rep.n_points, "up": rep.up, "ud": rep.ud})
    result = {"system": cfg["system"], "rows": rows, "up": rows[-1]["up"], "ud": rows[-1]["ud"],
              "depths": depths}
    checks = {"finite": all(math.isfinite(r["up"]) and math.isfinite(r["ud"]) for r in rows)}
    if name in ("middle_third", "middle-third"):
        checks["ud_equals_3"] = all(abs(r["ud"] - 3.0) <= 1e-9 for r in rows)
    if name == "epsilon":
        eps = float(arg)
        checks["ud_lower_bound"] = all(r["ud"] >= (1 - eps) / 2 / eps for r in rows)
        checks["up_at_most_4"] = all(r["up"] <= 4 for r in rows)
    return result, checks, {"json": cfg["out"]}


def cmd_julia(cfg: dict):
    from .trap import JuliaApproximation, backward_orbit, cell_escape

    G = _trap_map(cfg)
    method = {"backward": "backward_orbit", "cell": "cell_escape"}.get(cfg["method"], cfg["method"])
    if method == "backward_orbit":
        J: JuliaApproximation = backward_orbit(G, cfg["depth"])
    elif method == "cell_escape":
        if not cfg["cells"] > 0:
            raise ConfigError("--cells (cell radius) must be positive")
        J = cell_escape(G, cfg["cells"], N=cfg["iters"])
    else:
        raise ConfigError(f"unknown method {cfg['method']!r} (backward or cell)")
    inside = G.in_b_balls(J.points, np.zeros(len(J), bool))
    off_trap = np.linalg.norm(J.points - G.p[0], axis=1) > G.cfg.b
    result = {"config": G.to_dict(), "method": J.method, "points": len(J), "resolution": J.resolution,
              "depth": J.depth}
    checks = {"nonempty": len(J) > 0, "in_inner_balls": bool(inside.all()), "off_closed_trap": bool(off_trap.all())}
    return result, checks, {"csv": (cfg["out"], J), "json": cfg["report"]}


def cmd_expansion(cfg: dict):
    from .trap import backward_orbit, expansion_data, expansion_scales, hyperbolicity_report

    G = _trap_map(cfg)
    J = backward_orbit(G, cfg["depth"])
    rep = hyperbolicity_report(G, J, seed=cfg["seed"])
    scales = expansion_scales(G, J, rep)
    rng = np.random.default_rng(cfg["seed"])
    samples = []
    for _ in range(cfg["samples"]):
        x = J.points[rng.integers(len(J))]
        r = scales.delta / 2 * 10 ** rng.uniform(-9, 0)
        samples.append(expansion_data(G, x, r, scales).to_dict())
    K = rep.K_global
    result = {"config": G.to_dict(), "hyperbolicity": json.loads(rep.to_json()),
              "r2": scales.r2, "delta": scales.delta, "estimates": scales.estimates, "samples": samples}
    checks = {
        "margin_positive": rep.margin["margin"] > 0,
        "absorption": rep.absorption_N is not None,
        "sandwich": all(s["sandwich"] for s in samples),
        "distortion_near_J": all(row["near_J"] <= 1.05 * K for row in rep.distortion),
        "conformal_trap": all(abs(row["trap"] - 1) <= 1e-3 for row in rep.distortion),
    }
    return result, checks, {"json": cfg["out"]}


def cmd_necklace(cfg: dict):
    from .necklace import (NecklaceError, build_chain, check_ball_levels, link_report, ball_levels,
                           torus_mesh_ply)

    n = cfg["links"]
    if n < 2:
        raise ConfigError("--links must be at least 2")
    try:
        chain = build_chain(n)
    except NecklaceError as exc:
        result = {"links": n, "valid": False, "violations": exc.violations}
        return result, {"valid_chain": False}, {"json": cfg["out"]}
    rep = link_report(chain, (1, 1))
    gaps = check_ball_levels(chain, cfg["depth"])
    result = {"links": n, "valid": True, "system": json.loads(chain.to_json()),
              "link_report": json.loads(rep.to_json()), "link_matrix": rep.matrix(n).tolist(),
              "ball_levels": ball_levels(cfg["depth"]), "ball_gaps": {str(k): v for k, v in gaps.items()}}
    checks = {"valid_chain": True, "linking": rep.consistent, "balls_disjoint": all(g > 0 for g in gaps.values())}
    outputs = {"json": cfg["out"]}
    if cfg["ply"]:
        outputs["ply"] = (cfg["ply"], chain.torus, torus_mesh_ply)
    return result, checks, outputs


def cmd_conjugate(cfg: dict):
    from .ifs import Similarity
    from .trap import backward_orbit, conjugate, hausdorff

    G = _trap_map(cfg)
    try:
        shift = np.array([float(t) for t in str(cfg["shift"]).split(",")])
    except ValueError as exc:
        raise ConfigError(f"--shift must be a comma list of numbers, got {cfg['shift']!r}") from exc
    shift = np.resize(shift, G.n) if len(shift) == 1 else shift
    if len(shift) != G.n or not cfg["scale"] > 0:
        raise ConfigError("--shift needs n components and --scale must be positive")
    F = Similarity(cfg["scale"], np.eye(G.n), shift)
    C = conjugate(G, F)
    JC = C.backward_orbit(cfg["depth"])
    FJ = F(backward_orbit(G, cfg["depth"]).points)
    h = hausdorff(JC.points, FJ)
    result = {"config": G.to_dict(), "F": F.to_dict(), "hausdorff": h, "resolution": JC.resolution,
              "points": len(JC)}
    return result, {"equivariance": h <= 2 * JC.resolution}, {"json": cfg["out"]}


def cmd_oracle_check(cfg: dict):
    from .invariants import BRUTE_FORCE_LIMIT, brute_force_ud_oracle, ud_from_dendrogram
    from .metric_core import FinitePointSet, single_linkage_dendrogram

    if not 2 <= cfg["max_points"] <= BRUTE_FORCE_LIMIT:
        raise ConfigError(f"--max-points must lie in 2..{BRUTE_FORCE_LIMIT}")
    rng = np.random.default_rng(cfg["seed"])
    mismatches = []
    for t in range(cfg["trials"]):
        m = int(rng.integers(2, cfg["max_points"] + 1))
        X = FinitePointSet(rng.random((m, int(rng.integers(1, 4)))))
        fast = ud_from_dendrogram(single_linkage_dendrogram(X)).constant
        slow = brute_force_ud_oracle(X)
        if fast != slow:
            mismatches.append({"trial": t, "points": m, "dendrogram": fast, "oracle": slow})
    result = {"trials": cfg["trials"], "mismatches": mismatches}
    return result, {"oracle_equal": not mismatches}, {"json": cfg["out"]}


def cmd_plot(cfg: dict):
    if not cfg["artifact"] or not Path(cfg["artifact"]).exists():
        raise ConfigError(f"artifact {cfg['artifact']!r} does not exist")
    if not cfg["out"]:
        raise ConfigError("--out is required for plot")
    if cfg["kind"] not in plots.KINDS:
        raise ConfigError(f"unknown plot kind {cfg['kind']!r}; choose from {', '.join(plots.KINDS)}")
    try:
        svg = plots.render(cfg["artifact"], cfg["kind"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"cannot plot {cfg['artifact']}: {exc}") from exc
    return {"artifact": cfg["artifact"], "kind": cfg["kind"]}, {}, {"svg": (cfg["out"], svg)}


COMMANDS = {"invariants": cmd_invariants, "julia": cmd_julia, "expansion": cmd_expansion,
            "necklace": cmd_necklace, "conjugate": cmd_conjugate, "oracle-check": cmd_oracle_check,
            "plot": cmd_plot}


def _write(outputs: dict, report: dict) -> None:
    for kind, target in outputs.items():
        if target is None:
            continue
        if kind == "json":
            Path(target).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        elif kind == "csv" and target[0]:
            target[1].to_csv(target[0])
        elif kind == "ply":
            target[2](target[1], target[0])
        elif kind == "svg":
            Path(target[0]).write_text(target[1])


def run(argv: list[str]) -> tuple[int, dict | None]:
    ap = _parser()
    try:
        ns = ap.parse_args(argv)
    except SystemExit as exc:
        return (0 if exc.code == 0 else 2), None
    args = vars(ns)
    command = args.pop("command")
    config_path = args.pop("config")
    try:
        config = None
        if config_path:
            try:
                config = json.loads(Path(config_path).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
            if not isinstance(config, dict):
                raise ConfigError("config must be a JSON object")
        cfg = resolve(command, args, config)
        start = time.perf_counter()
        result, checks, outputs = COMMANDS[command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2, None
    passed = all(checks.values())
    report = {"command": command, "config": cfg, "result": result, "checks": checks, "passed": passed,
              "wall_time": time.perf_counter() - start}
    _write(outputs, report)
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return (0 if passed else 1), report


def main(argv: list[str] | None = None) -> int:
    code, _ = run(sys.argv[1:] if argv is None else argv)
    return code


if __name__ == "__main__":
    sys.exit(main())
