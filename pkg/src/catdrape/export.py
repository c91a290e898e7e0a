"""Trace exports: points CSV, legacy VTK, SVG projections and JSON report.

Every exporter works on a plain trace record (lists, dicts and floats), built
from a DrapeTrace by :func:`trace_record` or read back from ``trace.json``, so
a saved run can be re-exported without re-simulating.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

FORMATS = ("csv", "vtk", "svg", "report")
CSV_COLUMNS = ("iter", "catenary_id", "kind", "point_idx", "x", "y", "z")
TRACE_FILE = "trace.json"
TIMING_FILE = "timing.json"


class IoError(OSError):
    pass


def resample_polyline(points, n: int) -> np.ndarray:
    """``n`` points equally spaced in arc length along a polyline (ends kept exactly)."""
    p = np.asarray(points, dtype=float)
    seg = np.sqrt(np.sum(np.diff(p, axis=0) ** 2, axis=1))
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] == 0.0:
        return np.repeat(p[:1], n, axis=0)
    keep = np.concatenate([[True], seg > 0])
    s, p = s[keep], p[keep]
    t = np.linspace(0.0, s[-1], n)
    out = np.column_stack([np.interp(t, s, p[:, k]) for k in range(3)])
    out[0], out[-1] = p[0], p[-1]
    return out


def _f(v) -> float | None:
    v = float(v)
    return v if math.isfinite(v) else None


def _pts(a) -> list[list[float]]:
    return np.asarray(a, dtype=float).tolist()


def trace_record(trace, scenario=None) -> dict:
    """Plain-data snapshot of a DrapeTrace (JSON serializable, deterministic)."""
    net = trace.network
    iters = []
    for s in trace.states:
        shear = [
            {
                "cell": c.index,
                "diagonal": c.shear_state,
                "gamma_deg": math.degrees(c.gamma),
                "reaction": s.shear_reactions.get(c.index, 0.0),
            }
            for c in s.cells
            if c.is_shearing
        ]
        events = [
            {
                "catenary_id": e.catenary_id,
                "member_id": e.member_id,
                "kind": e.kind,
                "index_range": list(e.index_range),
                "arc_length": e.arc_length,
            }
            for e in s.events
        ]
        solve = None
        if s.solve is not None:
            solve = {
                "status": s.solve.status,
                "iterations": s.solve.iterations,
                "passes": s.solve.passes,
                "kkt": _f(s.solve.kkt),
                "max_residual": _f(s.solve.max_residual),
                "objective": _f(s.solve.objective),
            }
        iters.append(
            {
                "iteration": s.iteration,
                "positions": _pts(s.positions),
                "flags": s.flags.as_dict(),
                "solve": solve,
                "H": dict(sorted(s.H.items())),
                "slopes": {str(k): v for k, v in sorted(s.slopes.items())},
                "residuals": dict(sorted(s.residuals.items())),
                "shear": shear,
                "events": events,
                "bridging": list(s.bridging),
                "wrinkle_reasons": list(s.wrinkle_reasons),
                "taut_overstretch": dict(sorted(s.taut.items())),
                "overlength": dict(sorted(s.overlength.items())),
                "diagonal_separation": {str(k): v for k, v in sorted(s.separations.items())},
                "max_gripper_offset": s.max_offset,
                "length_balance": {cid: s.registry.balance(cid) for cid in sorted(s.registry.segments)},
                "pieces": {cid: [_pts(p) for p in parts] for cid, parts in s.pieces.items()},
                "frozen": {cid: _pts(seg.fixed_points) for cid, seg in sorted(s.registry.segments.items())},
            }
        )
    return {
        "format": "catdrape-trace",
        "version": 1,
        "scenario": scenario.name if scenario is not None else None,
        "n_pt": trace.n_pt,
        "grid": {"rows": net.grid.n_rows, "cols": net.grid.n_cols},
        "catenaries": [{"id": c.id, "kind": c.kind} for c in net.catenaries],
        "cells": [{"index": c.index, "corners": list(c.corners), "diagonals": list(c.diagonals)} for c in net.cells],
        "targets": _pts(trace.targets),
        "iterations": iters,
    }


def _write_json(path: Path, data) -> None:
    try:
        with open(path, "w") as fh:
            json.dump(data, fh, indent=1, sort_keys=False, allow_nan=False)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc


def save_trace(record: dict, out: Path) -> Path:
    path = Path(out) / TRACE_FILE
    _write_json(path, record)
    return path


def load_trace(path: str | Path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / TRACE_FILE
    try:
        with open(p) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise IoError(f"{p}: {exc}") from exc
    if data.get("format") != "catdrape-trace":
        raise IoError(f"{p}: not a trace file")
    return data


def catenary_points(record: dict, it: dict, catenary_id: str) -> np.ndarray:
    """One original catenary as exactly ``n_pt`` points."""
    parts = [np.asarray(p, dtype=float) for p in it["pieces"][catenary_id]]
    n = record["n_pt"]
    if len(parts) == 1 and len(parts[0]) == n:
        return parts[0]
    joined = [parts[0]]
    for p in parts[1:]:
        joined.append(p[1:] if np.array_equal(p[0], joined[-1][-1]) else p)
    return resample_polyline(np.vstack(joined), n)


def write_csv(record: dict, path: str | Path) -> Path:
    path = Path(path)
    kinds = {c["id"]: c["kind"] for c in record["catenaries"]}
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for it in record["iterations"]:
                for c in record["catenaries"]:
                    pts = catenary_points(record, it, c["id"])
                    for k, (x, y, z) in enumerate(pts):
                        w.writerow((it["iteration"], c["id"], kinds[c["id"]], k, f"{x:.17g}", f"{y:.17g}", f"{z:.17g}"))
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc
    return path


def _vtk_text(record: dict, it: dict) -> str:
    points: list[list[float]] = []
    lines: list[list[int]] = []
    line_kind: list[int] = []
    kinds = {c["id"]: c["kind"] for c in record["catenaries"]}
    for c in record["catenaries"]:
        for part in it["pieces"][c["id"]]:
            start = len(points)
            points.extend(part)
            lines.append(list(range(start, start + len(part))))
            line_kind.append(0 if kinds[c["id"]] == "edge" else 1)
    verts = []
    for frozen in it["frozen"].values():
        start = len(points)
        points.extend(frozen)
        verts.append(list(range(start, start + len(frozen))))
    grip0 = len(points)
    points.extend(it["positions"])
    polys = [[grip0 + g for g in cell["corners"]] for cell in record["cells"]]

    out = ["# vtk DataFile Version 3.0", f"catdrape iteration {it['iteration']}", "ASCII", "DATASET POLYDATA"]
    out.append(f"POINTS {len(points)} double")
    out.extend(f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in points)
    if verts:
        out.append(f"VERTICES {len(verts)} {sum(len(v) + 1 for v in verts)}")
        out.extend(" ".join(map(str, [len(v), *v])) for v in verts)
    out.append(f"LINES {len(lines)} {sum(len(v) + 1 for v in lines)}")
    out.extend(" ".join(map(str, [len(v), *v])) for v in lines)
    out.append(f"POLYGONS {len(polys)} {sum(len(v) + 1 for v in polys)}")
    out.extend(" ".join(map(str, [len(v), *v])) for v in polys)
    # 0 edge, 1 diagonal, 2 frozen contact points, 3 gripper cell
    kind = [2] * len(verts) + line_kind + [3] * len(polys)
    out.append(f"CELL_DATA {len(kind)}")
    out.append("SCALARS kind int 1")
    out.append("LOOKUP_TABLE default")
    out.extend(str(k) for k in kind)
    return "\n".join(out) + "\n"


def write_vtk(record: dict, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    paths = []
    for it in record["iterations"]:
        p = out_dir / f"iter_{it['iteration']:03d}.vtk"
        try:
            p.write_text(_vtk_text(record, it))
        except OSError as exc:
            raise IoError(f"{p}: {exc}") from exc
        paths.append(p)
    return paths


def write_svg(record: dict, out_dir: str | Path, iterations=()) -> list[Path]:
    """Top, front and side projections of selected iterations plus a flags timeline."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "catdrape"
    out_dir = Path(out_dir)
    its = {it["iteration"]: it for it in record["iterations"]}
    chosen = [k for k in iterations if k in its] or [min(its), max(its)]
    kinds = {c["id"]: c["kind"] for c in record["catenaries"]}
    paths = []
    views = (("x", "y", 0, 1), ("x", "z", 0, 2), ("y", "z", 1, 2))
    for k in chosen:
        it = its[k]
        fig, axes = plt.subplots(1, 3, figsize=(12, 4))
        for ax, (lx, ly, a, b) in zip(axes, views):
            for cid, parts in it["pieces"].items():
                color = "tab:red" if kinds[cid] == "edge" else "tab:orange"
                for part in parts:
                    p = np.asarray(part)
                    ax.plot(p[:, a], p[:, b], color=color, lw=0.8)
            for frozen in it["frozen"].values():
                f = np.asarray(frozen)
                ax.plot(f[:, a], f[:, b], ".", color="tab:blue", ms=1.5)
            g = np.asarray(it["positions"])
            ax.plot(g[:, a], g[:, b], "o", color="black", ms=3)
            ax.set_xlabel(f"{lx} (m)")
            ax.set_ylabel(f"{ly} (m)")
            if (lx, ly) == ("x", "y"):
                ax.set_aspect("equal", adjustable="datalim")
        fig.suptitle(f"iteration {k}")
        fig.tight_layout()
        p = out_dir / f"iter_{k:03d}.svg"
        _save(fig, p)
        paths.append(p)

    names = list(record["iterations"][0]["flags"])
    fig, ax = plt.subplots(figsize=(8, 0.5 + 0.45 * len(names)))
    xs = [it["iteration"] for it in record["iterations"]]
    for row, name in enumerate(names):
        on = [x for x, it in zip(xs, record["iterations"]) if it["flags"][name]]
        ax.scatter(on, [row] * len(on), marker="s", s=30)
    ax.set_yticks(range(len(names)), names)
    ax.set_xlabel("iteration")
    ax.set_xlim(min(xs) - 0.5, max(xs) + 0.5)
    ax.set_ylim(-0.5, len(names) - 0.5)
    fig.tight_layout()
    p = out_dir / "flags.svg"
    _save(fig, p)
    paths.append(p)
    return paths


def _save(fig, path: Path) -> None:
    import matplotlib.pyplot as plt

    try:
        fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc
    finally:
        plt.close(fig)


def first_iterations(record: dict) -> dict[str, int | None]:
    out = {}
    for name in record["iterations"][0]["flags"]:
        hits = [it["iteration"] for it in record["iterations"] if it["flags"][name]]
        out[name] = hits[0] if hits else None
    return out


def report(record: dict) -> dict:
    """JSON summary without geometry."""
    skip = {"pieces", "frozen", "positions"}
    return {
        "scenario": record["scenario"],
        "n_iterations": len(record["iterations"]),
        "first_flag_iteration": first_iterations(record),
        "final_flags": record["iterations"][-1]["flags"],
        "timing_file": TIMING_FILE,
        "iterations": [{k: v for k, v in it.items() if k not in skip} for it in record["iterations"]],
    }


def write_report(record: dict, path: str | Path) -> Path:
    path = Path(path)
    _write_json(path, report(record))
    return path


def write_timing(timings, path: str | Path) -> Path:
    path = Path(path)
    t = [float(v) for v in timings]
    _write_json(path, {"per_iteration_s": t, "mean_s": float(np.mean(t)) if t else 0.0, "total_s": float(np.sum(t))})
    return path


def export_trace(record: dict, out_dir: str | Path, formats=(), svg_iterations=()) -> list[Path]:
    """Write the requested formats into ``out_dir``; an empty list writes nothing."""
    bad = [f for f in formats if f not in FORMATS]
    if bad:
        raise ValueError(f"unknown formats {bad}")
    if not record["iterations"] and formats:
        raise ValueError("empty trace")
    out_dir = Path(out_dir)
    paths: list[Path] = []
    if not formats:
        return paths
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"{out_dir}: {exc}") from exc
    for fmt in formats:
        if fmt == "csv":
            paths.append(write_csv(record, out_dir / "points.csv"))
        elif fmt == "vtk":
            paths.extend(write_vtk(record, out_dir))
        elif fmt == "svg":
            paths.extend(write_svg(record, out_dir, svg_iterations))
        elif fmt == "report":
            paths.append(write_report(record, out_dir / "report.json"))
    return paths
