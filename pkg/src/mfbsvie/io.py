"""Artifact writers: RFC-4180 CSV, schema-versioned JSON and log-log data files.

Every artifact carries the config hash and seed.  Values are written with
``repr`` precision and JSON keys are sorted, so re-running a config
reproduces every file byte for byte.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from .bounds import BoundsRecord

SCHEMA_VERSION = 1


def to_jsonable(obj):
    """Recursively convert numpy/dataclass values; non-finite floats become strings."""
    if isinstance(obj, BoundsRecord):
        return to_jsonable(obj.as_dict())
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return to_jsonable(dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return obj


def write_json(path, payload: dict, config_hash: str, seed: int) -> Path:
    doc = {"schema_version": SCHEMA_VERSION, "config_hash": config_hash, "seed": int(seed)}
    doc.update(to_jsonable(payload))
    path = Path(path)
    path.write_text(json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n",
                    encoding="utf-8")
    return path


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows, config_hash: str, seed: int) -> Path:
    """CSV with ``config_hash`` and ``seed`` appended to every row."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(list(header) + ["config_hash", "seed"])
        for row in rows:
            w.writerow([_fmt(v) for v in row] + [config_hash, int(seed)])
    return path


def _weighted_stats(x: np.ndarray, w: np.ndarray):
    mean = math.fsum((w * x).tolist())
    var = math.fsum((w * (x - mean) ** 2).tolist())
    return mean, math.sqrt(max(var, 0.0))


def solution_rows(solution):
    """Per triangle cell: ``(t_i, t_k, mean Y, std Y, mean |Z|, std |Z|)``."""
    grid = solution.grid
    tri = grid.triangle
    t = grid.nodes
    znorm = np.sqrt(np.sum(solution.Z ** 2, axis=-1))
    rows = []
    for c, (i, k) in enumerate(zip(tri.rows, tri.cols)):
        w = solution.weights[:, k]
        y = solution.family[:, c] if solution.family is not None else (
            solution.Y[:, k] if i == k else None)
        ym, ys = _weighted_stats(y, w) if y is not None else (None, None)
        # the terminal column of Z repeats column M-1, whose states live at t_{M-1}
        wz = solution.weights[:, k - 1] if k == grid.steps and k > 0 else w
        zm, zs = _weighted_stats(znorm[:, c], wz)
        rows.append((float(t[i]), float(t[k]), ym, ys, zm, zs))
    return rows


def write_solution(out_dir, solution, config_hash: str, seed: int, extra: dict | None = None):
    """``solution.csv`` and ``diagnostics.json`` for a single solve."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "solution.csv", ["row_t", "col_t", "y_mean", "y_std", "absz_mean", "absz_std"],
              solution_rows(solution), config_hash, seed)
    payload = {"diagnostics": solution.diagnostics,
               "diagonal_y_mean": [r[2] for r in solution_rows(solution) if r[0] == r[1]]}
    if extra:
        payload.update(extra)
    write_json(out / "diagnostics.json", payload, config_hash, seed)
    return [out / "solution.csv", out / "diagnostics.json"]


def write_particles(out_dir, sol, config_hash: str, seed: int, extra: dict | None = None):
    """``particles.csv`` (per-particle Y statistics per node) and ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t = sol.grid.nodes
    w = np.full(sol.paths, 1.0 / sol.paths)
    rows = []
    for i in range(sol.N):
        for k in range(sol.grid.steps + 1):
            m, s = _weighted_stats(sol.Y[i, :, k], w)
            rows.append((i, sol.streams[i], float(t[k]), m, s))
    write_csv(out / "particles.csv", ["particle", "stream", "t", "y_mean", "y_std"], rows,
              config_hash, seed)
    manifest = {"N": sol.N, "paths": sol.paths, "particle_seed": sol.seed,
                "streams": list(sol.streams),
                "stream_layout": "particle i draws its Brownian increments from Philox "
                                 "key (seed, stream_i), scenario-major",
                "diagnostics": sol.diagnostics}
    if extra:
        manifest.update(extra)
    write_json(out / "manifest.json", manifest, config_hash, seed)
    return [out / "particles.csv", out / "manifest.json"]


def write_chaos(out_dir, report, config_hash: str, seed: int):
    """Raw errors CSV, summary CSV, report JSON and a two-column log-log file."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "chaos_raw.csv", ["N", "replication", "particle", "error"], report.raw,
              config_hash, seed)
    write_csv(out / "chaos_summary.csv", ["N", "mean", "stderr"],
              [(r["N"], r["mean"], r["stderr"]) for r in report.per_n], config_hash, seed)
    write_json(out / "chaos_report.json", report.as_dict(), config_hash, seed)
    lines = [f"# config_hash={config_hash}", f"# seed={int(seed)}", "# log(N) log(mean error)"]
    lines += [f"{math.log(r['N'])!r} {math.log(r['mean']) if r['mean'] > 0 else -math.inf!r}"
              for r in report.per_n]
    (out / "chaos_loglog.dat").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return [out / n for n in ("chaos_raw.csv", "chaos_summary.csv", "chaos_report.json",
                              "chaos_loglog.dat")]
