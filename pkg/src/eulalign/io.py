"""CSV/JSON writers and readers for trajectories, ledgers and point clouds."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .particles import EnergyLedger, Trajectory
from .transport import EmpiricalMeasure

LEDGER_COLUMNS = ("t", "kinetic", "potential", "damping_diss", "alignment_diss", "residual")


def _fmt(x: float) -> str:
    # repr round-trips doubles (17 significant digits at most)
    return repr(float(x))


def trajectory_header(dim: int) -> list:
    return ["t", "particle"] + [f"x{k}" for k in range(dim)] + [f"v{k}" for k in range(dim)]


def write_trajectory_csv(traj: Trajectory, path) -> Path:
    path = Path(path)
    dim = traj.snapshots[0].dim
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trajectory_header(dim))
        for s in traj.snapshots:
            for i in range(s.N):
                w.writerow([_fmt(s.time), i] + [_fmt(c) for c in s.positions[i]] + [_fmt(c) for c in s.velocities[i]])
    return path


def read_trajectory_csv(path):
    """Return ``(times, positions, velocities)`` with arrays of shape (S,), (S, N, d), (S, N, d)."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    d = sum(1 for h in header if h.startswith("x"))
    times = np.unique(body[:, 0])
    N = int(body[:, 1].max()) + 1
    body = body.reshape(len(times), N, -1)
    return times, body[:, :, 2:2 + d], body[:, :, 2 + d:]


def write_energy_csv(ledger: EnergyLedger, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LEDGER_COLUMNS)
        for row in ledger.rows():
            w.writerow([_fmt(c) for c in row])
    return path


def read_point_cloud(path) -> EmpiricalMeasure:
    """Read ``x0..x{d-1},w`` columns; the weights must already sum to one."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty point-cloud file")
    header = [h.strip() for h in rows[0]]
    d = len(header) - 1
    if header != [f"x{k}" for k in range(d)] + ["w"] or d < 1:
        raise ConfigError(f"{path}: expected header x0..x{{d-1}},w, got {','.join(header)}")
    try:
        data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if data.ndim != 2 or data.shape[0] == 0:
        raise ConfigError(f"{path}: no points")
    return EmpiricalMeasure(data[:, :d], data[:, d])


def write_point_cloud(measure: EmpiricalMeasure, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{k}" for k in range(measure.dim)] + ["w"])
        for p, wt in zip(measure.points, measure.weights):
            w.writerow([_fmt(c) for c in p] + [_fmt(wt)])
    return path


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_json_safe(obj), indent=2, sort_keys=True) + "\n")
    return path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_rates_svg(rows: list, names, path, width: int = 480, height: int = 360) -> Path:
    """Minimal log-log plot of each functional against epsilon."""
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]
    pad = 50
    series = []
    for name in names:
        pts = [(r["epsilon"], r[name]) for r in rows if r.get(name) and r[name] > 0]
        if pts:
            series.append((name, np.log10(np.array(pts))))
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             '<rect width="100%" height="100%" fill="white"/>']
    if series:
        allp = np.concatenate([s for _, s in series])
        lo, hi = allp.min(axis=0), allp.max(axis=0)
        span = np.where(hi - lo > 0, hi - lo, 1.0)

        def px(p):
            q = (p - lo) / span
            return pad + q[0] * (width - 2 * pad), height - pad - q[1] * (height - 2 * pad)

        parts.append(f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle" font-size="12">'
                     f'log10 epsilon [{lo[0]:.2f}, {hi[0]:.2f}]</text>')
        parts.append(f'<text x="12" y="{height / 2}" font-size="12" transform="rotate(-90 12 {height / 2})" '
                     f'text-anchor="middle">log10 value [{lo[1]:.2f}, {hi[1]:.2f}]</text>')
        for k, (name, s) in enumerate(series):
            c = colors[k % len(colors)]
            xy = [px(p) for p in s]
            parts.append('<polyline fill="none" stroke="{}" points="{}"/>'.format(
                c, " ".join(f"{x:.1f},{y:.1f}" for x, y in xy)))
            parts.extend(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="3" fill="{c}"/>' for x, y in xy)
            parts.append(f'<text x="{pad + 5}" y="{pad + 14 * k}" font-size="11" fill="{c}">{name}</text>')
    parts.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(parts) + "\n")
    return path
