"""Deterministic SVG scenes and matplotlib report figures.

Scene geometry is written in world metres inside one flipped group, so a
reader can parse coordinates back without knowing the view transform.
Bars are the only ``<line>`` elements.
"""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .env import ObstacleKind, Scenario, point_on_bar

PX_PER_M = 500.0
PAD_M = 0.1
FOOT_COLORS = {"FL": "#d62728", "FR": "#1f77b4", "BL": "#ff7f0e", "BR": "#2ca02c"}


def _f(x: float) -> str:
    s = f"{x:.4f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def _pts(points) -> str:
    return " ".join(f"{_f(p[0])},{_f(p[1])}" for p in points)


def scene_svg(scenario: Scenario, com_trace=None, footholds=None, torso_path=None, swing_paths=None,
              goal_radius: float = 0.10, title: str | None = None) -> str:
    """Grid, obstacles, goal, torso path, footholds and CoM trace as an SVG string.

    ``footholds`` is a sequence of ``(foot, bar_id, chi)``; ``swing_paths`` a
    list of ``(n, 3)`` arrays drawn by their xy projection.
    """
    grid = scenario.grid
    lo, hi = grid.bounds_xy()
    x0, y0 = lo[0] - PAD_M, lo[1] - PAD_M
    x1, y1 = hi[0] + PAD_M, hi[1] + PAD_M
    w = (x1 - x0) * PX_PER_M
    h = (y1 - y0) * PX_PER_M
    s = PX_PER_M
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(w)}" height="{_f(h)}" '
        f'viewBox="0 0 {_f(w)} {_f(h)}">',
    ]
    if title:
        out.append(f"<title>{escape(title)}</title>")
    out.append('<rect x="0" y="0" width="100%" height="100%" fill="white"/>')
    out.append(f'<g id="world" transform="matrix({_f(s)} 0 0 {_f(-s)} {_f(-x0 * s)} {_f(y1 * s)})">')

    out.append('<g id="obstacles">')
    for o in grid.obstacles:
        cx, cy = o.center[0], o.center[1]
        hx, hy = o.half_extents[0], o.half_extents[1]
        fill = "#7f7f7f" if o.kind is ObstacleKind.TORSO else "#bcbd22"
        out.append(f'<rect x="{_f(cx - hx)}" y="{_f(cy - hy)}" width="{_f(2 * hx)}" height="{_f(2 * hy)}" '
                   f'fill="{fill}" fill-opacity="0.6" data-kind="{o.kind.value}"/>')
    out.append("</g>")

    out.append('<g id="bars" stroke="#444" stroke-width="2" vector-effect="non-scaling-stroke">')
    for b in grid.bars:
        p, q = b.p0, b.end
        out.append(f'<line x1="{_f(p[0])}" y1="{_f(p[1])}" x2="{_f(q[0])}" y2="{_f(q[1])}" '
                   f'vector-effect="non-scaling-stroke" data-bar="{b.id}"/>')
    out.append("</g>")

    g = scenario.goal_com
    out.append(f'<circle id="goal" cx="{_f(g[0])}" cy="{_f(g[1])}" r="{_f(goal_radius)}" fill="none" '
               f'stroke="#9467bd" stroke-width="2" stroke-dasharray="6 4" vector-effect="non-scaling-stroke"/>')

    if torso_path is not None:
        pts = torso_path.as_array() if hasattr(torso_path, "as_array") else np.asarray(torso_path)
        out.append(f'<polyline id="torso-path" points="{_pts(pts)}" fill="none" stroke="#17becf" '
                   f'stroke-width="3" stroke-opacity="0.7" vector-effect="non-scaling-stroke"/>')

    for i, path in enumerate(swing_paths or []):
        path = np.asarray(path)
        out.append(f'<polyline class="swing" data-step="{i}" points="{_pts(path[:, :2])}" fill="none" '
                   f'stroke="#8c564b" stroke-width="1" vector-effect="non-scaling-stroke"/>')

    if footholds:
        out.append('<g id="footholds">')
        for i, (foot, bar, chi) in enumerate(footholds):
            p = point_on_bar(grid.bar(int(bar)), float(chi))
            out.append(f'<circle cx="{_f(p[0])}" cy="{_f(p[1])}" r="0.012" fill="{FOOT_COLORS[foot]}" '
                       f'data-foot="{foot}" data-step="{i}"/>')
        out.append("</g>")

    if com_trace is not None and len(com_trace):
        pts = np.asarray(com_trace, dtype=float)
        out.append(f'<polyline id="com-trace" points="{_pts(pts[:, :2])}" fill="none" stroke="black" '
                   f'stroke-width="2" vector-effect="non-scaling-stroke"/>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def parse_polyline(svg: str, element_id: str) -> np.ndarray:
    """World coordinates of the polyline with ``id=element_id``."""
    import xml.etree.ElementTree as ET
    root = ET.fromstring(svg)
    for el in root.iter():
        if el.tag.endswith("polyline") and el.get("id") == element_id:
            return np.array([[float(v) for v in p.split(",")] for p in el.get("points").split()])
    raise KeyError(element_id)


def write_svg(path, text: str) -> Path:
    path = Path(path)
    path.write_text(text)
    return path


# --------------------------------------------------------------------------
# matplotlib report

def report_figures(records, out_dir, title: str = "") -> list[Path]:
    """Per-trial TO and graph-search times plus cumulative successes, as PNG files."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    idx = np.array([r.trial_index for r in records])
    to_mean = np.array([r.to_solve_ms[0] for r in records], dtype=float)
    to_min = np.array([r.to_solve_ms[1] for r in records], dtype=float)
    to_max = np.array([r.to_solve_ms[2] for r in records], dtype=float)
    graph = np.array([r.graph_search_ms for r in records], dtype=float)
    goal = np.array([r.reached_goal for r in records], dtype=bool)
    paths = []

    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.fill_between(idx, to_min, to_max, color="C0", alpha=0.2, label="min-max")
    ax.plot(idx, to_mean, color="C0", lw=1.2, label="mean")
    ax.scatter(idx[goal], to_mean[goal], color="C2", s=12, zorder=3, label="goal reached")
    ax.set_xlabel("trial")
    ax.set_ylabel("TO solve time per transition [ms]")
    ax.set_title(title or "trajectory optimization time")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    paths.append(out_dir / "to_times.png")
    fig.savefig(paths[-1], dpi=120)
    plt.close(fig)

    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3))
    a1.plot(idx, graph, color="C1", lw=1.0)
    a1.set_xlabel("trial")
    a1.set_ylabel("graph search [ms]")
    a2.step(idx, np.cumsum(goal), where="post", color="C2")
    a2.set_xlabel("trial")
    a2.set_ylabel("goal-reaching trials")
    fig.tight_layout()
    paths.append(out_dir / "search_and_successes.png")
    fig.savefig(paths[-1], dpi=120)
    plt.close(fig)
    return paths


def trial_swing_paths(plans, samples: int = 20) -> list[np.ndarray]:
    """Sampled swing-foot paths from serialized plans (``to_dict`` output)."""
    from .trajopt import swing_eval
    out = []
    for d in plans:
        P = np.asarray(d["swing_points"], dtype=float)
        T = d["times"][-1]
        t0 = d.get("liftoff", 0.0)
        ts = np.linspace(t0, T, samples)
        out.append(np.array([swing_eval(P, t, T, t0) for t in ts]))
    return out
