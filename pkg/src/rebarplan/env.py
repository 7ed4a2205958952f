"""Rebar grids, box obstacles and scenario files."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class ConfigError(ValueError):
    """Invalid grid, scenario or run configuration."""


class ObstacleKind(str, enum.Enum):
    FOOT = "foot"
    TORSO = "torso"


@dataclass(frozen=True)
class Bar:
    id: int
    p0: tuple[float, float, float]
    length: float
    theta: float

    def __post_init__(self):
        if not self.length > 0:
            raise ConfigError(f"bar {self.id}: length must be positive, got {self.length}")

    @property
    def direction(self) -> np.ndarray:
        return np.array([math.cos(self.theta), math.sin(self.theta), 0.0])

    @property
    def end(self) -> np.ndarray:
        return np.asarray(self.p0, dtype=float) + self.length * self.direction


@dataclass(frozen=True)
class Obstacle:
    id: int
    center: tuple[float, float, float]
    half_extents: tuple[float, float, float]
    kind: ObstacleKind = ObstacleKind.FOOT

    def __post_init__(self):
        if min(self.half_extents) <= 0:
            raise ConfigError(f"obstacle {self.id}: half extents must be positive")

    def contains_xy(self, p_xy, inflation: float = 0.0) -> bool:
        d = np.abs(np.asarray(p_xy[:2], dtype=float) - np.asarray(self.center[:2]))
        return bool(np.all(d <= np.asarray(self.half_extents[:2]) + inflation))


@dataclass(frozen=True)
class RebarGrid:
    """Bars (horizontal first, then vertical) plus obstacles.

    Bars ``0 .. n_horizontal-1`` are the horizontal family, the remaining
    ``n_vertical`` bars the vertical family.
    """

    bars: tuple[Bar, ...]
    obstacles: tuple[Obstacle, ...] = ()
    n_horizontal: int = 0
    n_vertical: int = 0
    _intersections: list = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = [b.id for b in self.bars]
        if len(set(ids)) != len(ids):
            raise ConfigError("bar ids must be unique")
        if self.n_horizontal + self.n_vertical != len(self.bars):
            raise ConfigError("n_horizontal + n_vertical must equal the number of bars")
        zs = {round(b.p0[2], 12) for b in self.bars}
        if len(zs) > 1:
            raise ConfigError("all bars must lie in one plane (equal p0.z)")

    def bar(self, bar_id: int) -> Bar:
        for b in self.bars:
            if b.id == bar_id:
                return b
        raise KeyError(bar_id)

    @property
    def horizontal(self) -> tuple[Bar, ...]:
        return self.bars[: self.n_horizontal]

    @property
    def vertical(self) -> tuple[Bar, ...]:
        return self.bars[self.n_horizontal:]

    @property
    def spacing(self) -> float:
        """Smallest gap between neighbouring horizontal bars (fallback 0.15)."""
        ys = sorted(b.p0[1] for b in self.horizontal)
        gaps = [b - a for a, b in zip(ys, ys[1:]) if b - a > 1e-9]
        return min(gaps) if gaps else 0.15

    def intersections(self):
        if self._intersections is None:
            object.__setattr__(self, "_intersections", grid_intersections(self))
        return self._intersections

    def bounds_xy(self) -> tuple[np.ndarray, np.ndarray]:
        pts = np.array([b.p0[:2] for b in self.bars] + [b.end[:2] for b in self.bars])
        return pts.min(axis=0), pts.max(axis=0)


def point_on_bar(bar: Bar, chi: float) -> np.ndarray:
    if not 0.0 <= chi <= 1.0:
        raise ValueError(f"chi must lie in [0, 1], got {chi}")
    return np.asarray(bar.p0, dtype=float) + chi * bar.length * bar.direction


def _segment_intersection(a0, a1, b0, b1, tol=1e-9):
    """Intersection point of two xy segments, or None (parallel / disjoint)."""
    da = a1 - a0
    db = b1 - b0
    denom = da[0] * db[1] - da[1] * db[0]
    if abs(denom) < 1e-14:
        return None
    w = b0 - a0
    s = (w[0] * db[1] - w[1] * db[0]) / denom
    t = (w[0] * da[1] - w[1] * da[0]) / denom
    if -tol <= s <= 1 + tol and -tol <= t <= 1 + tol:
        return a0 + s * da
    return None


def grid_intersections(grid: RebarGrid):
    """All horizontal/vertical crossings as ``(point, h_bar_id, v_bar_id)``."""
    out = []
    for h in grid.horizontal:
        h0 = np.asarray(h.p0[:2], dtype=float)
        h1 = h.end[:2]
        for v in grid.vertical:
            p = _segment_intersection(h0, h1, np.asarray(v.p0[:2], dtype=float), v.end[:2])
            if p is not None:
                out.append((np.array([p[0], p[1], h.p0[2]]), h.id, v.id))
    out.sort(key=lambda item: (item[1], item[2]))
    return out


def point_obstacle_distance(p, o: Obstacle) -> float:
    """Signed distance from ``p`` to the box: negative inside."""
    q = np.abs(np.asarray(p, dtype=float) - np.asarray(o.center)) - np.asarray(o.half_extents)
    outside = np.linalg.norm(np.maximum(q, 0.0))
    inside = min(float(q.max()), 0.0)
    return float(outside + inside)


def box_sdf_and_grad(points: np.ndarray, center, half_extents):
    """Vectorised box signed distance and its gradient for ``(n, 3)`` points."""
    d = points - np.asarray(center)
    s = np.where(d >= 0.0, 1.0, -1.0)
    q = np.abs(d) - np.asarray(half_extents)
    qpos = np.maximum(q, 0.0)
    outside = np.linalg.norm(qpos, axis=1)
    qmax = q.max(axis=1)
    sdf = outside + np.minimum(qmax, 0.0)
    grad = np.zeros_like(points)
    out_mask = outside > 0.0
    if np.any(out_mask):
        grad[out_mask] = s[out_mask] * qpos[out_mask] / outside[out_mask, None]
    in_mask = ~out_mask
    if np.any(in_mask):
        axis = np.argmax(q[in_mask], axis=1)
        idx = np.nonzero(in_mask)[0]
        grad[idx, axis] = s[idx, axis]
    return sdf, grad


# --------------------------------------------------------------------------
# grid generation

GRID_TYPES = ("normal", "skewed", "variable", "obstacles", "custom")


@dataclass
class GridSpec:
    type: str = "normal"
    n_h: int = 11
    n_v: int = 11
    spacing_m: float = 0.15
    skew_deg: float = 80.0
    spacings_m: Sequence[float] | None = None
    bars: Sequence[dict] | None = None
    obstacles: Sequence[dict] = ()


def _offsets(n: int, gaps: Sequence[float]) -> list[float]:
    out = [0.0]
    for i in range(n - 1):
        out.append(out[-1] + gaps[i % len(gaps)])
    return out


def _make_obstacles(items: Sequence[dict]) -> tuple[Obstacle, ...]:
    obs = []
    for i, item in enumerate(items):
        kind = ObstacleKind(item.get("kind", "foot"))
        obs.append(Obstacle(i, tuple(map(float, item["center"])),
                            tuple(map(float, item["half_extents"])), kind))
    return tuple(obs)


def make_grid(spec: GridSpec) -> RebarGrid:
    if spec.type not in GRID_TYPES:
        raise ConfigError(f"unknown grid type {spec.type!r}")
    obstacles = _make_obstacles(spec.obstacles)
    if spec.type == "custom":
        if not spec.bars:
            raise ConfigError("custom grid needs an explicit bar list")
        horizontal, vertical = [], []
        for i, item in enumerate(spec.bars):
            theta = math.radians(float(item.get("theta_deg", 0.0)))
            bar = Bar(int(item.get("id", i)), tuple(map(float, item["p0"])), float(item["length"]), theta)
            (horizontal if item.get("axis", "h") == "h" else vertical).append(bar)
        return RebarGrid(tuple(horizontal + vertical), obstacles, len(horizontal), len(vertical))

    if spec.n_h < 1 or spec.n_v < 1:
        raise ConfigError("grid needs at least one horizontal and one vertical bar")
    if not spec.spacing_m > 0:
        raise ConfigError("spacing must be positive")

    if spec.type == "variable":
        gaps = list(spec.spacings_m) if spec.spacings_m else [0.8 * spec.spacing_m, 1.2 * spec.spacing_m]
        if min(gaps) <= 0:
            raise ConfigError("spacings must be positive")
    else:
        gaps = [spec.spacing_m]
    ys = _offsets(spec.n_h, gaps)
    xs = _offsets(spec.n_v, gaps)

    skew = math.radians(spec.skew_deg) if spec.type == "skewed" else math.pi / 2
    if not 0 < skew < math.pi:
        raise ConfigError("skew angle must lie in (0, 180) degrees")
    height = ys[-1]
    shear = height / math.tan(skew) if spec.type == "skewed" else 0.0
    x_lo = min(0.0, shear)
    x_hi = xs[-1] + max(0.0, shear)
    # a 1-wide grid still needs positive bar lengths
    h_len = max(x_hi - x_lo, spec.spacing_m)
    v_len = max(height / math.sin(skew), spec.spacing_m)

    bars = []
    for i, y in enumerate(ys):
        bars.append(Bar(i, (x_lo, y, 0.0), h_len, 0.0))
    for j, x in enumerate(xs):
        bars.append(Bar(spec.n_h + j, (x, 0.0, 0.0), v_len, skew))
    return RebarGrid(tuple(bars), obstacles, spec.n_h, spec.n_v)


# --------------------------------------------------------------------------
# scenario files

FEET = ("FL", "FR", "BL", "BR")


@dataclass
class Scenario:
    name: str
    grid: RebarGrid
    start_com: np.ndarray
    start_stance: list[tuple[str, int, float]]
    goal_com: np.ndarray
    contact_sequence: tuple[str, ...] = ("BR", "BL", "FR", "FL")
    planner: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, repr=False)


def _grid_spec_from_dict(d: dict, obstacles) -> GridSpec:
    return GridSpec(
        type=d.get("type", "normal"),
        n_h=int(d.get("n_h", 11)),
        n_v=int(d.get("n_v", 11)),
        spacing_m=float(d.get("spacing_m", 0.15)),
        skew_deg=float(d.get("skew_deg", 80.0)),
        spacings_m=d.get("spacings_m"),
        bars=d.get("bars"),
        obstacles=obstacles,
    )


def scenario_from_dict(doc: dict, name: str = "scenario") -> Scenario:
    try:
        grid = make_grid(_grid_spec_from_dict(doc["grid"], doc.get("obstacles", [])))
        stance = [(s["foot"], int(s["bar_id"]), float(s["chi"])) for s in doc["start"]["stance"]]
        seq = tuple(doc.get("contact_sequence", ["BR", "BL", "FR", "FL"]))
        start_com = np.asarray(doc["start"]["com"], dtype=float)
        goal_com = np.asarray(doc["goal"]["com"], dtype=float)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed scenario: {exc}") from exc
    if sorted(seq) != sorted(FEET):
        raise ConfigError("contact_sequence must be a permutation of FL, FR, BL, BR")
    feet = [s[0] for s in stance]
    if len(set(feet)) != len(feet) or not set(feet) <= set(FEET) or len(feet) not in (3, 4):
        raise ConfigError("start stance must list 3 or 4 distinct feet")
    for _, bar_id, chi in stance:
        if not 0.0 <= chi <= 1.0:
            raise ConfigError("stance chi must lie in [0, 1]")
        grid.bar(bar_id)
    return Scenario(doc.get("name", name), grid, start_com, stance, goal_com, seq,
                    dict(doc.get("planner", {})), doc)


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    return scenario_from_dict(doc, path.stem)


PRESETS = ("case1", "case2", "case3")


def preset_path(name: str) -> Path:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")
    return Path(__file__).with_name("scenarios") / f"{name}.json"
