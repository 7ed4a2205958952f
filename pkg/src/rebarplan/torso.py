"""Guiding torso path: A* over rebar grid intersections."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .env import ConfigError, ObstacleKind, RebarGrid

OBSTACLE_WEIGHT = 100.0
INFLATED_WEIGHT = 25.0
DEFAULT_INFLATION = 0.15


@dataclass
class TorsoPath:
    waypoints: list[np.ndarray]
    cost: float

    def as_array(self) -> np.ndarray:
        return np.array([w[:2] for w in self.waypoints], dtype=float).reshape(-1, 2)

    def to_dict(self) -> dict:
        return {"waypoints": [[float(w[0]), float(w[1])] for w in self.waypoints], "cost": self.cost}

    @classmethod
    def from_dict(cls, d) -> "TorsoPath":
        return cls([np.asarray(w, dtype=float) for w in d["waypoints"]], float(d["cost"]))


class TorsoPlanFailure(RuntimeError):
    pass


def obstacle_weight(p1, p2, obstacles, inflation: float) -> float:
    """100 if either endpoint is inside an obstacle footprint, 25 if inside an inflated one, else 0."""
    if any(o.contains_xy(p1) or o.contains_xy(p2) for o in obstacles):
        return OBSTACLE_WEIGHT
    if any(o.contains_xy(p1, inflation) or o.contains_xy(p2, inflation) for o in obstacles):
        return INFLATED_WEIGHT
    return 0.0


def intersection_graph(grid: RebarGrid):
    """Intersection points (n, 2) and 4-neighbour adjacency along bars."""
    inter = grid.intersections()
    pts = np.array([p[:2] for p, _, _ in inter]).reshape(-1, 2)
    on_bar: dict[int, list[int]] = {}
    for idx, (_, h, v) in enumerate(inter):
        on_bar.setdefault(h, []).append(idx)
        on_bar.setdefault(v, []).append(idx)
    adj: dict[int, set[int]] = {i: set() for i in range(len(inter))}
    for bar_id, members in on_bar.items():
        bar = grid.bar(bar_id)
        d = np.asarray(bar.direction[:2])
        origin = np.asarray(bar.p0[:2])
        members = sorted(members, key=lambda i: float((pts[i] - origin) @ d))
        for a, b in zip(members, members[1:]):
            adj[a].add(b)
            adj[b].add(a)
    return pts, {i: sorted(n) for i, n in adj.items()}


def _snap(pts, xy, tol):
    d = np.linalg.norm(pts - np.asarray(xy[:2], dtype=float), axis=1)
    i = int(np.argmin(d))
    if d[i] > tol + 1e-12:
        raise ConfigError(f"point {tuple(xy[:2])} is not within {tol:.3f} m of a grid intersection")
    return i


def edge_costs(grid: RebarGrid, inflation: float, kinds=(ObstacleKind.TORSO,)):
    pts, adj = intersection_graph(grid)
    obstacles = [o for o in grid.obstacles if o.kind in kinds]
    costs = {}
    for a, nbrs in adj.items():
        for b in nbrs:
            if a < b:
                c = float(np.linalg.norm(pts[a] - pts[b])) + obstacle_weight(pts[a], pts[b], obstacles, inflation)
                costs[(a, b)] = costs[(b, a)] = c
    return pts, adj, costs


def plan_torso(grid: RebarGrid, start_xy, goal_xy, inflation: float = DEFAULT_INFLATION,
               kinds=(ObstacleKind.TORSO,)) -> TorsoPath:
    """Optimal intersection path; obstacles of the given ``kinds`` add proximity weights."""
    pts, adj, costs = edge_costs(grid, inflation, kinds)
    tol = 0.5 * grid.spacing
    s = _snap(pts, start_xy, tol)
    g = _snap(pts, goal_xy, tol)
    goal = pts[g]

    def h(i):
        return math.hypot(pts[i][0] - goal[0], pts[i][1] - goal[1])

    best = {s: 0.0}
    parent = {s: -1}
    heap = [(h(s), 0.0, s)]
    closed = set()
    while heap:
        _, cost, u = heapq.heappop(heap)
        if u in closed:
            continue
        if u == g:
            path = [u]
            while parent[path[-1]] != -1:
                path.append(parent[path[-1]])
            return TorsoPath([pts[i].copy() for i in reversed(path)], cost)
        closed.add(u)
        for v in adj[u]:
            nc = cost + costs[(u, v)]
            if nc < best.get(v, math.inf):
                best[v] = nc
                parent[v] = u
                heapq.heappush(heap, (nc + h(v), nc, v))
    raise TorsoPlanFailure("no torso path between start and goal")


def path_distance(path, p_xy) -> float:
    """Distance from ``p_xy`` to the path polyline."""
    pts = path.as_array() if isinstance(path, TorsoPath) else np.asarray(path, dtype=float).reshape(-1, 2)
    return float(polyline_distances(pts, np.asarray(p_xy, dtype=float)[None, :2])[0])


def polyline_distances(pts: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Vectorised point-to-polyline distance for ``(m, 2)`` queries."""
    if len(pts) == 0:
        raise ValueError("empty path")
    if len(pts) == 1:
        return np.linalg.norm(queries - pts[0], axis=1)
    a = pts[:-1][None, :, :]
    ab = (pts[1:] - pts[:-1])[None, :, :]
    ap = queries[:, None, :] - a
    denom = np.maximum((ab ** 2).sum(axis=2), 1e-300)
    t = np.clip((ap * ab).sum(axis=2) / denom, 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.sqrt(((queries[:, None, :] - closest) ** 2).sum(axis=2)).min(axis=1)
