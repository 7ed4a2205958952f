import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rebarplan.env import GridSpec, Obstacle, ObstacleKind, make_grid
from rebarplan.torso import (INFLATED_WEIGHT, OBSTACLE_WEIGHT, TorsoPath, edge_costs, obstacle_weight,
                             path_distance, plan_torso)


def test_obstacle_weight_table():
    box = [Obstacle(0, (0.0, 0.0, 0.2), (0.05, 0.05, 0.2), ObstacleKind.TORSO)]
    assert obstacle_weight((0.0, 0.0), (0.5, 0.5), box, 0.15) == 100.0 == OBSTACLE_WEIGHT
    assert obstacle_weight((0.5, 0.5), (0.01, 0.04), box, 0.15) == 100.0
    assert obstacle_weight((0.15, 0.0), (0.5, 0.5), box, 0.15) == 25.0 == INFLATED_WEIGHT
    assert obstacle_weight((0.21, 0.0), (0.5, 0.5), box, 0.15) == 0.0
    assert obstacle_weight((0.21, 0.0), (0.5, 0.5), [], 0.15) == 0.0


def test_straight_path_along_bar():
    g = make_grid(GridSpec(n_h=5, n_v=5, spacing_m=0.15))
    p = plan_torso(g, (0, 0), (0.6, 0))
    assert p.cost == pytest.approx(0.6)
    assert len(p.waypoints) == 5
    q = plan_torso(g, (0.3, 0.3), (0.3, 0.3))
    assert q.cost == 0 and len(q.waypoints) == 1


def test_detour_around_obstacle():
    obs = [{"center": [0.3, 0.0, 0.2], "half_extents": [0.04, 0.04, 0.2], "kind": "torso"}]
    g = make_grid(GridSpec(type="obstacles", n_h=5, n_v=5, spacing_m=0.15, obstacles=obs))
    p = plan_torso(g, (0, 0), (0.6, 0), inflation=0.0)
    assert not any(g.obstacles[0].contains_xy(w) for w in p.waypoints)
    assert p.cost < 0.6 + 2 * OBSTACLE_WEIGHT


def _random_spec(rng):
    n = int(rng.integers(3, 8))
    obs = []
    for _ in range(int(rng.integers(0, 4))):
        c = rng.uniform(0, 0.15 * (n - 1), 2)
        obs.append({"center": [c[0], c[1], 0.2], "half_extents": list(rng.uniform(0.02, 0.12, 2)) + [0.2],
                    "kind": "torso"})
    return GridSpec(type=str(rng.choice(["normal", "variable"])), n_h=n, n_v=n, spacing_m=0.15, obstacles=obs)


def _random_obstacle_grid(rng):
    return make_grid(_random_spec(rng))


def test_astar_equals_dijkstra_random_obstacles():
    rng = np.random.default_rng(11)
    for _ in range(50):
        g = _random_obstacle_grid(rng)
        pts, adj, costs = edge_costs(g, 0.15)
        G = nx.Graph()
        for (a, b), c in costs.items():
            G.add_edge(a, b, weight=c)
        s, t = rng.choice(len(pts), 2)
        p = plan_torso(g, pts[s], pts[t])
        assert p.cost == nx.dijkstra_path_length(G, int(s), int(t))
        # euclidean heuristic never exceeds the true cost
        assert np.linalg.norm(pts[s] - pts[t]) <= p.cost + 1e-12


def test_adding_obstacle_never_cheapens():
    rng = np.random.default_rng(3)
    for _ in range(20):
        spec = _random_spec(rng)
        g = make_grid(spec)
        pts, _, _ = edge_costs(g, 0.15)
        s, t = rng.choice(len(pts), 2)
        base = plan_torso(g, pts[s], pts[t]).cost
        c = rng.uniform(0, 0.6, 2)
        spec.obstacles = list(spec.obstacles) + [
            {"center": [c[0], c[1], 0.2], "half_extents": [0.05, 0.05, 0.2], "kind": "torso"}]
        assert plan_torso(make_grid(spec), pts[s], pts[t]).cost >= base


def test_foot_obstacles_ignored_by_default():
    obs = [{"center": [0.3, 0.0, 0.02], "half_extents": [0.04, 0.04, 0.02], "kind": "foot"}]
    g = make_grid(GridSpec(type="obstacles", n_h=3, n_v=5, spacing_m=0.15, obstacles=obs))
    assert plan_torso(g, (0, 0), (0.6, 0)).cost == pytest.approx(0.6)


def test_path_distance_examples():
    path = TorsoPath([np.array([0.0, 0.0]), np.array([1.0, 0.0])], 1.0)
    assert path_distance(path, (0.5, 0.0)) == 0
    assert path_distance(path, (0.5, 0.1)) == pytest.approx(0.1)


@settings(max_examples=40)
@given(st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=2, max_size=6),
       st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
def test_path_distance_dense_oracle(pts, x, y):
    pts = np.array(pts)
    dense = np.concatenate([a + np.linspace(0, 1, 20001)[:, None] * (b - a) for a, b in zip(pts[:-1], pts[1:])])
    oracle = np.min(np.linalg.norm(dense - [x, y], axis=1))
    seg = max(np.linalg.norm(b - a) for a, b in zip(pts[:-1], pts[1:]))
    # dense sampling overestimates by at most half a sample gap
    assert path_distance(pts, (x, y)) <= oracle + 1e-12
    assert oracle - path_distance(pts, (x, y)) <= 0.5 * seg / 20000 + 1e-12
