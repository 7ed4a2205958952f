import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rebarplan.kinematics import (FEET, Configuration, ProjectionFailure, Superquadric, containment_fraction,
                                  fit_reachability, forward_kinematics, leg_ik, leg_positions_batch,
                                  project_to_modes, rotation, sample_ground_contacts, shank_points_up,
                                  standing_configuration, superquadric_contains, load_reach, save_reach)


def test_vertical_leg_ik(model):
    q = leg_ik(model, np.array([0.0, 0.0, -0.35]))
    cfg = Configuration(np.array([0.0, 0.0, 0.35]), joints=np.tile(q, 4))
    for f in FEET:
        assert abs(forward_kinematics(model, cfg, f)[2]) <= 1e-9


def test_zero_pose(model):
    cfg = Configuration(np.array([0.1, 0.2, 0.5]))
    for f in FEET:
        expect = cfg.torso_pos + model.hip(f) + np.array([0, 0, -sum(model.link_lengths)])
        assert np.allclose(forward_kinematics(model, cfg, f), expect, atol=1e-12)


def _random_config(rng, model):
    return Configuration(rng.uniform(-1, 1, 3), rng.uniform(-0.3, 0.3, 3), rng.uniform(model.lower, model.upper))


def test_translation_and_yaw_equivariance(model, rng):
    for _ in range(20):
        cfg = _random_config(rng, model)
        delta = rng.uniform(-1, 1, 3)
        moved = cfg.copy()
        moved.torso_pos = cfg.torso_pos + delta
        alpha = rng.uniform(-math.pi, math.pi)
        turned = Configuration(cfg.torso_pos.copy(), np.zeros(3), cfg.joints.copy())
        base = Configuration(cfg.torso_pos.copy(), np.zeros(3), cfg.joints.copy())
        turned.torso_rpy = np.array([0, 0, alpha])
        Rz = rotation([0, 0, alpha])
        for f in FEET:
            assert np.allclose(forward_kinematics(model, moved, f), forward_kinematics(model, cfg, f) + delta,
                               atol=1e-12)
            p0 = forward_kinematics(model, base, f) - base.torso_pos
            assert np.allclose(forward_kinematics(model, turned, f) - turned.torso_pos, Rz @ p0, atol=1e-9)


def test_projection_fixed_point(model):
    seed = standing_configuration(model, np.array([0, 0, 0.325]))
    targets = [(f, forward_kinematics(model, seed, f)) for f in FEET]
    out = project_to_modes(model, seed, targets)
    assert out
    assert np.allclose(out.as_vector(), seed.as_vector(), atol=1e-12)


def test_projection_square_stance(model, rng):
    known = standing_configuration(model, np.array([0.02, -0.01, 0.31]))
    targets = [(f, forward_kinematics(model, known, f)) for f in FEET]
    seed = standing_configuration(model, np.array([0, 0, 0.325]))
    out = project_to_modes(model, seed, targets)
    assert out
    for f, p in targets:
        assert np.max(np.abs(forward_kinematics(model, out, f) - p)) <= 1e-6


def test_projection_out_of_reach(model):
    seed = standing_configuration(model, np.array([0, 0, 0.325]))
    # other feet pinned, so the torso cannot chase the far target
    targets = [(f, forward_kinematics(model, seed, f)) for f in FEET[1:]]
    far = forward_kinematics(model, seed, "FL") + np.array([2.0, 0.0, 0.0])
    out = project_to_modes(model, seed, [("FL", far)] + targets)
    assert isinstance(out, ProjectionFailure) and not out


def test_superquadric_examples():
    sq = Superquadric((0.0, 0.0), 1.0, 1.0, 2.0, 2.0)
    assert superquadric_contains(sq, (0, 0))
    assert superquadric_contains(sq, (1, 0))
    assert not superquadric_contains(sq, (0.9, 0.9))


def test_fit_contains_samples_and_center(model, reach):
    for i, f in enumerate(FEET):
        sq = reach[f]
        pts = sample_ground_contacts(model, f, 20000, i)
        assert containment_fraction(sq, pts) >= 0.95
        assert superquadric_contains(sq, sq.center)
        assert not superquadric_contains(sq, (sq.center[0] + 1.0, sq.center[1]))
        assert max(sq.A, sq.B) <= 0.40


def test_fit_deterministic(model, tmp_path):
    a = fit_reachability(model, "FL", 10000, 7)
    b = fit_reachability(model, "FL", 10000, 7)
    assert a == b
    with pytest.raises(ValueError):
        fit_reachability(model, "FL", 999, 0)
    reach = {f: a for f in FEET}
    save_reach(reach, tmp_path / "r.json")
    assert load_reach(tmp_path / "r.json") == reach


def test_shank_outliers_excluded(model, rng):
    q = rng.uniform(model.lower[:3], model.upper[:3], size=(5000, 3))
    knees, feet = leg_positions_batch(model, q)
    up = shank_points_up(knees, feet)
    assert up.any() and not up.all()
    # ground contacts never come from an upward shank
    pts = sample_ground_contacts(model, "FR", 5000, 3)
    assert len(pts) > 0


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.15, 0.15), st.floats(-0.1, 0.1), st.floats(-0.36, -0.2))
def test_ik_round_trip(x, y, z):
    from rebarplan.kinematics import RobotModel, leg_chain
    m = RobotModel()
    q = leg_ik(m, np.array([x, y, z]))
    _, foot = leg_chain(m, q)
    if np.all(q > m.lower[:3] + 1e-9) and np.all(q < m.upper[:3] - 1e-9):
        assert np.allclose(foot, [x, y, z], atol=1e-9)
