import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rebarplan.env import GridSpec, make_grid, point_on_bar
from rebarplan.kinematics import (FEET, leg_chain, leg_ik, leg_positions_batch,
                                  project_to_modes, shank_points_up, standing_configuration,
                                  superquadric_contains)
from rebarplan.modes import Mode, ModeFamily, foothold_targets, mode_constraint, nominal_com

GRID = make_grid(GridSpec(n_h=5, n_v=5, spacing_m=0.15))
FAM = ModeFamily((("FL", 7), ("FR", 6), ("BL", 2)), "BR")


def test_family_ordering_and_validation():
    fam = ModeFamily((("BL", 2), ("FL", 7), ("FR", 6)), "BR")
    assert fam.feet == ("FL", "FR", "BL")
    assert fam == FAM
    with pytest.raises(ValueError):
        ModeFamily((("FL", 1), ("FL", 2), ("BL", 3)), "BR")
    with pytest.raises(ValueError):
        ModeFamily((("FL", 1), ("FR", 2), ("BL", 3)), "FL")
    with pytest.raises(ValueError):
        Mode(FAM, (0.5, 1.2, 0.0))
    assert Mode.from_dict(Mode(FAM, (0.1, 0.2, 0.3)).to_dict()) == Mode(FAM, (0.1, 0.2, 0.3))


def test_foothold_targets_examples():
    bars = [GRID.bar(b) for _, b in FAM.stance]
    assert np.allclose(foothold_targets(GRID, Mode(FAM, (0, 0, 0))), [b.p0 for b in bars])
    assert np.allclose(foothold_targets(GRID, Mode(FAM, (1, 1, 1))), [b.end for b in bars])
    chi = (0.5, 0.25, 0.75)
    assert np.allclose(foothold_targets(GRID, Mode(FAM, chi)), [point_on_bar(b, c) for b, c in zip(bars, chi)])


def test_nominal_com_centroid(model):
    bars = ({"p0": [0, 0, 0], "length": 1.0, "axis": "h", "id": 0},
            {"p0": [0, 0.3, 0], "length": 1.0, "axis": "h", "id": 1},
            {"p0": [0, 0, 0], "length": 1.0, "axis": "v", "theta_deg": 90, "id": 2})
    g = make_grid(GridSpec(type="custom", bars=bars))
    fam = ModeFamily((("FL", 1), ("FR", 0), ("BR", 2)), "BL")
    # FL at (0, 0.3), FR at (0.3, 0), BR at (0, 0)
    mode = Mode(fam, (0.0, 0.3, 0.0))
    assert np.allclose(nominal_com(g, model, mode), [0.1, 0.1, 0.325])


@settings(max_examples=40)
@given(st.tuples(*[st.floats(0, 1)] * 3), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_nominal_com_translation(chi, dx, dy):
    from rebarplan.kinematics import RobotModel
    spec = GridSpec(n_h=5, n_v=5, spacing_m=0.15)
    g = make_grid(spec)
    moved = make_grid(GridSpec(type="custom", bars=[
        {"id": b.id, "p0": [b.p0[0] + dx, b.p0[1] + dy, 0], "length": b.length,
         "theta_deg": float(np.degrees(b.theta)), "axis": "h" if b.id < 5 else "v"} for b in g.bars]))
    m = RobotModel()
    a = nominal_com(g, m, Mode(FAM, chi))
    b = nominal_com(moved, m, Mode(FAM, chi))
    assert np.allclose(b - a, [dx, dy, 0], atol=1e-12)


@settings(max_examples=40)
@given(st.tuples(*[st.floats(0, 1)] * 3), st.tuples(*[st.floats(0, 1)] * 3))
def test_foothold_targets_injective(c1, c2):
    if np.allclose(c1, c2, atol=1e-12, rtol=0):
        return
    assert not np.allclose(foothold_targets(GRID, Mode(FAM, c1)), foothold_targets(GRID, Mode(FAM, c2)),
                           atol=1e-15, rtol=0)


def test_mode_constraint_round_trip_and_perturbation(model):
    mode = Mode(FAM, (0.5, 0.5, 0.5))
    targets = foothold_targets(GRID, mode)
    seed = standing_configuration(model, nominal_com(GRID, model, mode))
    cfg = project_to_modes(model, seed, list(zip(FAM.feet, targets)))
    assert cfg
    assert np.max(np.abs(mode_constraint(GRID, model, mode, cfg))) <= 1e-6
    moved = cfg.copy()
    moved.torso_pos[0] += 0.01
    r = mode_constraint(GRID, model, mode, moved).reshape(3, 3)
    assert np.allclose(r[:, 0], 0.01, atol=1e-6)
    # horizontal bars (theta = 0): chi shifts the x row by -dchi * length
    fam_h = ModeFamily((("FL", 3), ("FR", 2), ("BL", 1)), "BR")
    m1 = Mode(fam_h, (0.5, 0.5, 0.5))
    m2 = Mode(fam_h, (0.55, 0.5, 0.5))
    d = mode_constraint(GRID, model, m2, cfg) - mode_constraint(GRID, model, m1, cfg)
    assert d[0] == pytest.approx(-0.05 * GRID.bar(3).length)


def _ik_reachable(model, foot, p, com):
    rel = p - (com + model.hip(foot))
    q = leg_ik(model, rel)
    _, tip = leg_chain(model, q)
    knees, feet = leg_positions_batch(model, q[None])
    return np.max(np.abs(tip - rel)) <= 1e-6 and not shank_points_up(knees, feet)[0]


def test_reach_regions_track_fixed_torso_ik(model, reach):
    """Superquadric membership vs leg IK with the torso held at the nominal CoM."""
    g = make_grid(GridSpec(n_h=11, n_v=11))
    rng = np.random.default_rng(0)
    permissive = conservative = 0
    n = 200
    for _ in range(n):
        swing = FEET[rng.integers(4)]
        c = rng.uniform(0.4, 1.1, 2)
        stance = []
        for f in (f for f in FEET if f != swing):
            p = c + model.hip(f)[:2] + rng.normal(0, 0.08, 2)
            best = None
            for bar in g.bars:
                chi = float(np.clip((p - np.asarray(bar.p0[:2])) @ bar.direction[:2] / bar.length, 0, 1))
                d = np.linalg.norm(point_on_bar(bar, chi)[:2] - p)
                if best is None or d < best[0]:
                    best = (d, bar.id, chi)
            stance.append((f, best[1], best[2]))
        mode = Mode(ModeFamily(tuple((f, b) for f, b, _ in stance), swing), tuple(x for _, _, x in stance))
        tg = foothold_targets(g, mode)
        nc = nominal_com(g, model, mode)
        feet = mode.family.feet
        sq = all(superquadric_contains(reach[f], tg[i, :2] - nc[:2] - model.hip(f)[:2]) for i, f in enumerate(feet))
        ik = all(_ik_reachable(model, f, tg[i], nc) for i, f in enumerate(feet))
        permissive += sq and not ik
        conservative += ik and not sq
    # 95% coverage fits trim the workspace edge, so most disagreement is conservative
    assert permissive / n <= 0.02
    assert (permissive + conservative) / n <= 0.06
