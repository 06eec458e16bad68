import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bratkit import problem as pr


RC = pr.CHASER_RADIUS_2D  # sqrt(2)/2


def test_chaser_radii():
    assert np.isclose(RC, math.sqrt(2) * 0.5)
    assert np.isclose(pr.CHASER_RADIUS_3D, math.sqrt(3) * 0.5)


def test_avoid_fn_6d_hand_values():
    geom = pr.TargetGeometry()
    # right of the body on the x axis: face distance 2 m minus inflation
    x = np.zeros(6)
    x[0] = 5.0
    assert np.isclose(pr.avoid_fn_6d(x, geom), 2.0 - RC)
    # body corner, diagonal offset (1,1): euclidean corner distance
    x = np.zeros(6)
    x[0], x[1] = 4.0, 2.5
    assert np.isclose(pr.avoid_fn_6d(x, geom), math.sqrt(2) - RC)
    # dead center of the body: deepest inside
    x = np.zeros(6)
    assert np.isclose(pr.avoid_fn_6d(x, geom), -1.5 - RC)
    # diagonal off the port's lower-right corner (1.0, 0.5 past the faces)
    x = np.zeros(6)
    x[0], x[1] = 1.2, -3.0
    assert np.isclose(pr.avoid_fn_6d(x, geom), math.sqrt(1.0 + 0.25) - RC)


def test_avoid_fn_position_lipschitz():
    geom = pr.TargetGeometry()
    rng = np.random.default_rng(0)
    X = rng.uniform(-10, 10, size=(300, 6))
    eps = 1e-5
    for i in range(2):
        Xp = X.copy()
        Xp[:, i] += eps
        slope = np.abs(pr.avoid_fn_6d(Xp, geom) - pr.avoid_fn_6d(X, geom)) / eps
        assert slope.max() <= 1.0 + 1e-6


def test_goal_point_clear_of_obstacle():
    geom = pr.TargetGeometry()
    for kind in ("planar_translation_4d", "planar_docking_6d"):
        p = pr.make_toy_problem(kind)
        assert float(p.avoid(p.goal_state)) > 0
        assert float(p.reach(p.goal_state)) < 0
    p13 = pr.make_toy_problem("orbital_13d")
    assert float(p13.avoid(p13.goal_state)) > 0


def test_reach_fn_6d_worst_margin_at_goal():
    goal = pr.DockingGoal6D()
    x = np.zeros(6)
    x[0:2] = goal.port_center
    x[4] = goal.goal_attitude
    # all margins at their most negative simultaneously
    assert np.isclose(pr.reach_fn_6d(x, goal), -goal.att_tol)


def test_reach_fn_6d_angle_wrap():
    goal = pr.DockingGoal6D()
    x = np.zeros(6)
    x[0:2] = goal.port_center
    x[4] = goal.goal_attitude + 2 * np.pi  # same physical attitude
    assert pr.reach_fn_6d(x, goal) < 0


def test_chaser_axial_support():
    a = 0.5
    q_id = np.array([1.0, 0, 0, 0])
    assert np.isclose(pr.chaser_axial_support(q_id, a), a)
    # 45-degree roll about the docking axis' perpendicular: support grows to
    # a*sqrt(2)
    th = np.pi / 4
    q45 = np.array([np.cos(th / 2), np.sin(th / 2), 0, 0])
    assert np.isclose(pr.chaser_axial_support(q45, a), a * math.sqrt(2))


def test_avoid_13d_orientation_dependence():
    geom = pr.TargetGeometry()
    x = np.zeros(13)
    x[1] = -4.0  # below the port, along the docking axis
    x[6] = 1.0
    d_aligned = float(pr.avoid_fn_13d(x, geom))
    th = np.pi / 4
    x2 = x.copy()
    x2[6:10] = [np.cos(th / 2), np.sin(th / 2), 0, 0]
    d_rolled = float(pr.avoid_fn_13d(x2, geom))
    # a rolled cube presents a larger axial footprint -> smaller clearance
    assert d_rolled < d_aligned
    assert np.isclose(d_aligned - d_rolled, 0.5 * (math.sqrt(2) - 1))


def test_reach_13d_axial_band():
    goal = pr.DockingGoal13D()
    x = np.zeros(13)
    x[0:3] = goal.goal_point
    x[6] = 1.0
    x[4] = 0.065  # middle of the approach band
    assert pr.reach_fn_13d(x, goal) < 0
    x[4] = 0.0  # hovering: too slow to capture
    assert pr.reach_fn_13d(x, goal) > 0
    x[4] = 0.2  # too fast
    assert pr.reach_fn_13d(x, goal) > 0


def test_boundary_value_modes():
    p = pr.make_toy_problem("double_integrator_2d")
    x = np.array([0.5, 0.0])  # inside the obstacle strip
    assert p.boundary_value(x) > 0
    assert np.isclose(p.boundary_value(x),
                      max(float(p.reach(x)), -float(p.avoid(x))))
    pa = p.avoid_only()
    assert pa.mode == "avoid_only"
    assert np.isclose(pa.boundary_value(x), float(p.avoid(x)))


def test_boundary_value_iff_goal_membership():
    p = pr.make_toy_problem("planar_docking_6d")
    rng = np.random.default_rng(2)
    X = rng.uniform(p.bounds_lo, p.bounds_hi, size=(2000, 6))
    b = p.boundary_value(X)
    member = (np.asarray(p.reach(X)) <= 0) & (np.asarray(p.avoid(X)) > 0)
    # non-positive boundary value exactly on goal-minus-failure membership
    assert np.array_equal(b <= 0, member)


@settings(max_examples=200, deadline=None)
@given(st.floats(-20, 20), st.floats(-20, 20))
def test_rounded_box_sdf_against_sampled_distance(px, py):
    center = np.zeros(2)
    half = np.array([3.0, 1.5])
    r = 0.7
    p = np.array([px, py])
    d = pr._rounded_box_sdf(p, center, half, r)
    # brute force: distance to the box via coordinate clamping
    closest = np.clip(p, -half, half)
    ref = np.linalg.norm(p - closest) - r
    if np.all(np.abs(p) <= half):  # interior: clamp distance is 0, sdf < -r
        assert d <= -r + 1e-12
    else:
        assert np.isclose(d, ref, atol=1e-12)


def test_fingerprint_stability_and_sensitivity():
    a = pr.make_toy_problem("double_integrator_2d")
    b = pr.make_toy_problem("double_integrator_2d")
    assert a.fingerprint() == b.fingerprint()
    c = pr.make_toy_problem("double_integrator_2d", horizon=3.0)
    assert a.fingerprint() != c.fingerprint()
    assert a.fingerprint() != a.avoid_only().fingerprint()


def test_make_toy_problem_unknown_kind():
    with pytest.raises(ValueError):
        pr.make_toy_problem("pendulum")


def test_toy_kinds_construct():
    for kind in pr.TOY_KINDS:
        p = pr.make_toy_problem(kind)
        assert p.horizon > 0
        assert p.model.dim == len(p.bounds_lo) == len(p.bounds_hi)
