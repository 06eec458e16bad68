"""Reach and avoid functions for the docking problems and toy instances.

Sign conventions: reach function g(x) <= 0 inside the goal set, avoid
function l(x) <= 0 inside the failure set (so positive l means clear of the
obstacle). All functions are batched over leading axes and accept numpy
arrays or torch tensors, which lets the training losses differentiate
through them.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import arrays as ar
from .dynamics import (
    DoubleIntegrator2DModel,
    DynamicsModel,
    Orbital13DModel,
    Planar6DModel,
    PlanarTranslation4DModel,
    quat_rotmat,
    wrap_angle,
)

CHASER_CUBE_HALF = 0.5
CHASER_RADIUS_2D = math.sqrt(2.0) * CHASER_CUBE_HALF   # ~0.707, planar bounding circle
CHASER_RADIUS_3D = math.sqrt(3.0) * CHASER_CUBE_HALF   # bounding sphere


@dataclass(frozen=True)
class TargetGeometry:
    """Target body/port boxes (half extents, centers) and chaser size."""

    body_half: tuple = (3.0, 1.5)             # 6 x 3 m rectangle
    port_half: tuple = (0.2, 0.5)             # 0.4 m wide, 1 m long
    port_center: tuple = (0.0, -2.0)          # attached below the body
    chaser_radius: float = CHASER_RADIUS_2D
    # 13D additions
    body_half_3d: tuple = (3.0, 1.5, 1.5)
    port_half_3d: tuple = (0.2, 0.5, 0.2)
    port_center_3d: tuple = (0.0, -2.0, 0.0)
    cube_half: float = CHASER_CUBE_HALF

    def __post_init__(self):
        if self.chaser_radius <= 0 or self.cube_half <= 0:
            raise ValueError("chaser size must be positive")

    def body_center_2d(self):
        return (0.0, 0.0)

    def body_center_3d(self):
        return (0.0, 0.0, 0.0)


def _goal_y(geom: TargetGeometry, inflation: float, clearance: float = 0.3) -> float:
    """Docking point: `clearance` below the inflated port tip."""
    tip = geom.port_center[1] - geom.port_half[1]
    return tip - inflation - clearance


@dataclass(frozen=True)
class DockingGoal6D:
    port_center: tuple = None  # filled from geometry when None
    goal_attitude: float = math.pi / 2
    pos_tol: float = 0.1
    vel_tol: float = 0.1
    att_tol: float = 0.04
    rate_tol: float = 0.05

    def __post_init__(self):
        for t in (self.pos_tol, self.vel_tol, self.att_tol, self.rate_tol):
            if t <= 0:
                raise ValueError("tolerances must be strictly positive")
        if self.port_center is None:
            geom = TargetGeometry()
            object.__setattr__(
                self, "port_center", (0.0, _goal_y(geom, geom.chaser_radius)))


@dataclass(frozen=True)
class DockingGoal13D:
    """IDSS-style capture tolerances; margins mix units via fixed scalings
    (velocities x 1 s, angles x 1 m/rad, rates x 1 m s/rad) so the max() is
    commensurate in meters."""

    goal_point: tuple = None
    lateral_pos_tol: float = 0.10
    axial_pos_tol: float = 0.10
    lateral_vel_tol: float = 0.02
    axial_vel_band: tuple = (0.03, 0.10)
    attitude_tol: float = math.radians(8.7)
    rate_tol: tuple = tuple(math.radians(v) for v in (0.15, 0.4, 0.15))  # rad/s
    goal_quat: tuple = (1.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.axial_vel_band[0] < self.axial_vel_band[1]:
            raise ValueError("axial velocity band lower bound must be below upper")
        if self.goal_point is None:
            geom = TargetGeometry()
            object.__setattr__(
                self, "goal_point", (0.0, _goal_y(geom, CHASER_RADIUS_3D), 0.0))


# ---------------------------------------------------------------------------
# Signed distances

def _rounded_box_sdf(p, center, half, radius):
    """Exact signed distance to a box Minkowski-inflated by `radius`.

    Works in any dimension; p shaped (..., d).
    """
    d = abs(p - center) - half
    outside = ar.norm(ar.maximum(d, 0.0))
    inside = ar.minimum(d.max(-1)[0] if ar.is_tensor(d) else d.max(-1), 0.0)
    return outside + inside - radius


def avoid_fn_6d(x, geom: TargetGeometry):
    """Signed distance to (body + port), each inflated by the bounding circle."""
    p = x[..., 0:2]
    body = _rounded_box_sdf(p, _like(geom.body_center_2d(), p),
                            _like(geom.body_half, p), geom.chaser_radius)
    port = _rounded_box_sdf(p, _like(geom.port_center, p),
                            _like(geom.port_half, p), geom.chaser_radius)
    return ar.minimum(body, port)


def reach_fn_6d(x, goal: DockingGoal6D):
    d_pos = ar.norm(x[..., 0:2] - _like(goal.port_center, x)) - goal.pos_tol
    d_vel = ar.norm(x[..., 2:4]) - goal.vel_tol
    d_att = abs(wrap_angle(x[..., 4] - goal.goal_attitude)) - goal.att_tol
    d_rate = abs(x[..., 5]) - goal.rate_tol
    return ar.maximum(ar.maximum(d_pos, d_vel), ar.maximum(d_att, d_rate))


def chaser_axial_support(q, cube_half: float):
    """Support function of the chaser cube along the docking (y) axis.

    h(q) = a * sum_k |(R(q)^T e_y)_k|; equals a for an aligned cube and
    grows toward a*sqrt(3) at vertex directions.
    """
    R = quat_rotmat(q)
    row = R[..., 1, :]  # (R^T e_y)_k = R[1, k]
    return cube_half * abs(row).sum(-1)


def avoid_fn_13d(x, geom: TargetGeometry):
    """Signed distance with orientation-dependent inflation along the docking axis.

    The docking-axis half extent is inflated by the cube support function
    h(q); the lateral axes use the bounding-sphere radius.
    """
    p = x[..., 0:3]
    q = x[..., 6:10]
    h = chaser_axial_support(q, geom.cube_half)
    r_s = math.sqrt(3.0) * geom.cube_half
    infl = ar.stack([ar.full_like(h, r_s), h, ar.full_like(h, r_s)], axis=-1)

    def box(center, half):
        d = abs(p - _like(center, p)) - (_like(half, p) + infl)
        outside = ar.norm(ar.maximum(d, 0.0))
        inside = ar.minimum(d.max(-1)[0] if ar.is_tensor(d) else d.max(-1), 0.0)
        return outside + inside

    return ar.minimum(box(geom.body_center_3d(), geom.body_half_3d),
                      box(geom.port_center_3d, geom.port_half_3d))


def reach_fn_13d(x, goal: DockingGoal13D):
    g = _like(goal.goal_point, x)
    dp = x[..., 0:3] - g
    lat = ar.sqrt(dp[..., 0] ** 2 + dp[..., 2] ** 2) - goal.lateral_pos_tol
    axial = abs(dp[..., 1]) - goal.axial_pos_tol
    lat_vel = ar.sqrt(x[..., 3] ** 2 + x[..., 5] ** 2) - goal.lateral_vel_tol
    v_ax = x[..., 4]  # approach along +y, toward the port
    lo, hi = goal.axial_vel_band
    band = ar.maximum(lo - v_ax, v_ax - hi)
    qdot = (x[..., 6:10] * _like(goal.goal_quat, x)).sum(-1)
    att = 2.0 * ar.arccos(ar.clip(abs(qdot), 0.0, 1.0 - 1e-12)) - goal.attitude_tol
    m = ar.maximum(ar.maximum(lat, axial), ar.maximum(lat_vel, band))
    m = ar.maximum(m, att)
    for i in range(3):
        m = ar.maximum(m, abs(x[..., 10 + i]) - goal.rate_tol[i])
    return m


def _like(seq, ref):
    if ar.is_tensor(ref):
        import torch

        return torch.as_tensor(seq, dtype=ref.dtype, device=ref.device)
    return np.asarray(seq, dtype=float)


# ---------------------------------------------------------------------------
# Problem container

@dataclass(frozen=True)
class ReachAvoidProblem:
    """A dynamics model bound to reach/avoid functions and a horizon."""

    name: str
    model: DynamicsModel
    reach: callable
    avoid: callable
    horizon: float
    bounds_lo: np.ndarray
    bounds_hi: np.ndarray
    goal_state: np.ndarray
    mode: str = "reach_avoid"  # or "avoid_only"
    periodic_dims: tuple = ()
    ic_lo: np.ndarray = None
    ic_hi: np.ndarray = None
    timeout: float = 90.0
    pd_gains: dict = field(default_factory=lambda: {
        "kp": 0.4, "kd": 1.2, "k_theta": 0.3, "k_omega": 0.8})
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.mode not in ("reach_avoid", "avoid_only"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.ic_lo is None:
            object.__setattr__(self, "ic_lo", np.array(self.bounds_lo))
        if self.ic_hi is None:
            object.__setattr__(self, "ic_hi", np.array(self.bounds_hi))

    @property
    def dim(self) -> int:
        return self.model.dim

    def boundary_value(self, x):
        if self.mode == "avoid_only":
            return self.avoid(x)
        return ar.maximum(self.reach(x), -self.avoid(x))

    def avoid_only(self) -> "ReachAvoidProblem":
        """Same dynamics/obstacle, avoid-only semantics (positive = safe)."""
        return replace(self, mode="avoid_only", name=self.name + "_avoid",
                       params={**self.params, "mode": "avoid_only"})

    def fingerprint(self) -> str:
        payload = {
            "name": self.name,
            "mode": self.mode,
            "horizon": self.horizon,
            "bounds_lo": list(map(float, self.bounds_lo)),
            "bounds_hi": list(map(float, self.bounds_hi)),
            "params": {k: v for k, v in sorted(self.params.items())},
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def boundary_value(x, problem: ReachAvoidProblem):
    """Terminal value: max(g, -l) in reach-avoid mode, l in avoid-only mode."""
    return problem.boundary_value(x)


# ---------------------------------------------------------------------------
# Ready-made problems

TOY_KINDS = ("double_integrator_2d", "planar_translation_4d",
             "planar_docking_6d", "orbital_13d")


def make_toy_problem(kind: str, horizon: float = None) -> ReachAvoidProblem:
    if kind == "double_integrator_2d":
        return _double_integrator_2d(horizon or 2.0)
    if kind == "planar_translation_4d":
        return _planar_translation_4d(horizon or 10.0)
    if kind == "planar_docking_6d":
        return _planar_docking_6d(horizon or 10.0)
    if kind == "orbital_13d":
        return _orbital_13d(horizon or 10.0)
    raise ValueError(f"unknown problem kind {kind!r}; choose from {TOY_KINDS}")


def _double_integrator_2d(T):
    model = DoubleIntegrator2DModel(accel_bound=1.0)

    def reach(x):
        return ar.maximum(abs(x[..., 0]) - 0.1, abs(x[..., 1]) - 0.1)

    def avoid(x):
        return abs(x[..., 0] - 0.5) - 0.1

    return ReachAvoidProblem(
        name="double_integrator_2d", model=model, reach=reach, avoid=avoid,
        horizon=T,
        bounds_lo=np.array([-1.0, -1.0]), bounds_hi=np.array([1.0, 1.0]),
        goal_state=np.zeros(2),
        ic_lo=np.array([-0.9, -0.4]), ic_hi=np.array([0.2, 0.4]),
        timeout=20.0,
        pd_gains={"kp": 0.6, "kd": 1.5},
        params={"kind": "double_integrator_2d", "T": T},
    )


def _planar_translation_4d(T):
    # Verification instance: tolerances widened from the 6D task (0.1/0.1)
    # so the goal set spans several cells of a tractable 4D grid; the goal
    # point drops accordingly to keep the whole ball clear of the inflated
    # obstacle.
    model = PlanarTranslation4DModel()
    geom = TargetGeometry()
    pos_tol, vel_tol = 0.4, 0.2
    goal_xy = (0.0, _goal_y(geom, geom.chaser_radius, clearance=0.1 + pos_tol))

    def reach(x):
        d_pos = ar.norm(x[..., 0:2] - _like(goal_xy, x)) - pos_tol
        d_vel = ar.norm(x[..., 2:4]) - vel_tol
        return ar.maximum(d_pos, d_vel)

    def avoid(x):
        return avoid_fn_6d(x, geom)

    gs = np.array([goal_xy[0], goal_xy[1], 0.0, 0.0])
    return ReachAvoidProblem(
        name="planar_translation_4d", model=model, reach=reach, avoid=avoid,
        horizon=T,
        bounds_lo=np.array([-8.0, -8.0, -1.0, -1.0]),
        bounds_hi=np.array([8.0, 4.0, 1.0, 1.0]),
        goal_state=gs,
        ic_lo=np.array([-7.0, -7.5, -0.5, -0.5]),
        ic_hi=np.array([7.0, 3.5, 0.5, 0.5]),
        timeout=90.0,
        pd_gains={"kp": 0.4, "kd": 1.2},
        params={"kind": "planar_translation_4d", "T": T,
                "goal": list(goal_xy), "pos_tol": pos_tol,
                "vel_tol": vel_tol},
    )


def _planar_docking_6d(T):
    model = Planar6DModel()
    geom = TargetGeometry()
    goal = DockingGoal6D()

    def reach(x):
        return reach_fn_6d(x, goal)

    def avoid(x):
        return avoid_fn_6d(x, geom)

    gs = np.array([goal.port_center[0], goal.port_center[1], 0.0, 0.0,
                   goal.goal_attitude, 0.0])
    return ReachAvoidProblem(
        name="planar_docking_6d", model=model, reach=reach, avoid=avoid,
        horizon=T,
        bounds_lo=np.array([-15.0, -15.0, -1.0, -1.0, -math.pi, -0.5]),
        bounds_hi=np.array([15.0, 15.0, 1.0, 1.0, math.pi, 0.5]),
        goal_state=gs,
        periodic_dims=(4,),
        timeout=90.0,
        params={"kind": "planar_docking_6d", "T": T,
                "goal": list(goal.port_center)},
    )


def _orbital_13d(T):
    model = Orbital13DModel()
    geom = TargetGeometry()
    goal = DockingGoal13D()

    def reach(x):
        return reach_fn_13d(x, goal)

    def avoid(x):
        return avoid_fn_13d(x, geom)

    gs = np.zeros(13)
    gs[0:3] = goal.goal_point
    gs[4] = 0.5 * sum(goal.axial_vel_band)
    gs[6:10] = goal.goal_quat
    lo = np.concatenate([[-15.0, -15.0, -15.0], [-1.0] * 3, [-1.0] * 4, [-0.5] * 3])
    hi = np.concatenate([[15.0, 15.0, 15.0], [1.0] * 3, [1.0] * 4, [0.5] * 3])
    return ReachAvoidProblem(
        name="orbital_13d", model=model, reach=reach, avoid=avoid,
        horizon=T, bounds_lo=lo, bounds_hi=hi, goal_state=gs,
        timeout=120.0,
        params={"kind": "orbital_13d", "T": T, "goal": list(goal.goal_point)},
    )
