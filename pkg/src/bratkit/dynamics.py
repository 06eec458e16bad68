"""Spacecraft relative-motion dynamics and numerical integration.

Axis convention (used everywhere in the package): LVLH x = radial,
y = along-track; the 13D model adds z = cross-track. All models are
control-affine, f(x, u) = f0(x) + B(x) u, with box control bounds.

State layouts:
    2D toy:  [p, v]                          (double integrator)
    4D:      [px, py, vx, vy]                (planar CW translation)
    6D:      [px, py, vx, vy, theta, omega]  (planar CW + single-axis rotation)
    13D:     [p(3), v(3), q(4: w,x,y,z), omega_body(3)]
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from . import arrays as ar

MU_EARTH = 3.986004418e14  # m^3/s^2
EARTH_RADIUS = 6_371_000.0  # m
QUAT_NORM_TOL = 1e-6


class IntegrationError(RuntimeError):
    """Raised when a step produces non-finite state."""


def mean_motion_circular(altitude_m: float) -> float:
    """Mean motion of a circular orbit at the given altitude (rad/s)."""
    a = EARTH_RADIUS + altitude_m
    return math.sqrt(MU_EARTH / a**3)


# the 400 km reference orbit used throughout
MEAN_MOTION_400KM = mean_motion_circular(400_000.0)


# ---------------------------------------------------------------------------
# Quaternions (scalar-first, w >= 0 canonicalization to fix the double cover)

@dataclass(frozen=True)
class Quaternion:
    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if abs(n - 1.0) > QUAT_NORM_TOL:
            raise ValueError(f"quaternion norm {n} deviates from 1 beyond tolerance")
        if self.w < 0.0:
            object.__setattr__(self, "w", -self.w)
            object.__setattr__(self, "x", -self.x)
            object.__setattr__(self, "y", -self.y)
            object.__setattr__(self, "z", -self.z)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])


def quat_mul(q1, q2):
    """Hamilton product; inputs shaped (..., 4), scalar-first."""
    w1, x1, y1, z1 = q1[..., 0], q1[..., 1], q1[..., 2], q1[..., 3]
    w2, x2, y2, z2 = q2[..., 0], q2[..., 1], q2[..., 2], q2[..., 3]
    return ar.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=-1,
    )


def quat_rotmat(q):
    """Rotation matrix R(q), shaped (..., 3, 3), for unit quaternions (..., 4)."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    r = ar.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return r.reshape(*r.shape[:-1], 3, 3)


def quat_to_rotmat(q: Quaternion) -> np.ndarray:
    """3x3 proper-orthogonal rotation matrix of a unit quaternion."""
    return quat_rotmat(q.as_array())


def _cross(a, b):
    if ar.is_tensor(a) or ar.is_tensor(b):
        return torch.linalg.cross(a, b, dim=-1)
    return np.cross(a, b)


def _mat(M: np.ndarray, like):
    """Constant matrix in the array flavor of `like`."""
    if ar.is_tensor(like):
        return torch.as_tensor(M, dtype=like.dtype, device=like.device)
    return M


# ---------------------------------------------------------------------------
# Models

class DynamicsModel:
    """Control-affine model: derivative(x, u) = open_loop(x) + control_apply(x, u).

    All three core methods accept both single states (n,) and batches
    (..., n), numpy or torch.
    """

    dim: int
    control_dim: int
    control_bounds: np.ndarray  # (m,), per-channel |u_i| <= bound
    quat_slice = None  # slice of the unit-quaternion block, if any

    def open_loop(self, x):
        raise NotImplementedError

    def control_apply(self, x, u):
        raise NotImplementedError

    def control_cotangent(self, x, p):
        """B(x)^T p, the costate image driving bang-bang control."""
        raise NotImplementedError

    def derivative(self, x, u):
        if x.shape[-1] != self.dim:
            raise ValueError(f"state dim {x.shape[-1]} != {self.dim}")
        if u.shape[-1] != self.control_dim:
            raise ValueError(f"control dim {u.shape[-1]} != {self.control_dim}")
        if self.quat_slice is not None and not ar.is_tensor(x):
            q = x[..., self.quat_slice]
            err = np.abs(np.linalg.norm(q, axis=-1) - 1.0)
            if np.any(err > QUAT_NORM_TOL):
                raise ValueError("quaternion norm deviates beyond tolerance")
        return self.open_loop(x) + self.control_apply(x, u)

    def control_affine_parts(self, x):
        """(f0, B) at a single state; f0 + B u == derivative(x, u) exactly."""
        x = np.asarray(x, dtype=float)
        f0 = np.asarray(self.open_loop(x), dtype=float)
        cols = []
        for j in range(self.control_dim):
            e = np.zeros(self.control_dim)
            e[j] = 1.0
            cols.append(np.asarray(self.control_apply(x, e), dtype=float))
        return f0, np.stack(cols, axis=-1)


class LinearModel(DynamicsModel):
    """f(x, u) = A x + B u with constant matrices."""

    def __init__(self, A: np.ndarray, B: np.ndarray, control_bounds):
        self.A = np.asarray(A, dtype=float)
        self.B = np.asarray(B, dtype=float)
        self.dim = self.A.shape[0]
        self.control_dim = self.B.shape[1]
        self.control_bounds = np.asarray(control_bounds, dtype=float)

    def open_loop(self, x):
        return x @ _mat(self.A.T, x)

    def control_apply(self, x, u):
        return u @ _mat(self.B.T, u)

    def control_cotangent(self, x, p):
        return p @ _mat(self.B, p)


class DoubleIntegrator2DModel(LinearModel):
    """Toy verification model: p_dot = v, v_dot = u, |u| <= accel_bound."""

    def __init__(self, accel_bound: float = 1.0):
        super().__init__(
            A=np.array([[0.0, 1.0], [0.0, 0.0]]),
            B=np.array([[0.0], [1.0]]),
            control_bounds=[accel_bound],
        )


def _cw_planar_matrices(n: float, m_c: float):
    A = np.zeros((4, 4))
    A[0, 2] = 1.0
    A[1, 3] = 1.0
    A[2, 0] = 3.0 * n * n
    A[2, 3] = 2.0 * n
    A[3, 2] = -2.0 * n
    B = np.zeros((4, 2))
    B[2, 0] = 1.0 / m_c
    B[3, 1] = 1.0 / m_c
    return A, B


class PlanarTranslation4DModel(LinearModel):
    """Planar Clohessy-Wiltshire translation only: [px, py, vx, vy]."""

    def __init__(self, mean_motion: float = MEAN_MOTION_400KM,
                 chaser_mass: float = 100.0, force_bound: float = 20.0):
        if mean_motion <= 0 or chaser_mass <= 0:
            raise ValueError("mean_motion and chaser_mass must be positive")
        self.mean_motion = mean_motion
        self.chaser_mass = chaser_mass
        A, B = _cw_planar_matrices(mean_motion, chaser_mass)
        super().__init__(A, B, [force_bound, force_bound])

    def pd_control(self, x, goal_state, gains):
        kp, kd = gains["kp"], gains["kd"]
        acc = -kp * (x[0:2] - goal_state[0:2]) - kd * (x[2:4] - goal_state[2:4])
        u = self.chaser_mass * acc
        return np.clip(u, -self.control_bounds, self.control_bounds)


class Planar6DModel(LinearModel):
    """Planar CW translation plus single-axis rotation.

    State [px, py, vx, vy, theta, omega], controls [ux, uy, u_torque].
    """

    def __init__(self, mean_motion: float = MEAN_MOTION_400KM,
                 chaser_mass: float = 100.0, inertia_z: float = 20.0,
                 force_bound: float = 20.0, torque_bound: float = 1.5):
        if mean_motion <= 0 or chaser_mass <= 0 or inertia_z <= 0:
            raise ValueError("model parameters must be positive")
        self.mean_motion = mean_motion
        self.chaser_mass = chaser_mass
        self.inertia_z = inertia_z
        A = np.zeros((6, 6))
        A4, B4 = _cw_planar_matrices(mean_motion, chaser_mass)
        A[:4, :4] = A4
        A[4, 5] = 1.0
        B = np.zeros((6, 3))
        B[:4, :2] = B4
        B[5, 2] = 1.0 / inertia_z
        super().__init__(A, B, [force_bound, force_bound, torque_bound])

    def pd_control(self, x, goal_state, gains):
        kp, kd = gains["kp"], gains["kd"]
        kth, kw = gains["k_theta"], gains["k_omega"]
        acc = -kp * (x[0:2] - goal_state[0:2]) - kd * (x[2:4] - goal_state[2:4])
        dth = wrap_angle(x[4] - goal_state[4])
        alpha = -kth * dth - kw * (x[5] - goal_state[5])
        u = np.array([self.chaser_mass * acc[0], self.chaser_mass * acc[1],
                      self.inertia_z * alpha])
        return np.clip(u, -self.control_bounds, self.control_bounds)


class Orbital13DModel(DynamicsModel):
    """3D Hill-Clohessy-Wiltshire translation, quaternion attitude, Euler rotation.

    Forces/torques are commanded in the body frame; the applied LVLH
    acceleration is R(q) F / m_c.
    """

    quat_slice = slice(6, 10)

    def __init__(self, mean_motion: float = MEAN_MOTION_400KM,
                 chaser_mass: float = 100.0, inertia=None,
                 force_bound: float = 20.0, torque_bound: float = 1.5):
        if mean_motion <= 0 or chaser_mass <= 0:
            raise ValueError("mean_motion and chaser_mass must be positive")
        self.mean_motion = mean_motion
        self.chaser_mass = chaser_mass
        I = np.diag([20.0, 20.0, 20.0]) if inertia is None else np.asarray(inertia, float)
        if I.shape != (3, 3) or not np.allclose(I, I.T):
            raise ValueError("inertia must be 3x3 symmetric")
        eig = np.linalg.eigvalsh(I)
        if np.any(eig <= 0):
            raise ValueError("inertia must be positive definite")
        self.inertia = I
        self.inertia_inv = np.linalg.inv(I)
        self.dim = 13
        self.control_dim = 6
        self.control_bounds = np.array([force_bound] * 3 + [torque_bound] * 3)

    def open_loop(self, x):
        n = self.mean_motion
        px, pz = x[..., 0], x[..., 2]
        vx, vy, vz = x[..., 3], x[..., 4], x[..., 5]
        q = x[..., 6:10]
        w = x[..., 10:13]
        ax = 3.0 * n * n * px + 2.0 * n * vy
        ay = -2.0 * n * vx
        az = -n * n * pz
        wq = ar.concatenate([ar.zeros_like(w[..., :1]), w], axis=-1)
        qdot = 0.5 * quat_mul(q, wq)
        Iw = w @ _mat(self.inertia.T, w)
        wdot = -_cross(w, Iw) @ _mat(self.inertia_inv.T, w)
        return ar.concatenate(
            [vx[..., None], vy[..., None], vz[..., None],
             ax[..., None], ay[..., None], az[..., None], qdot, wdot],
            axis=-1,
        )

    def control_apply(self, x, u):
        q = x[..., 6:10]
        F, tau = u[..., 0:3], u[..., 3:6]
        R = quat_rotmat(q)
        acc = (R @ F[..., None])[..., 0] / self.chaser_mass
        wdot = tau @ _mat(self.inertia_inv.T, tau)
        zeros3 = ar.zeros_like(acc)
        zeros4 = ar.zeros_like(q)
        return ar.concatenate([zeros3, acc, zeros4, wdot], axis=-1)

    def control_cotangent(self, x, p):
        q = x[..., 6:10]
        pv, pw = p[..., 3:6], p[..., 10:13]
        R = quat_rotmat(q)
        # R(q)^T applied to the velocity-gradient block, I^{-T} to the rate block
        force = (R.transpose(-1, -2) @ pv[..., None])[..., 0] / self.chaser_mass
        torque = pw @ _mat(self.inertia_inv, pw)
        return ar.concatenate([force, torque], axis=-1)


def cw_planar_derivative(x, u, model: Planar6DModel):
    """Planar CW + rotation derivative; thin alias over the model."""
    return model.derivative(x, u)


def hcw_13d_derivative(x, u, model: Orbital13DModel):
    """Full 13D HCW/quaternion/Euler derivative; thin alias over the model."""
    return model.derivative(x, u)


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    if ar.is_tensor(a):
        return torch.remainder(a + math.pi, 2 * math.pi) - math.pi
    return np.remainder(a + math.pi, 2 * math.pi) - math.pi


# ---------------------------------------------------------------------------
# Integration

def integrate_rk4(model: DynamicsModel, x, u, dt: float, substeps: int = 1):
    """Classical RK4 step with zero-order-hold control.

    For models with a quaternion block the block is renormalized after each
    substep. Works on batches; raises IntegrationError on non-finite output.
    """
    if dt < 0:
        raise ValueError("dt must be non-negative")
    if dt == 0:
        return x
    if x.shape[-1] != model.dim or u.shape[-1] != model.control_dim:
        raise ValueError("state/control dimension mismatch")

    def f(z):
        # unchecked path: RK4 stage states carry O(h^2) quaternion norm drift
        return model.open_loop(z) + model.control_apply(z, u)

    h = dt / substeps
    for _ in range(substeps):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if model.quat_slice is not None:
            q = x[..., model.quat_slice]
            x = x.copy() if not ar.is_tensor(x) else x.clone()
            x[..., model.quat_slice] = q / ar.norm(q)[..., None]
    finite = torch.isfinite(x).all() if ar.is_tensor(x) else np.isfinite(x).all()
    if not finite:
        raise IntegrationError("non-finite state after RK4 step")
    return x
