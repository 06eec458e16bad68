import numpy as np
import pytest

from bratkit import dynamics as dyn


def test_mean_motion_400km():
    # n = sqrt(mu / a^3), a = R_E + 400 km
    a = dyn.EARTH_RADIUS + 400e3
    expected = np.sqrt(dyn.MU_EARTH / a**3)
    assert np.isclose(dyn.MEAN_MOTION_400KM, expected, rtol=0, atol=0)
    assert 1.10e-3 < dyn.MEAN_MOTION_400KM < 1.14e-3


def test_quat_mul_identity_and_inverse():
    rng = np.random.default_rng(0)
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    e = np.array([1.0, 0, 0, 0])
    assert np.allclose(dyn.quat_mul(e, q), q)
    qc = q * np.array([1.0, -1, -1, -1])
    assert np.allclose(dyn.quat_mul(q, qc), e, atol=1e-14)


def test_quat_rotmat_orthonormal():
    rng = np.random.default_rng(1)
    q = rng.normal(size=(32, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    R = dyn.quat_rotmat(q)
    eye = np.eye(3)
    for Ri in R:
        assert np.allclose(Ri @ Ri.T, eye, atol=1e-12)
        assert np.isclose(np.linalg.det(Ri), 1.0, atol=1e-12)


def test_cw_planar_drift_terms():
    # x-ddot = 3 n^2 x + 2 n vy;  y-ddot = -2 n vx
    n = 1.1e-3
    model = dyn.PlanarTranslation4DModel(mean_motion=n, chaser_mass=1.0)
    x = np.array([2.0, -1.0, 0.3, -0.2])
    f = model.open_loop(x)
    assert np.isclose(f[2], 3 * n**2 * 2.0 + 2 * n * (-0.2))
    assert np.isclose(f[3], -2 * n * 0.3)
    assert np.allclose(f[:2], x[2:])


def test_control_affine_parts_match_derivative():
    for model in (dyn.DoubleIntegrator2DModel(),
                  dyn.Planar6DModel(),
                  dyn.Orbital13DModel()):
        rng = np.random.default_rng(3)
        x = rng.uniform(-1, 1, model.dim)
        if model.quat_slice is not None:
            q = x[model.quat_slice]
            x[model.quat_slice] = q / np.linalg.norm(q)
        u = rng.uniform(-1, 1, model.control_dim) * model.control_bounds
        f0, B = model.control_affine_parts(x)
        assert np.allclose(f0 + B @ u, model.derivative(x, u), atol=1e-12)


def test_control_cotangent_is_B_transpose():
    model = dyn.Orbital13DModel()
    rng = np.random.default_rng(4)
    x = rng.uniform(-1, 1, 13)
    x[6:10] /= np.linalg.norm(x[6:10])
    p = rng.normal(size=13)
    _, B = model.control_affine_parts(x)
    assert np.allclose(model.control_cotangent(x, p), B.T @ p, atol=1e-12)


def test_rk4_fourth_order_convergence():
    # nonlinear attitude dynamics; halving the step should shrink the error
    # by ~2^4 (criterion floor is 14)
    model = dyn.Orbital13DModel()
    rng = np.random.default_rng(5)
    x0 = rng.uniform(-0.5, 0.5, 13)
    x0[6:10] /= np.linalg.norm(x0[6:10])
    u = rng.uniform(-1, 1, 6) * model.control_bounds

    def propagate(substeps):
        return dyn.integrate_rk4(model, x0, u, 1.0, substeps=substeps)

    ref = propagate(512)
    e1 = np.linalg.norm(propagate(8) - ref)
    e2 = np.linalg.norm(propagate(16) - ref)
    assert e1 / e2 >= 14.0


def test_quaternion_norm_preserved_many_steps():
    model = dyn.Orbital13DModel()
    x = np.zeros(13)
    x[6] = 1.0
    x[10:] = [0.02, -0.03, 0.01]
    rng = np.random.default_rng(6)
    for _ in range(10_000):
        u = rng.uniform(-1, 1, 6) * model.control_bounds
        x = dyn.integrate_rk4(model, x, u, 0.01)
    assert abs(np.linalg.norm(x[6:10]) - 1.0) < 1e-9


def test_torque_free_energy_conservation():
    inertia = np.diag([18.0, 22.0, 20.0])
    model = dyn.Orbital13DModel(inertia=inertia)
    x = np.zeros(13)
    x[6] = 1.0
    x[10:] = [0.05, -0.08, 0.11]
    u = np.zeros(6)
    E0 = 0.5 * x[10:] @ inertia @ x[10:]
    for _ in range(1000):
        x = dyn.integrate_rk4(model, x, u, 0.01)
    E1 = 0.5 * x[10:] @ inertia @ x[10:]
    assert abs(E1 - E0) / E0 < 1e-6


def test_integration_error_on_nonfinite():
    model = dyn.DoubleIntegrator2DModel()
    with pytest.raises(dyn.IntegrationError):
        dyn.integrate_rk4(model, np.array([np.nan, 0.0]), np.array([0.0]), 0.1)


def test_derivative_rejects_bad_quaternion():
    model = dyn.Orbital13DModel()
    x = np.zeros(13)
    x[6:10] = [0.7, 0.0, 0.0, 0.0]  # norm far from 1
    with pytest.raises(ValueError):
        model.derivative(x, np.zeros(6))


def test_wrap_angle():
    assert np.isclose(dyn.wrap_angle(3 * np.pi), -np.pi)
    assert np.isclose(dyn.wrap_angle(-3 * np.pi), -np.pi)
    th = np.linspace(-10, 10, 101)
    w = dyn.wrap_angle(th)
    assert np.all(w >= -np.pi) and np.all(w < np.pi)
    assert np.allclose(np.sin(w), np.sin(th), atol=1e-12)


def test_13d_force_in_body_frame():
    # a 90-degree yaw rotates the body-frame force into the LVLH frame
    model = dyn.Orbital13DModel()
    x = np.zeros(13)
    th = np.pi / 2
    x[6:10] = [np.cos(th / 2), 0.0, 0.0, np.sin(th / 2)]
    u = np.zeros(6)
    u[0] = 10.0  # body +x force
    dx = model.control_apply(x, u)
    m = model.chaser_mass
    assert np.allclose(dx[3:6], [0.0, 10.0 / m, 0.0], atol=1e-12)
