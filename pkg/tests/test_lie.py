import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rvio.lie import (
    SMALL_ANGLE,
    hat,
    is_rotation,
    project_to_so3,
    so3_exp,
    so3_left_jacobian,
    so3_left_jacobian_inv,
    so3_log,
    vee,
)

finite3 = arrays(np.float64, 3, elements=st.floats(-10, 10))


def axis_angle(min_angle=0.0, max_angle=np.pi):
    """Vectors with norm in ``[min_angle, max_angle)``."""
    direction = arrays(np.float64, 3, elements=st.floats(-1, 1)).filter(
        lambda a: np.linalg.norm(a) > 1e-3
    )
    return st.builds(
        lambda d, t: d / np.linalg.norm(d) * t,
        direction,
        st.floats(min_angle, max_angle, exclude_max=True),
    )


def test_hat_examples():
    assert np.array_equal(hat([0, 0, 0]), np.zeros((3, 3)))
    assert np.array_equal(hat([1, 2, 3]), [[0, -3, 2], [3, 0, -1], [-2, 1, 0]])


@given(finite3, finite3)
def test_hat_is_cross_product(v, w):
    assert np.allclose(hat(v) @ w, np.cross(v, w), atol=1e-12)
    assert np.array_equal(hat(v).T, -hat(v))
    assert np.allclose(hat(v) @ v, 0.0, atol=1e-12)


@given(finite3)
def test_vee_inverts_hat(v):
    assert np.array_equal(vee(hat(v)), v)


def test_vee_examples():
    assert np.array_equal(vee(np.zeros((3, 3))), np.zeros(3))
    assert np.array_equal(vee(hat([1.0, 2.0, 3.0])), [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        vee(np.eye(3))


def test_exp_examples():
    assert np.array_equal(so3_exp([0, 0, 0]), np.eye(3))
    R = so3_exp([np.pi / 2, 0, 0])
    assert np.allclose(R @ [0, 1, 0], [0, 0, 1], atol=1e-15)


def test_log_examples():
    assert np.array_equal(so3_log(np.eye(3)), np.zeros(3))
    phi = np.array([0.1, -0.2, 0.3])
    assert np.allclose(so3_log(so3_exp(phi)), phi, atol=1e-10)
    Rz = np.diag([-1.0, -1.0, 1.0])
    assert abs(np.linalg.norm(so3_log(Rz)) - np.pi) < 1e-6
    assert np.allclose(np.abs(so3_log(Rz)), [0, 0, np.pi], atol=1e-6)


def test_log_near_pi_is_finite(rng):
    for _ in range(200):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        R = so3_exp(axis * (np.pi - 10.0 ** rng.uniform(-12, -3)))
        phi = so3_log(R)
        assert np.all(np.isfinite(phi))
        assert np.allclose(so3_exp(phi), R, atol=1e-9)


@given(axis_angle())
def test_exp_is_rotation(phi):
    assert is_rotation(so3_exp(phi))


@given(axis_angle(1e-10, np.pi - 1e-3))
def test_exp_log_round_trip(phi):
    R = so3_exp(phi)
    assert np.allclose(so3_log(R), phi, atol=1e-9)
    assert np.allclose(so3_exp(so3_log(R)), R, atol=1e-9)


def test_exp_many_random_rotations(rng):
    phis = rng.normal(size=(10_000, 3))
    phis *= (rng.uniform(0, np.pi, 10_000) / np.linalg.norm(phis, axis=1))[:, None]
    worst = max(np.abs(so3_exp(p).T @ so3_exp(p) - np.eye(3)).max() for p in phis)
    assert worst < 1e-9


@pytest.mark.parametrize("theta", [0.5 * SMALL_ANGLE, SMALL_ANGLE, 2.0 * SMALL_ANGLE, 1e-5])
def test_small_angle_branch_boundary(theta):
    phi = np.array([0.6, -0.8, 0.0]) * theta
    assert np.allclose(so3_log(so3_exp(phi)), phi, atol=1e-15)
    K = hat(phi)
    assert np.allclose(so3_left_jacobian(phi), np.eye(3) + 0.5 * K + K @ K / 6.0, atol=1e-13)


def test_left_jacobian_at_zero():
    assert np.array_equal(so3_left_jacobian(np.zeros(3)), np.eye(3))


def test_left_jacobian_finite_difference(rng):
    h = 1e-6
    for _ in range(20):
        phi = rng.normal(size=3)
        R0 = so3_exp(phi)
        num = np.zeros((3, 3))
        for j in range(3):
            d = np.zeros(3)
            d[j] = h
            num[:, j] = (so3_log(so3_exp(phi + d) @ R0.T) - so3_log(so3_exp(phi - d) @ R0.T)) / (2 * h)
        assert np.abs(num - so3_left_jacobian(phi)).max() < 1e-5


@given(axis_angle(0.0, 3.0))
def test_left_jacobian_transpose_identity(phi):
    assert np.abs(so3_left_jacobian(-phi) - so3_left_jacobian(phi).T).max() < 1e-12


@given(axis_angle(0.0, 3.0))
def test_left_jacobian_inverse(phi):
    assert np.allclose(so3_left_jacobian_inv(phi) @ so3_left_jacobian(phi), np.eye(3), atol=1e-9)


def test_project_to_so3(rng):
    R = so3_exp(rng.normal(size=3))
    noisy = R + 1e-6 * rng.normal(size=(3, 3))
    P = project_to_so3(noisy)
    assert is_rotation(P)
    assert np.abs(P - R).max() < 1e-5
