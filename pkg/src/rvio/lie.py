"""SO(3) helpers: hat/vee, exponential and logarithm maps, and the left Jacobian.

Rotations are 3x3 numpy arrays. Axis-angle vectors are length-3 arrays in
radians. All functions are pure.
"""

import numpy as np

SMALL_ANGLE = 1e-7

_I3 = np.eye(3)


def hat(v):
    """Skew-symmetric matrix such that ``hat(v) @ w == np.cross(v, w)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(M, tol=1e-6):
    """Inverse of :func:`hat`.

    Raises
    ------
    ValueError
        If ``M`` has a symmetric part larger than ``tol`` (Frobenius norm).
    """
    M = np.asarray(M, dtype=float)
    if np.linalg.norm(M + M.T) > tol:
        raise ValueError("vee() expects a skew-symmetric matrix")
    return np.array([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]]) / 2.0


def so3_exp(phi):
    """Rodrigues formula, with a second-order Taylor expansion near zero."""
    phi = np.asarray(phi, dtype=float)
    theta = np.sqrt(phi @ phi)
    K = hat(phi)
    if theta < SMALL_ANGLE:
        return _I3 + K + 0.5 * (K @ K)
    a = np.sin(theta) / theta
    s = np.sin(0.5 * theta)
    b = 2.0 * s * s / (theta * theta)
    return _I3 + a * K + b * (K @ K)


def so3_log(R):
    """Principal logarithm of a rotation matrix, ``|phi| <= pi``.

    Near ``pi`` the axis is taken from the symmetric part of ``R`` so the
    result stays finite; near zero a Taylor expansion is used.
    """
    R = np.asarray(R, dtype=float)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / 2.0
    sin_t = np.sqrt(w @ w)
    cos_t = (np.trace(R) - 1.0) / 2.0
    theta = np.arctan2(sin_t, cos_t)

    if theta < SMALL_ANGLE:
        # theta / sin(theta) = 1 + theta^2 / 6 + O(theta^4)
        return w * (1.0 + theta * theta / 6.0)

    if cos_t > -0.99:
        return w * (theta / sin_t)

    # Axis from a a^T = (sym(R) - cos I) / (1 - cos); sign from the skew part.
    A = ((R + R.T) / 2.0 - cos_t * _I3) / (1.0 - cos_t)
    i = int(np.argmax(np.diag(A)))
    axis = A[:, i] / np.sqrt(A[i, i])
    axis /= np.linalg.norm(axis)
    if axis @ w < 0.0:
        axis = -axis
    return theta * axis


def so3_left_jacobian(phi):
    """Left Jacobian ``J_l(phi)`` of SO(3).

    ``so3_exp(phi + d) ~= so3_exp(J_l(phi) @ d) @ so3_exp(phi)`` for small ``d``.
    The right Jacobian is ``J_l(-phi)``.
    """
    phi = np.asarray(phi, dtype=float)
    theta = np.sqrt(phi @ phi)
    K = hat(phi)
    if theta < SMALL_ANGLE:
        return _I3 + 0.5 * K + (K @ K) / 6.0
    s = np.sin(0.5 * theta)
    a = 2.0 * s * s / (theta * theta)
    b = (theta - np.sin(theta)) / theta**3
    return _I3 + a * K + b * (K @ K)


def so3_left_jacobian_inv(phi):
    """Inverse of :func:`so3_left_jacobian`."""
    phi = np.asarray(phi, dtype=float)
    theta = np.sqrt(phi @ phi)
    K = hat(phi)
    if theta < 1e-4:
        c = 1.0 / 12.0 + theta * theta / 720.0
    else:
        c = 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return _I3 - 0.5 * K + c * (K @ K)


def is_rotation(R, tol=1e-9):
    R = np.asarray(R, dtype=float)
    return (
        R.shape == (3, 3)
        and np.allclose(R.T @ R, _I3, rtol=0.0, atol=tol)
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


def project_to_so3(R):
    """Nearest rotation matrix in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt
