"""Relative-pose measurement model, EKF update and the robocentric composition step."""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import DivergenceWarning, NumericalHealthError
from .lie import hat, so3_exp, so3_left_jacobian_inv, so3_log
from .state import (
    BIAS_A,
    BIAS_W,
    DIM,
    GRAV,
    PHI_RI,
    PHI_RV,
    R_IR,
    R_VR,
    SCALE,
    VEL,
    RobocentricState,
)

DIVERGENCE_ANGLE = 1.0

_I3 = np.eye(3)


@dataclass(frozen=True)
class PredictedRelativePose:
    """Pose of camera ``c_{k+1}`` in camera ``c_k``: rotation and translation."""

    C_cc: np.ndarray
    r_cc: np.ndarray


def predict_relative_pose(state, ext):
    C_cr = ext.C_rc.T
    C_cc = C_cr @ state.C_rv @ ext.C_rc
    r_cc = C_cr @ (state.C_rv @ ext.rho) + C_cr @ (state.r_vr - ext.rho)
    return PredictedRelativePose(C_cc, r_cc)


def residual(meas, pred, scale=1.0):
    """Stacked ``[rotation, translation]`` residual of a relative-pose measurement.

    The rotation part is ``log(C_meas C_pred^T)``; the translation part is
    ``r_meas - scale * r_pred``. A rotation residual above one radian emits
    :class:`~rvio.errors.DivergenceWarning`.
    """
    C_meas = so3_exp(meas.phi)
    eps_rot = so3_log(C_meas @ pred.C_cc.T)
    eps_trans = meas.r - scale * pred.r_cc
    if np.linalg.norm(eps_rot) > DIVERGENCE_ANGLE:
        warnings.warn(
            f"rotation residual {np.linalg.norm(eps_rot):.3f} rad exceeds {DIVERGENCE_ANGLE} rad",
            DivergenceWarning,
            stacklevel=2,
        )
    return np.concatenate([eps_rot, eps_trans])


def measurement_jacobian(state, ext, rot_residual=None, freeze_scale=False):
    """Jacobian of the predicted measurement with respect to the error state.

    This is ``-d(residual)/d(dx)``, the sign that makes ``dx = K @ residual``
    a correction. Only the ``PHI_RV``, ``R_VR`` and ``SCALE`` columns are
    non-zero.

    Parameters
    ----------
    rot_residual : array_like, optional
        Current rotation residual. When given, the rotation block includes the
        exact ``J_r^{-1}`` correction; otherwise the first-order (zero
        residual) form is used.
    freeze_scale : bool
        Zero the scale column.
    """
    C_cr = ext.C_rc.T
    lam = state.scale
    H = np.zeros((6, DIM))
    rot = C_cr @ state.C_rv
    if rot_residual is not None:
        rot = so3_left_jacobian_inv(-np.asarray(rot_residual, dtype=float)) @ rot
    H[0:3, PHI_RV] = rot
    H[3:6, PHI_RV] = -lam * C_cr @ state.C_rv @ hat(ext.rho)
    H[3:6, R_VR] = lam * C_cr
    if not freeze_scale:
        H[3:6, SCALE] = C_cr @ (state.C_rv @ ext.rho + state.r_vr - ext.rho)
    return H


def kalman_update(P, H, R, eps):
    """Standard EKF correction.

    Returns
    -------
    dx : (25,) ndarray
    P_post : (25, 25) ndarray
        ``(I - K H) P``, re-symmetrized.
    K : (25, 6) ndarray
    """
    PHt = P @ H.T
    S = H @ PHt + R
    try:
        cho = cho_factor(S, lower=True, check_finite=True)
    except (LinAlgError, ValueError) as exc:
        raise NumericalHealthError(f"innovation covariance not positive definite: {exc}") from None
    K = cho_solve(cho, PHt.T).T
    dx = K @ eps
    P_post = P - K @ PHt.T
    P_post = 0.5 * (P_post + P_post.T)
    return dx, P_post, K


def composition_jacobian(state):
    """Jacobian ``U`` of the composition map on the error state."""
    C = state.C_rv
    Ct = C.T
    U = np.eye(DIM)
    U[PHI_RI, PHI_RV] = -state.C_ri.T @ C
    U[R_IR, R_IR] = Ct
    U[R_IR, R_VR] = -Ct
    U[R_IR, PHI_RV] = hat(Ct @ (state.r_ir - state.r_vr))
    U[GRAV, GRAV] = Ct
    U[GRAV, PHI_RV] = hat(Ct @ state.g_r)
    U[PHI_RV, :] = 0.0
    U[R_VR, :] = 0.0
    return U


def compose_state(state):
    """Re-anchor the robocentric frame at the current IMU pose."""
    Ct = state.C_rv.T
    return RobocentricState(
        C_ri=Ct @ state.C_ri,
        r_ir=Ct @ (state.r_ir - state.r_vr),
        g_r=Ct @ state.g_r,
        C_rv=_I3,
        r_vr=np.zeros(3),
        v=state.v,
        b_w=state.b_w,
        b_a=state.b_a,
        scale=state.scale,
    )


def composition_step(state, P):
    """Composition of state and covariance, returns ``(state, U P U^T)``."""
    U = composition_jacobian(state)
    P_new = U @ P @ U.T
    return compose_state(state), 0.5 * (P_new + P_new.T)


# Kept for readers who look for the full list of untouched blocks.
PASS_THROUGH = (VEL, BIAS_W, BIAS_A, SCALE)
