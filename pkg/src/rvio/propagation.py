"""IMU-driven nominal integration and error-state covariance propagation."""

from dataclasses import dataclass

import numpy as np

from .errors import NumericalHealthError, StreamIntegrityError
from .lie import hat, so3_exp
from .state import (
    BIAS_A,
    BIAS_W,
    DIM,
    GRAV,
    N_A,
    N_BA,
    N_BW,
    N_W,
    NOISE_DIM,
    PHI_RV,
    R_VR,
    VEL,
    RobocentricState,
)

MAX_DT = 0.1

_I3 = np.eye(3)
_I25 = np.eye(DIM)


@dataclass(frozen=True)
class ImuSample:
    """One IMU reading: time in seconds, gyro in rad/s, accelerometer in m/s^2."""

    t: float
    omega_m: np.ndarray
    a_m: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "omega_m", np.array(self.omega_m, dtype=float).reshape(3))
        object.__setattr__(self, "a_m", np.array(self.a_m, dtype=float).reshape(3))


def check_dt(dt):
    if not (0.0 < dt <= MAX_DT):
        raise StreamIntegrityError(f"IMU step dt={dt!r} s outside (0, {MAX_DT}]")


def propagate_nominal(state, imu, dt):
    """Advance the robot states by one explicit Euler step of length ``dt``.

    Velocity is integrated in the robocentric frame (where gravity is
    constant) and stored back in the IMU frame. Inertial states, gravity,
    biases and scale are constant between composition steps.
    """
    check_dt(dt)
    omega = imu.omega_m - state.b_w
    acc = imu.a_m - state.b_a
    C = state.C_rv
    vel_r = C @ state.v
    acc_r = C @ acc - state.g_r

    C_next = C @ so3_exp(omega * dt)
    r_next = state.r_vr + vel_r * dt + 0.5 * acc_r * dt * dt
    v_next = C_next.T @ (vel_r + acc_r * dt)
    return RobocentricState(
        C_ri=state.C_ri,
        r_ir=state.r_ir,
        g_r=state.g_r,
        C_rv=C_next,
        r_vr=r_next,
        v=v_next,
        b_w=state.b_w,
        b_a=state.b_a,
        scale=state.scale,
    )


def error_dynamics(state, imu):
    """Continuous-time error dynamics ``d(dx)/dt = F dx + G n``.

    Returns
    -------
    F : (25, 25) ndarray
    G : (25, 12) ndarray
        Noise columns ordered ``[n_w, n_a, n_bw, n_ba]``.
    """
    omega = imu.omega_m - state.b_w
    C = state.C_rv
    v = state.v
    v_hat = hat(v)
    F = np.zeros((DIM, DIM))

    F[PHI_RV, PHI_RV] = -hat(omega)
    F[PHI_RV, BIAS_W] = -_I3

    F[R_VR, PHI_RV] = -C @ v_hat
    F[R_VR, VEL] = C

    F[VEL, GRAV] = -C.T
    F[VEL, PHI_RV] = -hat(C.T @ state.g_r)
    F[VEL, VEL] = -hat(omega)
    F[VEL, BIAS_W] = -v_hat
    F[VEL, BIAS_A] = -_I3

    G = np.zeros((DIM, NOISE_DIM))
    G[PHI_RV, N_W] = -_I3
    G[VEL, N_W] = -v_hat
    G[VEL, N_A] = -_I3
    G[BIAS_W, N_BW] = _I3
    G[BIAS_A, N_BA] = _I3
    return F, G


def transition_matrix(F, dt):
    """First-order transition matrix ``I + F dt``."""
    return _I25 + F * dt


def propagate_covariance(P, Phi, G, noise, dt, tol=1e-10):
    """``Phi P Phi^T + G Q G^T dt`` with continuous-time ``Q``, re-symmetrized.

    Only a cheap health check is made on ``P`` (finite entries, diagonal not
    below ``-tol``); the full eigenvalue test lives in :func:`check_covariance`.
    """
    d = np.diag(P)
    if not np.all(np.isfinite(d)) or d.min() < -tol:
        raise NumericalHealthError("covariance is non-finite or has a negative variance")
    GQ = G * noise.q_diagonal()
    P_next = Phi @ P @ Phi.T + (GQ @ G.T) * dt
    return 0.5 * (P_next + P_next.T)


# Rows of F that can be non-zero; the rest of Phi is the identity.
_DYN = slice(PHI_RV.start, VEL.stop)


def propagate_covariance_banded(P, F, G, noise, dt):
    """Same result as ``propagate_covariance(P, I + F dt, ...)``.

    Uses the fact that only the robot pose/velocity rows of ``F`` are
    non-zero, which cuts the work per IMU step roughly in half.
    """
    Fd = F[_DYN] * dt
    A = Fd @ P
    P_next = P.copy()
    P_next[_DYN] += A
    P_next[:, _DYN] += A.T
    P_next[_DYN, _DYN] += A @ Fd.T
    Gq = G * (noise.q_diagonal() * dt)
    P_next += Gq @ G.T
    return 0.5 * (P_next + P_next.T)


def check_covariance(P, sym_tol=1e-9, eig_tol=1e-8):
    """Raise :class:`NumericalHealthError` if ``P`` is not symmetric PSD."""
    if not np.all(np.isfinite(P)):
        raise NumericalHealthError("covariance has non-finite entries")
    asym = np.abs(P - P.T).max()
    if asym > sym_tol:
        raise NumericalHealthError(f"covariance asymmetry {asym:.3g}")
    lam = np.linalg.eigvalsh(P).min()
    if lam < -eig_tol:
        raise NumericalHealthError(f"covariance eigenvalue {lam:.3g} below zero")
