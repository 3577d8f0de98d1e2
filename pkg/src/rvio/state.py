"""Robocentric filter state, error-state layout, and covariance initialization.

Frame conventions
-----------------
``i``   static (world) frame.
``r``   robocentric frame, fixed to the IMU pose at the latest camera frame.
``v``   current IMU frame.

Rotations ``C_ab`` map vectors from frame ``b`` into frame ``a``. Rotation
errors are right perturbations, ``C = C_nominal @ so3_exp(dphi)``; every other
field is perturbed additively.

``g_r`` is the gravity term as it enters the accelerometer model,
``a_m = a + C_rv.T @ g_r + b_a``, so for a world frame with z up it is
``C_ri @ [0, 0, +9.81]`` (the negative of gravitational acceleration).
"""

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .errors import ConfigError, ParseError
from .lie import so3_exp, so3_log

# Error-state layout. Every Jacobian in the package indexes through these.
PHI_RI = slice(0, 3)
R_IR = slice(3, 6)
GRAV = slice(6, 9)
PHI_RV = slice(9, 12)
R_VR = slice(12, 15)
VEL = slice(15, 18)
BIAS_W = slice(18, 21)
BIAS_A = slice(21, 24)
SCALE = 24
DIM = 25

# Noise vector layout, n = [n_w, n_a, n_bw, n_ba].
N_W = slice(0, 3)
N_A = slice(3, 6)
N_BW = slice(6, 9)
N_BA = slice(9, 12)
NOISE_DIM = 12

STANDARD_GRAVITY = 9.81


def _vec(x):
    if type(x) is np.ndarray and x.shape == (3,) and x.dtype == np.float64:
        return x
    return np.array(x, dtype=float).reshape(3)


def _mat(x):
    if type(x) is np.ndarray and x.shape == (3, 3) and x.dtype == np.float64:
        return x
    return np.array(x, dtype=float).reshape(3, 3)


@dataclass(frozen=True)
class RobocentricState:
    C_ri: np.ndarray = field(default_factory=lambda: np.eye(3))
    r_ir: np.ndarray = field(default_factory=lambda: np.zeros(3))
    g_r: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, STANDARD_GRAVITY]))
    C_rv: np.ndarray = field(default_factory=lambda: np.eye(3))
    r_vr: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_w: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        for name in ("r_ir", "g_r", "r_vr", "v", "b_w", "b_a"):
            object.__setattr__(self, name, _vec(getattr(self, name)))
        for name in ("C_ri", "C_rv"):
            object.__setattr__(self, name, _mat(getattr(self, name)))
        object.__setattr__(self, "scale", float(self.scale))

    def replace(self, **changes):
        return replace(self, **changes)

    def global_pose(self):
        """IMU pose in the static frame as ``(C_iv, r_i^{vi})``."""
        C_ir = self.C_ri.T
        return C_ir @ self.C_rv, C_ir @ (self.r_vr - self.r_ir)


@dataclass(frozen=True)
class NoiseParameters:
    """Continuous-time IMU noise densities."""

    sigma_w: float = 1e-3
    sigma_a: float = 0.1
    sigma_bw: float = 1e-5
    sigma_ba: float = 0.01

    def __post_init__(self):
        for name in ("sigma_w", "sigma_a", "sigma_bw", "sigma_ba"):
            if not getattr(self, name) > 0.0:
                raise ConfigError(f"{name} must be strictly positive")

    @cached_property
    def _q(self):
        return np.repeat(
            [self.sigma_w**2, self.sigma_a**2, self.sigma_bw**2, self.sigma_ba**2], 3
        )

    def q_diagonal(self):
        """Diagonal of ``Q`` in noise-vector order."""
        return self._q


@dataclass(frozen=True)
class Extrinsics:
    """Camera mounting on the IMU body.

    ``C_rc`` rotates camera-frame vectors into the robot frame and ``rho`` is
    the camera origin expressed in the robot frame.
    """

    C_rc: np.ndarray = field(default_factory=lambda: np.eye(3))
    rho: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "C_rc", np.array(self.C_rc, dtype=float).reshape(3, 3))
        object.__setattr__(self, "rho", _vec(self.rho))


@dataclass(frozen=True)
class InitialUncertainty:
    """Standard deviations used to seed the diagonal covariance."""

    sigma_g0: float = 0.1
    sigma_v0: float = 0.01
    sigma_ba0: float = 1.0
    sigma_bw0: float = 0.1
    sigma_scale0: float = 0.1


def apply_perturbation(state, dx):
    """Retract an error-state vector onto ``state``."""
    dx = np.asarray(dx, dtype=float)
    return RobocentricState(
        C_ri=state.C_ri @ so3_exp(dx[PHI_RI]),
        r_ir=state.r_ir + dx[R_IR],
        g_r=state.g_r + dx[GRAV],
        C_rv=state.C_rv @ so3_exp(dx[PHI_RV]),
        r_vr=state.r_vr + dx[R_VR],
        v=state.v + dx[VEL],
        b_w=state.b_w + dx[BIAS_W],
        b_a=state.b_a + dx[BIAS_A],
        scale=state.scale + dx[SCALE],
    )


def initial_covariance(cfg=None):
    """Diagonal starting covariance.

    Pose blocks are exactly zero: the robocentric frame is defined by the
    initial pose, so there is nothing uncertain about it yet.
    """
    cfg = cfg or InitialUncertainty()
    sigmas = (cfg.sigma_g0, cfg.sigma_v0, cfg.sigma_ba0, cfg.sigma_bw0, cfg.sigma_scale0)
    if any(s < 0.0 or not np.isfinite(s) for s in sigmas):
        raise ConfigError("initial standard deviations must be finite and non-negative")
    d = np.zeros(DIM)
    d[GRAV] = cfg.sigma_g0**2
    d[VEL] = cfg.sigma_v0**2
    d[BIAS_W] = cfg.sigma_bw0**2
    d[BIAS_A] = cfg.sigma_ba0**2
    d[SCALE] = cfg.sigma_scale0**2
    return np.diag(d)


# t, C_ri(9), r_ir, g_r, C_rv(9), r_vr, v, b_w, b_a, scale
RECORD_COLUMNS = 38


def state_to_record(t, state):
    """One-line text record with 17 significant digits per field."""
    values = [t]
    values += list(state.C_ri.ravel())
    values += list(state.r_ir) + list(state.g_r)
    values += list(state.C_rv.ravel())
    values += list(state.r_vr) + list(state.v) + list(state.b_w) + list(state.b_a)
    values.append(state.scale)
    return " ".join(f"{float(x):.17g}" for x in values)


def state_from_record(line):
    """Inverse of :func:`state_to_record`, returns ``(t, state)``."""
    parts = line.split()
    if len(parts) != RECORD_COLUMNS:
        raise ParseError(f"state record needs {RECORD_COLUMNS} fields, got {len(parts)}")
    try:
        x = np.array([float(p) for p in parts])
    except ValueError as exc:
        raise ParseError(f"bad number in state record: {exc}") from None
    state = RobocentricState(
        C_ri=x[1:10].reshape(3, 3),
        r_ir=x[10:13],
        g_r=x[13:16],
        C_rv=x[16:25].reshape(3, 3),
        r_vr=x[25:28],
        v=x[28:31],
        b_w=x[31:34],
        b_a=x[34:37],
        scale=x[37],
    )
    return float(x[0]), state


def lift(state, reference):
    """Error-state vector ``dx`` with ``apply_perturbation(reference, dx) == state``."""
    dx = np.empty(DIM)
    dx[PHI_RI] = so3_log(reference.C_ri.T @ state.C_ri)
    dx[R_IR] = state.r_ir - reference.r_ir
    dx[GRAV] = state.g_r - reference.g_r
    dx[PHI_RV] = so3_log(reference.C_rv.T @ state.C_rv)
    dx[R_VR] = state.r_vr - reference.r_vr
    dx[VEL] = state.v - reference.v
    dx[BIAS_W] = state.b_w - reference.b_w
    dx[BIAS_A] = state.b_a - reference.b_a
    dx[SCALE] = state.scale - reference.scale
    return dx
