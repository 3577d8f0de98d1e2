"""Filter driver: feeds IMU samples and relative-pose measurements through the
propagation, update and composition steps in camera-frame order."""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, DivergenceWarning, StreamIntegrityError
from .measurements import UncertaintyConfig, covariance_from_logits
from ._kernels import propagate_step
from .propagation import (
    check_covariance,
    check_dt,
    error_dynamics,
    propagate_covariance_banded,
    propagate_nominal,
)
from .state import SCALE, Extrinsics, NoiseParameters, apply_perturbation
from .trajectory import Trajectory
from .update import (
    DIVERGENCE_ANGLE,
    PredictedRelativePose,
    composition_step,
    kalman_update,
    measurement_jacobian,
    predict_relative_pose,
    residual,
)

logger = logging.getLogger(__name__)

TIME_TOL = 1e-6


@dataclass
class FrameResult:
    frame: int
    t: float
    residual: np.ndarray
    posterior: PredictedRelativePose
    """Metric camera relative pose from the updated state, before composition."""
    cov_diag: np.ndarray
    scale: float


class RobocentricEKF:
    """Error-state EKF in a robocentric frame.

    Each camera frame runs: propagate to the image time, measurement update,
    retraction of the correction, composition into the new robocentric frame.

    Parameters
    ----------
    state : RobocentricState
        Initial state; its robocentric frame is the IMU pose at ``t0``.
    P : ndarray
        Initial 25x25 covariance.
    freeze_scale : bool
        Keep the scale fixed (its covariance row/column is zeroed and the
        scale column of ``H`` is dropped).
    fast : bool
        Use the compiled propagation kernel instead of the numpy reference.
    """

    def __init__(
        self,
        state,
        P,
        t0,
        noise=None,
        extrinsics=None,
        uncertainty=None,
        freeze_scale=False,
        check_health=True,
        fast=True,
    ):
        self.state = state
        self.P = np.array(P, dtype=float)
        self.t = float(t0)
        self.anchor_t = float(t0)
        self.noise = noise or NoiseParameters()
        self.extrinsics = extrinsics or Extrinsics()
        self.uncertainty = uncertainty or UncertaintyConfig()
        self.freeze_scale = freeze_scale
        self.check_health = check_health
        self.fast = fast
        self._q = np.ascontiguousarray(self.noise.q_diagonal(), dtype=float)
        self.frame = 0
        self._imu = None
        if freeze_scale:
            self._zero_scale_cov()

    def _zero_scale_cov(self):
        self.P[SCALE, :] = 0.0
        self.P[:, SCALE] = 0.0

    def _step(self, imu, dt):
        if not self.fast:
            F, G = error_dynamics(self.state, imu)
            self.P = propagate_covariance_banded(self.P, F, G, self.noise, dt)
            self.state = propagate_nominal(self.state, imu, dt)
            self.t += dt
            return
        check_dt(dt)
        s = self.state
        C, r, v, self.P = propagate_step(
            s.C_rv, s.r_vr, s.v, s.g_r, s.b_w, s.b_a,
            imu.omega_m, imu.a_m, dt, self.P, self._q,
        )
        self.state = s.replace(C_rv=C, r_vr=r, v=v)
        self.t += dt

    def add_imu(self, sample):
        """Integrate up to ``sample.t`` with the previous reading held constant."""
        if self._imu is not None:
            if sample.t <= self._imu.t:
                raise StreamIntegrityError(
                    f"IMU timestamp {sample.t!r} does not increase past {self._imu.t!r}"
                )
            self.propagate_to(sample.t)
        elif sample.t > self.t + TIME_TOL:
            raise StreamIntegrityError("first IMU sample comes after the filter start time")
        self._imu = sample

    def propagate_to(self, t):
        if self._imu is None:
            raise StreamIntegrityError("no IMU sample available to propagate with")
        dt = t - self.t
        if dt < -TIME_TOL:
            raise StreamIntegrityError(f"cannot propagate backwards to t={t!r}")
        if dt > 1e-12:
            self._step(self._imu, dt)

    def update(self, meas):
        """Apply one relative-pose measurement ending at the current time."""
        if abs(meas.t_k - self.anchor_t) > TIME_TOL or abs(meas.t_k1 - self.t) > TIME_TOL:
            raise StreamIntegrityError(
                f"measurement ({meas.t_k}, {meas.t_k1}) does not span the filter window "
                f"({self.anchor_t}, {self.t})"
            )
        self.frame += 1
        ext = self.extrinsics
        pred = predict_relative_pose(self.state, ext)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DivergenceWarning)
            eps = residual(meas, pred, self.state.scale)
        if not np.isfinite(eps).all() or np.linalg.norm(eps[:3]) > DIVERGENCE_ANGLE:
            raise DivergenceError(
                f"rotation residual {np.linalg.norm(eps[:3]):.3f} rad", frame=self.frame
            )
        H = measurement_jacobian(self.state, ext, eps[:3], freeze_scale=self.freeze_scale)
        R = covariance_from_logits(meas.w, self.uncertainty)
        dx, P, _ = kalman_update(self.P, H, R, eps)
        self.state = apply_perturbation(self.state, dx)
        posterior = predict_relative_pose(self.state, ext)
        self.state, self.P = composition_step(self.state, P)
        if self.freeze_scale:
            self._zero_scale_cov()
        if self.check_health:
            check_covariance(self.P)
        self.anchor_t = self.t
        return FrameResult(self.frame, self.t, eps, posterior, np.diag(self.P).copy(), self.state.scale)

    def global_pose(self):
        return self.state.global_pose()


@dataclass
class RunResult:
    trajectory: Trajectory
    frames: list = field(default_factory=list)
    states: list = field(default_factory=list)
    covariances: list = field(default_factory=list)


def run_filter(ekf, imu_samples, measurements, keep_covariances=False):
    """Drive ``ekf`` over merged IMU and measurement streams.

    The returned trajectory holds the IMU pose at the start time and after
    every camera frame.
    """
    imu_iter = iter(imu_samples)
    pending = None
    C, r = ekf.global_pose()
    poses = [(ekf.t, C, r)]
    result = RunResult(Trajectory.empty())
    result.states.append(ekf.state)
    if keep_covariances:
        result.covariances.append(ekf.P.copy())
    for meas in measurements:
        while True:
            if pending is None:
                pending = next(imu_iter, None)
                if pending is None:
                    break
            if pending.t > meas.t_k1 + TIME_TOL:
                break
            ekf.add_imu(pending)
            pending = None
        ekf.propagate_to(meas.t_k1)
        result.frames.append(ekf.update(meas))
        result.states.append(ekf.state)
        if keep_covariances:
            result.covariances.append(ekf.P.copy())
        C, r = ekf.global_pose()
        poses.append((ekf.t, C, r))
    result.trajectory = Trajectory.from_poses(poses)
    return result
