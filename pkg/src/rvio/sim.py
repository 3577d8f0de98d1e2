"""Analytic ground truth: sinusoidal trajectories, IMU synthesis and rendering.

The world frame has z up; gravity is ``g_i = (0, 0, -9.81)``. The IMU body
pose is ``C_iv(t) = so3_exp(theta(t))`` and ``r_i(t) = origin + velocity t +
A sin(2 pi f t + phase)`` per axis, with ``theta(t)`` sinusoidal as well, so
every derivative is closed form.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import RenderError
from .lie import so3_exp, so3_left_jacobian
from .measurements import relative_camera_pose
from .photometric import CameraIntrinsics, RelativePoseSE3, pixel_grid
from .propagation import ImuSample
from .state import STANDARD_GRAVITY, Extrinsics, NoiseParameters, RobocentricState
from .trajectory import Trajectory

GRAVITY_I = np.array([0.0, 0.0, -STANDARD_GRAVITY])


def _v3(x):
    return np.array(x, dtype=float).reshape(3)


@dataclass(frozen=True)
class TrajectorySpec:
    duration: float = 30.0
    trans_amp: tuple = (3.0, 2.0, 0.5)
    trans_freq: tuple = (0.3, 0.5, 0.7)
    trans_phase: tuple = (0.0, 1.1, 2.3)
    rot_amp: tuple = (0.15, 0.15, 0.3)
    rot_freq: tuple = (0.35, 0.45, 0.25)
    rot_phase: tuple = (0.4, 2.0, 1.3)
    velocity: tuple = (0.0, 0.0, 0.0)
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.duration > 0.0:
            raise ValueError("duration must be positive")
        if min(self.trans_freq) < 0.0 or min(self.rot_freq) < 0.0:
            raise ValueError("frequencies must be non-negative")

    @classmethod
    def stationary(cls, duration=10.0):
        z = (0.0, 0.0, 0.0)
        return cls(duration, z, z, z, z, z, z)

    @classmethod
    def handheld(cls, duration=10.0):
        """Small-amplitude motion, gentle enough for 1 kHz Euler integration
        to stay within a few millimetres over seconds."""
        return cls(duration, trans_amp=(0.3, 0.2, 0.1), rot_amp=(0.05, 0.05, 0.1))

    @classmethod
    def constant_velocity(cls, velocity, duration=10.0):
        z = (0.0, 0.0, 0.0)
        return cls(duration, z, z, z, z, z, z, velocity=tuple(velocity))


@dataclass(frozen=True)
class SceneSpec:
    """Textured plane ``n . (X - point) = 0`` seen by the camera.

    ``texture`` rows are ``(amplitude, k_u, k_v, phase)`` with wave numbers in
    cycles per meter along the in-plane axes.
    """

    point: tuple = (0.0, 0.0, -2.0)
    normal: tuple = (0.0, 0.0, 1.0)
    base: float = 0.5
    texture: tuple = (
        (0.15, 0.83, 0.21, 0.3),
        (0.10, -0.25, 1.05, 1.7),
        (0.08, 0.62, 0.55, 4.1),
    )

    def basis(self):
        n = _v3(self.normal)
        n = n / np.linalg.norm(n)
        a = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = a - (a @ n) * n
        e1 /= np.linalg.norm(e1)
        return n, e1, np.cross(n, e1)


def default_extrinsics():
    """Camera looking down the body -z axis, offset a few centimeters."""
    C_rc = np.diag([1.0, -1.0, -1.0])
    return Extrinsics(C_rc, np.array([0.05, -0.02, -0.03]))


def default_intrinsics(width=64, height=48, f=60.0):
    return CameraIntrinsics(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)


def _check_time(spec, t):
    t = np.asarray(t, dtype=float)
    if np.any(t < -1e-12) or np.any(t > spec.duration + 1e-9):
        raise ValueError(f"time outside [0, {spec.duration}]")
    return t


def pose_at(spec, t):
    """Ground truth at time ``t``.

    Returns
    -------
    C_iv, r_i, v_i, a_i, omega_v
        Body rotation, position, velocity and acceleration in the world
        frame, and body-frame angular rate (``dC/dt = C hat(omega_v)``).
    """
    t = float(_check_time(spec, t))
    A, f, ph = _v3(spec.trans_amp), _v3(spec.trans_freq), _v3(spec.trans_phase)
    w = 2.0 * np.pi * f
    s, c = np.sin(w * t + ph), np.cos(w * t + ph)
    r = _v3(spec.origin) + _v3(spec.velocity) * t + A * s
    v = _v3(spec.velocity) + A * w * c
    a = -A * w * w * s

    B, g, ps = _v3(spec.rot_amp), _v3(spec.rot_freq), _v3(spec.rot_phase)
    wr = 2.0 * np.pi * g
    theta = B * np.sin(wr * t + ps)
    theta_dot = B * wr * np.cos(wr * t + ps)
    C = so3_exp(theta)
    # right Jacobian J_r(theta) = J_l(-theta)
    omega = so3_left_jacobian(-theta) @ theta_dot
    return C, r, v, a, omega


def kinematics(spec, times):
    """Vectorized :func:`pose_at` over an array of times.

    Returns ``(C, r, v, a, omega)`` with leading dimension ``len(times)``.
    """
    t = _check_time(spec, np.atleast_1d(times))[:, None]
    A, f, ph = _v3(spec.trans_amp), _v3(spec.trans_freq), _v3(spec.trans_phase)
    w = 2.0 * np.pi * f
    s, c = np.sin(w * t + ph), np.cos(w * t + ph)
    r = _v3(spec.origin) + _v3(spec.velocity) * t + A * s
    v = _v3(spec.velocity) + A * w * c
    a = -A * w * w * s

    B, g, ps = _v3(spec.rot_amp), _v3(spec.rot_freq), _v3(spec.rot_phase)
    wr = 2.0 * np.pi * g
    theta = B * np.sin(wr * t + ps)
    theta_dot = B * wr * np.cos(wr * t + ps)
    C = Rotation.from_rotvec(theta).as_matrix()
    # J_l(-theta) x = x - k1 theta x x + k2 theta x (theta x x)
    th = np.linalg.norm(theta, axis=1)
    small = th < 1e-4
    ths = np.where(small, 1.0, th)
    k1 = np.where(small, 0.5 - th**2 / 24.0, (1.0 - np.cos(ths)) / ths**2)
    k2 = np.where(small, 1.0 / 6.0 - th**2 / 120.0, (ths - np.sin(ths)) / ths**3)
    cx = np.cross(theta, theta_dot)
    omega = theta_dot - k1[:, None] * cx + k2[:, None] * np.cross(theta, cx)
    return C, r, v, a, omega


def imu_truth(spec, rate, g_i=GRAVITY_I, t_end=None):
    """Noise-free, bias-free IMU readings ``(times, omega, specific_force)``."""
    times = imu_times(spec, rate)
    if t_end is not None:
        times = times[times <= t_end + 1e-12]
    C, _, _, a, omega = kinematics(spec, times)
    f = np.einsum("nji,nj->ni", C, a - _v3(g_i))
    return times, omega, f


def imu_times(spec, rate):
    n = int(np.floor(spec.duration * rate + 1e-9))
    return np.arange(n + 1) / rate


def sample_imu(
    spec,
    rate,
    b_w=(0.0, 0.0, 0.0),
    b_a=(0.0, 0.0, 0.0),
    noise=None,
    g_i=GRAVITY_I,
    seed=0,
    return_biases=False,
    t_end=None,
    truth=None,
):
    """Synthesize an IMU stream from the analytic trajectory.

    ``a_m = C_iv^T (a_i - g_i) + b_a + n_a`` and ``omega_m = omega_v + b_w +
    n_w``. With ``noise`` given, white noise has per-sample variance
    ``sigma^2 * rate`` and the biases random-walk from their initial values.
    ``truth`` may carry a precomputed :func:`imu_truth` result so Monte-Carlo
    runs only pay for the noise.
    """
    times, omega, f = truth if truth is not None else imu_truth(spec, rate, g_i, t_end)
    rng = np.random.default_rng(seed)
    n = len(times)
    bw = np.tile(_v3(b_w), (n, 1))
    ba = np.tile(_v3(b_a), (n, 1))
    w_m = omega + bw
    a_m = f + ba
    if noise is not None:
        dt = 1.0 / rate
        w_m += rng.normal(size=(n, 3)) * noise.sigma_w * np.sqrt(rate)
        a_m += rng.normal(size=(n, 3)) * noise.sigma_a * np.sqrt(rate)
        steps_w = rng.normal(size=(n, 3)) * noise.sigma_bw * np.sqrt(dt)
        steps_a = rng.normal(size=(n, 3)) * noise.sigma_ba * np.sqrt(dt)
        steps_w[0] = 0.0
        steps_a[0] = 0.0
        walk_w = np.cumsum(steps_w, axis=0)
        walk_a = np.cumsum(steps_a, axis=0)
        bw += walk_w
        ba += walk_a
        w_m += walk_w
        a_m += walk_a
    samples = [ImuSample(t, w_m[j], a_m[j]) for j, t in enumerate(times)]
    if return_biases:
        return samples, bw, ba
    return samples


def ground_truth(spec, times):
    """Body trajectory sampled at ``times``."""
    C, r, *_ = kinematics(spec, times)
    return Trajectory(np.asarray(times, dtype=float), C, r)


def camera_times(spec, rate, t_start=0.0, count=None):
    n = int(np.floor((spec.duration - t_start) * rate + 1e-9))
    times = t_start + np.arange(n + 1) / rate
    if count is not None:
        times = times[:count]
    return times


def relative_pose_truth(spec, t_k, t_k1, ext):
    """Pose of the camera at ``t_k1`` expressed in the camera at ``t_k``."""
    C0, r0, *_ = pose_at(spec, t_k)
    C1, r1, *_ = pose_at(spec, t_k1)
    C, r = relative_camera_pose(C0, r0, C1, r1, ext)
    return RelativePoseSE3(C, r)


def camera_pose(C_iv, r_i, ext):
    """World pose of the camera, ``(C_ic, p_ic)``."""
    return C_iv @ ext.C_rc, r_i + C_iv @ ext.rho


def texture(scene, X):
    """Intensity at world points ``X`` (..., 3) on the plane."""
    n, e1, e2 = scene.basis()
    d = X - _v3(scene.point)
    u = d @ e1
    v = d @ e2
    out = np.full(u.shape, float(scene.base))
    for amp, ku, kv, ph in scene.texture:
        out += amp * np.sin(2.0 * np.pi * (ku * u + kv * v) + ph)
    return np.clip(out, 0.0, 1.0)


def render(scene, pose, K):
    """Exact image and depth map of the plane from camera pose ``(C_ic, p_ic)``.

    Raises
    ------
    RenderError
        If any pixel ray misses the plane or hits it behind the camera.
    """
    C_ic, p = pose
    n, _, _ = scene.basis()
    xs, ys = pixel_grid(K)
    rays_c = np.stack([(xs - K.cx) / K.fx, (ys - K.cy) / K.fy, np.ones_like(xs)], axis=-1)
    rays = rays_c @ np.asarray(C_ic).T
    denom = rays @ n
    num = (_v3(scene.point) - _v3(p)) @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        depth = num / denom
    if not np.all(np.isfinite(depth)) or np.any(depth <= 0.0):
        raise RenderError("plane is not in front of the camera over the whole frame")
    X = _v3(p) + rays * depth[..., None]
    return texture(scene, X), depth


def render_at(scene, spec, t, ext, K):
    C, r, *_ = pose_at(spec, t)
    return render(scene, camera_pose(C, r, ext), K)


def true_state(spec, t, b_w=(0.0, 0.0, 0.0), b_a=(0.0, 0.0, 0.0), scale=1.0):
    """Filter state anchored at the body pose at ``t`` (robocentric frame = body)."""
    C, r, v, _, _ = pose_at(spec, t)
    C_ri = C.T
    return RobocentricState(
        C_ri=C_ri,
        r_ir=-C_ri @ r,
        g_r=-C_ri @ GRAVITY_I,
        C_rv=np.eye(3),
        r_vr=np.zeros(3),
        v=C.T @ v,
        b_w=b_w,
        b_a=b_a,
        scale=scale,
    )


@dataclass(frozen=True)
class Scenario:
    """Everything a filter run needs besides the noise realization."""

    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    scene: SceneSpec = field(default_factory=SceneSpec)
    extrinsics: Extrinsics = field(default_factory=default_extrinsics)
    intrinsics: CameraIntrinsics = field(default_factory=default_intrinsics)
    imu_rate: float = 200.0
    cam_rate: float = 10.0
    noise: NoiseParameters = field(default_factory=NoiseParameters)
    sigma_rot: float = 0.01
    sigma_trans: float = 0.02
    b_w: tuple = (0.002, -0.001, 0.0015)
    b_a: tuple = (0.05, -0.03, 0.04)
