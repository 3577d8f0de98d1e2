"""Window objective through the full filter pipeline, finite-difference
gradients and gradient-descent calibration of measurement parameters.

The parameter vector is ``theta = [log_scale, bias_x, bias_y, bias_z]``: the
measurement source is modelled as reporting ``exp(log_scale) * r + bias`` for
a metric camera translation ``r``, and every measurement is corrected with the
inverse of that model before it reaches the filter.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, ObjectiveError
from .filter import RobocentricEKF, run_filter
from .measurements import (
    RelativePoseMeasurement,
    UncertaintyConfig,
    apply_measurement_correction,
    distort_measurement,
    invert_measurement,
    oracle_measurements,
)
from .photometric import (
    DEFAULT_ALPHA,
    CameraIntrinsics,
    RelativePoseSE3,
    min_reconstruction_loss,
    warp,
)
from .propagation import ImuSample
from .sim import Scenario, camera_times, ground_truth, render_at, sample_imu, true_state
from .state import SCALE, Extrinsics, NoiseParameters, initial_covariance

THETA_NAMES = ("log_scale", "bias_x", "bias_y", "bias_z")
THETA_DIM = len(THETA_NAMES)

# Measurement-dominated setting used for windows: tightest representable
# measurement sigma is about 1e-4 (m or rad).
WINDOW_UNCERTAINTY = UncertaintyConfig(sigma0_sq=1e-4, beta=4.0)


@dataclass(frozen=True)
class WindowProblem:
    """A short stretch of data the window objective is evaluated on.

    ``state_end`` is the caller's estimate at the last frame; the inverse
    pass starts from it. Both passes start from covariance ``P0``.
    """

    state0: object
    state_end: object
    P0: np.ndarray
    imu: tuple
    times: np.ndarray
    images: tuple
    depths: tuple
    measurements: tuple
    intrinsics: CameraIntrinsics
    extrinsics: Extrinsics
    noise: NoiseParameters = field(default_factory=NoiseParameters)
    uncertainty: UncertaintyConfig = WINDOW_UNCERTAINTY
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        n = len(self.times)
        if n < 3:
            raise ValueError("a window needs at least 3 frames")
        if len(self.images) != n or len(self.depths) != n:
            raise ValueError("one image and one depth map per frame required")
        if len(self.measurements) != n - 1:
            raise ValueError("one measurement per consecutive frame pair required")
        if not self.imu or self.imu[0].t > self.times[0] + 1e-9 or self.imu[-1].t < self.times[-1] - 1e-9:
            raise ValueError("IMU stream does not cover the window")

    @property
    def n_frames(self):
        return len(self.times)


@dataclass
class PipelineTrace:
    """Per-frame record of one window evaluation.

    Lists are indexed by frame. Entries with no value for a frame (the
    forward pass has no posterior at frame 0, interior losses only exist for
    frames 1..N-2) are ``None``.
    """

    forward: list
    inverse: list
    residuals: list
    cov_diag: list
    losses: list


def _corrected(problem, theta):
    log_scale = float(theta[0])
    bias = np.asarray(theta[1:4], dtype=float)
    return [apply_measurement_correction(m, log_scale, bias) for m in problem.measurements]


def _reversed_imu(imu, t_end):
    """Time-reversed IMU stream: gyro sign flips, specific force is unchanged."""
    return [ImuSample(t_end - s.t, -s.omega_m, s.a_m) for s in reversed(imu)]


def _reversed_measurements(meas, t_end):
    out = []
    for m in reversed(meas):
        inv = invert_measurement(m)
        out.append(RelativePoseMeasurement(t_end - m.t_k1, t_end - m.t_k, inv.phi, inv.r, inv.w))
    return out


def _run_pass(problem, state, t0, imu, meas, direction):
    ekf = RobocentricEKF(
        state,
        problem.P0,
        t0,
        problem.noise,
        problem.extrinsics,
        problem.uncertainty,
        freeze_scale=True,
    )
    try:
        return run_filter(ekf, imu, meas).frames
    except DivergenceError as exc:
        n = problem.n_frames
        frame = exc.frame if direction > 0 else n - 1 - exc.frame
        raise DivergenceError(f"{direction > 0 and 'forward' or 'inverse'} pass diverged", frame) from exc


def window_loss(problem, theta):
    """Sum of the ``N - 2`` minimum-reconstruction losses of a window.

    Each interior frame ``t`` is reconstructed from frame ``t - 1`` with the
    forward posterior pose and from frame ``t + 1`` with the posterior of a
    second, independent filter pass over the time-reversed data.

    Raises
    ------
    DivergenceError
        With the window frame index where either pass diverged.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (THETA_DIM,):
        raise ValueError(f"theta must have {THETA_DIM} entries")
    n = problem.n_frames
    t0, t_end = float(problem.times[0]), float(problem.times[-1])
    meas = _corrected(problem, theta)
    fwd = _run_pass(problem, problem.state0, t0, problem.imu, meas, +1)

    s = problem.state_end
    rev_state = s.replace(v=-s.v, b_w=-s.b_w)
    rev = _run_pass(
        problem,
        rev_state,
        0.0,
        _reversed_imu(problem.imu, t_end),
        _reversed_measurements(meas, t_end),
        -1,
    )

    forward = [None] + [f.posterior for f in fwd]
    # rev[i] is frame n-2-i seen from frame n-1-i
    inverse = [f.posterior for f in reversed(rev)] + [None]
    residuals = [None] + [f.residual for f in fwd]
    cov_diag = [None] + [f.cov_diag for f in fwd]

    K = problem.intrinsics
    losses = [None] * n
    total = 0.0
    for t in range(1, n - 1):
        depth = problem.depths[t]
        pf, pi = forward[t], inverse[t]
        prev = warp(problem.images[t - 1], depth, RelativePoseSE3(pf.C_cc, pf.r_cc), K)
        nxt = warp(problem.images[t + 1], depth, RelativePoseSE3(pi.C_cc, pi.r_cc), K)
        losses[t] = min_reconstruction_loss(problem.images[t], prev, nxt, problem.alpha)
        total += losses[t]
    return total, PipelineTrace(forward, inverse, residuals, cov_diag, losses)


def fd_gradient(f, theta, h=1e-4, map_fn=map):
    """Central-difference gradient of scalar ``f`` at ``theta``.

    ``map_fn`` evaluates the ``2 * len(theta)`` perturbed points and may be a
    parallel map (for example ``ThreadPoolExecutor.map``); the result does
    not depend on evaluation order.

    Raises
    ------
    ObjectiveError
        If ``f`` is not finite at one of the perturbed points.
    """
    if not h > 0.0:
        raise ValueError("h must be positive")
    theta = np.asarray(theta, dtype=float)
    points = []
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e.flat[j] = h
        points.append(theta + e)
        points.append(theta - e)
    values = list(map_fn(f, points))
    grad = np.zeros(theta.size)
    for j in range(theta.size):
        fp, fm = values[2 * j], values[2 * j + 1]
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise ObjectiveError("objective is not finite", coordinate=j)
        grad[j] = (fp - fm) / (2.0 * h)
    return grad.reshape(theta.shape)


def h_refinement(f, theta, h):
    """Gradients at ``h`` and ``h / 2`` and their component-wise relative gap."""
    g1 = fd_gradient(f, theta, h)
    g2 = fd_gradient(f, theta, h / 2.0)
    gap = np.abs(g1 - g2) / np.maximum(np.abs(g2), 1e-300)
    return g1, g2, gap


@dataclass(frozen=True)
class RefinementReport:
    """FD gradients along an ``h``-halving ladder.

    ``grads[i]`` uses step ``h / 2**i``. ``noise_floor`` is the per-component
    spread (max - min) over the ladder; components whose ``|g(h/2)|`` is not
    above ``factor`` times that spread are treated as noise and not judged.
    """

    h: float
    grads: np.ndarray
    noise_floor: np.ndarray
    gap: np.ndarray
    judged: np.ndarray
    tol: float

    @property
    def passed(self):
        return bool(np.all(self.gap[self.judged] <= self.tol))


def refinement_report(f, theta, h, levels=4, tol=0.05, factor=10.0, map_fn=map):
    """h-refinement consistency check of :func:`fd_gradient` on ``f``."""
    if levels < 3:
        raise ValueError("need at least three step sizes")
    grads = np.array([fd_gradient(f, theta, h / 2**i, map_fn) for i in range(levels)])
    floor = grads.max(axis=0) - grads.min(axis=0)
    gap = np.abs(grads[0] - grads[1]) / np.maximum(np.abs(grads[1]), 1e-300)
    judged = np.abs(grads[1]) > factor * floor
    return RefinementReport(h, grads, floor, gap, judged, tol)


@dataclass(frozen=True)
class CalibrationStep:
    step: int
    loss: float
    theta: np.ndarray

    def record(self):
        return " ".join([str(self.step), f"{self.loss:.17g}"] + [f"{x:.17g}" for x in self.theta])


def calibrate(problem, theta0, steps=200, lr=0.05, h=1e-4, callback=None):
    """Plain gradient descent on :func:`window_loss`.

    ``lr`` is a scalar or one fixed step size per coordinate (the log-scale
    and the metric bias have very different loss curvature).

    Returns the best-seen ``theta`` and the history of
    :class:`CalibrationStep`, one per evaluated iterate. The loss is not
    guaranteed to decrease monotonically.
    """
    lr = np.asarray(lr, dtype=float)
    if steps < 1 or not np.all(lr > 0.0):
        raise ValueError("steps must be >= 1 and lr > 0")

    def f(th):
        return window_loss(problem, th)[0]

    theta = np.asarray(theta0, dtype=float).copy()
    loss = f(theta)  # raises straight away if the start diverges
    history = [CalibrationStep(0, loss, theta.copy())]
    best_loss, best = loss, theta.copy()
    for k in range(1, steps + 1):
        try:
            theta = theta - lr * fd_gradient(f, theta, h)
            loss = f(theta)
        except (DivergenceError, ObjectiveError):
            break
        history.append(CalibrationStep(k, loss, theta.copy()))
        if callback is not None:
            callback(history[-1])
        if loss < best_loss:
            best_loss, best = loss, theta.copy()
    return best, history


def synthetic_window(
    scenario=None,
    t0=2.0,
    n_frames=10,
    cam_rate=10.0,
    imu_rate=200.0,
    scale=1.0,
    bias=(0.0, 0.0, 0.0),
    sigma_rot=0.0,
    sigma_trans=0.0,
    seed=0,
    uncertainty=WINDOW_UNCERTAINTY,
):
    """Window cut from the analytic scenario with exact IMU, images and depth.

    Measurement translations are distorted to ``scale * r + bias`` so the
    true parameters are ``theta = [log(scale), *bias]``.
    """
    sc = scenario or Scenario()
    spec = sc.trajectory
    times = camera_times(spec, cam_rate, t0, n_frames)
    if len(times) != n_frames:
        raise ValueError("scenario too short for the requested window")
    imu = [s for s in sample_imu(spec, imu_rate, sc.b_w, sc.b_a) if times[0] - 1e-9 <= s.t <= times[-1] + 1e-9]
    gt = ground_truth(spec, times)
    meas = [
        distort_measurement(m, scale, bias)
        for m in oracle_measurements(gt, sc.extrinsics, sigma_rot, sigma_trans, seed, uncertainty)
    ]
    frames = [render_at(sc.scene, spec, t, sc.extrinsics, sc.intrinsics) for t in times]
    return WindowProblem(
        state0=true_state(spec, times[0], sc.b_w, sc.b_a),
        state_end=true_state(spec, times[-1], sc.b_w, sc.b_a),
        P0=initial_covariance(),
        imu=tuple(imu),
        times=times,
        images=tuple(img for img, _ in frames),
        depths=tuple(d for _, d in frames),
        measurements=tuple(meas),
        intrinsics=sc.intrinsics,
        extrinsics=sc.extrinsics,
        noise=sc.noise,
        uncertainty=uncertainty,
    )


def true_theta(scale=1.0, bias=(0.0, 0.0, 0.0)):
    return np.array([math.log(scale), *bias], dtype=float)


def scale_convergence_run(
    scenario=None,
    measurement_scale=0.5,
    lambda0=1.0,
    sigma_scale0=None,
    P0=None,
    seed=0,
    noisy=False,
):
    """Filter run with the scale state live on scaled measurements.

    The scale multiplies the predicted metric translation, so the estimate
    converges towards ``measurement_scale``.

    Returns
    -------
    t, lam, lam_var : ndarray
        Frame times, scale estimates and their variances, starting with the
        initial value.
    """
    sc = scenario or Scenario()
    spec = sc.trajectory
    imu = sample_imu(spec, sc.imu_rate, sc.b_w, sc.b_a, sc.noise if noisy else None, seed=seed)
    times = camera_times(spec, sc.cam_rate)
    gt = ground_truth(spec, times)
    sr, st = (sc.sigma_rot, sc.sigma_trans) if noisy else (0.0, 0.0)
    meas = [
        distort_measurement(m, measurement_scale)
        for m in oracle_measurements(gt, sc.extrinsics, sr, st, seed + 1)
    ]
    P = initial_covariance() if P0 is None else np.array(P0, dtype=float)
    if sigma_scale0 is not None:
        P[SCALE, SCALE] = sigma_scale0**2
    x0 = true_state(spec, 0.0, sc.b_w, sc.b_a, scale=lambda0)
    ekf = RobocentricEKF(x0, P, 0.0, sc.noise, sc.extrinsics)
    res = run_filter(ekf, imu, meas)
    lam = np.array([lambda0] + [f.scale for f in res.frames])
    var = np.array([P[SCALE, SCALE]] + [f.cov_diag[SCALE] for f in res.frames])
    return times[: len(lam)], lam, var
