"""Synthetic and dataset experiments built on the filter: baselines,
consistency statistics and robustness runs."""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .euroc import CAM_CSV, GT_CSV, IMU_CSV, read_euroc_cam_index, read_euroc_imu, read_groundtruth
from .filter import RobocentricEKF, run_filter
from .lie import so3_log
from .measurements import LOGIT_CLAMP, RelativePoseMeasurement, UncertaintyConfig, oracle_measurements
from .propagation import propagate_nominal
from .sim import GRAVITY_I, Scenario, camera_times, ground_truth, imu_truth, sample_imu, true_state
from .state import Extrinsics, RobocentricState, initial_covariance
from .trajectory import Trajectory, ate_rmse, interpolate

logger = logging.getLogger(__name__)


@dataclass
class SyntheticRun:
    """One noise realization of a scenario."""

    scenario: Scenario
    times: np.ndarray
    truth: Trajectory
    imu: list
    measurements: list
    b_w: np.ndarray
    b_a: np.ndarray

    def true_state(self, k=0):
        """True robocentric state at camera frame ``k`` (biases at their start values)."""
        return true_state(self.scenario.trajectory, self.times[k], self.b_w, self.b_a)


def simulate(scenario=None, seed=0, noisy=True, b_w=None, b_a=None, truth=None):
    """IMU and oracle measurement streams for ``scenario``.

    ``truth`` may hold a cached :func:`~rvio.sim.imu_truth` for the scenario.
    """
    sc = scenario or Scenario()
    spec = sc.trajectory
    b_w = np.asarray(sc.b_w if b_w is None else b_w, dtype=float)
    b_a = np.asarray(sc.b_a if b_a is None else b_a, dtype=float)
    imu = sample_imu(spec, sc.imu_rate, b_w, b_a, sc.noise if noisy else None, seed=seed, truth=truth)
    times = camera_times(spec, sc.cam_rate)
    gt = ground_truth(spec, times)
    sr, st = (sc.sigma_rot, sc.sigma_trans) if noisy else (0.0, 0.0)
    meas = list(oracle_measurements(gt, sc.extrinsics, sr, st, seed + 7919))
    return SyntheticRun(sc, times, gt, imu, meas, b_w, b_a)


def run_ekf(run, x0=None, P0=None, uncertainty=None, keep_covariances=False, freeze_scale=False):
    sc = run.scenario
    x0 = run.true_state() if x0 is None else x0
    P0 = initial_covariance() if P0 is None else P0
    ekf = RobocentricEKF(
        x0, P0, run.times[0], sc.noise, sc.extrinsics, uncertainty, freeze_scale=freeze_scale
    )
    return run_filter(ekf, run.imu, run.measurements, keep_covariances)


def imu_dead_reckoning(state, t0, imu, times):
    """Open-loop integration of ``imu`` from ``state``; poses at ``times``."""
    x = state
    t = float(t0)
    held = None
    samples = iter(imu)
    pending = next(samples, None)
    poses = []
    for target in times:
        while pending is not None and pending.t <= target + 1e-9:
            if held is not None and pending.t > t:
                x = propagate_nominal(x, held, pending.t - t)
                t = pending.t
            held = pending
            pending = next(samples, None)
        if target > t + 1e-12:
            x = propagate_nominal(x, held, target - t)
            t = target
        C, r = x.global_pose()
        poses.append((target, C, r))
    return Trajectory.from_poses(poses)


def chain_measurements(measurements, C0, r0, ext):
    """Body trajectory from composing relative camera poses onto ``(C0, r0)``."""
    C_c = C0 @ ext.C_rc
    p_c = r0 + C0 @ ext.rho
    measurements = list(measurements)
    poses = [(measurements[0].t_k, C0, r0)] if measurements else []
    for m in measurements:
        p_c = p_c + C_c @ m.r
        C_c = C_c @ m.C
        C = C_c @ ext.C_rc.T
        poses.append((m.t_k1, C, p_c - C @ ext.rho))
    return Trajectory.from_poses(poses)


def pose_errors(est, truth):
    """6-DOF error ``[log(C_est^T C_true), r_true - r_est]`` on the inertial pose states."""
    return np.r_[so3_log(est.C_ri.T @ truth.C_ri), truth.r_ir - est.r_ir]


def nees_series(result, run):
    """Pose NEES after every composition step (frame 0 excluded)."""
    out = np.full(len(result.states), np.nan)
    spec = run.scenario.trajectory
    for k in range(1, len(result.states)):
        e = pose_errors(result.states[k], true_state(spec, run.times[k]))
        out[k] = e @ np.linalg.solve(result.covariances[k][:6, :6], e)
    return out


def sample_initial_estimate(truth_state, P0, rng):
    """Initial filter estimate with gravity and velocity drawn from ``P0``.

    Bias estimates start at zero: the truth biases are themselves drawn from
    the prior by the caller.
    """
    sd = np.sqrt(np.diag(P0))
    return truth_state.replace(
        g_r=truth_state.g_r + rng.normal(size=3) * sd[6:9],
        v=truth_state.v + rng.normal(size=3) * sd[15:18],
        b_w=np.zeros(3),
        b_a=np.zeros(3),
    )


def monte_carlo_nees(scenario=None, runs=200, seed=0):
    """Average pose NEES over ``runs`` independent noise and bias draws.

    Returns ``(times, mean_nees)``.
    """
    sc = scenario or Scenario()
    P0 = initial_covariance()
    truth = imu_truth(sc.trajectory, sc.imu_rate)
    total = None
    times = None
    for k in range(runs):
        rng = np.random.default_rng([seed, k])
        sd = np.sqrt(np.diag(P0))
        b_w = rng.normal(size=3) * sd[18:21]
        b_a = rng.normal(size=3) * sd[21:24]
        run = simulate(sc, seed=seed * 100003 + k, b_w=b_w, b_a=b_a, truth=truth)
        x0 = sample_initial_estimate(run.true_state(), P0, rng)
        result = run_ekf(run, x0, P0, keep_covariances=True)
        nees = nees_series(result, run)
        total = nees if total is None else total + nees
        times = run.times
    return times, total / runs


def fusion_benefit(scenario=None, seeds=(0,)):
    """Sim3-aligned translation RMSE of the filter and both dead-reckoning baselines.

    All three start from the same estimate: true pose and velocity, zero
    bias estimates. Returns the mean RMSE per method over ``seeds`` and the
    per-seed values under ``"per_seed"``.
    """
    rows = []
    for seed in seeds:
        run = simulate(scenario, seed=seed)
        x0 = run.true_state().replace(b_w=np.zeros(3), b_a=np.zeros(3))
        est = run_ekf(run, x0).trajectory
        imu_dr = imu_dead_reckoning(x0, run.times[0], run.imu, run.times)
        chained = chain_measurements(
            run.measurements, run.truth.C[0], run.truth.r[0], run.scenario.extrinsics
        )
        rows.append([ate_rmse(x, run.truth)[0] for x in (est, imu_dr, chained)])
    rows = np.array(rows)
    mean = rows.mean(axis=0)
    return {
        "filter": mean[0],
        "imu_dead_reckoning": mean[1],
        "measurement_chaining": mean[2],
        "per_seed": rows,
    }


SATURATED_LOGIT = float(np.arctanh(LOGIT_CLAMP))


def downweighting(scenario=None, seed=0, fraction=0.1, factor=10.0, sigma0_sq=1e-4):
    """Translation RMSE with a fraction of measurements corrupted by ``factor`` x noise.

    Returns RMSEs for the clean stream, corrupted with saturated logits
    (variance at the top of the band) and corrupted with all-zero logits.
    """
    sc = scenario or Scenario()
    cfg = UncertaintyConfig(sigma0_sq=sigma0_sq, beta=4.0)
    run = simulate(sc, seed=seed)
    clean = list(oracle_measurements(run.truth, sc.extrinsics, sc.sigma_rot, sc.sigma_trans, seed + 1, cfg))
    noisy = list(
        oracle_measurements(
            run.truth, sc.extrinsics, factor * sc.sigma_rot, factor * sc.sigma_trans, seed + 2, cfg
        )
    )
    rng = np.random.default_rng(seed + 3)
    n = len(clean)
    bad = np.sort(rng.choice(n, size=max(1, int(round(fraction * n))), replace=False))

    def stream(w):
        out = list(clean)
        for k in bad:
            m = noisy[k]
            out[k] = RelativePoseMeasurement(m.t_k, m.t_k1, m.phi, m.r, np.full(6, w))
        return out

    x0 = run.true_state().replace(b_w=np.zeros(3), b_a=np.zeros(3))
    rmse = {}
    for name, meas in (("clean", clean), ("saturated", stream(SATURATED_LOGIT)), ("zero_logits", stream(0.0))):
        run.measurements = meas
        rmse[name] = ate_rmse(run_ekf(run, x0, uncertainty=cfg).trajectory, run.truth)[0]
    rmse["corrupted_frames"] = bad
    return rmse


# --- EuRoC ---------------------------------------------------------------


def euroc_run(seq_dir, sigma_rot=0.01, sigma_trans=0.02, seed=0, extrinsics=None, max_frames=None):
    """Filter run on a EuRoC sequence with oracle measurements from ground truth.

    Returns ``(estimate, truth_at_frames, result)``.
    """
    seq = Path(seq_dir)
    ext = extrinsics or Extrinsics()
    gt, extras = read_groundtruth(seq / GT_CSV, with_extras=True)
    cam_t = np.array([t for t, _ in read_euroc_cam_index(seq / CAM_CSV)])
    cam_t = cam_t[(cam_t >= gt.t[0]) & (cam_t <= gt.t[-1])]
    if max_frames is not None:
        cam_t = cam_t[:max_frames]
    if len(cam_t) < 3:
        raise ValueError("sequence has fewer than 3 camera frames inside the ground truth span")
    truth = interpolate(gt, cam_t)
    meas = list(oracle_measurements(truth, ext, sigma_rot, sigma_trans, seed))

    t0 = cam_t[0]
    imu = [s for s in read_euroc_imu(seq / IMU_CSV) if s.t <= cam_t[-1] + 0.1]
    start = max(i for i, s in enumerate(imu) if s.t <= t0) if imu and imu[0].t <= t0 else None
    if start is None:
        raise ValueError("IMU stream starts after the first camera frame")
    imu = imu[start:]

    j = int(np.argmin(np.abs(gt.t - t0)))
    v_w, b_w, b_a = extras[j, 0:3], extras[j, 3:6], extras[j, 6:9]
    if not np.all(np.isfinite(extras[j])):
        v_w, b_w, b_a = np.zeros(3), np.zeros(3), np.zeros(3)
    C, r = truth.C[0], truth.r[0]
    x0 = RobocentricState(
        C_ri=C.T,
        r_ir=-C.T @ r,
        g_r=-C.T @ GRAVITY_I,
        C_rv=np.eye(3),
        r_vr=np.zeros(3),
        v=C.T @ v_w,
        b_w=b_w,
        b_a=b_a,
    )
    ekf = RobocentricEKF(x0, initial_covariance(), t0, extrinsics=ext)
    result = run_filter(ekf, imu, meas)
    return result.trajectory, truth, result
