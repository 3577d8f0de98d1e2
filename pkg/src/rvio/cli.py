"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 malformed input
data, 3 numerical divergence.
"""

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .errors import (
    AlignmentError,
    ConfigError,
    DivergenceError,
    NumericalHealthError,
    ParseError,
    RenderError,
    StreamIntegrityError,
)
from .euroc import read_calibration, read_euroc_imu
from .experiments import pose_errors
from .filter import RobocentricEKF, run_filter
from .gradcheck import (
    THETA_NAMES,
    calibrate,
    fd_gradient,
    refinement_report,
    synthetic_window,
    true_theta,
    window_loss,
)
from .lie import so3_log
from .measurements import file_measurements, oracle_measurements, write_measurements
from .photometric import write_depth, write_pgm
from .sim import (
    Scenario,
    camera_times,
    ground_truth,
    render_at,
    sample_imu,
    true_state,
)
from .state import initial_covariance, state_from_record, state_to_record
from .trajectory import ate_rmse, read_tum, sim3_align, write_tum

logger = logging.getLogger("rvio")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3

FORMAT_VERSIONS = {"imu": 1, "measurements": 1, "state": 1, "tum": 1, "pgm": 1, "depth": 1}

REFINEMENT_TOL = 0.05
NOISE_FLOOR_FACTOR = 10.0

# Standard file names inside a simulate output directory.
IMU_FILE = "imu.csv"
MEAS_FILE = "measurements.csv"
GT_FILE = "groundtruth.tum"
STATE_FILE = "initial_state.txt"
MANIFEST_FILE = "manifest.json"

IMU_HEADER = (
    "#timestamp [ns],w_RS_S_x [rad s^-1],w_RS_S_y [rad s^-1],w_RS_S_z [rad s^-1],"
    "a_RS_S_x [m s^-2],a_RS_S_y [m s^-2],a_RS_S_z [m s^-2]"
)


def _f17(x):
    return f"{float(x):.17g}"


def _f9(x):
    s = f"{float(x):.9f}"
    return "0.000000000" if s == "-0.000000000" else s


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _add_config_flags(p):
    p.add_argument("--config", help="flat key = value config file")
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type is bool:
            if f.default:
                p.add_argument("--no-" + f.name.replace("_", "-"), dest=f.name,
                               action="store_const", const="false", default=None)
            else:
                p.add_argument(flag, dest=f.name, action="store_const", const="true", default=None)
        else:
            p.add_argument(flag, dest=f.name, default=None, metavar=f.name.upper())


def build_parser():
    parser = _Parser(prog="rvio", description="Robocentric visual-inertial EKF toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="write a synthetic scenario to disk")
    _add_config_flags(p)

    p = sub.add_parser("run-filter", help="run the filter over IMU and measurement files")
    p.add_argument("--input-dir", help="directory written by 'simulate'")
    _add_config_flags(p)

    p = sub.add_parser("gradcheck", help="finite-difference gradient report")
    p.add_argument("--self-test", action="store_true", help="check FD on a quadratic")
    _add_config_flags(p)

    p = sub.add_parser("calibrate", help="recover measurement scale and bias on a synthetic window")
    _add_config_flags(p)

    p = sub.add_parser("evaluate", help="Sim3-aligned RMSE of an estimate against ground truth")
    p.add_argument("estimate")
    p.add_argument("groundtruth")
    p.add_argument("--csv", help="also write the table as csv")
    return parser


def _load_config(args, **extra):
    overrides = {f.name: getattr(args, f.name, None) for f in dataclasses.fields(RunConfig)}
    overrides.update({k: v for k, v in extra.items() if v is not None})
    return RunConfig.load(args.config, overrides)


def _scenario(cfg):
    if not cfg.duration > 0.0:
        raise ConfigError("duration must be positive")
    base = Scenario()
    return dataclasses.replace(
        base,
        trajectory=dataclasses.replace(base.trajectory, duration=cfg.duration),
        imu_rate=cfg.imu_rate,
        cam_rate=cfg.cam_rate,
        noise=cfg.noise(),
        sigma_rot=cfg.sigma_rot,
        sigma_trans=cfg.sigma_trans,
    )


def _out_dir(cfg):
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}") from None
    return out


def write_imu_csv(path, samples):
    lines = [IMU_HEADER]
    for s in samples:
        ns = int(round(s.t * 1e9))
        lines.append(",".join([str(ns)] + [_f17(x) for x in (*s.omega_m, *s.a_m)]))
    Path(path).write_text("\n".join(lines) + "\n")


# --- commands ------------------------------------------------------------


def cmd_simulate(cfg):
    sc = _scenario(cfg)
    out = _out_dir(cfg)
    spec = sc.trajectory
    imu = sample_imu(spec, sc.imu_rate, sc.b_w, sc.b_a, sc.noise if cfg.imu_noise else None,
                     seed=cfg.seed)
    times = camera_times(spec, sc.cam_rate)
    gt = ground_truth(spec, times)
    meas = list(
        oracle_measurements(gt, sc.extrinsics, sc.sigma_rot, sc.sigma_trans, cfg.seed + 1,
                            cfg.uncertainty())
    )
    write_imu_csv(out / IMU_FILE, imu)
    write_measurements(out / MEAS_FILE, meas)
    write_tum(gt, out / GT_FILE)
    x0 = true_state(spec, times[0], sc.b_w, sc.b_a)
    (out / STATE_FILE).write_text(state_to_record(times[0], x0) + "\n")

    frames = []
    if cfg.render:
        (out / "frames").mkdir(exist_ok=True)
        for k, t in enumerate(times):
            img, depth = render_at(sc.scene, spec, t, sc.extrinsics, sc.intrinsics)
            name = f"frames/{k:06d}"
            write_pgm(out / f"{name}.pgm", img)
            write_depth(out / f"{name}.depth", depth)
            frames.append(name)

    manifest = {
        "command": "simulate",
        "config": cfg.as_dict(),
        "seed": cfg.seed,
        "format_versions": FORMAT_VERSIONS,
        "files": {
            "imu": IMU_FILE,
            "measurements": MEAS_FILE,
            "groundtruth": GT_FILE,
            "initial_state": STATE_FILE,
            "frames": [f + ".pgm" for f in frames],
            "depths": [f + ".depth" for f in frames],
        },
        "counts": {"imu": len(imu), "measurements": len(meas), "frames": len(frames)},
    }
    (out / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(imu)} IMU samples, {len(meas)} measurements, {len(frames)} frames to {out}")
    return EXIT_OK


def _filter_inputs(cfg, input_dir):
    if input_dir is not None:
        d = Path(input_dir)
        if not d.is_dir():
            raise ConfigError(f"input directory {d} does not exist")
        defaults = {"imu": IMU_FILE, "measurements": MEAS_FILE, "initial_state": STATE_FILE}
        if (d / GT_FILE).exists():
            defaults["groundtruth"] = GT_FILE
        changes = {k: str(d / v) for k, v in defaults.items() if getattr(cfg, k) is None}
        cfg = dataclasses.replace(cfg, **changes)
    cfg.require("imu", "measurements", "initial_state")
    if cfg.groundtruth is not None:
        cfg.require("groundtruth")
    if cfg.calibration is not None:
        cfg.require("calibration")
    return cfg


def cmd_run_filter(cfg, input_dir=None):
    cfg = _filter_inputs(cfg, input_dir)
    out = _out_dir(cfg)
    lines = [ln for ln in Path(cfg.initial_state).read_text().splitlines() if ln.strip()]
    if len(lines) != 1:
        raise ParseError("initial state file must hold exactly one record", cfg.initial_state)
    t0, x0 = state_from_record(lines[0])
    if cfg.calibration is not None:
        _, ext = read_calibration(cfg.calibration)
    else:
        ext = Scenario().extrinsics
    truth = read_tum(cfg.groundtruth) if cfg.groundtruth else None

    ekf = RobocentricEKF(
        x0,
        initial_covariance(cfg.initial_uncertainty()),
        t0,
        cfg.noise(),
        ext,
        cfg.uncertainty(),
        freeze_scale=cfg.freeze_scale,
    )
    result = run_filter(ekf, read_euroc_imu(cfg.imu), file_measurements(cfg.measurements),
                        keep_covariances=truth is not None)
    write_tum(result.trajectory, out / "trajectory.tum")

    header = "frame,t,residual_rot_norm,residual_trans_norm,cov_trace,scale,nees"
    rows = [header]
    for k, fr in enumerate(result.frames, start=1):
        nees = math.nan
        if truth is not None:
            j = int(np.argmin(np.abs(truth.t - fr.t)))
            if abs(truth.t[j] - fr.t) <= 1e-6:
                C, r = truth.C[j], truth.r[j]
                ref = x0.replace(C_ri=C.T, r_ir=-C.T @ r)
                e = pose_errors(result.states[k], ref)
                nees = float(e @ np.linalg.solve(result.covariances[k][:6, :6], e))
        rows.append(",".join([
            str(fr.frame), _f17(fr.t), _f17(np.linalg.norm(fr.residual[:3])),
            _f17(np.linalg.norm(fr.residual[3:])), _f17(fr.cov_diag.sum()), _f17(fr.scale),
            _f17(nees),
        ]))
    (out / "diagnostics.csv").write_text("\n".join(rows) + "\n")
    print(f"processed {len(result.frames)} frames; trajectory in {out / 'trajectory.tum'}")
    if truth is not None:
        trans, rot = ate_rmse(result.trajectory, truth)
        print(f"trans RMSE (Sim3) {trans:.6f} m, rot RMSE {rot:.6f} deg")
    return EXIT_OK


def _window(cfg):
    bias = (cfg.inject_bias_x, cfg.inject_bias_y, cfg.inject_bias_z)
    sc = _scenario(cfg)
    problem = synthetic_window(sc, cfg.window_start, cfg.frames, cfg.cam_rate, cfg.imu_rate,
                               cfg.inject_scale, bias)
    return problem, true_theta(cfg.inject_scale, bias)


def cmd_gradcheck(cfg, self_test=False):
    out = _out_dir(cfg)
    h = cfg.gradcheck_step
    if self_test:
        g = fd_gradient(lambda th: float(th @ th), np.array([1.0, 2.0]), 1e-5)
        ok = np.allclose(g, [2.0, 4.0], atol=1e-8)
        print(f"quadratic self-test: grad = {g[0]:.10f} {g[1]:.10f} {'PASS' if ok else 'FAIL'}")
        return EXIT_OK if ok else EXIT_DIVERGED
    problem, theta_true = _window(cfg)
    theta = np.zeros(len(THETA_NAMES))

    def f(th):
        return window_loss(problem, th)[0]

    rep = refinement_report(f, theta, h, tol=REFINEMENT_TOL, factor=NOISE_FLOOR_FACTOR)
    print(f"window loss at theta = 0: {f(theta):.10g}; at injected truth: {f(theta_true):.10g}")
    print(f"{'param':>10} {'grad(h)':>14} {'grad(h/2)':>14} {'rel gap':>9} {'noise':>10}  status")
    lines = ["name,theta,grad_h,grad_h2,rel_gap,noise_floor,status"]
    for j, name in enumerate(THETA_NAMES):
        g1, g2 = rep.grads[0, j], rep.grads[1, j]
        if not rep.judged[j]:
            status = "noise"
        else:
            status = "ok" if rep.gap[j] <= REFINEMENT_TOL else "FAIL"
        print(f"{name:>10} {g1:14.6g} {g2:14.6g} {rep.gap[j]:9.3%} {rep.noise_floor[j]:10.3g}  {status}")
        lines.append(",".join([name, _f17(theta[j]), _f17(g1), _f17(g2), _f17(rep.gap[j]),
                               _f17(rep.noise_floor[j]), status]))
    (out / "gradcheck.csv").write_text("\n".join(lines) + "\n")
    return EXIT_OK if rep.passed else EXIT_DIVERGED


def cmd_calibrate(cfg):
    out = _out_dir(cfg)
    problem, theta_true = _window(cfg)
    lr = np.array([cfg.lr_scale] + [cfg.lr_bias] * 3)
    best, history = calibrate(problem, np.zeros(len(THETA_NAMES)), cfg.steps, lr, cfg.fd_step)
    (out / "calibration.txt").write_text(
        "# step loss " + " ".join(THETA_NAMES) + "\n" + "".join(h.record() + "\n" for h in history)
    )
    print(f"recovered scale {math.exp(best[0]):.6f} (injected {cfg.inject_scale})")
    print(f"recovered bias  {best[1]:.6f} {best[2]:.6f} {best[3]:.6f} "
          f"(injected {theta_true[1]} {theta_true[2]} {theta_true[3]})")
    return EXIT_OK


def cmd_evaluate(est_path, gt_path, csv_path=None):
    est = read_tum(est_path)
    gt = read_tum(gt_path)
    S = sim3_align(est, gt)
    trans, rot = ate_rmse(est, gt, S)
    aa = so3_log(S.C)
    table = [
        ("scale", _f9(S.s)),
        ("rotation_axis_angle", " ".join(_f9(x) for x in aa)),
        ("translation", " ".join(_f9(x) for x in S.t)),
        ("trans_rmse_m", _f9(trans)),
        ("rot_rmse_deg", _f9(rot)),
    ]
    for k, v in table:
        print(f"{k:<22}{v}")
    if csv_path:
        rows = ["s,aa_x,aa_y,aa_z,t_x,t_y,t_z,trans_rmse_m,rot_rmse_deg"]
        rows.append(",".join(_f17(x) for x in (S.s, *aa, *S.t, trans, rot)))
        Path(csv_path).write_text("\n".join(rows) + "\n")
    return EXIT_OK


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.INFO)
        if args.command is None:
            parser.print_help()
            return EXIT_USAGE
        if args.command == "evaluate":
            for p in (args.estimate, args.groundtruth):
                if not Path(p).exists():
                    raise ConfigError(f"{p} does not exist")
            return cmd_evaluate(args.estimate, args.groundtruth, args.csv)
        cfg = _load_config(args)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "run-filter":
            return cmd_run_filter(cfg, args.input_dir)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg, args.self_test)
        return cmd_calibrate(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, StreamIntegrityError, AlignmentError, RenderError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, NumericalHealthError) as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
