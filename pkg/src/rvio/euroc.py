"""Readers for the EuRoC ASL directory layout and a flat calibration file.

Only the CSV streams are handled: ``mav0/imu0/data.csv``,
``mav0/cam0/data.csv`` and ``mav0/state_groundtruth_estimate0/data.csv``.
"""

from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .config import read_key_values
from .errors import ParseError, StreamIntegrityError
from .photometric import CameraIntrinsics
from .propagation import ImuSample
from .state import Extrinsics
from .trajectory import Trajectory

IMU_CSV = Path("mav0/imu0/data.csv")
CAM_CSV = Path("mav0/cam0/data.csv")
GT_CSV = Path("mav0/state_groundtruth_estimate0/data.csv")


def _rows(path, min_fields, max_fields=None):
    """Yield ``(lineno, fields)`` skipping blanks and a leading ``#`` header."""
    path = Path(path)
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#") or (lineno == 1 and not line[0].isdigit()):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) < min_fields or (max_fields is not None and len(parts) > max_fields):
                raise ParseError(f"unexpected field count {len(parts)}", path, lineno)
            yield lineno, parts


def _ns(text, path, lineno):
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"bad timestamp {text!r}", path, lineno) from None


def _floats(parts, path, lineno):
    try:
        return np.array([float(p) for p in parts])
    except ValueError:
        raise ParseError("non-numeric field", path, lineno) from None


def read_euroc_imu(path):
    """Yield :class:`ImuSample` from ``timestamp[ns],wx,wy,wz,ax,ay,az`` rows."""
    last = None
    for lineno, parts in _rows(path, 7, 7):
        ns = _ns(parts[0], path, lineno)
        if last is not None and ns <= last:
            raise StreamIntegrityError(f"{path}:{lineno}: non-increasing timestamp")
        last = ns
        x = _floats(parts[1:], path, lineno)
        yield ImuSample(ns * 1e-9, x[0:3], x[3:6])


def read_euroc_cam_index(path):
    """Yield ``(t_seconds, filename)`` from ``timestamp[ns],filename`` rows."""
    last = None
    for lineno, parts in _rows(path, 2, 2):
        ns = _ns(parts[0], path, lineno)
        if last is not None and ns <= last:
            kind = "duplicate" if ns == last else "non-increasing"
            raise StreamIntegrityError(f"{path}:{lineno}: {kind} timestamp")
        last = ns
        yield ns * 1e-9, parts[1]


def read_groundtruth(path, with_extras=False):
    """Read ``timestamp, p(3), q_wxyz(4), ...`` into a :class:`Trajectory`.

    With ``with_extras`` also returns an ``(N, 9)`` array of the velocity
    (world frame) and gyro/accelerometer biases when present.
    """
    t, C, r, extras = [], [], [], []
    last = None
    for lineno, parts in _rows(path, 8):
        ns = _ns(parts[0], path, lineno)
        if last is not None and ns <= last:
            raise StreamIntegrityError(f"{path}:{lineno}: non-increasing timestamp")
        last = ns
        x = _floats(parts[1:], path, lineno)
        q_wxyz = x[3:7]
        n = np.linalg.norm(q_wxyz)
        if abs(n - 1.0) > 1e-3:
            raise ParseError(f"quaternion norm {n:.6f} is not unit", path, lineno)
        q = q_wxyz / n
        t.append(ns * 1e-9)
        C.append(Rotation.from_quat([q[1], q[2], q[3], q[0]]).as_matrix())
        r.append(x[0:3])
        extras.append(x[7:16] if len(x) >= 16 else np.full(9, np.nan))
    traj = Trajectory(np.array(t), np.array(C).reshape(-1, 3, 3), np.array(r).reshape(-1, 3))
    if with_extras:
        return traj, np.array(extras).reshape(-1, 9)
    return traj


def read_calibration(path):
    """Flat ``key = value`` calibration: intrinsics and IMU-camera extrinsics.

    Keys: ``fx fy cx cy width height``, ``extrinsic_q_wxyz`` (4 values) and
    ``extrinsic_t_xyz`` (3 values). The extrinsic is the camera pose in the
    IMU frame.
    """
    kv = read_key_values(path)
    try:
        K = CameraIntrinsics(
            float(kv["fx"]), float(kv["fy"]), float(kv["cx"]), float(kv["cy"]),
            int(kv["width"]), int(kv["height"]),
        )
        q = np.array([float(v) for v in kv["extrinsic_q_wxyz"].split(",")])
        p = np.array([float(v) for v in kv["extrinsic_t_xyz"].split(",")])
    except (KeyError, ValueError) as exc:
        raise ParseError(f"calibration: {exc}", path) from None
    if q.shape != (4,) or p.shape != (3,):
        raise ParseError("calibration: extrinsic needs 4 quaternion and 3 translation values", path)
    q = q / np.linalg.norm(q)
    C_rc = Rotation.from_quat([q[1], q[2], q[3], q[0]]).as_matrix()
    return K, Extrinsics(C_rc, p)
