"""Timestamped pose sequences, TUM export and Sim(3)-aligned error metrics."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .errors import AlignmentError, ParseError, StreamIntegrityError
from .lie import so3_log

ASSOCIATION_WINDOW = 0.01


@dataclass
class Trajectory:
    """Poses ``(C_iv, r_i)`` at strictly increasing times ``t``."""

    t: np.ndarray
    C: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.C = np.asarray(self.C, dtype=float).reshape(-1, 3, 3)
        self.r = np.asarray(self.r, dtype=float).reshape(-1, 3)
        if not (len(self.t) == len(self.C) == len(self.r)):
            raise ValueError("trajectory arrays have mismatched lengths")
        if len(self.t) > 1 and np.any(np.diff(self.t) <= 0.0):
            raise StreamIntegrityError("trajectory timestamps must strictly increase")

    def __len__(self):
        return len(self.t)

    def __getitem__(self, index):
        """Sub-trajectory for a slice or index array."""
        if isinstance(index, (int, np.integer)):
            index = [index]
        return Trajectory(self.t[index], self.C[index], self.r[index])

    @classmethod
    def empty(cls):
        return cls(np.zeros(0), np.zeros((0, 3, 3)), np.zeros((0, 3)))

    @classmethod
    def from_poses(cls, poses):
        """Build from an iterable of ``(t, C, r)``."""
        poses = list(poses)
        if not poses:
            return cls.empty()
        t, C, r = zip(*poses)
        return cls(np.array(t), np.array(C), np.array(r))


@dataclass(frozen=True)
class Sim3Transform:
    """Similarity ``p -> s C p + t``."""

    s: float
    C: np.ndarray
    t: np.ndarray

    def apply(self, traj):
        C = np.einsum("ij,njk->nik", self.C, traj.C)
        r = self.s * traj.r @ self.C.T + self.t
        return Trajectory(traj.t.copy(), C, r)


def write_tum(traj, path):
    """``t x y z qx qy qz qw`` per line.

    Pose values carry 9 significant digits. Timestamps are written with 9
    decimals instead, since 9 significant digits would round a Unix epoch
    time to whole seconds.
    """
    lines = []
    if len(traj):
        q = Rotation.from_matrix(traj.C).as_quat()  # scalar-last
        for t, p, qq in zip(traj.t, traj.r, q):
            if qq[3] < 0.0:
                qq = -qq
            lines.append(" ".join([_t9(t)] + [_g9(x) for x in (*p, *qq)]))
    Path(path).write_text("".join(line + "\n" for line in lines))


def _g9(x):
    s = f"{float(x):.9g}"
    if s == "-0":
        s = "0"
    return s


def _t9(t):
    s = f"{float(t):.9f}".rstrip("0")
    return s + "0" if s.endswith(".") else s


def read_tum(path):
    path = Path(path)
    poses = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise ParseError(f"expected 8 fields, got {len(parts)}", path, lineno)
        try:
            x = np.array([float(p) for p in parts])
        except ValueError:
            raise ParseError("non-numeric field", path, lineno) from None
        q = x[4:8]
        n = np.linalg.norm(q)
        if abs(n - 1.0) > 1e-3:
            raise ParseError(f"quaternion norm {n:.6f} is not unit", path, lineno)
        poses.append((x[0], Rotation.from_quat(q / n).as_matrix(), x[1:4]))
    return Trajectory.from_poses(poses)


def associate(est, gt, window=ASSOCIATION_WINDOW):
    """Index pairs ``(i_est, i_gt)`` matched by nearest timestamp within ``window``."""
    if len(est) == 0 or len(gt) == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    j = np.searchsorted(gt.t, est.t)
    j_lo = np.clip(j - 1, 0, len(gt) - 1)
    j_hi = np.clip(j, 0, len(gt) - 1)
    pick_hi = np.abs(gt.t[j_hi] - est.t) < np.abs(gt.t[j_lo] - est.t)
    jj = np.where(pick_hi, j_hi, j_lo)
    ok = np.abs(gt.t[jj] - est.t) <= window
    return np.nonzero(ok)[0], jj[ok]


def umeyama(src, dst):
    """Closed-form similarity minimizing ``sum |s C src + t - dst|^2``."""
    n = len(src)
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    xs = src - mu_s
    xd = dst - mu_d
    sv = np.linalg.svd(xs, compute_uv=False)
    if sv[0] == 0.0 or sv[1] <= 1e-9 * sv[0]:
        raise AlignmentError("degenerate (collinear) point set")
    Sigma = xd.T @ xs / n
    U, D, Vt = np.linalg.svd(Sigma)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0.0:
        S[2, 2] = -1.0
    C = U @ S @ Vt
    var_s = (xs**2).sum() / n
    s = float(np.trace(np.diag(D) @ S) / var_s)
    t = mu_d - s * C @ mu_s
    return Sim3Transform(s, C, t)


def sim3_align(est, gt, window=ASSOCIATION_WINDOW):
    i, j = associate(est, gt, window)
    if len(i) < 3:
        raise AlignmentError(f"need at least 3 associated poses, got {len(i)}")
    return umeyama(est.r[i], gt.r[j])


def ate_rmse(est, gt, transform=None, window=ASSOCIATION_WINDOW):
    """Translation RMSE (m) and rotation RMSE (deg) after Sim(3) alignment.

    If ``transform`` is None it is estimated with :func:`sim3_align`.
    """
    if transform is None:
        transform = sim3_align(est, gt, window)
    i, j = associate(est, gt, window)
    if len(i) == 0:
        raise AlignmentError("no associated poses")
    aligned = transform.apply(est)
    d = aligned.r[i] - gt.r[j]
    trans = float(np.sqrt((d**2).sum(axis=1).mean()))
    E = np.einsum("nji,njk->nik", gt.C[j], aligned.C[i])
    # geodesic angle from the trace, clipped into arccos' domain
    cos = np.clip((np.trace(E, axis1=1, axis2=2) - 1.0) / 2.0, -1.0, 1.0)
    ang = np.arccos(cos)
    small = ang < 1e-6
    if np.any(small):
        ang[small] = [np.linalg.norm(so3_log(e)) for e in E[small]]
    rot = float(np.degrees(np.sqrt((ang**2).mean())))
    return trans, rot


def interpolate(traj, times):
    """Poses at ``times`` by linear position and slerp rotation interpolation.

    Raises
    ------
    ValueError
        If a requested time lies outside the trajectory's span.
    """
    times = np.asarray(times, dtype=float)
    if len(traj) < 2 or times.min() < traj.t[0] or times.max() > traj.t[-1]:
        raise ValueError("interpolation time outside the trajectory")
    C = Slerp(traj.t, Rotation.from_matrix(traj.C))(times).as_matrix()
    r = np.stack([np.interp(times, traj.t, traj.r[:, k]) for k in range(3)], axis=1)
    return Trajectory(times, C, r)
