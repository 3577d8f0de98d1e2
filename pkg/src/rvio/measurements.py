"""Relative-pose measurement sources and the logit-to-covariance mapping.

A measurement stream is any iterable of :class:`RelativePoseMeasurement` in
timestamp order. The filter never looks past that interface, which is where a
learned egomotion model would plug in.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError, StreamIntegrityError
from .lie import so3_exp, so3_log

logger = logging.getLogger(__name__)

CSV_HEADER = "t_k,t_k1,phi_x,phi_y,phi_z,r_x,r_y,r_z,w_1,w_2,w_3,w_4,w_5,w_6"
CSV_FIELDS = 14
LOGIT_CLAMP = 0.999


@dataclass(frozen=True)
class UncertaintyConfig:
    sigma0_sq: float = 1.0
    beta: float = 4.0

    def __post_init__(self):
        if not (self.sigma0_sq > 0.0 and self.beta > 0.0):
            raise ConfigError("sigma0_sq and beta must be positive")

    @property
    def variance_band(self):
        return self.sigma0_sq * 10.0 ** (-self.beta), self.sigma0_sq * 10.0**self.beta


@dataclass(frozen=True)
class RelativePoseMeasurement:
    """Camera ``c_{k+1}`` pose in camera ``c_k`` with its covariance logits.

    ``w`` is ordered ``[rotation(3), translation(3)]``.
    """

    t_k: float
    t_k1: float
    phi: np.ndarray
    r: np.ndarray
    w: np.ndarray = field(default_factory=lambda: np.zeros(6))

    def __post_init__(self):
        object.__setattr__(self, "t_k", float(self.t_k))
        object.__setattr__(self, "t_k1", float(self.t_k1))
        object.__setattr__(self, "phi", np.array(self.phi, dtype=float).reshape(3))
        object.__setattr__(self, "r", np.array(self.r, dtype=float).reshape(3))
        object.__setattr__(self, "w", np.array(self.w, dtype=float).reshape(6))

    @property
    def C(self):
        return so3_exp(self.phi)


def covariance_from_logits(w, cfg=None):
    """Diagonal ``R`` with entries ``sigma0^2 * 10**(beta * tanh(w_i))``."""
    cfg = cfg or UncertaintyConfig()
    w = np.asarray(w, dtype=float)
    return np.diag(cfg.sigma0_sq * 10.0 ** (cfg.beta * np.tanh(w)))


def logits_for_variance(variances, cfg=None):
    """Inverse of :func:`covariance_from_logits` on the diagonal.

    Logits are clamped so ``|tanh(w)| <= 0.999``. Variances outside the
    band ``sigma0^2 * 10**[-beta, beta]`` also log a warning.
    """
    cfg = cfg or UncertaintyConfig()
    variances = np.asarray(variances, dtype=float)
    u = np.log10(variances / cfg.sigma0_sq) / cfg.beta
    if np.any(np.abs(u) > 1.0 + 1e-12):
        lo, hi = cfg.variance_band
        logger.warning(
            "requested variance outside [%.3g, %.3g]; clamping logits", lo, hi
        )
    elif np.any(np.abs(u) > LOGIT_CLAMP):
        # on the band edge itself: the finite logit clamp costs a few percent
        logger.debug("variance at the band edge; clamping logits")
    return np.arctanh(np.clip(u, -LOGIT_CLAMP, LOGIT_CLAMP))


def relative_camera_pose(C_iv_k, r_k, C_iv_k1, r_k1, ext):
    """Pose of camera at ``k+1`` in camera at ``k`` from two IMU poses."""
    C_ic_k = C_iv_k @ ext.C_rc
    C_ic_k1 = C_iv_k1 @ ext.C_rc
    p_k = r_k + C_iv_k @ ext.rho
    p_k1 = r_k1 + C_iv_k1 @ ext.rho
    return C_ic_k.T @ C_ic_k1, C_ic_k.T @ (p_k1 - p_k)


def oracle_measurements(traj, ext, sigma_rot=0.0, sigma_trans=0.0, seed=0, cfg=None):
    """Noisy relative poses between consecutive poses of a ground-truth trajectory.

    Rotation noise is applied on the left, ``C_meas = exp(n) C_true``, so the
    rotation residual at the true state equals the injected sample.
    """
    cfg = cfg or UncertaintyConfig()
    rng = np.random.default_rng(seed)
    var = np.array([sigma_rot**2] * 3 + [sigma_trans**2] * 3)
    # Zero noise has no representable variance; use the tightest one instead.
    tightest = cfg.sigma0_sq * 10.0 ** (-cfg.beta * LOGIT_CLAMP)
    var = np.where(var > 0.0, var, tightest)
    w = logits_for_variance(var, cfg)
    for k in range(len(traj) - 1):
        C_rel, r_rel = relative_camera_pose(traj.C[k], traj.r[k], traj.C[k + 1], traj.r[k + 1], ext)
        n_rot = rng.normal(0.0, 1.0, 3) * sigma_rot
        n_trans = rng.normal(0.0, 1.0, 3) * sigma_trans
        if sigma_rot > 0.0:
            C_rel = so3_exp(n_rot) @ C_rel
        yield RelativePoseMeasurement(
            traj.t[k], traj.t[k + 1], so3_log(C_rel), r_rel + n_trans, w.copy()
        )


def _fmt(x):
    return f"{float(x):.17g}"


def write_measurements(path, measurements):
    lines = [CSV_HEADER]
    for m in measurements:
        values = [m.t_k, m.t_k1, *m.phi, *m.r, *m.w]
        lines.append(",".join(_fmt(x) for x in values))
    Path(path).write_text("\n".join(lines) + "\n")


def file_measurements(path):
    """Replay measurements from CSV. Yields in file order.

    Raises
    ------
    ParseError
        On a row with the wrong field count or a non-numeric field.
    StreamIntegrityError
        If ``t_k1`` does not strictly increase from row to row.
    """
    path = Path(path)
    last = -math.inf
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if lineno == 1 and line.startswith("t_k"):
                continue
            parts = line.split(",")
            if len(parts) != CSV_FIELDS:
                raise ParseError(
                    f"expected {CSV_FIELDS} fields, got {len(parts)}", path, lineno
                )
            try:
                x = [float(p) for p in parts]
            except ValueError:
                raise ParseError("non-numeric field", path, lineno) from None
            m = RelativePoseMeasurement(x[0], x[1], x[2:5], x[5:8], x[8:14])
            if not m.t_k1 > m.t_k:
                raise StreamIntegrityError(f"{path}:{lineno}: t_k1 <= t_k")
            if not m.t_k1 > last:
                raise StreamIntegrityError(f"{path}:{lineno}: timestamps not increasing")
            last = m.t_k1
            yield m


def distort_measurement(meas, scale=1.0, bias=(0.0, 0.0, 0.0)):
    """Translation as seen by a source with scale and bias error, ``s r + b``."""
    r = scale * meas.r + np.asarray(bias, dtype=float)
    return RelativePoseMeasurement(meas.t_k, meas.t_k1, meas.phi, r, meas.w)


def apply_measurement_correction(meas, log_scale=0.0, bias=(0.0, 0.0, 0.0)):
    """Undo :func:`distort_measurement` with ``s = exp(log_scale)``: ``(r - b) / s``."""
    r = (meas.r - np.asarray(bias, dtype=float)) / math.exp(log_scale)
    return RelativePoseMeasurement(meas.t_k, meas.t_k1, meas.phi, r, meas.w)


def invert_measurement(meas):
    """Swap source and target: pose of ``c_k`` in ``c_{k+1}``."""
    C = so3_exp(meas.phi)
    return RelativePoseMeasurement(meas.t_k1, meas.t_k, -meas.phi, -(C.T @ meas.r), meas.w)
