"""Pinhole view synthesis and photometric reconstruction losses.

Images are 2-D float arrays with values in [0, 1]; depth maps are 2-D float
arrays in meters. Pixel coordinates are ``(x, y)`` = (column, row) with the
centre of the top-left pixel at ``(0, 0)``.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import ParseError, UndefinedLossError

MIN_DEPTH = 1e-6
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
DEFAULT_ALPHA = 0.15


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def shape(self):
        return (self.height, self.width)

    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class RelativePoseSE3:
    """Maps target-camera points into the source camera: ``p_s = C p_t + r``."""

    C: np.ndarray
    r: np.ndarray

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))


def project(p, K):
    """Pixel coordinates of a camera-frame point.

    Raises
    ------
    ValueError
        When the point is at or behind ``z = 1e-6``.
    """
    x, y, z = p
    if z <= MIN_DEPTH:
        raise ValueError("point is behind the camera")
    return np.array([K.fx * x / z + K.cx, K.fy * y / z + K.cy])


def backproject(u, d, K):
    """Camera-frame point at depth ``d`` along the ray through pixel ``u``."""
    if not d > 0.0:
        raise ValueError("depth must be positive")
    return d * np.array([(u[0] - K.cx) / K.fx, (u[1] - K.cy) / K.fy, 1.0])


def pixel_grid(K):
    ys, xs = np.mgrid[0 : K.height, 0 : K.width].astype(float)
    return xs, ys


def bilinear_sample(image, x, y):
    """Sample ``image`` at float coordinates; returns ``(values, inside)``.

    ``inside`` is False where the 2x2 neighbourhood leaves the image.
    """
    h, w = image.shape
    tol = 1e-9  # round-off from the projection chain at the border
    inside = (x >= -tol) & (x <= w - 1 + tol) & (y >= -tol) & (y <= h - 1 + tol)
    xc = np.clip(x, 0.0, w - 1)
    yc = np.clip(y, 0.0, h - 1)
    x0 = np.minimum(np.floor(xc).astype(int), w - 2)
    y0 = np.minimum(np.floor(yc).astype(int), h - 2)
    fx = xc - x0
    fy = yc - y0
    top = image[y0, x0] * (1.0 - fx) + image[y0, x0 + 1] * fx
    bot = image[y0 + 1, x0] * (1.0 - fx) + image[y0 + 1, x0 + 1] * fx
    return top * (1.0 - fy) + bot * fy, inside


def warp(source, depth_t, T_st, K):
    """Reconstruct the target view from ``source``.

    Each target pixel is backprojected with ``depth_t``, moved into the
    source camera with ``T_st`` and bilinearly sampled from ``source``.

    Returns
    -------
    recon : ndarray
        Reconstructed target image, zero where invalid.
    mask : ndarray of bool
        False for pixels that land outside the source or behind its camera,
        or whose target depth is not positive.
    """
    source = np.asarray(source, dtype=float)
    depth_t = np.asarray(depth_t, dtype=float)
    if source.shape != K.shape or depth_t.shape != K.shape:
        raise ValueError("image, depth and intrinsics disagree on shape")
    xs, ys = pixel_grid(K)
    valid_depth = depth_t > 0.0
    d = np.where(valid_depth, depth_t, 1.0)
    P = np.stack([(xs - K.cx) / K.fx * d, (ys - K.cy) / K.fy * d, d], axis=-1)
    Q = P @ np.asarray(T_st.C).T + np.asarray(T_st.r)
    z = Q[..., 2]
    front = z > MIN_DEPTH
    zs = np.where(front, z, 1.0)
    u = K.fx * Q[..., 0] / zs + K.cx
    v = K.fy * Q[..., 1] / zs + K.cy
    vals, inside = bilinear_sample(source, u, v)
    mask = valid_depth & front & inside
    return np.where(mask, vals, 0.0), mask


def ssim_map(a, b):
    """Per-pixel SSIM loss ``(1 - SSIM) / 2`` over 3x3 windows, clamped to [0, 1].

    Border windows replicate the edge pixels.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)

    def pool(x):
        return uniform_filter(x, size=3, mode="nearest")

    mu_a = pool(a)
    mu_b = pool(b)
    var_a = pool(a * a) - mu_a * mu_a
    var_b = pool(b * b) - mu_b * mu_b
    cov = pool(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return np.clip((1.0 - num / den) / 2.0, 0.0, 1.0)


def photometric_error_map(recon, target, alpha=DEFAULT_ALPHA):
    """Per-pixel ``(1 - alpha) |recon - target| + alpha * ssim_loss``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    recon = np.asarray(recon, dtype=float)
    target = np.asarray(target, dtype=float)
    err = (1.0 - alpha) * np.abs(recon - target)
    if alpha > 0.0:
        err = err + alpha * ssim_map(recon, target)
    return err


def _masked_mean(values, mask):
    n = int(mask.sum())
    if n == 0:
        raise UndefinedLossError("no valid pixels")
    # sorted summation order: result does not depend on pixel traversal
    return float(np.sum(np.sort(values[mask]))) / n


def _masked_error_map(recon, target, mask, alpha):
    # Invalid pixels take the target value so they do not leak into the SSIM
    # windows of valid neighbours; they are excluded from the mean anyway.
    target = np.asarray(target, dtype=float)
    recon = np.where(mask, np.asarray(recon, dtype=float), target)
    return photometric_error_map(recon, target, alpha)


def photometric_loss(recon, target, mask=None, alpha=DEFAULT_ALPHA):
    """Mean over valid pixels of the per-pixel photometric error."""
    if mask is None:
        mask = np.ones(np.shape(target), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    return _masked_mean(_masked_error_map(recon, target, mask, alpha), mask)


def min_reconstruction_loss(target, recon_prev, recon_next, alpha=DEFAULT_ALPHA):
    """Mean over pixels of the smaller of two per-pixel photometric errors.

    ``recon_prev`` and ``recon_next`` are ``(image, mask)`` pairs. A pixel
    invalid in one source uses the other; pixels invalid in both are dropped.
    """
    img_p, mask_p = recon_prev
    img_n, mask_n = recon_next
    mask_p = np.asarray(mask_p, dtype=bool)
    mask_n = np.asarray(mask_n, dtype=bool)
    e_p = np.where(mask_p, _masked_error_map(img_p, target, mask_p, alpha), np.inf)
    e_n = np.where(mask_n, _masked_error_map(img_n, target, mask_n, alpha), np.inf)
    e = np.minimum(e_p, e_n)
    return _masked_mean(e, mask_p | mask_n)


# --- image and depth I/O -------------------------------------------------

DEPTH_MAGIC = b"RVIODPT1"


def write_pgm(path, image):
    """8-bit binary PGM (P5); values in [0, 1] are scaled by 255 and rounded."""
    img = np.clip(np.asarray(image, dtype=float), 0.0, 1.0)
    data = np.round(img * 255.0).astype(np.uint8)
    h, w = data.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + data.tobytes())


def read_pgm(path):
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError("truncated PGM header", path)
        tokens.append(raw[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise ParseError("not a binary PGM (P5)", path)
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ParseError("only 8-bit PGM is supported", path)
    data = np.frombuffer(raw[pos : pos + w * h], dtype=np.uint8)
    if data.size != w * h:
        raise ParseError("truncated PGM data", path)
    return data.reshape(h, w).astype(float) / 255.0


def write_depth(path, depth):
    """Binary float32 grid: 8-byte magic, uint32 width, uint32 height, data."""
    d = np.asarray(depth, dtype="<f4")
    h, w = d.shape
    Path(path).write_bytes(DEPTH_MAGIC + struct.pack("<II", w, h) + d.tobytes())


def read_depth(path):
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:8] != DEPTH_MAGIC:
        raise ParseError("not a depth grid file", path)
    w, h = struct.unpack("<II", raw[8:16])
    data = np.frombuffer(raw[16:], dtype="<f4")
    if data.size != w * h:
        raise ParseError("depth grid size does not match header", path)
    return data.reshape(h, w).astype(float)
