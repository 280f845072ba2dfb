"""Quaternion and exponential-map helpers.

Conventions used across the package:

- quaternions are numpy arrays ``[w, x, y, z]``, unit norm, scalar first
- rotations are right-handed; the world is Y-up with +Z as the neutral
  facing direction, so ``heading`` is the rotation about +Y that maps
  +Z onto the character's horizontal forward vector
- exponential coordinates ("exp coords") are axis*angle 3-vectors; the
  canonical representative keeps the angle in [0, pi]

Everything here is plain numpy on float64. Functions accept single
quaternions (shape (4,)) and most also accept stacked arrays (..., 4).
"""

from __future__ import annotations

import numpy as np

_EPS = 1e-12


def normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < _EPS):
        raise ValueError("cannot normalize a zero quaternion")
    return q / n


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b, broadcasting over leading dims."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def conj(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    out = q.copy()
    out[..., 1:] = -out[..., 1:]
    return out


def rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate 3-vectors v by quaternions q (broadcasting)."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    qv = q[..., 1:]
    w = q[..., :1]
    t = 2.0 * np.cross(qv, v)
    return v + w * t + np.cross(qv, t)


def from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n < _EPS:
        return np.array([1.0, 0.0, 0.0, 0.0])
    axis = axis / n
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def from_y(angle: float | np.ndarray) -> np.ndarray:
    """Rotation about +Y by ``angle`` (vectorized over angle)."""
    angle = np.asarray(angle, dtype=np.float64)
    half = 0.5 * angle
    zeros = np.zeros_like(half)
    return np.stack([np.cos(half), zeros, np.sin(half), zeros], axis=-1)


def to_expmap(q: np.ndarray) -> np.ndarray:
    """Canonical exp coords of q: axis*angle with angle in [0, pi].

    q and -q map to the same rotation; the sign is fixed so w >= 0
    before taking the log, which is what keeps the angle <= pi.
    """
    q = np.asarray(q, dtype=np.float64)
    q = np.where(q[..., :1] < 0.0, -q, q)
    w = np.clip(q[..., 0], -1.0, 1.0)
    vec = q[..., 1:]
    s = np.linalg.norm(vec, axis=-1)
    angle = 2.0 * np.arctan2(s, w)
    # sin(angle/2) == s; guard the small-angle limit where axis is ill-defined
    scale = np.where(s > _EPS, angle / np.maximum(s, _EPS), 2.0)
    return vec * scale[..., None]


def from_expmap(e: np.ndarray) -> np.ndarray:
    """Inverse of to_expmap; accepts any magnitude, not just canonical."""
    e = np.asarray(e, dtype=np.float64)
    angle = np.linalg.norm(e, axis=-1)
    half = 0.5 * angle
    # sinc form is stable at angle -> 0
    small = angle < 1e-8
    k = np.where(small, 0.5, np.sin(half) / np.maximum(angle, _EPS))
    q = np.concatenate([np.cos(half)[..., None], e * k[..., None]], axis=-1)
    return q


def canonicalize_expmap(e: np.ndarray) -> np.ndarray:
    """Wrap exp coords to the canonical branch (angle in [0, pi])."""
    return to_expmap(from_expmap(e))


def heading_of(q: np.ndarray) -> np.ndarray:
    """Yaw of the rotated forward axis: atan2(fwd.x, fwd.z) with fwd = q*(0,0,1).

    Near gimbal (forward parallel to world Y) the yaw of +Z is
    meaningless; the rotated +X axis is used as a fallback reference
    (its yaw, minus the 90 degrees that separates +X from +Z at rest).
    """
    q = np.asarray(q, dtype=np.float64)
    fwd = rotate(q, np.array([0.0, 0.0, 1.0]))
    planar = np.hypot(fwd[..., 0], fwd[..., 2])
    main = np.arctan2(fwd[..., 0], fwd[..., 2])
    side = rotate(q, np.array([1.0, 0.0, 0.0]))
    fallback = np.arctan2(side[..., 0], side[..., 2]) - 0.5 * np.pi
    out = np.where(planar > 1e-6, main, fallback)
    return out if out.ndim else float(out)


def from_euler(angles_deg: np.ndarray, order: str) -> np.ndarray:
    """Quaternion from intrinsic Euler angles in degrees.

    ``order`` is a string like "ZXY" naming the rotation axes in
    application order (leftmost applied first in the fixed parent
    frame composition used by BVH: q = q0 * q1 * q2).
    """
    angles = np.deg2rad(np.asarray(angles_deg, dtype=np.float64))
    axes = {"X": np.array([1.0, 0.0, 0.0]),
            "Y": np.array([0.0, 1.0, 0.0]),
            "Z": np.array([0.0, 0.0, 1.0])}
    q = np.array([1.0, 0.0, 0.0, 0.0])
    for ch, ang in zip(order.upper(), np.atleast_1d(angles)):
        q = mul(q, from_axis_angle(axes[ch], float(ang)))
    return q


def to_matrix(q: np.ndarray) -> np.ndarray:
    """3x3 rotation matrix (stacked for batched input)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def from_matrix(m: np.ndarray) -> np.ndarray:
    """Quaternion from a 3x3 rotation matrix (Shepperd's method)."""
    m = np.asarray(m, dtype=np.float64)
    t = np.trace(m)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        return normalize(np.array([
            0.25 * s,
            (m[2, 1] - m[1, 2]) / s,
            (m[0, 2] - m[2, 0]) / s,
            (m[1, 0] - m[0, 1]) / s,
        ]))
    i = int(np.argmax(np.diag(m)))
    if i == 0:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s,
             (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif i == 1:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s,
             0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
             (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return normalize(np.array(q))


def slerp(a: np.ndarray, b: np.ndarray, t: float) -> np.ndarray:
    a = normalize(a)
    b = normalize(b)
    dot = float(np.dot(a, b))
    if dot < 0.0:
        b = -b
        dot = -dot
    if dot > 1.0 - 1e-10:
        return normalize(a + t * (b - a))
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    s = np.sin(theta)
    return (np.sin((1.0 - t) * theta) * a + np.sin(t * theta) * b) / s
