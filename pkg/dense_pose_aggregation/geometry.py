# Quaternions are numpy 4-vectors in (w, x, y, z) order everywhere,
# including the file formats in tensor_io.

import numpy as np

from dense_pose_aggregation.errors import BehindCamera, NonPositiveDepth, ZeroNorm

ZERO_NORM_TOLERANCE = 1e-12
IDENTITY_QUATERNION = np.array([1.0, 0.0, 0.0, 0.0])


### Quaternion algebra

def as_quaternion(q):
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (4,):
        raise ValueError(f"a quaternion has 4 components (w, x, y, z), got shape {q.shape}")
    return q


def quat_normalize(q):
    """Return ``(unit_q, norm)``; the norm is the confidence weight of a raw prediction."""
    q = as_quaternion(q)
    norm = float(np.linalg.norm(q))
    if norm <= ZERO_NORM_TOLERANCE:
        raise ZeroNorm(norm)
    return q / norm, norm


def normalize_rows(quats):
    """Row-wise variant of quat_normalize for ``(n, 4)`` arrays; returns (units, norms)."""
    quats = np.asarray(quats, dtype=np.float64).reshape(-1, 4)
    norms = np.linalg.norm(quats, axis=1)
    if np.any(norms <= ZERO_NORM_TOLERANCE):
        raise ZeroNorm(float(norms.min()))
    return quats / norms[:, None], norms


def canonicalize_sign(q):
    """Pick the representative of {q, -q} whose first nonzero component is positive."""
    q = as_quaternion(q)
    nonzero = np.flatnonzero(q)
    if len(nonzero) and q[nonzero[0]] < 0:
        return -q
    return q.copy()


def quat_conjugate(q):
    w, x, y, z = as_quaternion(q)
    return np.array([w, -x, -y, -z])


def quat_multiply(a, b):
    """Hamilton product; also works row-wise on ``(..., 4)`` arrays."""
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=np.float64), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=np.float64), -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis_norm = np.linalg.norm(axis)
    if axis_norm <= ZERO_NORM_TOLERANCE:
        raise ZeroNorm(float(axis_norm))
    half = 0.5 * float(angle)
    return np.concatenate([[np.cos(half)], np.sin(half) * axis / axis_norm])


### Rotation matrices

def quat_to_rotmat(q):
    (w, x, y, z), _ = quat_normalize(q)
    # Only products of component pairs appear, so R(q) == R(-q) bit for bit.
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rotmats_from_quats(quats):
    """Batched quat_to_rotmat: ``(n, 4)`` -> ``(n, 3, 3)``."""
    units, _ = normalize_rows(quats)
    w, x, y, z = units.T
    rotations = np.empty((len(units), 3, 3))
    rotations[:, 0, 0] = 1 - 2 * (y * y + z * z)
    rotations[:, 0, 1] = 2 * (x * y - w * z)
    rotations[:, 0, 2] = 2 * (x * z + w * y)
    rotations[:, 1, 0] = 2 * (x * y + w * z)
    rotations[:, 1, 1] = 1 - 2 * (x * x + z * z)
    rotations[:, 1, 2] = 2 * (y * z - w * x)
    rotations[:, 2, 0] = 2 * (x * z - w * y)
    rotations[:, 2, 1] = 2 * (y * z + w * x)
    rotations[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return rotations


def rotmat_to_quat(rotation):
    """Inverse of quat_to_rotmat (Shepperd's method), sign-canonicalised."""
    m = np.asarray(rotation, dtype=np.float64)
    trace = np.trace(m)
    if trace > 0:
        s = 2.0 * np.sqrt(1.0 + trace)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    unit, _ = quat_normalize(q)
    return canonicalize_sign(unit)


def transform_points(q, t, points):
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return points @ quat_to_rotmat(q).T + np.asarray(t, dtype=np.float64).reshape(1, 3)


### Angular distance

def angular_distances(quats, q):
    """Rotation angle between each row of ``quats`` and ``q``, in radians.

    Equals ``2 * arccos(min(1, |<a, b>|))`` but is evaluated as
    ``4 * atan2(|a - s b|, |a + s b|)`` with ``s = sign(<a, b>)``, which keeps
    full precision for nearly identical rotations.
    """
    quats, _ = normalize_rows(quats)
    q, _ = quat_normalize(q)
    signs = np.where(quats @ q < 0, -1.0, 1.0)
    aligned = signs[:, None] * q[None, :]
    difference = np.linalg.norm(quats - aligned, axis=1)
    total = np.linalg.norm(quats + aligned, axis=1)
    return 4.0 * np.arctan2(difference, total)


def quat_angular_distance(q1, q2):
    return float(angular_distances(as_quaternion(q1)[None, :], q2)[0])


### Pinhole camera

def project(point, intrinsics):
    x, y, z = np.asarray(point, dtype=np.float64).reshape(3)
    if z <= 0:
        raise BehindCamera(float(z))
    u = intrinsics.fx * x / z + intrinsics.cx
    v = intrinsics.fy * y / z + intrinsics.cy
    return float(u), float(v), float(z)


def project_points(points, intrinsics):
    """Vectorised project for ``(n, 3)`` arrays; returns ``(u, v, z)`` arrays."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    z = points[:, 2]
    if np.any(z <= 0):
        raise BehindCamera(float(z.min()))
    u = intrinsics.fx * points[:, 0] / z + intrinsics.cx
    v = intrinsics.fy * points[:, 1] / z + intrinsics.cy
    return u, v, z


def backproject(u, v, z, intrinsics):
    z = float(z)
    if not z > 0:
        raise NonPositiveDepth(z)
    x = (u - intrinsics.cx) * z / intrinsics.fx
    y = (v - intrinsics.cy) * z / intrinsics.fy
    return np.array([x, y, z], dtype=np.float64)
