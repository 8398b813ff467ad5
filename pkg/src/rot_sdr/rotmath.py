"""Unit quaternions, rotations and the 4x4 quadratic-form data matrices.

Quaternions are scalar-first, ``w = [w1, w2, w3, w4]``, and are kept in a
canonical sign (first nonzero coordinate positive) so that ``w`` and ``-w``
map to the same stored value.
"""
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InvalidArgument
from .linalg import eigh_jacobi

UNIT_TOL = 1e-9
ROT_TOL = 1e-9
_SIGN_EPS = 1e-12

# _X_PATTERN[k, m] is the coefficient matrix of x_m inside X_{k+1}, so that
# (R x)_k = w^T X_k w with X_k = sum_m x_m _X_PATTERN[k, m].
_X_PATTERN = np.zeros((3, 3, 4, 4))


def _fill_pattern():
    # X_1
    _X_PATTERN[0, 0] = np.diag([1.0, 1.0, -1.0, -1.0])
    _X_PATTERN[0, 1][[0, 3, 1, 2], [3, 0, 2, 1]] = [-1.0, -1.0, 1.0, 1.0]
    _X_PATTERN[0, 2][[0, 2, 1, 3], [2, 0, 3, 1]] = 1.0
    # X_2
    _X_PATTERN[1, 0][[0, 3, 1, 2], [3, 0, 2, 1]] = 1.0
    _X_PATTERN[1, 1] = np.diag([1.0, -1.0, 1.0, -1.0])
    _X_PATTERN[1, 2][[0, 1, 2, 3], [1, 0, 3, 2]] = [-1.0, -1.0, 1.0, 1.0]
    # X_3
    _X_PATTERN[2, 0][[0, 2, 1, 3], [2, 0, 3, 1]] = [-1.0, -1.0, 1.0, 1.0]
    _X_PATTERN[2, 1][[0, 1, 2, 3], [1, 0, 3, 2]] = 1.0
    _X_PATTERN[2, 2] = np.diag([1.0, -1.0, -1.0, 1.0])


_fill_pattern()


class AxisAngle(NamedTuple):
    axis: np.ndarray
    angle: float


@dataclass(frozen=True)
class InlierDecomposition:
    """``Q = P + E + eps_sq * I`` for an inlier pair ``y = R* x + eps``."""

    P: np.ndarray
    E: np.ndarray
    eps_sq: float


def canonical_quat(w):
    """Normalize the sign so the first coordinate that is not ~0 is positive."""
    w = np.asarray(w, dtype=float)
    for v in w:
        if abs(v) > _SIGN_EPS:
            return w if v > 0 else -w
    return w


def check_unit(w, tol=UNIT_TOL):
    w = np.asarray(w, dtype=float)
    if w.shape != (4,):
        raise InvalidArgument(f"quaternion must have shape (4,), got {w.shape}")
    if not np.all(np.isfinite(w)) or abs(np.linalg.norm(w) - 1.0) > tol:
        raise InvalidArgument(f"quaternion is not unit (norm={np.linalg.norm(w)!r})")
    return w


def check_rotation(R, tol=ROT_TOL):
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise InvalidArgument("rotation must be a finite 3x3 matrix")
    if np.max(np.abs(R.T @ R - np.eye(3))) > tol or abs(np.linalg.det(R) - 1.0) > tol:
        raise InvalidArgument("matrix is not in SO(3)")
    return R


def random_quat(rng):
    w = rng.standard_normal(4)
    return canonical_quat(w / np.linalg.norm(w))


def quat_to_rot(w):
    w1, w2, w3, w4 = check_unit(w)
    return np.array([
        [w1**2 + w2**2 - w3**2 - w4**2, 2 * (w2 * w3 - w1 * w4), 2 * (w2 * w4 + w1 * w3)],
        [2 * (w2 * w3 + w1 * w4), w1**2 + w3**2 - w2**2 - w4**2, 2 * (w3 * w4 - w1 * w2)],
        [2 * (w2 * w4 - w1 * w3), 2 * (w3 * w4 + w1 * w2), w1**2 + w4**2 - w2**2 - w3**2],
    ])


def rot_to_quat(R):
    """Canonical unit quaternion of a rotation (Shepperd's branch selection)."""
    R = check_rotation(R)
    tr = np.trace(R)
    diag = np.diag(R)
    k = int(np.argmax([tr, *diag]))
    if k == 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        w = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif k == 1:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        w = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s,
                      (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif k == 2:
        s = 2.0 * np.sqrt(1.0 - R[0, 0] + R[1, 1] - R[2, 2])
        w = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s,
                      0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 - R[0, 0] - R[1, 1] + R[2, 2])
        w = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    return canonical_quat(w / np.linalg.norm(w))


def axis_angle_rot(axis, angle):
    """Rodrigues' formula."""
    b = np.asarray(axis, dtype=float)
    b = b / np.linalg.norm(b)
    K = np.array([[0.0, -b[2], b[1]], [b[2], 0.0, -b[0]], [-b[1], b[0], 0.0]])
    return np.outer(b, b) + np.sin(angle) * K + np.cos(angle) * (np.eye(3) - np.outer(b, b))


def rot_to_axis_angle(R):
    """Axis and angle in [0, pi] of a rotation matrix."""
    w = rot_to_quat(R)
    angle = 2.0 * np.arccos(np.clip(w[0], -1.0, 1.0))
    v = w[1:]
    nv = np.linalg.norm(v)
    axis = v / nv if nv > 0 else np.array([1.0, 0.0, 0.0])
    return AxisAngle(axis, float(angle))


def quat_angle(w1, w2):
    """Angle of the relative rotation between two unit quaternions, in [0, pi]."""
    w1 = check_unit(w1)
    w2 = check_unit(w2)
    return float(2.0 * np.arccos(np.clip(abs(w1 @ w2), 0.0, 1.0)))


def rot_angle(R):
    """Rotation angle read from the trace, in [0, pi]."""
    return float(np.arccos(np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)))


def u_matrix(y, x):
    """``U(y, x) = y1 X1 + y2 X2 + y3 X3``; accepts stacks of shape (..., 3)."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    return np.einsum("...k,...m,kmab->...ab", y, x, _X_PATTERN)


def build_Q(y, x):
    """Data matrix with ``w^T Q w = ||y - R(w) x||^2`` for every unit ``w``.

    Vectorized: ``y`` and ``x`` may be stacks of shape (..., 3), giving (..., 4, 4).
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    sq = np.sum(y * y, axis=-1) + np.sum(x * x, axis=-1)
    return sq[..., None, None] * np.eye(4) - 2.0 * u_matrix(y, x)


def build_Qs(ys, xs):
    return build_Q(np.asarray(ys, dtype=float).reshape(-1, 3),
                   np.asarray(xs, dtype=float).reshape(-1, 3))


def q_spectrum_closed_form(y, x):
    """``[(|y|+|x|)^2, (|y|+|x|)^2, (|y|-|x|)^2, (|y|-|x|)^2]``; batches along leading axes."""
    ny = np.linalg.norm(np.asarray(y, dtype=float), axis=-1)
    nx = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
    hi = (ny + nx) ** 2
    lo = (ny - nx) ** 2
    return np.stack([hi, hi, lo, lo], axis=-1)


def q_eigvals(Q):
    """Ascending eigenvalues of one or many 4x4 data matrices."""
    return eigh_jacobi(Q)[0]


def lambda_min_Q(ys, xs):
    """Closed-form smallest eigenvalue ``(||y|| - ||x||)^2`` for stacks of pairs."""
    ys = np.asarray(ys, dtype=float)
    xs = np.asarray(xs, dtype=float)
    return (np.linalg.norm(ys, axis=-1) - np.linalg.norm(xs, axis=-1)) ** 2


def lambda_max_Q(ys, xs):
    ys = np.asarray(ys, dtype=float)
    xs = np.asarray(xs, dtype=float)
    return (np.linalg.norm(ys, axis=-1) + np.linalg.norm(xs, axis=-1)) ** 2


def decompose_inlier(x, R_star, eps):
    x = np.asarray(x, dtype=float)
    eps = np.asarray(eps, dtype=float)
    R_star = check_rotation(R_star)
    rx = R_star @ x
    P = build_Q(rx, x)
    E = 2.0 * float(eps @ rx) * np.eye(4) - 2.0 * u_matrix(eps, x)
    return InlierDecomposition(P=P, E=E, eps_sq=float(eps @ eps))
