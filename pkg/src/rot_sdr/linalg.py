"""Small dense symmetric eigensolvers.

``eigh_jacobi`` is a batched cyclic Jacobi method used for every 4x4 eigenproblem
in the package. ``eigvals_sym3`` is the trigonometric closed form for 3x3
symmetric matrices.
"""
import itertools

import numpy as np

JACOBI_TOL = 1e-13


def eigh_jacobi(a, tol=JACOBI_TOL, max_sweeps=50):
    """Eigen-decomposition of a stack of symmetric matrices by cyclic Jacobi.

    Parameters
    ----------
    a : array_like, shape (..., n, n)
        Symmetric matrices (only symmetry up to rounding is assumed).
    tol : float
        Sweeps stop once the off-diagonal Frobenius norm of every matrix is at
        most ``tol * ||a||_F``.

    Returns
    -------
    evals : ndarray, shape (..., n)
        Ascending eigenvalues.
    evecs : ndarray, shape (..., n, n)
        Orthonormal eigenvectors stored column-wise, matching ``evals``.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError("expected a stack of square matrices")
    n = a.shape[-1]
    batch = a.shape[:-2]
    A = 0.5 * (a + np.swapaxes(a, -1, -2)).reshape((-1, n, n)).copy()
    V = np.broadcast_to(np.eye(n), A.shape).copy()
    scale = np.sqrt(np.einsum("kij,kij->k", A, A))
    thresh = tol * scale
    pairs = list(itertools.combinations(range(n), 2))
    iu = np.triu_indices(n, 1)

    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * np.sum(A[:, iu[0], iu[1]] ** 2, axis=1))
        if np.all(off <= thresh):
            break
        for p, q in pairs:
            apq = A[:, p, q]
            active = np.abs(apq) > 0.0
            if not np.any(active):
                continue
            app = A[:, p, p]
            aqq = A[:, q, q]
            safe = np.where(active, apq, 1.0)
            with np.errstate(over="ignore"):
                # subnormal a_pq gives theta = inf, which maps to t = 0 below
                theta = (aqq - app) / (2.0 * safe)
            # for huge theta use t = 1 / (2 theta) to avoid squaring it
            big = np.abs(theta) > 1e150
            th = np.where(big, 1.0, theta)
            t = np.where(big, 0.5 / np.where(big, theta, 1.0), np.sign(th) / (np.abs(th) + np.sqrt(th * th + 1.0)))
            t = np.where(theta == 0.0, 1.0, t)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            c = np.where(active, c, 1.0)[:, None]
            s = np.where(active, s, 0.0)[:, None]

            col_p = A[:, :, p].copy()
            col_q = A[:, :, q].copy()
            A[:, :, p] = c * col_p - s * col_q
            A[:, :, q] = s * col_p + c * col_q
            row_p = A[:, p, :].copy()
            row_q = A[:, q, :].copy()
            A[:, p, :] = c * row_p - s * row_q
            A[:, q, :] = s * row_p + c * row_q

            vp = V[:, :, p].copy()
            vq = V[:, :, q].copy()
            V[:, :, p] = c * vp - s * vq
            V[:, :, q] = s * vp + c * vq

    evals = np.diagonal(A, axis1=1, axis2=2).copy()
    order = np.argsort(evals, axis=1, kind="stable")
    evals = np.take_along_axis(evals, order, axis=1)
    V = np.take_along_axis(V, order[:, None, :], axis=2)
    return evals.reshape(batch + (n,)), V.reshape(batch + (n, n))


def eigvalsh_jacobi(a, tol=JACOBI_TOL):
    return eigh_jacobi(a, tol=tol)[0]


def min_eigvec(a):
    """Smallest eigenvalue and a unit eigenvector of each symmetric matrix in ``a``."""
    evals, evecs = eigh_jacobi(a)
    return evals[..., 0], evecs[..., :, 0]


def eigvals_sym3(m):
    """Eigenvalues of symmetric 3x3 matrices via the trigonometric cubic solution.

    Works on stacks of shape (..., 3, 3) and returns ascending values.
    """
    m = np.asarray(m, dtype=float)
    m = 0.5 * (m + np.swapaxes(m, -1, -2))
    q = np.trace(m, axis1=-2, axis2=-1) / 3.0
    p1 = m[..., 0, 1] ** 2 + m[..., 0, 2] ** 2 + m[..., 1, 2] ** 2
    d0 = m[..., 0, 0] - q
    d1 = m[..., 1, 1] - q
    d2 = m[..., 2, 2] - q
    p2 = d0 ** 2 + d1 ** 2 + d2 ** 2 + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    safe_p = np.where(p > 0.0, p, 1.0)
    b = (m - q[..., None, None] * np.eye(3)) / safe_p[..., None, None]
    r = np.clip(np.linalg.det(b) / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    hi = q + 2.0 * p * np.cos(phi)
    lo = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    mid = 3.0 * q - hi - lo
    out = np.stack([lo, mid, hi], axis=-1)
    return np.sort(out, axis=-1)
