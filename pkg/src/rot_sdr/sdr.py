"""Lifted programs for truncated least-squares rotation search and a splitting solver.

Block ``[M]_ij`` of a ``4(l+1) x 4(l+1)`` matrix is the 4x4 submatrix at rows
``4i:4i+4`` and columns ``4j:4j+4`` (block 0 belongs to ``w_0``).
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DegenerateExtraction, InvalidArgument
from .rotmath import canonical_quat, check_unit

log = logging.getLogger(__name__)

RANK1_INF = float("inf")


def block(M, i, j):
    return M[4 * i:4 * i + 4, 4 * j:4 * j + 4]


def _as_inputs(Qs, c_sq):
    Qs = np.asarray(Qs, dtype=float)
    c_sq = np.broadcast_to(np.asarray(c_sq, dtype=float), (len(Qs),)) if np.ndim(c_sq) == 0 \
        else np.asarray(c_sq, dtype=float)
    if Qs.ndim != 3 or Qs.shape[1:] != (4, 4) or len(Qs) < 1:
        raise InvalidArgument("Qs must have shape (l, 4, 4) with l >= 1")
    if c_sq.shape != (len(Qs),):
        raise InvalidArgument(f"expected {len(Qs)} truncation parameters, got {c_sq.shape}")
    return Qs, c_sq


def assemble_bigQ(Qs, c_sq):
    """Objective matrix with ``[Q]_0i = [Q]_i0 = (Q_i - c_i^2 I) / 2`` and zeros elsewhere."""
    Qs, c_sq = _as_inputs(Qs, c_sq)
    ell = len(Qs)
    M = np.zeros((4 * (ell + 1), 4 * (ell + 1)))
    for i in range(ell):
        b = 0.5 * (Qs[i] - c_sq[i] * np.eye(4))
        M[0:4, 4 * (i + 1):4 * (i + 2)] = b
        M[4 * (i + 1):4 * (i + 2), 0:4] = b.T
    return M


def assemble_B(ell):
    B = np.zeros((4 * (ell + 1), 4 * (ell + 1)))
    B[:4, :4] = np.eye(4)
    return B


def assemble_bigQ_yc(Qs, c_sq):
    """Pair ``(Q', Q)`` for the relaxation with full block equality constraints.

    ``Q'`` is block diagonal with ``[Q']_00 = 0`` and ``[Q']_ii = Q_i``; the
    objective is ``tr(Q' A)/2 + tr(Q A)/2 + sum(c^2)/2``.
    """
    Qs, c_sq = _as_inputs(Qs, c_sq)
    ell = len(Qs)
    Qp = np.zeros((4 * (ell + 1), 4 * (ell + 1)))
    for i in range(ell):
        Qp[4 * (i + 1):4 * (i + 2), 4 * (i + 1):4 * (i + 2)] = Qs[i]
    return Qp, assemble_bigQ(Qs, c_sq)


def lift(w0, theta):
    """``ww^T`` for ``w = [w0; theta_1 w0; ...; theta_l w0]``."""
    w0 = check_unit(w0)
    theta = np.asarray(theta, dtype=float)
    vec = np.concatenate([w0, np.kron(theta, w0)])
    return np.outer(vec, vec)


def lift_yc(w0, signs):
    """Lift ``a = [w0; s_1 w0; ...]`` with ``s_i`` in {-1, +1}."""
    return lift(w0, signs)


def sdr_objective(bigQ, c_sq, W):
    return float(np.sum(bigQ * W) + np.sum(c_sq))


def sdr_yc_objective(Qp, bigQ, c_sq, A):
    return float(0.5 * np.sum(Qp * A) + 0.5 * np.sum(bigQ * A) + 0.5 * np.sum(c_sq))


def constraint_residual(W):
    """Max violation of ``tr([W]_00) = 1`` and ``[W]_0i = [W]_ii``."""
    ell = W.shape[0] // 4 - 1
    res = abs(np.trace(block(W, 0, 0)) - 1.0)
    for i in range(1, ell + 1):
        res = max(res, np.max(np.abs(block(W, 0, i) - block(W, i, i))))
    return float(res)


def constraint_residual_yc(A):
    ell = A.shape[0] // 4 - 1
    res = abs(np.trace(block(A, 0, 0)) - 1.0)
    for i in range(1, ell + 1):
        res = max(res, np.max(np.abs(block(A, 0, 0) - block(A, i, i))))
    return float(res)


def project_affine(V):
    """Frobenius projection of symmetric ``V`` onto the relaxation's affine set.

    Per block family: ``[W]_0i = [W]_i0 = [W]_ii = (2 sym([V]_0i) + [V]_ii) / 3`` and
    ``[W]_00`` is shifted along the identity to unit trace. Other blocks are free.
    """
    W = V.copy()
    n = V.shape[0]
    ell = n // 4 - 1
    V3 = V.reshape(ell + 1, 4, ell + 1, 4)
    W3 = W.reshape(ell + 1, 4, ell + 1, 4)
    idx = np.arange(1, ell + 1)
    off = V3[0, :, idx, :]                                   # (l, 4, 4): [V]_0i
    off_t = V3[idx, :, 0, :]                                 # (l, 4, 4): [V]_i0
    diag = V3[idx, :, idx, :]                                # (l, 4, 4): [V]_ii
    S = (off + np.swapaxes(off, 1, 2) + off_t + np.swapaxes(off_t, 1, 2)) / 4.0
    S = (2.0 * S + 0.5 * (diag + np.swapaxes(diag, 1, 2))) / 3.0
    W3[0, :, idx, :] = S
    W3[idx, :, 0, :] = S
    W3[idx, :, idx, :] = S
    b00 = W[:4, :4]
    b00 += (1.0 - np.trace(b00)) / 4.0 * np.eye(4)
    return W


def project_affine_yc(V):
    """Projection onto ``{[A]_00 = [A]_ii for all i, tr([A]_00) = 1}``."""
    A = V.copy()
    ell = V.shape[0] // 4 - 1
    V3 = V.reshape(ell + 1, 4, ell + 1, 4)
    A3 = A.reshape(ell + 1, 4, ell + 1, 4)
    idx = np.arange(ell + 1)
    diag = V3[idx, :, idx, :]
    S = np.mean(0.5 * (diag + np.swapaxes(diag, 1, 2)), axis=0)
    S = S + (1.0 - np.trace(S)) / 4.0 * np.eye(4)
    A3[idx, :, idx, :] = S
    return A


def project_psd(V):
    """Nearest PSD matrix in Frobenius norm (negative eigenvalues clipped)."""
    V = 0.5 * (V + V.T)
    try:
        evals, evecs = scipy.linalg.eigh(V, subset_by_value=(0.0, np.inf), driver="evr")
    except np.linalg.LinAlgError:
        # MRRR occasionally gives up on clustered spectra; the full solver does not
        evals, evecs = np.linalg.eigh(V)
        keep = evals > 0.0
        evals, evecs = evals[keep], evecs[:, keep]
    if evals.size == 0:
        return np.zeros_like(V)
    return (evecs * evals) @ evecs.T


@dataclass
class SolverOptions:
    tol: float = 1e-9
    max_iter: int = 50_000
    rho0: float | None = None
    adapt: bool = True
    anderson: int = 20

    @classmethod
    def from_dict(cls, d):
        names = ("tol", "max_iter", "rho0", "adapt", "anderson")
        unknown = set(d) - set(names)
        if unknown:
            raise InvalidArgument(f"unknown solver options: {sorted(unknown)}")
        opts = cls(**{k: d[k] for k in names if k in d})
        if opts.tol <= 0 or opts.max_iter < 1 or opts.anderson < 0:
            raise InvalidArgument("need tol > 0, max_iter >= 1, anderson >= 0")
        return opts


@dataclass
class SdrSolution:
    W: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    iterations: int
    rank1_ratio: float
    converged: bool
    constraint_residual: float = 0.0
    min_eig: float = 0.0
    rho: float = 0.0
    history: list = field(default_factory=list, repr=False)

    def summary(self):
        return {
            "objective": self.objective,
            "primal_residual": self.primal_residual,
            "dual_residual": self.dual_residual,
            "iterations": self.iterations,
            "rank1_ratio": self.rank1_ratio,
            "converged": self.converged,
            "constraint_residual": self.constraint_residual,
            "min_eig": self.min_eig,
            "rho": self.rho,
        }


def rank1_ratio(W):
    evals = np.linalg.eigvalsh(0.5 * (W + W.T))
    lam1, lam2 = evals[-1], evals[-2]
    if lam2 <= 0.0:
        return RANK1_INF
    return float(lam1 / lam2)


def default_rho(C):
    ell = C.shape[0] // 4 - 1
    return max(float(np.linalg.norm(C)) / (ell + 1), 1e-12)


class _Anderson:
    """Type-II Anderson mixing for a fixed-point map, with a bounded memory."""

    max_step_ratio = 100.0

    def __init__(self, memory):
        self.memory = memory
        self.dv = []
        self.dg = []

    def reset(self):
        self.dv.clear()
        self.dg.clear()

    def push(self, dv, dg):
        if self.memory == 0:
            return
        self.dv.append(dv.ravel())
        self.dg.append(dg.ravel())
        if len(self.dv) > self.memory:
            self.dv.pop(0)
            self.dg.pop(0)

    def extrapolate(self, v, g):
        if not self.dv:
            return None
        dV = np.array(self.dv).T
        dG = np.array(self.dg).T
        # Tikhonov-regularized normal equations keep gamma bounded when dG is near rank deficient
        G = dG.T @ dG
        G[np.diag_indices_from(G)] += 1e-10 * np.trace(G) + 1e-300
        gamma = np.linalg.solve(G, dG.T @ g.ravel())
        step = ((dV - dG) @ gamma).reshape(v.shape)
        if np.linalg.norm(step) > self.max_step_ratio * np.linalg.norm(g):
            # a wild extrapolation can push v far out, where both projections
            # agree and the residuals look small; drop it and restart the memory
            self.reset()
            return None
        return v - g - step


def _split_solve(C, project_aff, opts, record=False):
    """Douglas-Rachford splitting between the affine set and the PSD cone.

    Fixed-point map on ``v``: ``x = P_aff(v - C/rho)``, ``z = P_psd(2x - v)``,
    ``v <- v + z - x``. Anderson extrapolation is accepted only when it does
    not increase the fixed-point residual ``||x - z||``. The dual slack is
    ``S = rho (z - 2x + v)``, which is PSD and orthogonal to ``z`` by construction.
    """
    n = C.shape[0]
    rho = opts.rho0 if opts.rho0 is not None else default_rho(C)
    rho = float(np.clip(rho, 1e-4, 1e4))
    aff0 = project_aff(np.zeros((n, n)))
    c_norm = float(np.linalg.norm(C))
    acc = _Anderson(opts.anderson)

    def apply(v):
        x = project_aff(v - C / rho)
        z = project_psd(2.0 * x - v)
        return x, z

    def residuals(v, x, z, z_prev):
        r_p = np.linalg.norm(x - z) / max(1.0, np.linalg.norm(x), np.linalg.norm(z))
        S = rho * (z - 2.0 * x + v)
        # component of C - S outside the range of the constraint adjoint
        r_d = np.linalg.norm(project_aff(C - S) - aff0) / max(1.0, c_norm, np.linalg.norm(S))
        r_z = rho * np.linalg.norm(z - z_prev) / max(1.0, c_norm, np.linalg.norm(S))
        return float(r_p), float(r_d), float(r_z)

    v = np.zeros((n, n))
    x, z = apply(v)
    g = x - z
    it = 1
    history = []
    r_p = r_d = np.inf
    converged = False
    z_prev = z
    since_adapt = 0
    while it < opts.max_iter:
        v_new = v - g
        cand = acc.extrapolate(v, g)
        if cand is not None:
            xc, zc = apply(cand)
            it += 1
            if np.linalg.norm(xc - zc) <= np.linalg.norm(g):
                v_new, x_new, z_new = cand, xc, zc
            else:
                x_new, z_new = apply(v_new)
                it += 1
        else:
            x_new, z_new = apply(v_new)
            it += 1
        g_new = x_new - z_new
        acc.push(v_new - v, g_new - g)
        z_prev = z
        v, x, z, g = v_new, x_new, z_new, g_new
        r_p, r_d, r_z = residuals(v, x, z, z_prev)
        if record:
            history.append((it, r_p, r_d, rho))
        if max(r_p, r_d) <= opts.tol:
            converged = True
            break
        since_adapt += 1
        if opts.adapt and since_adapt >= 100:
            # residual balancing on the ADMM-style pair (||x - z||, rho ||dz||)
            scale = 2.0 if r_p > 10.0 * r_z else 0.5 if r_z > 10.0 * r_p else 1.0
            new_rho = float(np.clip(rho * scale, 1e-4, 1e4))
            if new_rho != rho:
                # keep z and the slack S fixed; only the 1/rho-scaled part of v changes
                v = z + (rho / new_rho) * (v - z)
                rho = new_rho
                x, z = apply(v)
                it += 1
                g = x - z
                acc.reset()
            since_adapt = 0
    return z, it, float(r_p), float(r_d), converged, rho, history


def solve_sdr(bigQ, c_sq, opts=None, record=False):
    """Solve the lifted relaxation by operator splitting over (affine set) x (PSD cone).

    The returned ``W`` is the PSD iterate; ``converged`` is False when the
    iteration cap is hit, in which case the residuals tell how far off it is.
    """
    opts = opts or SolverOptions()
    c_sq = np.asarray(c_sq, dtype=float)
    Z, it, r_p, r_d, converged, rho, history = _split_solve(bigQ, project_affine, opts, record)
    if not converged:
        log.warning("SDR solver hit max_iter=%d (primal %.2e, dual %.2e)", opts.max_iter, r_p, r_d)
    return SdrSolution(
        W=Z, objective=sdr_objective(bigQ, c_sq, Z), primal_residual=r_p, dual_residual=r_d,
        iterations=it, rank1_ratio=rank1_ratio(Z), converged=converged,
        constraint_residual=constraint_residual(Z), min_eig=float(np.linalg.eigvalsh(Z)[0]),
        rho=rho, history=history,
    )


def solve_sdr_yc(Qp, bigQ, c_sq, opts=None, record=False):
    opts = opts or SolverOptions()
    c_sq = np.asarray(c_sq, dtype=float)
    C = 0.5 * (Qp + bigQ)
    Z, it, r_p, r_d, converged, rho, history = _split_solve(C, project_affine_yc, opts, record)
    if not converged:
        log.warning("SDR-YC solver hit max_iter=%d (primal %.2e, dual %.2e)", opts.max_iter, r_p, r_d)
    return SdrSolution(
        W=Z, objective=sdr_yc_objective(Qp, bigQ, c_sq, Z), primal_residual=r_p, dual_residual=r_d,
        iterations=it, rank1_ratio=rank1_ratio(Z), converged=converged,
        constraint_residual=constraint_residual_yc(Z), min_eig=float(np.linalg.eigvalsh(Z)[0]),
        rho=rho, history=history,
    )


def extract_quaternion(W):
    """Quaternion from the leading eigenvector of ``W`` and the ratio ``lambda_1 / lambda_2``."""
    evals, evecs = np.linalg.eigh(0.5 * (W + W.T))
    v = evecs[:, -1]
    head = v[:4]
    nh = np.linalg.norm(head)
    if nh < 1e-6:
        raise DegenerateExtraction("leading eigenvector has no weight on block 0")
    ratio = RANK1_INF if evals[-2] <= 0.0 else float(evals[-1] / evals[-2])
    return canonical_quat(head / nh), ratio


def solver_tight(objective, tls_value, ratio, rel=1e-6, min_ratio=1e6):
    """Solver-level tightness: objective matches the TLS minimum and W is numerically rank one."""
    return abs(objective - tls_value) <= max(rel, rel * abs(tls_value)) and ratio >= min_ratio
