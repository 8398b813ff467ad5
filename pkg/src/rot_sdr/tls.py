"""Truncated least-squares objective, exhaustive global oracle and the classification-given solver."""
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, UnsupportedSize
from .linalg import eigh_jacobi
from .rotmath import canonical_quat, check_unit

BRUTEFORCE_MAX = 16
TIE_REL = 1e-9
_BATCH = 4096


def as_c_sq(c_sq, ell):
    """Per-pair truncation parameters; a scalar is broadcast to every pair."""
    c = np.asarray(c_sq, dtype=float)
    if c.ndim == 0:
        c = np.full(ell, float(c))
    if c.shape != (ell,):
        raise InvalidArgument(f"expected {ell} truncation parameters, got shape {c.shape}")
    if not np.all(c > 0) or not np.all(np.isfinite(c)):
        raise InvalidArgument("truncation parameters must be positive and finite")
    return c


def _as_Qs(Qs):
    Qs = np.asarray(Qs, dtype=float)
    if Qs.ndim != 3 or Qs.shape[1:] != (4, 4):
        raise InvalidArgument(f"Qs must have shape (l, 4, 4), got {Qs.shape}")
    return Qs


def residuals(w, Qs):
    """``w^T Q_i w`` for every pair."""
    return np.einsum("a,iab,b->i", w, Qs, w)


@dataclass
class TlsSolution:
    w_hat: np.ndarray
    theta: np.ndarray
    value: float
    min_eig_multiplicity_flag: bool
    ties: np.ndarray
    consistent: bool = True
    lambda_min: float = 0.0
    lambda_min2: float = 0.0

    @property
    def kept(self):
        return np.flatnonzero(self.theta)

    @property
    def has_ties(self):
        return bool(np.any(self.ties))


def tls_objective(w, Qs, c_sq):
    w = check_unit(w)
    Qs = _as_Qs(Qs)
    c = as_c_sq(c_sq, len(Qs))
    return float(np.sum(np.minimum(residuals(w, Qs), c)))


def _classify(w, Qs, c):
    r = residuals(w, Qs)
    ties = np.abs(r - c) <= TIE_REL * c
    return r < c, ties, r


def _multiplicity(lam):
    return bool(lam[1] - lam[0] <= 1e-9 * max(1.0, abs(lam[1])))


def tls_bruteforce(Qs, c_sq):
    """Exact global TLS minimum by enumerating all keep/reject patterns.

    Pattern ``S`` costs ``lambda_min(sum_{i in S} Q_i) + sum_{i not in S} c_i^2``.
    Among equal costs the smallest pattern integer wins (bit ``i`` = pair ``i``).
    """
    Qs = _as_Qs(Qs)
    ell = len(Qs)
    if ell > BRUTEFORCE_MAX:
        raise UnsupportedSize(f"exhaustive search supports l <= {BRUTEFORCE_MAX}, got {ell}")
    c = as_c_sq(c_sq, ell)
    flat = Qs.reshape(ell, 16)
    bits = np.arange(ell)
    best_val, best_pat = np.inf, 0
    for start in range(0, 2 ** ell, _BATCH):
        pats = np.arange(start, min(start + _BATCH, 2 ** ell))
        mask = ((pats[:, None] >> bits) & 1).astype(float)
        sums = (mask @ flat).reshape(-1, 4, 4)
        lam = eigh_jacobi(sums)[0][:, 0]
        vals = lam + (1.0 - mask) @ c
        k = int(np.argmin(vals))
        if vals[k] < best_val:
            best_val, best_pat = float(vals[k]), int(pats[k])
    S = ((best_pat >> bits) & 1).astype(bool)
    lam, vecs = eigh_jacobi(np.sum(Qs[S], axis=0))
    w = canonical_quat(vecs[:, 0] / np.linalg.norm(vecs[:, 0]))
    theta, ties, r = _classify(w, Qs, c)
    # re-score with the pattern implied by w; it can only lower the value
    value = float(np.sum(np.minimum(r, c)))
    return TlsSolution(w_hat=w, theta=theta, value=value, min_eig_multiplicity_flag=_multiplicity(lam),
                       ties=ties, consistent=bool(np.array_equal(theta, S)),
                       lambda_min=float(lam[0]), lambda_min2=float(lam[1]))


def tls_by_classification(Qs, c_sq, inlier_set):
    """Minimum eigenvector of the kept sum, with a consistency check against ``c``.

    ``consistent`` is False when some kept pair has residual >= c_i^2, some
    rejected pair has residual <= c_j^2, or a residual ties with its c.
    """
    Qs = _as_Qs(Qs)
    ell = len(Qs)
    c = as_c_sq(c_sq, ell)
    keep = np.zeros(ell, dtype=bool)
    keep[np.asarray(inlier_set, dtype=int)] = True
    if not keep.any():
        raise InvalidArgument("inlier_set must be nonempty")
    lam, vecs = eigh_jacobi(np.sum(Qs[keep], axis=0))
    w = canonical_quat(vecs[:, 0] / np.linalg.norm(vecs[:, 0]))
    theta, ties, r = _classify(w, Qs, c)
    consistent = bool(np.array_equal(theta, keep) and not ties.any())
    value = float(np.sum(np.minimum(r, c)))
    return TlsSolution(w_hat=w, theta=theta, value=value, min_eig_multiplicity_flag=_multiplicity(lam),
                       ties=ties, consistent=consistent,
                       lambda_min=float(lam[0]), lambda_min2=float(lam[1]))
