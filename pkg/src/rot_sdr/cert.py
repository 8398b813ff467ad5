"""Closed-form dual certificates, KKT verification and refutation witnesses.

A certificate is the pair ``(mu, D)`` where ``D`` is determined by its blocks
``D_i = [D]_0i = [D]_i0`` through ``[D]_ii = -2 D_i`` (all other blocks zero).
The dual matrix is ``M = Q - mu B - D`` with ``Q``, ``B`` the lifted data and
normalization matrices. Pairs play one of two roles, "kept" or "rejected", and
the stationarity check differs between them.
"""
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, RegimeMismatch
from .linalg import eigh_jacobi
from .rotmath import canonical_quat, check_unit
from .sdr import assemble_B, assemble_bigQ, lift
from .tls import as_c_sq, residuals

CERTIFIED = "certified_tight"
REFUTED = "refuted"
INCONCLUSIVE = "inconclusive"
TOL_SCALE = 1e-8
CLUSTER_TOL = 1e-8
NOISY_HEADROOM = 1.1


@dataclass
class Certificate:
    mu_hat: float
    D_blocks: np.ndarray
    regime: str
    kept: np.ndarray
    V_hat: np.ndarray | None = None
    S_blocks: np.ndarray | None = None
    T_blocks: np.ndarray | None = None
    eta: float | None = None

    @property
    def ell(self):
        return len(self.D_blocks)

    def full_D(self):
        return assemble_D(self.D_blocks)

    def to_dict(self, tolerances=None):
        d = {
            "regime": self.regime,
            "mu_hat": float(self.mu_hat),
            "kept": [bool(k) for k in self.kept],
            "D_blocks": [b.ravel().tolist() for b in self.D_blocks],
        }
        if self.eta is not None:
            d["eta"] = float(self.eta)
        if self.V_hat is not None:
            d["V_hat"] = self.V_hat.ravel().tolist()
        if tolerances is not None:
            d["tolerances"] = tolerances
        return d

    def to_json(self, tolerances=None):
        return json.dumps(self.to_dict(tolerances), indent=1) + "\n"


@dataclass
class RefutationWitness:
    z_blocks: np.ndarray
    violation: float
    closed_form: float
    index: int | None = None

    def to_dict(self):
        d = {"z_blocks": self.z_blocks.tolist(), "violation": self.violation, "closed_form": self.closed_form}
        if self.index is not None:
            d["index"] = self.index
        return d


@dataclass
class TightnessReport:
    o1_residual: float
    o2_lambda_min: float
    o3_gap: float
    verdict: str
    tol: float
    tol_psd: float
    witness: RefutationWitness | None = None
    notes: list = field(default_factory=list)

    def to_dict(self):
        d = {
            "verdict": self.verdict,
            "o1_residual": self.o1_residual,
            "o2_lambda_min": self.o2_lambda_min,
            "o3_gap": self.o3_gap,
            "tol": self.tol,
            "tol_psd": self.tol_psd,
        }
        if self.witness is not None:
            d["witness"] = self.witness.to_dict()
        if self.notes:
            d["notes"] = list(self.notes)
        return d


def _inputs(Qs, c_sq):
    Qs = np.asarray(Qs, dtype=float)
    if Qs.ndim != 3 or Qs.shape[1:] != (4, 4) or len(Qs) < 1:
        raise InvalidArgument("Qs must have shape (l, 4, 4) with l >= 1")
    return Qs, as_c_sq(c_sq, len(Qs))


def _kept_mask(ell, kept):
    if kept is None:
        return np.ones(ell, dtype=bool)
    kept = np.asarray(kept)
    if kept.dtype == bool:
        if kept.shape != (ell,):
            raise InvalidArgument("kept mask has the wrong length")
        return kept.copy()
    mask = np.zeros(ell, dtype=bool)
    mask[kept.astype(int)] = True
    return mask


def _first_k(ell, kstar):
    if not 1 <= kstar <= ell:
        raise InvalidArgument(f"need 1 <= kstar <= l (got kstar={kstar}, l={ell})")
    mask = np.zeros(ell, dtype=bool)
    mask[:kstar] = True
    return mask


def assemble_D(D_blocks):
    D_blocks = np.asarray(D_blocks, dtype=float)
    ell = len(D_blocks)
    D = np.zeros((4 * (ell + 1), 4 * (ell + 1)))
    D3 = D.reshape(ell + 1, 4, ell + 1, 4)
    idx = np.arange(1, ell + 1)
    D3[0, :, idx, :] = D_blocks
    D3[idx, :, 0, :] = np.swapaxes(D_blocks, 1, 2)
    D3[idx, :, idx, :] = -2.0 * D_blocks
    return D


def dual_matrix(Qs, c_sq, mu_hat, D_blocks):
    Qs, c = _inputs(Qs, c_sq)
    return assemble_bigQ(Qs, c) - mu_hat * assemble_B(len(Qs)) - assemble_D(D_blocks)


def _check_structure(D_blocks):
    asym = np.max(np.abs(D_blocks - np.swapaxes(D_blocks, 1, 2)), initial=0.0)
    if asym > 1e-12 * (1.0 + np.max(np.abs(D_blocks), initial=0.0)):
        raise ArithmeticError(f"certificate blocks are not symmetric (max asymmetry {asym:.2e})")


def _build(regime, mu_hat, D_blocks, kept, **aux):
    D_blocks = 0.5 * (D_blocks + np.swapaxes(D_blocks, 1, 2))
    _check_structure(D_blocks)
    return Certificate(mu_hat=float(mu_hat), D_blocks=D_blocks, regime=regime, kept=kept, **aux)


def cert_clean(Qs, c_sq):
    """Blocks ``(Q_i + c_i^2 I)/2`` and ``mu = -sum c_i^2``."""
    Qs, c = _inputs(Qs, c_sq)
    blocks = 0.5 * (Qs + c[:, None, None] * np.eye(4))
    return _build("clean", -np.sum(c), blocks, np.ones(len(Qs), dtype=bool))


def lambda_min_each(Qs):
    return eigh_jacobi(np.asarray(Qs, dtype=float))[0][:, 0]


def check_small_outliers(Qs, c, kept):
    """Raise unless ``c_j^2 < lambda_min(Q_j)`` for every rejected pair."""
    out = np.flatnonzero(~kept)
    if out.size == 0:
        return
    lam = lambda_min_each(Qs[out])
    bad = out[c[out] >= lam]
    if bad.size:
        j = int(bad[0])
        raise RegimeMismatch(
            f"pair {j}: c_j^2 = {c[j]!r} is not below lambda_min(Q_j) = {lam[out == j][0]!r}")


def cert_outliers_small_c(Qs, c_sq, kstar):
    """Noiseless inliers ``0..kstar-1``; rejected blocks ``(Q_j - c_j^2 I)/2``."""
    Qs, c = _inputs(Qs, c_sq)
    kept = _first_k(len(Qs), kstar)
    check_small_outliers(Qs, c, kept)
    eye = np.eye(4)
    blocks = np.where(kept[:, None, None], 0.5 * (Qs + c[:, None, None] * eye),
                      0.5 * (Qs - c[:, None, None] * eye))
    return _build("outliers_small_c", -np.sum(c[kept]), blocks, kept)


@dataclass
class Eigengap:
    lambda_min: float
    lambda_min2: float
    zeta: float
    eta: float
    w_hat: np.ndarray


def eigengap(Qs, subset=None):
    """Two smallest eigenvalues of the subset sum, ``zeta = lmin2/lmin`` and ``eta = 1/zeta``.

    A smallest eigenvalue at rounding level (<= 1e-14 of the largest) is taken
    as exactly zero: ``zeta = inf`` and ``eta = 0``.
    """
    Qs = np.asarray(Qs, dtype=float)
    sel = _kept_mask(len(Qs), subset)
    if not sel.any():
        raise InvalidArgument("subset must be nonempty")
    lam, vecs = eigh_jacobi(np.sum(Qs[sel], axis=0))
    lmin, lmin2 = float(lam[0]), float(lam[1])
    w = canonical_quat(vecs[:, 0] / np.linalg.norm(vecs[:, 0]))
    if lmin <= 1e-14 * max(abs(float(lam[-1])), 1e-300):
        return Eigengap(lmin, lmin2, float("inf"), 0.0, w)
    return Eigengap(lmin, lmin2, lmin2 / lmin, lmin / lmin2, w)


@dataclass
class NoisyCondition:
    w_hat: np.ndarray
    gap: Eigengap
    kept: np.ndarray
    resid: np.ndarray
    qw_norm: np.ndarray
    d: np.ndarray
    rhs: np.ndarray
    margin: np.ndarray
    eigengap_ok: bool
    conjectured: bool = False

    @property
    def holds(self):
        return bool(self.eigengap_ok and np.all(self.margin > 0))

    def failures(self):
        msgs = []
        n = int(self.kept.sum())
        if not self.eigengap_ok:
            msgs.append(f"eigengap zeta = {self.gap.zeta!r} below {n}/({n}-1)")
        kept_idx = np.flatnonzero(self.kept)
        for k in np.flatnonzero(self.margin <= 0):
            msgs.append(f"pair {int(kept_idx[k])}: c_i^2 does not exceed the noisy bound {self.rhs[k]!r}")
        return msgs


def d_terms(Qs_in, w_hat, eta):
    """``d_i = mean_j r_j - r_i + eta lambda_max(sum_{j != i} (Q_i - Q_j)) / (n - 1)``."""
    n = len(Qs_in)
    r = residuals(w_hat, Qs_in)
    spread = n * Qs_in - np.sum(Qs_in, axis=0)
    lam_max = eigh_jacobi(spread)[0][:, -1]
    return np.mean(r) - r + eta * lam_max / (n - 1)


def noisy_rhs(resid, qw_norm, d, conjectured=False):
    if conjectured:
        return resid + qw_norm
    return resid + qw_norm + 0.5 * (np.abs(d) + d)


def check_noisy_condition(Qs, c_sq, kstar=None, conjectured=False):
    """Per-kept-pair margins ``c_i^2 - rhs_i`` of the noisy sufficient condition.

    Pairs ``0..kstar-1`` are the kept ones (all pairs when ``kstar`` is None).
    With ``conjectured=True`` the ``d_i`` term is dropped, which tests the
    cleaner condition that is believed but not proved to suffice.
    """
    Qs, c = _inputs(Qs, c_sq)
    kept = _first_k(len(Qs), len(Qs) if kstar is None else kstar)
    n = int(kept.sum())
    if n < 2:
        raise InvalidArgument("the noisy condition needs at least two kept pairs")
    gap = eigengap(Qs, kept)
    w = gap.w_hat
    Qin = Qs[kept]
    r = residuals(w, Qin)
    qw = np.linalg.norm(Qin @ w, axis=1)
    d = d_terms(Qin, w, gap.eta)
    rhs = noisy_rhs(r, qw, d, conjectured)
    margin = c[kept] - rhs
    eigengap_ok = bool(gap.eta <= (n - 1) / n)
    return NoisyCondition(w_hat=w, gap=gap, kept=kept, resid=r, qw_norm=qw, d=d, rhs=rhs,
                          margin=margin, eigengap_ok=eigengap_ok, conjectured=conjectured)


def householder_basis(w):
    """Orthonormal ``V = [V0, w]``: the reflection taking ``e4`` to ``w``."""
    w = check_unit(w)
    e4 = np.array([0.0, 0.0, 0.0, 1.0])
    v = e4 - w
    nv = v @ v
    if nv < 1e-30:
        return np.eye(4)
    return np.eye(4) - 2.0 * np.outer(v, v) / nv


def cert_noisy(Qs, c_sq, kstar=None):
    """Certificate for noisy inliers ``0..kstar-1`` plus small-``c`` rejected pairs.

    With ``r_i = w^T Q_i w``, ``n`` kept pairs and ``eta = 1/zeta``:
    ``T_i = (1 - eta n/(n-1)) V0^T Q_i V0 + eta sum_j V0^T Q_j V0/(n-1) - mean(r) I``,
    ``S_i = V0 T_i V0^T``, ``D_i = S_i - (Q_i - c_i^2 I)/2`` and ``mu = sum(r_i - c_i^2)``.
    """
    Qs, c = _inputs(Qs, c_sq)
    cond = check_noisy_condition(Qs, c, kstar)
    if not cond.holds:
        raise RegimeMismatch("; ".join(cond.failures()))
    kept = cond.kept
    check_small_outliers(Qs, c, kept)
    n = int(kept.sum())
    eta = cond.gap.eta
    V = householder_basis(cond.w_hat)
    V0 = V[:, :3]
    Qin = Qs[kept]
    proj = np.swapaxes(V0, 0, 1) @ Qin @ V0
    T = ((1.0 - eta * n / (n - 1)) * proj + eta * np.sum(proj, axis=0) / (n - 1)
         - np.mean(cond.resid) * np.eye(3))
    S = V0 @ T @ V0.T
    eye = np.eye(4)
    blocks = 0.5 * (Qs - c[:, None, None] * eye)
    blocks[kept] = S - 0.5 * (Qin - c[kept, None, None] * eye)
    mu = float(np.sum(cond.resid - c[kept]))
    regime = "noisy" if kept.all() else "noisy_outliers"
    return _build(regime, mu, blocks, kept, V_hat=V, S_blocks=S, T_blocks=T, eta=eta)


def tolerances(Qs, c_sq, kept):
    """``tol = 1e-8 (1 + ||Q||_F)`` for stationarity/value, ``1e-8 (1 + ||W||_F)`` for PSD."""
    big = assemble_bigQ(Qs, c_sq)
    tol = TOL_SCALE * (1.0 + float(np.linalg.norm(big)))
    # the lifted rank-one point has ||W||_F = 1 + (number kept)
    tol_psd = TOL_SCALE * (1.0 + 1.0 + float(np.sum(kept)))
    return tol, tol_psd


def verify_kkt(cert, w_hat, Qs, c_sq, classification=None):
    """Stationarity (O1), dual feasibility (O2) and value exactness (O3) at ``w_hat``.

    ``classification`` is the kept mask or index list; defaults to ``cert.kept``.
    A failed check makes the verdict inconclusive, never refuted.
    """
    Qs, c = _inputs(Qs, c_sq)
    w = check_unit(w_hat)
    kept = cert.kept if classification is None else _kept_mask(len(Qs), classification)
    if len(cert.D_blocks) != len(Qs):
        raise InvalidArgument("certificate and data have different sizes")
    eye = np.eye(4)
    sign = np.where(kept, 1.0, -1.0)[:, None, None]
    stat = 2.0 * cert.D_blocks + sign * (Qs - c[:, None, None] * eye)
    o1 = float(np.max(np.linalg.norm(stat @ w, axis=1)))
    M = dual_matrix(Qs, c, cert.mu_hat, cert.D_blocks)
    o2 = float(np.linalg.eigvalsh(M)[0])
    r = residuals(w, Qs)
    o3 = float(abs(cert.mu_hat - np.sum(r[kept] - c[kept])))
    tol, tol_psd = tolerances(Qs, c, kept)
    ok = o1 <= tol and o2 >= -tol_psd and o3 <= tol
    return TightnessReport(o1_residual=o1, o2_lambda_min=o2, o3_gap=o3,
                           verdict=CERTIFIED if ok else INCONCLUSIVE, tol=tol, tol_psd=tol_psd)


def blocks_positive_definite(cert):
    """Smallest eigenvalue over all certificate blocks (positive in the certified regimes)."""
    return float(np.min(eigh_jacobi(cert.D_blocks)[0][:, 0]))


@dataclass
class SplitBlockChecks:
    sum_residual: float
    min_eig_S: float
    min_eig_shifted: float


def split_block_checks(cert, Qs, c_sq):
    """Properties of the noisy-certificate ``S_i``: sum, PSD, and ``S_i + c_i^2 I - Q_i`` PD."""
    if cert.S_blocks is None:
        raise InvalidArgument("certificate has no S blocks")
    Qs, c = _inputs(Qs, c_sq)
    kept = cert.kept
    Qin = Qs[kept]
    w = cert.V_hat[:, 3]
    r = residuals(w, Qin)
    target = np.sum(Qin - r[:, None, None] * np.eye(4), axis=0)
    shifted = cert.S_blocks + c[kept, None, None] * np.eye(4) - Qin
    return SplitBlockChecks(
        sum_residual=float(np.linalg.norm(np.sum(cert.S_blocks, axis=0) - target)),
        min_eig_S=float(np.min(eigh_jacobi(cert.S_blocks)[0][:, 0])),
        min_eig_shifted=float(np.min(eigh_jacobi(shifted)[0][:, 0])),
    )


def canonical_blocks(Qs, c, kept):
    """Blocks of the simplest stationarity-consistent family: ``(Q_i +- c_i^2 I)/2``."""
    eye = np.eye(4)
    return np.where(kept[:, None, None], 0.5 * (Qs + c[:, None, None] * eye),
                    0.5 * (Qs - c[:, None, None] * eye))


def quad_form(M, z_blocks):
    z = np.asarray(z_blocks, dtype=float).ravel()
    return float(z @ M @ z)


def refute_large_c(Qs, c_sq, w_star, j, kstar):
    """Witness that the ground-truth lift is not optimal when outlier ``j`` has large ``c``.

    Any stationarity-consistent block satisfies ``w*^T D_j w* = (w*^T Q_j w* - c_j^2)/2``,
    so ``D_j`` has a negative direction when ``c_j^2 > w*^T Q_j w*``. The witness
    puts that direction (for the canonical block) in slot ``j`` and zeros elsewhere.
    """
    Qs, c = _inputs(Qs, c_sq)
    w_star = check_unit(w_star)
    ell = len(Qs)
    kept = _first_k(ell, kstar)
    if not 0 <= j < ell or kept[j]:
        raise InvalidArgument(f"index {j} is not a rejected pair")
    scalar = float(w_star @ Qs[j] @ w_star - c[j])
    if scalar >= 0:
        return None
    blocks = canonical_blocks(Qs, c, kept)
    lam, vecs = eigh_jacobi(2.0 * blocks[j])
    z = np.zeros((ell + 1, 4))
    z[j + 1] = vecs[:, 0]
    M = dual_matrix(Qs, c, -np.sum(c[kept]), blocks)
    return RefutationWitness(z_blocks=z, violation=quad_form(M, z), closed_form=scalar, index=int(j))


def clustered_condition(c, kstar, dot):
    """``1 - sum_out c^2 / (2 sum_in c^2) < |dot|``."""
    return 1.0 - np.sum(c[kstar:]) / (2.0 * np.sum(c[:kstar])) < abs(dot)


def refute_clustered(Qs, c_sq, w_star, w_cl, kstar):
    """Witness ``z_0 = z_out = w_cl``, ``z_in = w*`` when the clustered outliers beat the inliers."""
    Qs, c = _inputs(Qs, c_sq)
    w_star = check_unit(w_star)
    w_cl = check_unit(w_cl)
    ell = len(Qs)
    kept = _first_k(ell, kstar)
    for j in np.flatnonzero(~kept):
        res = float(np.linalg.norm(Qs[j] @ w_cl))
        if res > CLUSTER_TOL * (1.0 + np.linalg.norm(Qs[j])):
            raise RegimeMismatch(f"pair {int(j)} is not consistent with the clustered rotation (|Q_j w_cl| = {res:.3e})")
    dot = float(w_cl @ w_star)
    if not clustered_condition(c, kstar, dot):
        return None
    if dot < 0:
        w_cl = -w_cl
    z = np.empty((ell + 1, 4))
    z[0] = w_cl
    z[1:] = np.where(kept[:, None], w_star, w_cl)
    blocks = canonical_blocks(Qs, c, kept)
    M = dual_matrix(Qs, c, -np.sum(c[kept]), blocks)
    closed = float(2.0 * np.sum(c[kept]) * (1.0 - abs(dot)) - np.sum(c[~kept]))
    return RefutationWitness(z_blocks=z, violation=quad_form(M, z), closed_form=closed)


def lift_value(Qs, c_sq, w, kept):
    """Objective of the lifted program at ``lift(w, kept)``."""
    Qs, c = _inputs(Qs, c_sq)
    W = lift(w, np.asarray(kept, dtype=float))
    return float(np.sum(assemble_bigQ(Qs, c) * W) + np.sum(c))
