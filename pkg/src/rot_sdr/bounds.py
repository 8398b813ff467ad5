"""Estimation-error bound for the TLS estimate and the spectral ratio behind it.

For noiseless data ``P_i = Q(R* x_i, x_i)`` the sum ``sum_i P_i`` has a double
zero eigenvalue; its next eigenvalue controls how much noise can move the
minimizer. ``ratio = sum ||x_i||^2 / lambda_min2(sum P_i)`` is scale free.
"""
import csv
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .linalg import eigh_jacobi, eigvals_sym3
from .rotmath import build_Q, check_unit
from .synth import substream

RATIO_BAND = (0.25, 0.75)
RATIO_LIMIT = 3.0 / 8.0
RATIO_COLUMNS = ("trial", "ell", "sum_norm_sq", "lambda_min2", "ratio")
_RATIO_TAG = 17


@dataclass
class ErrorBoundReport:
    sin_sq_tau: float
    rhs: float
    holds: bool


@dataclass
class RatioStats:
    ell: int
    trials: int
    ratios: np.ndarray
    sum_norm_sq: np.ndarray
    lambda_min2: np.ndarray
    fraction_in_band: float
    mean: float
    band_asserted: bool
    t: float

    def rows(self):
        for k in range(self.trials):
            yield {"trial": k, "ell": self.ell, "sum_norm_sq": float(self.sum_norm_sq[k]),
                   "lambda_min2": float(self.lambda_min2[k]), "ratio": float(self.ratios[k])}


def lambda_min2_closed_form(xs):
    """``4 sum ||x||^2 - 4 lambda_max(sum x x^T)``."""
    xs = np.asarray(xs, dtype=float).reshape(-1, 3)
    if len(xs) == 0:
        raise InvalidArgument("need at least one point")
    return float(4.0 * np.sum(xs * xs) - 4.0 * eigvals_sym3(xs.T @ xs)[-1])


def lambda_min2_direct(xs, R_star):
    """Second smallest eigenvalue of ``sum Q(R* x_i, x_i)`` by a 4x4 eigensolve."""
    xs = np.asarray(xs, dtype=float).reshape(-1, 3)
    P = np.sum(build_Q(xs @ np.asarray(R_star).T, xs), axis=0)
    return float(eigh_jacobi(P)[0][1])


def error_bound(instance, w_hat, inlier_set=None):
    """``sin^2`` of the angle between ``w_hat`` and ``w*`` against ``4 sum ||eps|| ||x|| / lambda_min2``.

    The sums run over ``inlier_set`` (default: the instance's inliers).
    """
    if instance.eps is None:
        raise InvalidArgument("instance has no recorded noise; the bound needs ground truth")
    w_hat = check_unit(w_hat)
    idx = instance.inlier_set if inlier_set is None else np.asarray(inlier_set, dtype=int)
    if idx.size == 0:
        raise InvalidArgument("inlier_set must be nonempty")
    xs = instance.xs[idx]
    eps = instance.eps[idx]
    cos = float(w_hat @ instance.w_star)
    sin_sq = float(np.clip(1.0 - cos * cos, 0.0, 1.0))
    num = 4.0 * float(np.sum(np.linalg.norm(eps, axis=1) * np.linalg.norm(xs, axis=1)))
    lam2 = lambda_min2_direct(xs, instance.R_star)
    if num == 0.0:
        rhs = 0.0
    elif lam2 <= 0.0:
        rhs = float("inf")
    else:
        rhs = num / lam2
    return ErrorBoundReport(sin_sq_tau=sin_sq, rhs=rhs, holds=bool(sin_sq <= rhs + 1e-10))


def ell_condition(ell, t):
    """Sample-size requirement under which the band holds with the stated probability."""
    return ell >= (4.0 + 2.0 * np.sqrt(3.0) + 2.0 * t) * np.sqrt(ell) + (np.sqrt(3.0) + t) ** 2


def band_probability(t):
    return 1.0 - np.exp(-t * t / 2.0) - 2.0 * np.exp(-3.0 * t * t / 8.0)


def ratio_experiment(ell, trials, seed, t=4.0):
    """Per-trial ``x_i ~ N(0, I_3)`` and the ratio via the closed form."""
    if ell < 1 or trials < 1:
        raise InvalidArgument("ell and trials must be positive")
    sums = np.zeros(trials)
    lam2 = np.zeros(trials)
    for k in range(trials):
        xs = substream(seed, _RATIO_TAG, k).standard_normal((ell, 3))
        sums[k] = np.sum(xs * xs)
        lam2[k] = lambda_min2_closed_form(xs)
    with np.errstate(divide="ignore"):
        ratios = np.where(lam2 > 0, sums / np.where(lam2 > 0, lam2, 1.0), np.inf)
    lo, hi = RATIO_BAND
    inside = (ratios >= lo) & (ratios <= hi)
    return RatioStats(ell=ell, trials=trials, ratios=ratios, sum_norm_sq=sums, lambda_min2=lam2,
                      fraction_in_band=float(np.mean(inside)), mean=float(np.mean(ratios)),
                      band_asserted=bool(ell_condition(ell, t)), t=float(t))


def write_ratio_csv(stats_list, path):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=RATIO_COLUMNS)
        w.writeheader()
        for stats in stats_list:
            w.writerows(stats.rows())


@dataclass
class ConcentrationReport:
    """Empirical frequencies of the two concentration events against their claimed lower bounds."""

    ell: int
    trials: int
    t: float
    norm_frequency: float
    norm_claim: float
    lmax_frequency: float
    lmax_claim: float

    def std_error(self, p):
        return float(np.sqrt(max(p * (1.0 - p), 1e-12) / self.trials))

    @property
    def consistent(self):
        # report-only: no frequency falls short of its claim by more than 5 standard errors
        return (self.norm_frequency >= self.norm_claim - 5.0 * self.std_error(self.norm_frequency)
                and self.lmax_frequency >= self.lmax_claim - 5.0 * self.std_error(self.lmax_frequency))


def concentration_report(ell, trials, seed, t=2.0):
    """How often ``sum ||x||^2`` lands in ``3 l +- 3 sqrt(l) t`` and
    ``lambda_max(sum x x^T) <= l + 2 (sqrt 3 + t) sqrt l + (sqrt 3 + t)^2`` for Gaussian points."""
    norm_hits = lmax_hits = 0
    lmax_cap = ell + 2.0 * (np.sqrt(3.0) + t) * np.sqrt(ell) + (np.sqrt(3.0) + t) ** 2
    for k in range(trials):
        xs = substream(seed, _RATIO_TAG + 1, k).standard_normal((ell, 3))
        norm_hits += abs(np.sum(xs * xs) - 3 * ell) <= 3.0 * np.sqrt(ell) * t
        lmax_hits += eigvals_sym3(xs.T @ xs)[-1] <= lmax_cap
    return ConcentrationReport(
        ell=ell, trials=trials, t=float(t),
        norm_frequency=norm_hits / trials, norm_claim=float(max(0.0, 1.0 - 2.0 * np.exp(-3.0 * t * t / 8.0))),
        lmax_frequency=lmax_hits / trials, lmax_claim=float(1.0 - np.exp(-t * t / 2.0)),
    )
