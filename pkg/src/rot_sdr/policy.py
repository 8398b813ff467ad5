"""Rules for choosing truncation parameters ``c_i^2`` from an instance.

A policy is a dict with a ``kind`` and optional numbers:

- ``constant``: every pair gets ``value`` (default 1).
- ``small_outliers``: inliers ``value``; outlier ``j`` gets ``fraction * lambda_min(Q_j)``.
- ``large_outliers``: inliers ``value``; outlier ``j`` gets ``factor * w*^T Q_j w*``.
- ``gap``: inliers ``value``; outlier ``j`` sits a fraction ``t`` of the way from
  ``lambda_min(Q_j)`` to ``w*^T Q_j w*``.
- ``noisy``: inlier ``i`` gets ``headroom`` times the noisy sufficient bound;
  outliers as in ``small_outliers``.
"""
import numpy as np

from .cert import NOISY_HEADROOM, check_noisy_condition, lambda_min_each
from .errors import InvalidArgument

POLICY_KINDS = ("constant", "small_outliers", "large_outliers", "gap", "noisy")
_DEFAULTS = {"value": 1.0, "fraction": 0.5, "factor": 2.0, "t": 0.5, "headroom": NOISY_HEADROOM}


def default_policy(regime):
    return {
        "clean": {"kind": "constant"},
        "outliers": {"kind": "small_outliers"},
        "large_c": {"kind": "large_outliers"},
        "clustered": {"kind": "constant"},
        "noisy": {"kind": "noisy"},
        "noisy_outliers": {"kind": "noisy"},
        "gap": {"kind": "gap"},
    }[regime]


def resolve_c_sq(policy, instance):
    """Per-pair ``c^2`` for ``instance`` under ``policy`` (None means constant 1)."""
    policy = dict(policy or {"kind": "constant"})
    kind = policy.pop("kind", "constant")
    if kind not in POLICY_KINDS:
        raise InvalidArgument(f"unknown c policy {kind!r}")
    unknown = set(policy) - set(_DEFAULTS)
    if unknown:
        raise InvalidArgument(f"unknown c policy fields: {sorted(unknown)}")
    p = {**_DEFAULTS, **policy}
    Qs = instance.Qs
    inl = instance.inlier
    c = np.full(instance.ell, float(p["value"]))
    out = np.flatnonzero(~inl)
    if kind == "constant":
        return c
    if kind == "noisy":
        cond = check_noisy_condition(Qs, np.ones(instance.ell), instance.kstar)
        c[inl] = p["headroom"] * cond.rhs
        if np.any(c[inl] <= 0):
            raise InvalidArgument("noisy bound is zero; use a constant policy for noiseless data")
    if out.size == 0:
        return c
    lam = lambda_min_each(Qs[out])
    if kind in ("small_outliers", "noisy"):
        c[out] = p["fraction"] * lam
    else:
        w = instance.w_star
        fit = np.einsum("a,jab,b->j", w, Qs[out], w)
        c[out] = p["factor"] * fit if kind == "large_outliers" else lam + p["t"] * (fit - lam)
    if np.any(c <= 0):
        raise InvalidArgument(f"policy {kind!r} produced a nonpositive c^2")
    return c
