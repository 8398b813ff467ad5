"""Synthetic point-pair instances: inliers ``y = R* x + eps`` followed by outliers.

Randomness comes from Philox streams keyed by ``(seed, purpose, index)``, so
every pair is drawn from its own substream and generation does not depend on
the order in which pairs are produced.
"""
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument
from .rotmath import (build_Qs, canonical_quat, check_rotation, check_unit, quat_angle,
                      quat_to_rot, random_quat, rot_to_quat)

# substream tags
_ROT, _INLIER, _OUTLIER, _CLUSTER = 0, 1, 2, 3

NOISE_KINDS = ("none", "bounded", "gaussian", "truncated_gaussian")
OUTLIER_KINDS = ("none", "random_sphere", "random_gaussian", "clustered")
X_KINDS = ("gaussian_unit", "uniform_sphere")
_MAX_REJECTIONS = 10_000


def substream(seed, tag, index=0):
    """Independent Philox generator for one purpose and one pair index."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(tag), int(index)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class GenConfig:
    ell: int
    kstar: int
    noise: str = "gaussian"
    sigma: float = 0.0
    delta: float | None = None
    x_distribution: str = "gaussian_unit"
    outliers: str = "random_gaussian"
    outlier_x_distribution: str | None = None
    w_cl: list | None = None
    cl_dot: float | None = None
    c_policy: dict | None = None
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.kstar <= self.ell) or self.ell < 1:
            raise InvalidArgument(f"need 0 <= kstar <= ell and ell >= 1 (got ell={self.ell}, kstar={self.kstar})")
        if self.noise not in NOISE_KINDS:
            raise InvalidArgument(f"unknown noise model {self.noise!r}")
        if self.outliers not in OUTLIER_KINDS:
            raise InvalidArgument(f"unknown outlier model {self.outliers!r}")
        if self.x_distribution not in X_KINDS:
            raise InvalidArgument(f"unknown x distribution {self.x_distribution!r}")
        if self.sigma < 0 or (self.delta is not None and self.delta < 0):
            raise InvalidArgument("sigma and delta must be nonnegative")
        if self.noise in ("bounded", "truncated_gaussian") and self.delta is None:
            raise InvalidArgument(f"noise model {self.noise!r} needs delta")
        if self.outliers == "none" and self.kstar != self.ell:
            raise InvalidArgument("outlier model 'none' requires kstar == ell")

    def noise_model(self):
        d = {"kind": self.noise}
        if self.noise in ("gaussian", "truncated_gaussian"):
            d["sigma"] = float(self.sigma)
        if self.noise in ("bounded", "truncated_gaussian"):
            d["delta"] = float(self.delta)
        return d

    @classmethod
    def from_dict(cls, d):
        names = set(cls.__dataclass_fields__)
        unknown = set(d) - names
        if unknown:
            raise InvalidArgument(f"unknown generator options: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Instance:
    ys: np.ndarray
    xs: np.ndarray
    inlier: np.ndarray
    R_star: np.ndarray
    noise_model: dict
    outlier_model: dict
    seed: int
    eps: np.ndarray | None = None
    _Qs: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def ell(self):
        return len(self.ys)

    @property
    def kstar(self):
        return int(np.sum(self.inlier))

    @property
    def inlier_set(self):
        return np.flatnonzero(self.inlier)

    @property
    def w_star(self):
        return rot_to_quat(self.R_star)

    @property
    def w_cl(self):
        w = self.outlier_model.get("w_cl")
        return None if w is None else np.asarray(w, dtype=float)

    @property
    def Qs(self):
        if self._Qs is None:
            self._Qs = build_Qs(self.ys, self.xs)
        return self._Qs

    def to_dict(self):
        pairs = []
        for i in range(self.ell):
            p = {"y": self.ys[i].tolist(), "x": self.xs[i].tolist(), "inlier": bool(self.inlier[i])}
            if self.eps is not None and self.inlier[i]:
                p["eps"] = self.eps[i].tolist()
            pairs.append(p)
        return {
            "seed": int(self.seed),
            "ell": self.ell,
            "kstar": self.kstar,
            "R_star": self.R_star.ravel().tolist(),
            "noise_model": self.noise_model,
            "outlier_model": self.outlier_model,
            "pairs": pairs,
        }

    def to_json(self):
        # json emits floats with repr(), the shortest string that reads back exactly
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, d):
        try:
            pairs = d["pairs"]
            ys = np.array([p["y"] for p in pairs], dtype=float).reshape(-1, 3)
            xs = np.array([p["x"] for p in pairs], dtype=float).reshape(-1, 3)
            inlier = np.array([bool(p["inlier"]) for p in pairs], dtype=bool)
            R = np.array(d["R_star"], dtype=float).reshape(3, 3)
            seed = int(d["seed"])
            noise_model, outlier_model = dict(d["noise_model"]), dict(d["outlier_model"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidArgument(f"malformed instance: {exc}") from exc
        if len(pairs) != d.get("ell", len(pairs)) or int(inlier.sum()) != d.get("kstar", int(inlier.sum())):
            raise InvalidArgument("instance header disagrees with its pairs")
        eps = None
        if any("eps" in p for p in pairs):
            eps = np.zeros((len(pairs), 3))
            for i, p in enumerate(pairs):
                if "eps" in p:
                    eps[i] = p["eps"]
        return cls(ys=ys, xs=xs, inlier=inlier, R_star=check_rotation(R), noise_model=noise_model,
                   outlier_model=outlier_model, seed=seed, eps=eps)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def save(self, path):
        with open(path, "w") as f:
            f.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_json(f.read())


def sample_x(rng, distribution):
    v = rng.standard_normal(3)
    if distribution == "uniform_sphere":
        return v / np.linalg.norm(v)
    return v


def sample_noise(rng, noise_model):
    kind = noise_model["kind"]
    if kind == "none":
        return np.zeros(3)
    if kind == "gaussian":
        return noise_model["sigma"] * rng.standard_normal(3)
    if kind == "bounded":
        # uniform in the ball of radius delta
        d = rng.standard_normal(3)
        d /= np.linalg.norm(d)
        return noise_model["delta"] * rng.random() ** (1.0 / 3.0) * d
    if kind == "truncated_gaussian":
        for _ in range(_MAX_REJECTIONS):
            e = noise_model["sigma"] * rng.standard_normal(3)
            if np.linalg.norm(e) <= noise_model["delta"]:
                return e
        raise InvalidArgument("truncated gaussian rejection sampling failed; delta too small for sigma")
    raise InvalidArgument(f"unknown noise model {kind!r}")


def gen_inliers(config, R_star):
    """Inlier pairs ``(y, x, eps)`` as three (kstar, 3) arrays."""
    R_star = check_rotation(R_star)
    noise_model = config.noise_model()
    xs = np.zeros((config.kstar, 3))
    eps = np.zeros((config.kstar, 3))
    for i in range(config.kstar):
        rng = substream(config.seed, _INLIER, i)
        xs[i] = sample_x(rng, config.x_distribution)
        eps[i] = sample_noise(rng, noise_model)
    ys = xs @ R_star.T + eps
    return ys, xs, eps


def gen_random_outliers(count, distribution="random_gaussian", seed=0, offset=0):
    """``count`` i.i.d. pairs with y and x independent, Gaussian or uniform on the sphere."""
    if count < 0:
        raise InvalidArgument("count must be nonnegative")
    if distribution not in ("random_gaussian", "random_sphere"):
        raise InvalidArgument(f"unknown random outlier distribution {distribution!r}")
    ys = np.zeros((count, 3))
    xs = np.zeros((count, 3))
    for j in range(count):
        rng = substream(seed, _OUTLIER, offset + j)
        ys[j] = rng.standard_normal(3)
        xs[j] = rng.standard_normal(3)
    if distribution == "random_sphere" and count:
        ys /= np.linalg.norm(ys, axis=1, keepdims=True)
        xs /= np.linalg.norm(xs, axis=1, keepdims=True)
    return ys, xs


def gen_clustered_outliers(count, w_cl, distribution="uniform_sphere", seed=0, offset=0, w_star=None):
    """Pairs that all agree exactly with the rotation of ``w_cl``."""
    if count < 0:
        raise InvalidArgument("count must be nonnegative")
    w_cl = check_unit(w_cl)
    if w_star is not None and quat_angle(w_cl, w_star) <= 1e-6:
        raise InvalidArgument("clustered rotation coincides with the ground truth")
    R_cl = quat_to_rot(w_cl)
    xs = np.zeros((count, 3))
    for j in range(count):
        xs[j] = sample_x(substream(seed, _OUTLIER, offset + j), distribution)
    return xs @ R_cl.T, xs


def quat_with_dot(w_star, dot, rng):
    """Random unit quaternion ``w`` with ``w^T w_star = dot``."""
    if not -1.0 <= dot <= 1.0:
        raise InvalidArgument("dot must be in [-1, 1]")
    u = rng.standard_normal(4)
    u -= (u @ w_star) * w_star
    u /= np.linalg.norm(u)
    w = dot * w_star + np.sqrt(max(0.0, 1.0 - dot * dot)) * u
    return w / np.linalg.norm(w)


def gen_instance(config):
    if not isinstance(config, GenConfig):
        config = GenConfig.from_dict(config)
    w_star = random_quat(substream(config.seed, _ROT))
    R_star = quat_to_rot(w_star)
    ys_in, xs_in, eps_in = gen_inliers(config, R_star)
    n_out = config.ell - config.kstar
    outlier_model = {"kind": config.outliers if n_out else "none"}
    if n_out == 0:
        ys_out = xs_out = np.zeros((0, 3))
    elif config.outliers == "clustered":
        if config.w_cl is not None:
            w_cl = canonical_quat(check_unit(config.w_cl))
        elif config.cl_dot is not None:
            w_cl = canonical_quat(quat_with_dot(w_star, config.cl_dot, substream(config.seed, _CLUSTER)))
        else:
            raise InvalidArgument("clustered outliers need w_cl or cl_dot")
        dist = config.outlier_x_distribution or "uniform_sphere"
        ys_out, xs_out = gen_clustered_outliers(n_out, w_cl, dist, config.seed, config.kstar, w_star)
        outlier_model.update(w_cl=w_cl.tolist(), x_distribution=dist)
    else:
        ys_out, xs_out = gen_random_outliers(n_out, config.outliers, config.seed, config.kstar)
    inlier = np.zeros(config.ell, dtype=bool)
    inlier[:config.kstar] = True
    eps = np.zeros((config.ell, 3))
    eps[:config.kstar] = eps_in
    return Instance(
        ys=np.vstack([ys_in, ys_out]), xs=np.vstack([xs_in, xs_out]), inlier=inlier,
        R_star=R_star, noise_model=config.noise_model(), outlier_model=outlier_model,
        seed=int(config.seed), eps=eps,
    )
