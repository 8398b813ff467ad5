"""Tightness batteries and the eigengap / d_1 / ratio sweeps, with CSV and JSON output.

Every instance seed is derived from ``(battery seed, grid index, trial)``, so
results do not depend on the number of worker processes.
"""
import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import cert as C
from .bounds import error_bound, ratio_experiment, write_ratio_csv
from .errors import DegenerateExtraction, InvalidArgument, RegimeMismatch
from .policy import default_policy, resolve_c_sq
from .rotmath import quat_angle
from .sdr import SolverOptions, assemble_bigQ, extract_quaternion, solve_sdr, solver_tight
from .synth import GenConfig, gen_instance, substream
from .tls import tls_bruteforce, tls_by_classification

log = logging.getLogger(__name__)

REGIMES = ("clean", "outliers", "large_c", "clustered", "noisy", "noisy_outliers", "gap")
BATTERY_COLUMNS = (
    "grid_index", "trial", "seed", "regime", "ell", "kstar", "sigma", "verdict",
    "o1_residual", "o2_lambda_min", "o3_gap", "tls_value", "tls_consistent", "tie",
    "solver_objective", "lift_value", "solver_gap", "rank1_ratio", "extraction_angle", "solver_converged",
    "solver_tight",
    "zeta", "witness_violation", "witness_closed_form", "sin_sq_tau", "bound_rhs", "bound_holds", "note",
)
EIGENGAP_COLUMNS = ("sigma", "trial", "lambda_min", "lambda_min2", "zeta")
DI_COLUMNS = ("sigma", "trial", "d1_abs", "comparison")
_CL_TAG = 4
# the "auto" oracle enumerates all 2^l patterns up to this size
AUTO_BRUTEFORCE_MAX = 12


def derived_seed(seed, *key):
    """64-bit seed for one grid cell and trial."""
    return int(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)).generate_state(1, np.uint64)[0])


@dataclass
class BatteryConfig:
    regime: str
    grid: list
    trials: int = 10
    seed: int = 0
    solve: bool = True
    solver: dict = field(default_factory=dict)
    oracle: str = "auto"
    out_csv: str | None = None
    out_json: str | None = None

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise InvalidArgument(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        if not self.grid:
            raise InvalidArgument("battery grid is empty")
        if self.trials < 1:
            raise InvalidArgument("trials must be >= 1")
        if self.oracle not in ("auto", "bruteforce", "classification"):
            raise InvalidArgument(f"unknown oracle {self.oracle!r}")
        SolverOptions.from_dict(self.solver)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidArgument(f"unknown battery options: {sorted(unknown)}")
        return cls(**d)


@dataclass
class BatteryResult:
    rows: list
    summary: dict

    def count(self, verdict):
        return sum(r["verdict"] == verdict for r in self.rows)


def _gen_config(regime, cell, inst_seed):
    ell = int(cell["ell"])
    kstar = int(cell.get("kstar", ell))
    sigma = float(cell.get("sigma", 0.0))
    kw = {k: cell[k] for k in ("noise", "delta", "x_distribution", "outlier_x_distribution", "w_cl", "cl_dot")
          if k in cell}
    outliers = cell.get("outliers")
    if outliers is None:
        outliers = "none" if kstar == ell else "clustered" if regime == "clustered" else "random_gaussian"
    if outliers == "clustered" and "w_cl" not in kw and "cl_dot" not in kw:
        lo, hi = cell.get("cl_dot_band", (0.8, 1.0))
        kw["cl_dot"] = float(substream(inst_seed, _CL_TAG).uniform(lo, hi))
    return GenConfig(ell=ell, kstar=kstar, sigma=sigma, outliers=outliers, seed=inst_seed, **kw)


def _nan_row(**kw):
    row = {k: float("nan") for k in BATTERY_COLUMNS}
    row.update(note="", verdict=C.INCONCLUSIVE, witness_violation=float("nan"))
    row.update(kw)
    return row


def evaluate_instance(regime, inst, c, solve=True, solver_opts=None, oracle="auto"):
    """One battery row: TLS solve, certificate or refutation, solver corroboration, bounds."""
    Qs = inst.Qs
    kstar = inst.kstar
    row = _nan_row(regime=regime, ell=inst.ell, kstar=kstar)
    notes = []
    use_bf = oracle == "bruteforce" or (oracle == "auto" and inst.ell <= AUTO_BRUTEFORCE_MAX)
    truth = tls_by_classification(Qs, c, inst.inlier_set)
    sol = tls_bruteforce(Qs, c) if use_bf else truth
    row.update(tls_value=sol.value, tls_consistent=truth.consistent, tie=truth.has_ties or sol.has_ties)
    w_hat = truth.w_hat
    row["zeta"] = C.eigengap(Qs, inst.inlier).zeta
    report = None
    try:
        if regime == "clean":
            report = C.verify_kkt(C.cert_clean(Qs, c), w_hat, Qs, c)
        elif regime == "outliers":
            report = C.verify_kkt(C.cert_outliers_small_c(Qs, c, kstar), w_hat, Qs, c)
        elif regime in ("noisy", "noisy_outliers"):
            report = C.verify_kkt(C.cert_noisy(Qs, c, kstar), w_hat, Qs, c)
        elif regime == "large_c":
            witnesses = [C.refute_large_c(Qs, c, inst.w_star, j, kstar) for j in range(kstar, inst.ell)]
            witnesses = [w for w in witnesses if w is not None]
            if witnesses:
                wit = min(witnesses, key=lambda w: w.violation)
                row.update(verdict=C.REFUTED, witness_violation=wit.violation, witness_closed_form=wit.closed_form)
        elif regime == "clustered":
            wit = C.refute_clustered(Qs, c, inst.w_star, inst.w_cl, kstar)
            if wit is not None:
                row.update(verdict=C.REFUTED, witness_violation=wit.violation, witness_closed_form=wit.closed_form)
    except RegimeMismatch as exc:
        notes.append(f"regime mismatch: {exc}")
    if report is not None:
        row.update(o1_residual=report.o1_residual, o2_lambda_min=report.o2_lambda_min,
                   o3_gap=report.o3_gap, verdict=report.verdict)
    if row["tie"] and row["verdict"] == C.CERTIFIED:
        row["verdict"] = C.INCONCLUSIVE
        notes.append("tie between a residual and its c^2")
    if solve:
        opts = SolverOptions.from_dict(solver_opts or {})
        sdr = solve_sdr(assemble_bigQ(Qs, c), c, opts)
        lift_val = C.lift_value(Qs, c, inst.w_star, inst.inlier)
        row.update(solver_objective=sdr.objective, lift_value=lift_val, solver_gap=lift_val - sdr.objective,
                   rank1_ratio=sdr.rank1_ratio, solver_converged=sdr.converged,
                   solver_tight=solver_tight(sdr.objective, sol.value, sdr.rank1_ratio))
        try:
            # reported only: how far the rounded solver output lands from the truth
            row["extraction_angle"] = quat_angle(extract_quaternion(sdr.W)[0], inst.w_star)
        except DegenerateExtraction as exc:
            notes.append(str(exc))
    if inst.eps is not None:
        eb = error_bound(inst, w_hat, inst.inlier_set)
        row.update(sin_sq_tau=eb.sin_sq_tau, bound_rhs=eb.rhs, bound_holds=eb.holds)
    row["note"] = "; ".join(notes)
    return row


def _battery_task(args):
    regime, g, cell, trial, seed, solve, solver, oracle = args
    inst_seed = derived_seed(seed, g, trial)
    inst = gen_instance(_gen_config(regime, cell, inst_seed))
    c = resolve_c_sq(cell.get("c_policy") or default_policy(regime), inst)
    row = evaluate_instance(regime, inst, c, solve, solver, oracle)
    row.update(grid_index=g, trial=trial, seed=inst_seed, sigma=float(cell.get("sigma", 0.0)))
    return row


def _map(fn, tasks, jobs):
    if jobs is None or jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


def _summarize(rows, regime, elapsed):
    verdicts = [r["verdict"] for r in rows]
    s = {
        "regime": regime,
        "instances": len(rows),
        "certified_tight": verdicts.count(C.CERTIFIED),
        "refuted": verdicts.count(C.REFUTED),
        "inconclusive": verdicts.count(C.INCONCLUSIVE),
        "ties": sum(bool(r["tie"]) for r in rows),
        "seconds": elapsed,
    }
    solved = [r for r in rows if r["solver_tight"] is True or r["solver_tight"] is False]
    if solved:
        s["solver_tight"] = sum(bool(r["solver_tight"]) for r in solved)
        s["solver_not_converged"] = sum(not r["solver_converged"] for r in solved)
        s["solver_non_tight_rate"] = 1.0 - s["solver_tight"] / len(solved)
    bounded = [r for r in rows if r["bound_holds"] is True or r["bound_holds"] is False]
    if bounded:
        s["bound_holds"] = sum(bool(r["bound_holds"]) for r in bounded)
    return s


def run_tightness_battery(config, jobs=1):
    if isinstance(config, dict):
        config = BatteryConfig.from_dict(config)
    t0 = time.perf_counter()
    tasks = [(config.regime, g, cell, t, config.seed, config.solve, config.solver, config.oracle)
             for g, cell in enumerate(config.grid) for t in range(config.trials)]
    rows = _map(_battery_task, tasks, jobs)
    result = BatteryResult(rows=rows, summary=_summarize(rows, config.regime, time.perf_counter() - t0))
    if config.out_csv:
        write_csv(config.out_csv, BATTERY_COLUMNS, rows)
    if config.out_json:
        write_json(config.out_json, result.summary)
    return result


def _noisy_sum(sigma, ell, seed):
    cfg = GenConfig(ell=ell, kstar=ell, sigma=sigma, outliers="none", seed=seed)
    return gen_instance(cfg).Qs


def run_fig_eigengap(sigmas, ell=100, trials=100, seed=0, out_csv=None, jobs=1):
    """Two smallest eigenvalues of the summed data matrices over a noise sweep."""
    _check_sigmas(sigmas)
    tasks = [(float(s), ell, derived_seed(seed, k, t), t) for k, s in enumerate(sigmas) for t in range(trials)]
    rows = _map(_eigengap_task, tasks, jobs)
    if out_csv:
        write_csv(out_csv, EIGENGAP_COLUMNS, rows)
    return rows


def _eigengap_task(args):
    sigma, ell, inst_seed, trial = args
    gap = C.eigengap(_noisy_sum(sigma, ell, inst_seed))
    return {"sigma": sigma, "trial": trial, "lambda_min": gap.lambda_min,
            "lambda_min2": gap.lambda_min2, "zeta": gap.zeta}


def d1_direct(Qs, w_hat, eta):
    """Second implementation of ``d_1``: explicit loop over ``j != 1`` and a LAPACK eigensolve."""
    ell = len(Qs)
    r = [float(w_hat @ Q @ w_hat) for Q in Qs]
    spread = np.zeros((4, 4))
    for j in range(1, ell):
        spread += Qs[0] - Qs[j]
    return sum(r) / ell - r[0] + eta * np.linalg.eigvalsh(spread)[-1] / (ell - 1)


def _di_task(args):
    sigma, ell, inst_seed, trial = args
    Qs = _noisy_sum(sigma, ell, inst_seed)
    cond = C.check_noisy_condition(Qs, np.ones(ell))
    w = cond.w_hat
    d1 = float(cond.d[0])
    d1_alt = float(d1_direct(Qs, w, cond.gap.eta))
    comparison = float(w @ Qs[0] @ w + np.linalg.norm(Qs[0] @ w))
    return {"sigma": sigma, "trial": trial, "d1_abs": abs(d1), "comparison": comparison,
            "_d1_discrepancy": abs(d1 - d1_alt) / max(1.0, abs(d1))}


def run_fig_di(sigmas, ell=100, trials=100, seed=0, out_csv=None, jobs=1):
    """``|d_1|`` against ``w^T Q_1 w + ||Q_1 w||`` over a noise sweep.

    Each row also carries ``_d1_discrepancy``, the relative disagreement of the
    two ``d_1`` implementations (not written to the CSV).
    """
    _check_sigmas(sigmas)
    tasks = [(float(s), ell, derived_seed(seed, k, t), t) for k, s in enumerate(sigmas) for t in range(trials)]
    rows = _map(_di_task, tasks, jobs)
    if out_csv:
        write_csv(out_csv, DI_COLUMNS, rows)
    return rows


def run_fig_ratio(ells, trials=100, seed=0, out_csv=None, t=4.0):
    stats = [ratio_experiment(int(ell), trials, derived_seed(seed, k), t) for k, ell in enumerate(ells)]
    if out_csv:
        write_ratio_csv(stats, out_csv)
    return stats


def _check_sigmas(sigmas):
    if len(sigmas) == 0 or any(not 0.0 < s <= 0.2 for s in sigmas):
        raise InvalidArgument("noise levels must lie in (0, 0.2]")


def medians_by(rows, key, value):
    groups = {}
    for r in rows:
        groups.setdefault(r[key], []).append(r[value])
    return {k: float(np.median(v)) for k, v in groups.items()}


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_csv(path, columns, rows):
    try:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(columns)
            for r in rows:
                w.writerow([_cell(r[c]) for c in columns])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if np.isfinite(v) else repr(v)
    return v


def write_json(path, obj):
    try:
        with open(path, "w") as f:
            json.dump(_jsonable(obj), f, indent=1)
            f.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def eigengap_summary(rows):
    return {"median_zeta": medians_by(rows, "sigma", "zeta")}


def di_summary(rows):
    ratios = [{"sigma": r["sigma"], "ratio": r["d1_abs"] / r["comparison"]} for r in rows]
    return {"median_ratio": medians_by(ratios, "sigma", "ratio"),
            "max_d1_discrepancy": max(r["_d1_discrepancy"] for r in rows)}


def ratio_summary(stats):
    return [{"ell": s.ell, "trials": s.trials, "fraction_in_band": s.fraction_in_band, "mean": s.mean,
             "band_asserted": s.band_asserted, "min_ratio": float(np.min(s.ratios))} for s in stats]


def battery_config_dict(config):
    return asdict(config)
