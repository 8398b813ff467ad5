"""Command-line interface: ``rot-sdr <subcommand> ...``.

Exit codes: 0 success, 1 usage or input error, 2 regime mismatch, 3 solver
did not converge.
"""
import argparse
import json
import logging
import os
import sys

from . import cert as C
from . import experiments as E
from .errors import DegenerateExtraction, InvalidArgument, RegimeMismatch, UnsupportedSize
from .policy import default_policy, resolve_c_sq
from .sdr import (SolverOptions, assemble_bigQ, assemble_bigQ_yc, extract_quaternion, solve_sdr,
                  solve_sdr_yc)
from .synth import GenConfig, Instance, gen_instance
from .tls import tls_by_classification

EXIT_OK, EXIT_USAGE, EXIT_REGIME, EXIT_NONCONVERGED = 0, 1, 2, 3
CERT_REGIMES = ("clean", "outliers", "noisy", "noisy_outliers", "large_c", "clustered")
log = logging.getLogger("rot_sdr")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text):
    try:
        return [int(float(v)) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _policy(text):
    """A policy kind name, a bare number (constant c^2) or a JSON object."""
    if text is None:
        return None
    try:
        return {"kind": "constant", "value": float(text)}
    except ValueError:
        pass
    if text.lstrip().startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise argparse.ArgumentTypeError(f"bad policy JSON: {exc}")
    return {"kind": text}


def _read_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidArgument(f"cannot read {path}: {exc}") from exc


def _emit(obj, path):
    if path:
        E.write_json(path, obj)
    else:
        json.dump(E._jsonable(obj), sys.stdout, indent=1)
        sys.stdout.write("\n")


def build_parser():
    p = _Parser(prog="rot-sdr", description="Truncated least-squares rotation search and its semidefinite relaxation.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic instance as JSON")
    g.add_argument("--ell", type=int, required=True)
    g.add_argument("--kstar", type=int)
    g.add_argument("--sigma", type=float, default=0.0)
    g.add_argument("--noise", choices=("none", "bounded", "gaussian", "truncated_gaussian"), default="gaussian")
    g.add_argument("--delta", type=float)
    g.add_argument("--x-distribution", choices=("gaussian_unit", "uniform_sphere"), default="gaussian_unit")
    g.add_argument("--outliers", choices=("random_gaussian", "random_sphere", "clustered"), default="random_gaussian")
    g.add_argument("--w-cl", type=_floats, help="clustered rotation quaternion, comma separated")
    g.add_argument("--cl-dot", type=float, help="target w_cl^T w* for clustered outliers")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--output", required=True)

    s = sub.add_parser("solve", help="solve the lifted relaxation for an instance")
    s.add_argument("-i", "--input", required=True)
    s.add_argument("--c-policy", type=_policy, help="policy kind, constant c^2, or JSON object")
    s.add_argument("--options", help="solver options JSON file {tol, max_iter, rho0, adapt, anderson}")
    s.add_argument("--yc", action="store_true", help="use the relaxation with full block equalities")
    s.add_argument("-o", "--output")

    c = sub.add_parser("certify", help="build and verify a certificate (or refutation) for a regime")
    c.add_argument("-i", "--input", required=True)
    c.add_argument("--regime", choices=CERT_REGIMES, required=True)
    c.add_argument("--c-policy", type=_policy)
    c.add_argument("-o", "--output")

    b = sub.add_parser("battery", help="run a tightness battery")
    b.add_argument("--config", help="battery JSON; flags override its values")
    b.add_argument("--regime", choices=E.REGIMES)
    b.add_argument("--ell", type=int)
    b.add_argument("--kstar", type=int)
    b.add_argument("--sigma", type=float)
    b.add_argument("--c-policy", type=_policy)
    b.add_argument("--trials", type=int)
    b.add_argument("--seed", type=int)
    b.add_argument("--no-solve", action="store_true")
    b.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    b.add_argument("-o", "--output", help="CSV path")
    b.add_argument("--summary", help="summary JSON path (stdout if omitted)")

    for name, helptext in (("fig-eigengap", "eigengap sweep over noise levels"),
                           ("fig-di", "|d_1| sweep over noise levels")):
        f = sub.add_parser(name, help=helptext)
        f.add_argument("--sigmas", type=_floats, default=[0.01, 0.02, 0.05, 0.1])
        f.add_argument("--ell", type=int, default=100)
        f.add_argument("--trials", type=int, default=100)
        f.add_argument("--seed", type=int, default=0)
        f.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
        f.add_argument("-o", "--output", required=True)
        f.add_argument("--summary")

    r = sub.add_parser("fig-ratio", help="ratio sum||x||^2 / lambda_min2 over sample sizes")
    r.add_argument("--ells", type=_ints, default=[100, 400])
    r.add_argument("--trials", type=int, default=100)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--t", type=float, default=4.0)
    r.add_argument("-o", "--output", required=True)
    r.add_argument("--summary")
    return p


def _cmd_generate(a):
    kstar = a.ell if a.kstar is None else a.kstar
    outliers = "none" if kstar == a.ell else a.outliers
    cfg = GenConfig(ell=a.ell, kstar=kstar, noise=a.noise, sigma=a.sigma, delta=a.delta,
                    x_distribution=a.x_distribution, outliers=outliers, w_cl=a.w_cl, cl_dot=a.cl_dot,
                    seed=a.seed)
    gen_instance(cfg).save(a.output)
    return EXIT_OK


def _cmd_solve(a):
    inst = Instance.load(a.input)
    c = resolve_c_sq(a.c_policy, inst)
    opts = SolverOptions.from_dict(_read_json(a.options)) if a.options else SolverOptions()
    if a.yc:
        Qp, bigQ = assemble_bigQ_yc(inst.Qs, c)
        sol = solve_sdr_yc(Qp, bigQ, c, opts)
    else:
        sol = solve_sdr(assemble_bigQ(inst.Qs, c), c, opts)
    out = sol.summary()
    try:
        w, _ = extract_quaternion(sol.W)
        out["w_extracted"] = w.tolist()
    except DegenerateExtraction as exc:
        out["w_extracted"] = None
        out["note"] = str(exc)
    _emit(out, a.output)
    return EXIT_OK if sol.converged else EXIT_NONCONVERGED


def certify_instance(inst, regime, policy=None):
    """TightnessReport for ``inst`` under ``regime``; raises RegimeMismatch when inapplicable."""
    c = resolve_c_sq(policy or default_policy(regime), inst)
    Qs, kstar = inst.Qs, inst.kstar
    if regime in ("large_c", "clustered"):
        if regime == "large_c":
            wits = [C.refute_large_c(Qs, c, inst.w_star, j, kstar) for j in range(kstar, inst.ell)]
            wits = [w for w in wits if w is not None]
            wit = min(wits, key=lambda w: w.violation) if wits else None
        else:
            if inst.w_cl is None:
                raise RegimeMismatch("instance has no clustered rotation")
            wit = C.refute_clustered(Qs, c, inst.w_star, inst.w_cl, kstar)
        tol, tol_psd = C.tolerances(Qs, c, inst.inlier)
        return C.TightnessReport(o1_residual=float("nan"), o2_lambda_min=float("nan"), o3_gap=float("nan"),
                                 verdict=C.REFUTED if wit else C.INCONCLUSIVE, tol=tol, tol_psd=tol_psd,
                                 witness=wit)
    if regime == "clean":
        if kstar != inst.ell:
            raise RegimeMismatch("clean regime expects no outliers")
        cert = C.cert_clean(Qs, c)
    elif regime == "outliers":
        cert = C.cert_outliers_small_c(Qs, c, kstar)
    else:
        cert = C.cert_noisy(Qs, c, kstar)
    sol = tls_by_classification(Qs, c, inst.inlier_set)
    report = C.verify_kkt(cert, sol.w_hat, Qs, c)
    if not sol.consistent:
        report.notes.append("classification is not self-consistent for these c^2")
    return report


def _cmd_certify(a):
    inst = Instance.load(a.input)
    report = certify_instance(inst, a.regime, a.c_policy)
    _emit(report.to_dict(), a.output)
    return EXIT_OK


def _cmd_battery(a):
    d = _read_json(a.config) if a.config else {}
    if a.regime:
        d["regime"] = a.regime
    if "regime" not in d:
        raise UsageError("battery needs --regime or a config with 'regime'")
    cell_flags = {k: v for k, v in (("ell", a.ell), ("kstar", a.kstar), ("sigma", a.sigma),
                                     ("c_policy", a.c_policy)) if v is not None}
    if "grid" not in d:
        if "ell" not in cell_flags:
            raise UsageError("battery needs --ell or a config with 'grid'")
        d["grid"] = [{}]
    d["grid"] = [{**cell, **cell_flags} for cell in d["grid"]]
    for key, val in (("trials", a.trials), ("seed", a.seed), ("out_csv", a.output), ("out_json", a.summary)):
        if val is not None:
            d[key] = val
    if a.no_solve:
        d["solve"] = False
    res = E.run_tightness_battery(E.BatteryConfig.from_dict(d), jobs=a.jobs)
    if not a.summary:
        _emit(res.summary, None)
    return EXIT_OK


def _cmd_fig(a, run, summarize):
    rows = run(a.sigmas, a.ell, a.trials, a.seed, a.output, jobs=a.jobs)
    _emit(summarize(rows), a.summary)
    return EXIT_OK


def _cmd_ratio(a):
    stats = E.run_fig_ratio(a.ells, a.trials, a.seed, a.output, t=a.t)
    _emit(E.ratio_summary(stats), a.summary)
    return EXIT_OK


def _setup_logging():
    level = os.environ.get("ROT_SDR_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
        if a.command == "generate":
            return _cmd_generate(a)
        if a.command == "solve":
            return _cmd_solve(a)
        if a.command == "certify":
            return _cmd_certify(a)
        if a.command == "battery":
            return _cmd_battery(a)
        if a.command == "fig-eigengap":
            return _cmd_fig(a, E.run_fig_eigengap, E.eigengap_summary)
        if a.command == "fig-di":
            return _cmd_fig(a, E.run_fig_di, E.di_summary)
        return _cmd_ratio(a)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except RegimeMismatch as exc:
        print(f"regime mismatch: {exc}", file=sys.stderr)
        return EXIT_REGIME
    except (InvalidArgument, UnsupportedSize, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        # --help exits through argparse
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
