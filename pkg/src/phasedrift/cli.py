"""Command line entry point: ``phasedrift <subcommand> [flags]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 selftest failure.  Failures also print a JSON error record on stderr.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .coefficients import check_divergence_identities, compute_coefficients
from .config import ConfigError, RunConfig, load_config
from .delta_dynamics import EnsembleError, run_ensemble
from .emit import write_csv, write_json, write_manifest
from .limit_dynamics import CoefficientError, limit_moments, simulate_limit
from .quadrature import QuadratureError
from .selftest import run_selftest
from .sphere_kolmogorov import solve_sphere_kolmogorov
from .stats import monotone_within, summarize_convergence

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_SELFTEST = 4


class SelftestFailure(RuntimeError):
    pass


def _write_series(out, stem, rows, fmt, artifacts):
    if fmt == "json":
        write_json(out / f"{stem}.json", rows)
        artifacts.append(f"{stem}.json")
    else:
        write_csv(out / f"{stem}.csv", rows)
        artifacts.append(f"{stem}.csv")


def cmd_coeffs(cfg: RunConfig, args, out, artifacts):
    ks = [tuple(k) for k in (args.k or [])] or list(cfg.k_list or [cfg.k0])
    results = []
    for k in ks:
        c = compute_coefficients(cfg.model, k)
        khat = np.asarray(k) / np.linalg.norm(k)
        div = check_divergence_identities(cfg.model, k)
        results.append({
            "k": list(k),
            "coefficients": c.to_dict(),
            "residuals": {
                "sphere": float(np.linalg.norm(c.D_mn @ khat)),
                "trace": div.trace_residual,
                "divergence_drift": div.drift_residual,
                "divergence_phase": div.phase_residual,
            },
        })
    write_json(out / "coeffs.json", {"model": cfg.model.to_dict(), "results": results})
    artifacts.append("coeffs.json")


def cmd_simulate_delta(cfg: RunConfig, args, out, artifacts):
    dump = out / "paths" if args.dump_paths else None
    stats = run_ensemble(cfg.model, cfg.ensemble_params(), dump_dir=dump)
    _write_series(out, "delta_stats", stats.rows(), cfg.out_format, artifacts)
    write_json(out / "delta_summary.json", {"delta": cfg.delta, **stats.summary(), "failed": stats.failed})
    artifacts.append("delta_summary.json")
    if dump is not None:
        artifacts.append("paths/")


def _limit_samples(cfg: RunConfig, checkpoints=None):
    return simulate_limit(cfg.model, cfg.x0, cfg.k0, cfg.t_end, cfg.limit_n_paths or cfg.n_paths,
                          cfg.seed, dt=cfg.limit_dt,
                          checkpoints=checkpoints if checkpoints is not None else cfg.checkpoints)


def cmd_simulate_limit(cfg: RunConfig, args, out, artifacts):
    s = _limit_samples(cfg)
    mom = limit_moments(s, cfg.k0)
    mz = s.Z.mean(axis=0)
    rows = []
    for c, t in enumerate(s.times):
        r = {"t": t, "mean_Z": mz[c]}
        for name in ("var_Z", "decoherence_abs", "K_sq"):
            r[name] = mom[name][0][c]
            r[name + "_se"] = mom[name][1][c]
        rows.append(r)
    _write_series(out, "limit_stats", rows, cfg.out_format, artifacts)


def cmd_solve_fp(cfg: RunConfig, args, out, artifacts):
    q0 = np.cos if cfg.sphere_q0 == "cos" else (lambda th: np.ones_like(th))
    kn = float(np.linalg.norm(cfg.k0))
    sol = solve_sphere_kolmogorov(cfg.model, kn, cfg.sphere_grid, cfg.t_end, cfg.sphere_dt, q0)
    rows = [{"t": t, "theta": th, "q_re": q.real, "q_im": q.imag}
            for t, qs in zip(sol.times, sol.q) for th, q in zip(sol.theta, qs)]
    _write_series(out, "fp", rows, cfg.out_format, artifacts)
    summary = {"k_norm": kn, "c": sol.c, "kappa": sol.kappa, "E": sol.E, "dt": sol.dt,
               "grid": cfg.sphere_grid, "q0": cfg.sphere_q0}
    if cfg.sphere_q0 == "cos":
        a = sol.mode_coefficient(np.cos)
        summary["cos_mode_rate"] = -math.log(abs(a[-1] / a[0])) / sol.times[-1]
        summary["cos_mode_rate_exact"] = 2 * sol.c + sol.kappa
    write_json(out / "fp_summary.json", summary)
    artifacts.append("fp_summary.json")


def cmd_converge(cfg: RunConfig, args, out, artifacts):
    deltas = cfg.deltas()
    if len(deltas) < 3:
        raise ConfigError("converge needs sim.delta_sweep with at least 3 values")
    t = cfg.t_end
    by_delta, tau = {}, {}
    for d in deltas:
        st = run_ensemble(cfg.model, cfg.ensemble_params(d))
        by_delta[d] = st.observables(t)
        tf = st.tau_freq
        tau[d] = (tf["tau"], tf["tau_se"]) if tf is not None else (float("nan"), float("nan"))
    mom = limit_moments(_limit_samples(cfg, checkpoints=(t,)), cfg.k0)
    limit = {k: (float(mom[k][0][-1]), float(mom[k][1][-1])) for k in ("var_Z", "decoherence_abs", "K_sq")}
    report = summarize_convergence(by_delta, limit)
    rows = []
    for r in report:
        lv, le = limit[r.observable]
        for d, dist, err in zip(r.deltas, r.distances, r.errors):
            v, e = by_delta[d][r.observable]
            rows.append({"observable": r.observable, "delta": d, "value": v, "se": e, "limit": lv,
                         "limit_se": le, "distance": dist, "distance_se": err})
    ordered = sorted(deltas, reverse=True)
    for d in ordered:
        rows.append({"observable": "tau_freq", "delta": d, "value": tau[d][0], "se": tau[d][1]})
    _write_series(out, "converge", rows, cfg.out_format, artifacts)
    tv = [tau[d][0] for d in ordered]
    te = [tau[d][1] for d in ordered]
    write_json(out / "converge_summary.json", {
        "t": t,
        "observables": [{"observable": r.observable, "monotone": r.monotone, "exponent": r.exponent,
                         "exponent_se": r.exponent_se} for r in report],
        "tau_freq_monotone": monotone_within(tv, te) if all(np.isfinite(tv)) else None,
    })
    artifacts.append("converge_summary.json")


def cmd_validate(cfg: RunConfig, args, out, artifacts):
    vs = cfg.model.validate()
    report = {"model": cfg.model.to_dict(), "valid": not any(v.fatal for v in vs),
              "violations": [{"condition": v.condition, "message": v.message, "fatal": v.fatal,
                              "wavevector": list(v.wavevector) if v.wavevector else None} for v in vs]}
    write_json(out / "validate.json", report)
    artifacts.append("validate.json")


def cmd_selftest(cfg: RunConfig, args, out, artifacts):
    checks = run_selftest()
    write_json(out / "selftest.json", [{"check": c.name, "passed": c.passed, "detail": c.detail}
                                       for c in checks])
    artifacts.append("selftest.json")
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
    failed = [c.name for c in checks if not c.passed]
    if failed:
        raise SelftestFailure("failed checks: " + ", ".join(failed))


COMMANDS = {
    "coeffs": cmd_coeffs,
    "simulate-delta": cmd_simulate_delta,
    "simulate-limit": cmd_simulate_limit,
    "solve-fp": cmd_solve_fp,
    "converge": cmd_converge,
    "validate": cmd_validate,
    "selftest": cmd_selftest,
}


def _vector(text):
    vals = [float(v) for v in text.split(",")]
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated numbers")
    return vals


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file, or a manifest.json from an earlier run")
    common.add_argument("--delta", type=float)
    common.add_argument("--n-paths", type=int)
    common.add_argument("--seed", type=int, help="base seed of all random streams")
    common.add_argument("--out", help="output directory")
    common.add_argument("--dump-paths", action="store_true", help="write every delta-path as CSV")
    common.add_argument("--quenched", action="store_true", help="one shared field realization")
    common.add_argument("--format", choices=("csv", "json"), help="time-series format")
    p = argparse.ArgumentParser(prog="phasedrift", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "coeffs":
            sp.add_argument("--k", type=_vector, action="append", help="momentum k1,k2,k3 (repeatable)")
    return p


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    changes = {}
    if args.delta is not None:
        changes["delta"] = args.delta
    if args.n_paths is not None:
        changes["n_paths"] = args.n_paths
    if args.seed is not None:
        changes["base_seed"] = args.seed
    if args.out is not None:
        changes["out_dir"] = args.out
    if args.quenched:
        changes["quenched"] = True
    if args.format is not None:
        changes["out_format"] = args.format
    return cfg.replace(**changes) if changes else cfg


def _fail(code, exc, out):
    record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, EnsembleError):
        record["failed_paths"] = [i for i, _ in exc.failed]
    text = json.dumps(record)
    print(text, file=sys.stderr)
    if out is not None:
        try:
            (out / "error.json").write_text(text + "\n")
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = None
    try:
        cfg = _resolve(args)
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        artifacts = []
        try:
            COMMANDS[args.command](cfg, args, out, artifacts)
        finally:
            write_manifest(out, command=args.command, config=cfg, artifacts=artifacts)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc, out)
    except SelftestFailure as exc:
        return _fail(EXIT_SELFTEST, exc, out)
    except (ArithmeticError, QuadratureError, EnsembleError, CoefficientError, np.linalg.LinAlgError) as exc:
        return _fail(EXIT_NUMERICAL, exc, out)
    except ValueError as exc:
        return _fail(EXIT_CONFIG, exc, out)
    except RuntimeError as exc:
        return _fail(EXIT_NUMERICAL, exc, out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
