#!/usr/bin/env python3
# Command-line front end
#
# Every subcommand writes its artifacts under OUT/<command>/, a JSON report
# embedding the resolved config and code version, and a version record with
# artifact hashes under OUT/versions/.

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from src import __version__
from src.core.config import RunConfig, load_run_config, schemas
from src.core.errors import EXIT_SUCCESS, ConfigError, CPSCError, DivergenceError, NumericalError, exit_code_for
from src.core.logging_setup import setup_logging
from src.data.serialization import (
    read_glued_field,
    read_json,
    write_glued_field,
    write_jacobi,
    write_json,
    write_orbit,
    write_sweep,
    write_trace,
)
from src.delaunay.fowler import cylinder_constant, hamiltonian_drift, solve_orbit
from src.delaunay.modeline import (
    floquet,
    fredholm_weights,
    harmonic_multiplicity,
    indicial_roots_cylinder,
    jacobi_explicit,
    jacobi_parameter,
    jacobi_translation,
    monodromy,
)
from src.gluing.factor import (
    GluedField,
    approximate_factor,
    error_decay_scan,
    error_field,
    measured_deviation_radius,
    transition_zone_mask,
)
from src.gluing.manifold import build_connected_sum
from src.corrector.deficiency import deficiency_basis
from src.corrector.linear import assemble_linearization, deficiency_pairing, right_inverse_norm_scan
from src.corrector.solver import (
    certify,
    contraction_solve,
    estimate_all_ends,
    estimate_factor_ends,
    final_kernel_count,
)
from src.versioning.run_versioning import RunVersioning

logger = logging.getLogger(__name__)

DEFAULT_LOG_FILE = "logs/cpsc_gluing.log"


def _report(args, command, payload, config=None):
    return {
        "command": command,
        "code_version": __version__,
        "seed": args.seed,
        "threads": args.threads,
        "config": config,
        "result": payload,
    }


def _finish(args, command, payload, artifacts, config=None):
    out_dir = Path(args.out) / command
    report_path = write_json(out_dir / "report.json", _report(args, command, payload, config))
    artifacts = [str(p) for p in list(artifacts) + [report_path]]
    version = RunVersioning(args.out).create_version(command, config or {}, artifacts, {"seed": args.seed})
    logger.info(f"{command}: {len(artifacts)} artifacts, version {version}")
    return payload


def _run_config(args):
    if not args.config:
        raise ConfigError("this command needs --config PATH")
    return load_run_config(args.config)


def _orbit_arguments(args):
    return {"n": args.n, "eps": args.eps}


def cmd_delaunay(args):
    orbit = solve_orbit(args.n, args.eps)
    out_dir = Path(args.out) / "delaunay"
    artifacts = write_orbit(out_dir, orbit, periods=args.periods)
    summary = orbit.header()
    summary["u_bar"] = cylinder_constant(args.n)
    if not orbit.degenerate:
        summary["hamiltonian_drift"] = hamiltonian_drift(orbit, periods=10)
    return _finish(args, "delaunay", summary, artifacts, _orbit_arguments(args))


def _mode_row(orbit, j):
    row = {"j": j, "multiplicity": harmonic_multiplicity(orbit.n, j)}
    if orbit.degenerate:
        root = indicial_roots_cylinder(orbit.n, j)[0]
        row.update({"delta": float(abs(root.real)) * orbit.period, "roots": [root, -root],
                    "oscillatory": abs(root.real) < 1e-12})
        return row
    result = floquet(orbit, j)
    row.update({"delta": result.delta, "trace": result.trace, "oscillatory": result.oscillatory})
    if j == 0:
        row["jordan"] = abs(result.trace - 2.0) < 1e-6
    return row


def cmd_modes(args):
    if args.jmax < 0:
        raise ConfigError("--jmax must be >= 0")
    orbit = solve_orbit(args.n, args.eps)
    out_dir = Path(args.out) / "modes"
    table = [_mode_row(orbit, j) for j in range(args.jmax + 1)]
    fields = [jacobi_translation(orbit), jacobi_parameter(orbit)]
    if args.jmax >= 1:
        fields += [jacobi_explicit(orbit, 1), jacobi_explicit(orbit, -1)]
    artifacts = [write_jacobi(out_dir, f) for f in fields]
    payload = {
        "period": orbit.period,
        "degenerate": orbit.degenerate,
        "weights": fredholm_weights(orbit, args.jmax),
        "table": table,
        "jacobi_scales": {f.label: f.scale for f in fields},
    }
    return _finish(args, "modes", payload, artifacts, {**_orbit_arguments(args), "jmax": args.jmax})


def cmd_floquet(args):
    orbit = solve_orbit(args.n, args.eps)
    if orbit.degenerate:
        roots = indicial_roots_cylinder(args.n, args.j)
        payload = {"j": args.j, "degenerate": True, "roots": list(roots),
                   "delta": float(abs(roots[0].real)) * orbit.period}
    else:
        payload = floquet(orbit, args.j).to_record(args.n, args.eps)
        payload["monodromy"] = monodromy(orbit, args.j)
    return _finish(args, "floquet", payload, [], {**_orbit_arguments(args), "j": args.j})


def _glue(run):
    config = run.gluing.to_config()
    glued = build_connected_sum(config)
    u_T = approximate_factor(glued)
    f_T = error_field(glued, u_T)
    return config, glued, u_T, f_T


def _error_support(glued, f_T):
    zone = transition_zone_mask(glued)
    outside = np.where(zone, 0.0, np.abs(f_T.values))
    total = f_T.sup_norm()
    return {
        "f_sup": total,
        "outside_zone_sup": float(np.max(outside)),
        "outside_relative": float(np.max(outside) / total) if total > 0 else 0.0,
    }


def cmd_glue(args):
    run = _run_config(args)
    _, glued, u_T, f_T = _glue(run)
    out_dir = Path(args.out) / "glue"
    artifacts = write_glued_field(out_dir, u_T, "u_T") + write_glued_field(out_dir, f_T, "f_T")
    payload = {
        "manifold": glued.summary(),
        "u_T_min": float(np.min(u_T.values)),
        "error": _error_support(glued, f_T),
        "deviation_radius": measured_deviation_radius(glued, u_T),
    }
    return _finish(args, "glue", payload, artifacts, run.model_dump(mode="json"))


def _write_solution(out_dir, report):
    glued = report.manifold
    artifacts = write_glued_field(out_dir, GluedField(glued, report.factor), "factor")
    artifacts.append(write_trace(out_dir, report.iterations))
    return artifacts


def cmd_solve(args):
    run = _run_config(args)
    _, glued, u_T, f_T = _glue(run)
    out_dir = Path(args.out) / "solve"
    artifacts = write_glued_field(out_dir, u_T, "u_T") + write_glued_field(out_dir, f_T, "f_T")
    config = run.model_dump(mode="json")
    try:
        report = contraction_solve(glued, run.solver.to_config())
    except DivergenceError as exc:
        if exc.report is not None:
            artifacts += _write_solution(out_dir, exc.report)
            payload = exc.report.to_record()
            payload["error"] = str(exc)
            _finish(args, "solve", payload, artifacts, config)
        raise
    artifacts += _write_solution(out_dir, report)
    estimate_all_ends(report)
    payload = report.to_record()
    kernel = final_kernel_count(report)
    payload["kernel"] = kernel.to_record()
    if kernel.count:
        operator = assemble_linearization(glued, report.factor)
        pairing = deficiency_pairing(
            glued, kernel.vectors, deficiency_basis(glued, report.config.deficiency_collar), operator
        )
        payload["pairing"] = {"singular_values": pairing.singular_values, "nondegenerate": pairing.nondegenerate}
    _finish(args, "solve", payload, artifacts, config)
    if not report.converged:
        raise NumericalError(f"no convergence after {len(report.iterations) - 1} iterations")
    return payload


def cmd_verify(args):
    run_dir = Path(args.run_dir or Path(args.out) / "solve")
    saved = read_json(run_dir / "report.json")
    try:
        run = RunConfig.model_validate(saved["config"])
    except (KeyError, TypeError, ValidationError) as exc:
        raise ConfigError(f"{run_dir} holds no valid run config: {exc}") from exc
    glued = build_connected_sum(run.gluing.to_config())
    factor = read_glued_field(run_dir / "factor.csv", glued)
    defect = certify(glued, factor)
    recorded = saved["result"].get("curvature_defect")
    if recorded is None:
        recorded = float("inf")
    hashes = RunVersioning(args.out).verify_artifacts("solve")
    payload = {
        "run_dir": str(run_dir),
        "curvature_defect": defect,
        "recorded_defect": recorded,
        "defect_matches": bool(abs(defect - recorded) <= 1e-9 * max(1.0, abs(recorded))),
        "end_estimates": estimate_factor_ends(glued, factor),
        "artifacts": hashes,
        "artifacts_match": bool(hashes) and all(hashes.values()),
    }
    _finish(args, "verify", payload, [], saved["config"])
    if not (payload["defect_matches"] and payload["artifacts_match"]):
        raise NumericalError(f"verification of {run_dir} failed")
    return payload


def cmd_sweep(args):
    run = _run_config(args)
    if run.sweep is None:
        raise ConfigError("sweep needs a 'sweep' section in the run config")
    sweep = run.sweep
    config = run.gluing.to_config()
    n_jobs = args.threads if args.threads != 1 else sweep.n_jobs
    payload = {}
    f_norms = inverse_norms = None
    if sweep.quantity in ("error_decay", "both"):
        scan = error_decay_scan(config, sweep.T, n_jobs=n_jobs)
        payload["error_decay"] = scan.to_record()
        f_norms = scan.norms
    if sweep.quantity in ("inverse_norm", "both"):
        norms = right_inverse_norm_scan(config, sweep.T, run.solver.delta, probes=sweep.probes, seed=args.seed,
                                        n_jobs=n_jobs, collar=run.solver.deficiency_collar)
        payload["inverse_norm"] = norms.to_record()
        inverse_norms = norms.norms
    artifacts = [write_sweep(Path(args.out) / "sweep", sweep.T, f_norms, inverse_norms)]
    return _finish(args, "sweep", payload, artifacts, run.model_dump(mode="json"))


def cmd_check(args):
    if args.schema:
        payload = schemas()
        write_json(Path(args.out) / "check" / "schemas.json", payload)
        return payload
    run = _run_config(args)
    payload = {"valid": True, "config": run.model_dump(mode="json")}
    logger.info(f"{args.config} is a valid run config")
    return payload


COMMANDS = {
    "delaunay": cmd_delaunay,
    "modes": cmd_modes,
    "floquet": cmd_floquet,
    "glue": cmd_glue,
    "solve": cmd_solve,
    "verify": cmd_verify,
    "sweep": cmd_sweep,
    "check": cmd_check,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="cpsc-gluing", description="Constant scalar curvature gluing toolkit")
    parser.add_argument("--out", default="runs", help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--config", help="run config JSON")
    parser.add_argument("--log-level", default="INFO")
    parser.add_argument("--log-file", nargs="?", const=DEFAULT_LOG_FILE, default=None)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("delaunay", "modes", "floquet"):
        p = sub.add_parser(name)
        p.add_argument("--n", type=int, required=True)
        p.add_argument("--eps", type=float, required=True)
    sub.choices["delaunay"].add_argument("--periods", type=float, default=1.0)
    sub.choices["modes"].add_argument("--jmax", type=int, default=2)
    sub.choices["floquet"].add_argument("--j", type=int, default=1)

    for name in ("glue", "solve", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("config_path", nargs="?", help="run config JSON (same as --config)")

    verify = sub.add_parser("verify")
    verify.add_argument("--run-dir", help="solve output to verify (default OUT/solve)")

    check = sub.add_parser("check")
    check.add_argument("--schema", action="store_true", help="emit the JSON schemas")
    check.add_argument("config_path", nargs="?")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config_path", None):
        args.config = args.config_path
    setup_logging(args.log_level, args.log_file)
    try:
        COMMANDS[args.command](args)
    except CPSCError as exc:
        logger.error(f"{args.command} failed ({type(exc).__name__}): {exc}")
        return exit_code_for(exc)
    return EXIT_SUCCESS


if __name__ == "__main__":
    sys.exit(main())
