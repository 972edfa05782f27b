"""Command-line entry point: ``gridcert <command> [options]``.

Exit codes: 0 success / Admissible, 2 Unknown (or nothing certified),
3 precondition violated, 4 input error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, loadflow, oracle, pipeline, vset
from .constraints import load_inode_ref, load_security, security_to_dict
from .errors import (
    CalibrationFailed,
    GridCertError,
    InputError,
    NoAdmissibleKappa,
    NoConvergence,
    PathLost,
    PreconditionViolated,
)
from .grid import complex_to_json, grid_to_dict, load_grid, parse_complex
from .uncertainty import KappaTemplate, load_uncertainty

EXIT_OK, EXIT_UNKNOWN, EXIT_PRECONDITION, EXIT_INPUT = 0, 2, 3, 4
TIMING_KEYS = {"wall_time", "solve_time", "max_solve_time"}
REPORT_SCHEMA = 1

log = logging.getLogger("gridcert")


# --- file helpers ---------------------------------------------------------


def _read_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise InputError(f"{path}: file not found") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc


def load_complex_vector(path, key: str, n: int) -> np.ndarray:
    """Read ``{key: [{"re": .., "im": ..}, ...]}`` with exactly ``n`` entries."""
    data = _read_json(path)
    if not isinstance(data, dict) or set(data) != {key}:
        raise InputError(f"{path}: expected an object with the single field '{key}'")
    items = data[key]
    if not isinstance(items, list) or len(items) != n:
        raise InputError(f"{path}: '{key}' must list {n} complex values")
    return np.array([parse_complex(z, f"{key}[{i}]") for i, z in enumerate(items)], dtype=complex)


def _clean(obj, timings: bool):
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v, timings) for k, v in obj.items() if timings or k not in TIMING_KEYS}
    if isinstance(obj, (list, tuple)):
        return [_clean(v, timings) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, (complex, np.complexfloating)):
        return complex_to_json(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist(), timings)
    return obj


def emit_report(report: dict, path, timings: bool = True) -> str:
    text = json.dumps(_clean(report, timings), indent=2, sort_keys=True, allow_nan=False) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)
    return text


def write_trajectory_csv(path, t, v):
    n = v.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"{part}_v{j}" for j in range(1, n + 1) for part in ("re", "im")])
        for tk, vk in zip(t, v):
            w.writerow([repr(float(tk))] + [repr(float(x)) for z in vk for x in (z.real, z.imag)])


# --- argument groups ------------------------------------------------------


def _add_common(p, security=True, uncertainty=False):
    p.add_argument("--grid", required=True, help="grid description (JSON)")
    if security:
        p.add_argument("--security", required=True, help="security bounds (JSON)")
    if uncertainty:
        p.add_argument("--uncertainty", required=True, help="uncertainty set or kappa template (JSON)")
    p.add_argument("--report", default="-", help="report path (default: stdout)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-timings", action="store_true", help="omit wall-clock fields so reports are byte-stable")


def _add_vset_flags(p):
    p.add_argument("--beta", type=float, default=1.0, help="branch cap fraction in (0, 1]")
    p.add_argument("--lambda-start", type=float, default=vset.DEFAULT_START)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--lambda-ratio", type=float, default=None)
    mode.add_argument("--lambda-step", type=float, default=None)
    p.add_argument("--lambda-cap", type=float, default=vset.DEFAULT_CAP, help="largest nodal cap in p.u.")
    p.add_argument("--inode-ref-file", default=None, help="per-bus reference nodal currents (JSON)")
    p.add_argument("--parallel", type=int, default=1, help="worker threads for independent solves")


def _add_pipeline_flags(p):
    _add_vset_flags(p)
    p.add_argument("--order", type=int, default=2, help="relaxation order")
    p.add_argument("--initial", default=None, help='initial voltage file {"v": [...]} (default: zero-load voltage)')
    p.add_argument("--dump-sdp", default=None, help="directory for text dumps of every relaxed boundary program")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridcert", description="Admissibility certificates for power-injection uncertainty sets.")
    parser.add_argument("--version", action="version", version=f"gridcert {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("vset", help="calibrate the auxiliary caps and print the voltage set")
    _add_common(p)
    _add_vset_flags(p)

    p = sub.add_parser("admissibility", help="test one uncertainty set")
    _add_common(p, uncertainty=True)
    _add_pipeline_flags(p)

    p = sub.add_parser("max-kappa", help="largest admissible kappa for a template")
    _add_common(p, uncertainty=True)
    _add_pipeline_flags(p)
    p.add_argument("--resolution", type=float, default=0.01)
    p.add_argument("--kappa-max", type=float, default=10.0)

    p = sub.add_parser("oracle", help="brute-force probes")
    _add_common(p, uncertainty=True)
    _add_vset_flags(p)
    p.add_argument("probe", choices=["paths", "boundary", "uniqueness"])
    p.add_argument("--initial", default=None)
    p.add_argument("--n-paths", type=int, default=200)
    p.add_argument("--n-steps", type=int, default=100)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--focus", type=int, default=None, help="boundary probe: 1-based constraint index")
    p.add_argument("--trials", type=int, default=500)
    p.add_argument("--csv-dir", default=None, help="paths probe: write one trajectory CSV per path")

    p = sub.add_parser("loadflow", help="solve or trace the load flow")
    _add_common(p, security=False)
    p.add_argument("--injection", required=True, help='injection file {"s": [...]}: one point, or path end')
    p.add_argument("--start", default=None, help='Newton start {"v": [...]} (default: zero-load voltage)')
    p.add_argument("--steps", type=int, default=0, help="trace a straight path from zero injection in this many steps")
    p.add_argument("--csv", default=None, help="trajectory CSV (with --steps)")
    return parser


# --- commands -------------------------------------------------------------


def _schedule(args) -> vset.LambdaSchedule:
    if args.lambda_step is not None:
        return vset.LambdaSchedule.step_mode(args.lambda_start, args.lambda_step, args.lambda_cap)
    return vset.LambdaSchedule.ratio_mode(args.lambda_start, args.lambda_ratio or vset.DEFAULT_RATIO, args.lambda_cap)


def _inode_ref(args, model):
    return load_inode_ref(args.inode_ref_file, model.n_pq) if args.inode_ref_file else 1.0


def _options(args, model) -> pipeline.PipelineOptions:
    return pipeline.PipelineOptions(
        beta=args.beta,
        i_node_ref=_inode_ref(args, model),
        schedule=_schedule(args),
        omega=args.order,
        parallel=args.parallel,
        dump_dir=args.dump_sdp,
    )


def _initial(args, model):
    if args.initial:
        return load_complex_vector(args.initial, "v", model.n_pq)
    return np.array(model.w)


def _header(args) -> dict:
    inputs = {k: getattr(args, k) for k in ("grid", "security", "uncertainty", "initial", "injection") if getattr(args, k, None)}
    return {"schema": REPORT_SCHEMA, "command": args.command, "inputs": inputs}


def cmd_vset(args) -> tuple[dict, int]:
    model = load_grid(args.grid)
    security = load_security(args.security, model)
    report = _header(args)
    report["options"] = {"beta": args.beta, "schedule": _schedule(args).describe()}
    try:
        cal = vset.calibrate_lambda(model, security, args.beta, _inode_ref(args, model), _schedule(args), parallel=args.parallel)
    except CalibrationFailed as exc:
        report["result"] = {"status": "CalibrationFailed", "reason": str(exc)}
        return report, EXIT_UNKNOWN
    cs = vset.assemble_v(model, security, cal.aux)
    report["result"] = {
        "status": "Calibrated",
        "lambda_star": cal.lambda_star,
        "calibration": cal.to_dict(),
        "aux_bounds": {"i_branch": cal.aux.i_branch, "i_node": cal.aux.i_node},
        "n_aux": cs.n_aux,
        "constraints": cs.labels(),
        "security": security_to_dict(security, model),
    }
    return report, EXIT_OK


def cmd_admissibility(args) -> tuple[dict, int]:
    model = load_grid(args.grid)
    security = load_security(args.security, model)
    uset = load_uncertainty(args.uncertainty, model.n_pq)
    if isinstance(uset, KappaTemplate):
        raise InputError(f"{args.uncertainty}: a kappa template needs the max-kappa command")
    report = _header(args)
    report["options"] = {"order": args.order, "beta": args.beta, "schedule": _schedule(args).describe()}
    try:
        verdict = pipeline.test_admissibility(model, security, _initial(args, model), uset, _options(args, model))
    except PreconditionViolated as exc:
        report["result"] = {"result": "PreconditionViolated", "reason": str(exc)}
        return report, EXIT_PRECONDITION
    report["result"] = verdict.to_dict()
    return report, EXIT_OK if verdict.admissible else EXIT_UNKNOWN


def cmd_max_kappa(args) -> tuple[dict, int]:
    model = load_grid(args.grid)
    security = load_security(args.security, model)
    template = load_uncertainty(args.uncertainty, model.n_pq)
    if not isinstance(template, KappaTemplate):
        raise InputError(f"{args.uncertainty}: max-kappa needs a file with \"kappa_template\": true")
    report = _header(args)
    report["options"] = {"order": args.order, "resolution": args.resolution, "kappa_max": args.kappa_max}
    search = pipeline.KappaSearch(resolution=args.resolution, kappa_max=args.kappa_max)
    try:
        res = pipeline.max_kappa(model, security, _initial(args, model), template, search, _options(args, model))
    except PreconditionViolated as exc:
        report["result"] = {"result": "PreconditionViolated", "reason": str(exc)}
        return report, EXIT_PRECONDITION
    except NoAdmissibleKappa as exc:
        report["result"] = {"result": "NoAdmissibleKappa", "reason": str(exc)}
        return report, EXIT_UNKNOWN
    report["result"] = res.to_dict()
    return report, EXIT_OK


def cmd_oracle(args) -> tuple[dict, int]:
    model = load_grid(args.grid)
    security = load_security(args.security, model)
    uset = load_uncertainty(args.uncertainty, model.n_pq)
    if isinstance(uset, KappaTemplate):
        raise InputError(f"{args.uncertainty}: the oracle needs a concrete uncertainty set")
    report = _header(args)
    report["options"] = {"probe": args.probe, "seed": args.seed}
    if args.probe == "paths":
        traces = [] if args.csv_dir else None
        found = oracle.brute_force_admissibility(
            model, security, _initial(args, model), uset, args.n_paths, args.n_steps, args.seed, traces=traces
        )
        if traces is not None:
            out = Path(args.csv_dir)
            out.mkdir(parents=True, exist_ok=True)
            for p, (t, _, v) in enumerate(traces):
                write_trajectory_csv(out / f"path_{p:04d}.csv", t, v)
        report["result"] = {"probe": "paths", "n_paths": args.n_paths, "n_steps": args.n_steps, "violations": [x.to_dict() for x in found]}
        return report, EXIT_OK
    try:
        cal = vset.calibrate_lambda(model, security, args.beta, _inode_ref(args, model), _schedule(args), parallel=args.parallel)
    except CalibrationFailed as exc:
        report["result"] = {"probe": args.probe, "status": "CalibrationFailed", "reason": str(exc)}
        return report, EXIT_UNKNOWN
    cs = vset.assemble_v(model, security, cal.aux)
    if args.probe == "boundary":
        hits = oracle.boundary_probe(model, cs, uset, args.samples, args.seed, args.focus)
        report["result"] = {"probe": "boundary", "samples": args.samples, "focus": args.focus, "hits": [h.to_dict() for h in hits]}
    else:
        coll = oracle.uniqueness_probe(model, cs.aux_only(), args.trials, args.seed)
        report["result"] = {"probe": "uniqueness", "trials": args.trials, "collisions": [c.to_dict() for c in coll]}
    return report, EXIT_OK


def cmd_loadflow(args) -> tuple[dict, int]:
    model = load_grid(args.grid)
    s = load_complex_vector(args.injection, "s", model.n_pq)
    start = load_complex_vector(args.start, "v", model.n_pq) if args.start else np.array(model.w)
    report = _header(args)
    if args.steps > 0:
        try:
            tr = loadflow.continuation_trace(model, [np.zeros(model.n_pq), s], start, steps=args.steps)
            v, status = tr.v[-1], "Solved"
        except PathLost as exc:
            tr, v, status = exc.trace, None, "PathLost"
        if args.csv and tr is not None and len(tr.t):
            write_trajectory_csv(args.csv, tr.t, tr.v)
        if v is None:
            report["result"] = {"status": status, "t_last_good": tr.t[-1] if tr is not None and len(tr.t) else 0.0}
            return report, EXIT_UNKNOWN
    else:
        try:
            v = loadflow.solve_load_flow(model, s, start)
        except NoConvergence as exc:
            report["result"] = {"status": "NoConvergence", "reason": str(exc), "iterations": exc.iterations}
            return report, EXIT_UNKNOWN
        status = "Solved"
    ok, sigma = loadflow.is_nonsingular(model, v)
    report["result"] = {
        "status": status,
        "v": [complex_to_json(z) for z in v],
        "residual": float(np.max(np.abs(loadflow.eval_F(model, v) - s))),
        "sigma_min": sigma,
        "nonsingular": ok,
        "singularity_condition": loadflow.singularity_necessary_condition(model, v),
        "grid": grid_to_dict(model),
    }
    return report, EXIT_OK


COMMANDS = {
    "vset": cmd_vset,
    "admissibility": cmd_admissibility,
    "max-kappa": cmd_max_kappa,
    "oracle": cmd_oracle,
    "loadflow": cmd_loadflow,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with code 2
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        report, code = COMMANDS[args.command](args)
    except (GridCertError, OSError) as exc:
        # structural grid errors and bad files are all input problems here
        print(f"gridcert: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    emit_report(report, args.report, timings=not args.no_timings)
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
