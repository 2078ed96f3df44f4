"""Batch command-line entry point.

Usage:
    tumorrom run <config.json> [--out DIR] [--seed N] [--threads N]
                               [--command NAME]

Commands (set in the config or overridden on the command line):
    forward           time-march the full model, dump audit tables
    pod-report        cumulative-energy table of the five POD bases
    rom-fidelity      full-vs-reduced final-state error at two thresholds
    sensitivity-check linearized vs finite-difference sensitivities
    optimize          full alternating parameter estimation

Exit codes: 0 success, 2 bad configuration, 3 solver failure,
4 a check command exceeded its acceptance threshold.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .caseio import load_case
from .errors import SolverError, TumorRomError
from .fom import fom_solve
from .optimize import ObjectiveConfig, run_optimization
from .params import (PARAM_NAMES, ParameterBox, ParameterSet, TherapySchedule,
                     default_chemo_schedule, default_initial_parameters,
                     default_parameter_box)
from .phantom import PhantomConfig, generate_phantom, make_target
from .pod import build_pod_array
from .rom import assemble_rom_tensors, rom_sensitivities, rom_solve
from . import reports
from .errors import InvalidConfigError

COMMANDS = ("forward", "pod-report", "rom-fidelity", "sensitivity-check",
            "optimize")
CONFIG_VERSION = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_CHECK = 4

FIDELITY_TOL = 5e-2
SENSITIVITY_TOL = 1e-2


def _parameters_from(doc, base=None) -> ParameterSet:
    P = base or default_initial_parameters()
    if doc:
        unknown = set(doc) - set(PARAM_NAMES)
        if unknown:
            raise InvalidConfigError(f"unknown parameter names {sorted(unknown)}")
        P = P.replace(**{k: float(v) for k, v in doc.items()})
    return P


def _box_from(doc) -> ParameterBox:
    default = default_parameter_box()
    if not doc:
        return default
    return ParameterBox(
        lower=_parameters_from(doc.get("lower"), default.lower),
        upper=_parameters_from(doc.get("upper"), default.upper),
        expected=_parameters_from(doc.get("expected"), default.expected))


def _therapy_from(doc) -> TherapySchedule:
    if doc is None:
        return default_chemo_schedule()
    if doc == "none":
        return TherapySchedule()
    return TherapySchedule(
        radio_windows=tuple(tuple(w) for w in doc.get("radio_windows", ())),
        R_eff=float(doc.get("R_eff", 0.0)),
        chemo_windows=tuple(tuple(w) for w in doc.get("chemo_windows", ())))


def _case_from(doc, seed):
    if doc is None:
        doc = {"phantom": {}}
    if "path" in doc:
        return load_case(doc["path"])
    ph = dict(doc.get("phantom", {}))
    ph["therapy"] = _therapy_from(ph.get("therapy"))
    if seed is not None:
        ph["rng_seed"] = seed
    if "equilibrium_params" in ph:
        ph["equilibrium_params"] = _parameters_from(ph["equilibrium_params"])
    for key in ("extent", "wm_band", "seed_center", "csf_disk"):
        if key in ph and ph[key] is not None:
            ph[key] = tuple(ph[key])
    try:
        config = PhantomConfig(**ph)
    except TypeError as exc:
        raise InvalidConfigError(f"bad phantom config: {exc}") from exc
    return generate_phantom(config)


def _resolve_target(case, doc, P):
    if doc and "file" in doc:
        mask = np.array(json.loads(Path(doc["file"]).read_text()), dtype=float)
        return make_target(case, mask=mask)
    if doc and "true_parameters" in doc:
        P_true = _parameters_from(doc["true_parameters"], P)
        return make_target(case, P_true=P_true)
    if np.any(case.target != 0):
        return case.target
    raise InvalidConfigError("command needs a target but none is configured")


def _objective_from(doc, target, P) -> ObjectiveConfig:
    doc = dict(doc or {})
    expected = _parameters_from(doc.pop("P_exp", None),
                                default_parameter_box().expected)
    allowed = {"eta_reg", "tol_F", "tol_Ra", "tol_Rb", "tol_Pa", "tol_Pr",
               "n_w", "beta_armijo", "max_inner", "max_outer", "ic",
               "newton_tol"}
    unknown = set(doc) - allowed
    if unknown:
        raise InvalidConfigError(f"unknown objective options {sorted(unknown)}")
    return ObjectiveConfig(target=target, P_exp=expected, **doc)


def _cmd_forward(case, P, out, cfgdoc, threads):
    snaps, final, wall = fom_solve(case, P)
    reports.write_forward_report(out, case, snaps, final, wall)
    return 0


def _cmd_pod_report(case, P, out, cfgdoc, threads):
    snaps, _, _ = fom_solve(case, P)
    ic = float((cfgdoc.get("objective") or {}).get("ic", 0.9999))
    pods = build_pod_array(snaps, ic, case.mesh.lumped_mass)
    reports.write_pod_report(out, pods)
    return 0


def _cmd_rom_fidelity(case, P, out, cfgdoc, threads):
    snaps, final, _ = fom_solve(case, P)
    results = []
    worst_primary = None
    rom_phi = None
    for ic in (0.9999, 0.999):
        pods = build_pod_array(snaps, ic, case.mesh.lumped_mass)
        tensors = assemble_rom_tensors(pods, case)
        traj = rom_solve(pods, tensors, P, case, newton_tol=1e-8)
        phi_rom = pods.phi.vectors @ traj.alpha[-1]
        err = (case.mesh.lumped_norm(phi_rom - final.phi)
               / case.mesh.lumped_norm(final.phi))
        results.append({"ic": ic, "N_pod": pods.n_pod, "rel_error": err})
        if ic == 0.9999:
            worst_primary = err
            rom_phi = phi_rom
    reports.write_rom_fidelity_report(out, case, final.phi, rom_phi, results)
    if worst_primary > FIDELITY_TOL:
        print(f"rom-fidelity FAILED: error {worst_primary:.3e} > {FIDELITY_TOL}")
        return EXIT_CHECK
    return 0


def _cmd_sensitivity_check(case, P, out, cfgdoc, threads):
    snaps, _, _ = fom_solve(case, P)
    ic = float((cfgdoc.get("objective") or {}).get("ic", 0.9999))
    tol_newton = float((cfgdoc.get("objective") or {}).get("newton_tol", 1e-10))
    pods = build_pod_array(snaps, ic, case.mesh.lumped_mass)
    tensors = assemble_rom_tensors(pods, case)
    traj = rom_solve(pods, tensors, P, case, newton_tol=tol_newton)
    blocks = rom_sensitivities(traj, P, tensors, pods, case, threads=threads)
    rows = []
    failed = False
    for block in blocks:
        name = PARAM_NAMES[block.param_index]
        h = 1e-4 * getattr(P, name)
        tp = rom_solve(pods, tensors, P.replace(**{name: getattr(P, name) + h}),
                       case, newton_tol=tol_newton)
        tm = rom_solve(pods, tensors, P.replace(**{name: getattr(P, name) - h}),
                       case, newton_tol=tol_newton)
        fd = (tp.alpha[-1] - tm.alpha[-1]) / (2 * h)
        lin = block.dalpha[-1]
        denom = max(np.linalg.norm(fd), 1e-300)
        rel = float(np.linalg.norm(lin - fd) / denom)
        rows.append([name, float(np.linalg.norm(lin)),
                     float(np.linalg.norm(fd)), rel])
        failed = failed or rel > SENSITIVITY_TOL
    reports.write_sensitivity_report(out, rows)
    if failed:
        print("sensitivity-check FAILED: see sensitivity_check.csv")
        return EXIT_CHECK
    return 0


def _cmd_optimize(case, P, out, cfgdoc, threads):
    box = _box_from(cfgdoc.get("box"))
    target = _resolve_target(case, cfgdoc.get("target"), P)
    case = case.with_target(target)
    cfg = _objective_from(cfgdoc.get("objective"), target, P)
    P_opt, trace = run_optimization(case, P, box, cfg, threads=threads)
    reports.write_optimize_report(out, trace, case, P_opt)
    if trace.status.startswith("aborted"):
        print(trace.status)
        return EXIT_SOLVER
    print(f"optimize finished: {trace.status}")
    return 0


_DISPATCH = {
    "forward": _cmd_forward,
    "pod-report": _cmd_pod_report,
    "rom-fidelity": _cmd_rom_fidelity,
    "sensitivity-check": _cmd_sensitivity_check,
    "optimize": _cmd_optimize,
}


def run(config: dict, out=None, seed=None, threads=None) -> int:
    version = config.get("version")
    if version != CONFIG_VERSION:
        raise InvalidConfigError(f"unsupported config version {version!r}")
    command = config.get("command")
    if command not in COMMANDS:
        raise InvalidConfigError(f"command must be one of {COMMANDS}")
    out = Path(out or config.get("out", "tumorrom-out"))
    out.mkdir(parents=True, exist_ok=True)
    if threads is None:
        threads = int(config.get(
            "threads", os.environ.get("TUMORROM_THREADS", "1")))
    seed = seed if seed is not None else config.get("seed")
    case = _case_from(config.get("case"), seed)
    P = _parameters_from(config.get("parameters"))
    if command in ("optimize",):
        pass  # target handled inside the command
    elif config.get("target"):
        case = case.with_target(_resolve_target(case, config["target"], P))
    return _DISPATCH[command](case, P, out, config, threads)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="tumorrom", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)
    runp = sub.add_parser("run", help="execute a run configuration")
    runp.add_argument("config", help="path to the JSON run configuration")
    runp.add_argument("--out", default=None, help="output directory")
    runp.add_argument("--seed", type=int, default=None)
    runp.add_argument("--threads", type=int, default=None)
    runp.add_argument("--command", default=None, choices=COMMANDS,
                      help="override the command in the config")
    args = parser.parse_args(argv)

    try:
        config = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command:
        config["command"] = args.command
    try:
        return run(config, out=args.out, seed=args.seed, threads=args.threads)
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except TumorRomError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
