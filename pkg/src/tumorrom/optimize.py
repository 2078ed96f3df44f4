"""Parameter estimation by alternating full-order and reduced-order loops.

The outer loop solves the full model at the current parameters, rebuilds
the POD/DEIM reduction from those snapshots, and hands off to an inner
projected weighted-gradient loop that works entirely in reduced space.
The weights dP0 = 10^-n_w * P_0 absorb the wildly different parameter
magnitudes: gradients, steps, and all termination norms are taken in the
rescaled coordinates q = P / dP0, which makes the iteration invariant
under a change of units of any single parameter.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import (InvalidConfigError, NewtonDivergenceError,
                     NormalizationError, RomSeparationError, RomStepError,
                     SolverError)
from .fom import fom_solve
from .params import NUM_PARAMS, ParameterBox, ParameterSet
from .phantom import CaseData
from .pod import build_pod_array
from .rom import rom_sensitivities, rom_solve

ARMIJO_CONST = 1e-4
ARMIJO_MAX_BACKTRACKS = 40


@dataclass
class ObjectiveConfig:
    target: np.ndarray
    P_exp: ParameterSet
    eta_reg: float = 1e-4
    tol_F: float = 1e-3
    tol_Ra: float = 1e-3
    tol_Rb: float = 1e-3
    tol_Pa: float = 1e-6
    tol_Pr: float = 1e-3
    n_w: int = 1
    beta_armijo: float = 0.5
    max_inner: int = 500
    max_outer: int = 20
    ic: float = 0.9999
    newton_tol: float = 1e-6

    def __post_init__(self):
        if self.eta_reg < 0:
            raise InvalidConfigError("regularization weight must be >= 0")
        for name in ("tol_F", "tol_Ra", "tol_Rb", "tol_Pa", "tol_Pr"):
            if getattr(self, name) <= 0:
                raise InvalidConfigError(f"{name} must be positive")
        if not 0 < self.beta_armijo < 1:
            raise InvalidConfigError("beta_armijo must be in (0, 1)")
        if self.n_w < 1:
            raise InvalidConfigError("n_w must be a positive integer")


@dataclass
class OptimizationTrace:
    outer: list = field(default_factory=list)   # per-k dicts
    inner: list = field(default_factory=list)   # per-(k, l) dicts
    status: str = ""


def regularized_heaviside(phi, phi_e):
    """Ramp regularization of the tumour indicator: slope 2/phi_e near 0."""
    phi = np.asarray(phi, dtype=float)
    out = np.clip(2.0 * phi / phi_e, 0.0, 1.0)
    if out.ndim == 0:
        return float(out)
    return out


def regularized_heaviside_deriv(phi, phi_e):
    """Derivative of the ramp; the ramp value is used at the kinks."""
    phi = np.asarray(phi, dtype=float)
    on_ramp = (phi >= 0.0) & (phi < phi_e / 2.0)
    out = np.where(on_ramp, 2.0 / phi_e, 0.0)
    if out.ndim == 0:
        return float(out)
    return out


def objective(phi_final, P: ParameterSet, cfg: ObjectiveConfig, mesh) -> float:
    """Normalized indicator misfit plus relative Tikhonov penalty."""
    target_norm2 = mesh.lumped_inner_product(cfg.target, cfg.target)
    if target_norm2 <= 0.0:
        raise NormalizationError("target indicator has zero lumped norm")
    mis = regularized_heaviside(phi_final, P.phi_e) - cfg.target
    misfit = mesh.lumped_inner_product(mis, mis) / (2.0 * target_norm2)
    rel = (P.to_array() - cfg.P_exp.to_array()) / cfg.P_exp.to_array()
    return misfit + 0.5 * cfg.eta_reg * float(rel @ rel)


def weighted_gradient(alpha_final, sens_blocks, P: ParameterSet,
                      cfg: ObjectiveConfig, pods, mesh, dP0) -> np.ndarray:
    """Gradient of the reduced objective in the weighted coordinates.

    Component m is the misfit term paired with the final-time sensitivity
    of phi, scaled by dP0_m, plus the explicit chain term through
    phi_e = 1 - c_e for the last parameter, plus the penalty derivative.
    """
    target_norm2 = mesh.lumped_inner_product(cfg.target, cfg.target)
    if target_norm2 <= 0.0:
        raise NormalizationError("target indicator has zero lumped norm")
    phi_N = pods.phi.vectors @ alpha_final
    H = regularized_heaviside(phi_N, P.phi_e)
    Hp = regularized_heaviside_deriv(phi_N, P.phi_e)
    mis_weighted = mesh.lumped_mass * (H - cfg.target)
    g = np.zeros(NUM_PARAMS)
    for block in sens_blocks:
        m_idx = block.param_index
        dphi = pods.phi.vectors @ block.dalpha[-1]
        g[m_idx] = float(mis_weighted @ (Hp * dphi)) * dP0[m_idx] / target_norm2
    # explicit dependence of the indicator on phi_e = 1 - c_e
    phi_e = P.phi_e
    on_ramp = (phi_N > 0.0) & (phi_N < phi_e / 2.0)
    dH_dce = np.where(on_ramp, 2.0 * phi_N / phi_e ** 2, 0.0)
    g[8] += float(mis_weighted @ dH_dce) * dP0[8] / target_norm2
    Pa, Pe = P.to_array(), cfg.P_exp.to_array()
    g += cfg.eta_reg * (Pa - Pe) / Pe ** 2 * dP0
    return g


def project_params(P: ParameterSet, lam: float, g, box: ParameterBox,
                   weights=None) -> ParameterSet:
    """Clamped gradient step; `weights` rescales the descent direction."""
    if lam <= 0:
        raise InvalidConfigError("step length must be positive")
    step = np.asarray(g, dtype=float)
    if weights is not None:
        step = step * np.asarray(weights, dtype=float)
    return ParameterSet.from_array(box.clip(P.to_array() - lam * step))


def threshold_field(phi, phi_e) -> np.ndarray:
    return (np.asarray(phi, dtype=float) >= phi_e / 2.0).astype(float)


def jaccard_index(a, b, mesh) -> float:
    """Lumped-mass intersection over union of two 0/1 indicator fields."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    inter = mesh.lumped_inner_product(a * b, np.ones_like(a))
    union = mesh.lumped_inner_product(np.maximum(a, b), np.ones_like(a))
    if union == 0.0:
        return 1.0
    return inter / union


class RomContext:
    """Reduced-space evaluation bundle used by the inner loop."""

    def __init__(self, pods, tensors, case, cfg, threads=1):
        self.pods = pods
        self.tensors = tensors
        self.case = case
        self.cfg = cfg
        self.threads = threads

    def solve(self, P: ParameterSet):
        return rom_solve(self.pods, self.tensors, P, self.case,
                         newton_tol=self.cfg.newton_tol)

    def objective(self, traj, P: ParameterSet) -> float:
        phi_N = self.pods.phi.vectors @ traj.alpha[-1]
        return objective(phi_N, P, self.cfg, self.case.mesh)

    def gradient(self, traj, P: ParameterSet, dP0) -> np.ndarray:
        blocks = rom_sensitivities(traj, P, self.tensors, self.pods,
                                   self.case, threads=self.threads)
        return weighted_gradient(traj.alpha[-1], blocks, P, self.cfg,
                                 self.pods, self.case.mesh, dP0)


def pwg_step(P_l: ParameterSet, J_l: float, g, ctx: RomContext,
             box: ParameterBox, dP0):
    """One projected weighted-gradient step with Armijo backtracking.

    Trial steps that make the reduced Newton solver diverge are treated
    as rejected and backtracking continues.  Returns (P_next, trajectory
    at P_next, J_next, lambda, stationary); `stationary` is set when no
    step length is accepted, which includes a null projected step.
    """
    cfg = ctx.cfg
    q_l = P_l.to_array() / dP0
    lam = 1.0
    for _m in range(1, ARMIJO_MAX_BACKTRACKS + 1):
        lam *= cfg.beta_armijo
        P_trial = project_params(P_l, lam, g, box, weights=dP0)
        dq = P_trial.to_array() / dP0 - q_l
        step2 = float(dq @ dq)
        if step2 == 0.0:
            return P_l, None, J_l, lam, True
        try:
            traj = ctx.solve(P_trial)
        except (NewtonDivergenceError, RomSeparationError, RomStepError):
            continue
        J_trial = ctx.objective(traj, P_trial)
        if J_trial - J_l <= -ARMIJO_CONST / lam * step2:
            return P_trial, traj, J_trial, lam, False
    return P_l, None, J_l, lam, True


def rom_inner_loop(P_k: ParameterSet, ctx: RomContext, box: ParameterBox,
                   dP0, trace: OptimizationTrace = None, outer_index: int = 0):
    """Inner reduced-space descent with three simultaneous stopping tests."""
    cfg = ctx.cfg
    P_l = P_k
    traj = ctx.solve(P_l)
    J_l = ctx.objective(traj, P_l)
    g = ctx.gradient(traj, P_l, dP0)
    J_first_drop = None
    stat_ref = None
    for l in range(cfg.max_inner):
        # unit-step projected point: the stationarity measure
        P_unit = project_params(P_l, 1.0, g, box, weights=dP0)
        stat = np.linalg.norm((P_unit.to_array() - P_l.to_array()) / dP0)
        if stat_ref is None:
            stat_ref = (np.linalg.norm(P_l.to_array() / dP0), stat)
        P_next, traj_next, J_next, lam, stationary = pwg_step(
            P_l, J_l, g, ctx, box, dP0)
        if trace is not None:
            trace.inner.append({
                "k": outer_index, "l": l, "J_rom": J_l, "J_rom_next": J_next,
                "lambda": lam, "stationarity": stat,
                "P": P_l.to_dict(), "stationary_signal": stationary,
            })
        if stationary:
            return P_l, J_l
        if J_first_drop is None:
            J_first_drop = abs(J_next - J_l)
        rel_change = np.max(np.abs(P_next.to_array() - P_l.to_array())
                            / P_l.to_array())
        dJ_ok = abs(J_next - J_l) <= cfg.tol_Rb * J_first_drop
        g_next = ctx.gradient(traj_next, P_next, dP0)
        P_next_unit = project_params(P_next, 1.0, g_next, box, weights=dP0)
        stat_next = np.linalg.norm(
            (P_next_unit.to_array() - P_next.to_array()) / dP0)
        stat_ok = stat_next <= (cfg.tol_Pa * stat_ref[0]
                                + cfg.tol_Pr * stat_ref[1])
        P_l, traj, J_l, g = P_next, traj_next, J_next, g_next
        if rel_change <= cfg.tol_Ra and dJ_ok and stat_ok:
            return P_l, J_l
    return P_l, J_l


def run_optimization(case: CaseData, P_0: ParameterSet, box: ParameterBox,
                     cfg: ObjectiveConfig, threads: int = 1,
                     _fom_runner=None):
    """Alternating full/reduced optimization; returns (P_opt, trace).

    `_fom_runner(case, P)` may replace the full-order solve (used to
    exercise the outer stopping rules in isolation); it must return
    (snapshots, final state, wall seconds) like the default solver.
    """
    if not box.contains(P_0):
        raise InvalidConfigError("initial parameters outside the box")
    runner = _fom_runner or (lambda c, P: fom_solve(c, P))
    dP0 = 10.0 ** (-cfg.n_w) * P_0.to_array()
    trace = OptimizationTrace()
    weights = case.mesh.lumped_mass

    P_k = P_0
    J_hist = []
    P_hist = [P_0]
    for k in range(cfg.max_outer + 1):
        t1 = time.perf_counter()
        try:
            snaps, final, fom_wall = runner(case, P_k)
        except SolverError as exc:
            trace.status = f"aborted: full-order solve failed at k={k}: {exc}"
            return (P_hist[-1], trace)
        J_fom = objective(final.phi, P_k, cfg, case.mesh)
        jac = jaccard_index(threshold_field(final.phi, P_k.phi_e),
                            cfg.target, case.mesh)
        record = {"k": k, "J_fom": J_fom, "jaccard": jac,
                  "P": P_k.to_dict(), "wall_fom": fom_wall}
        if k >= 1 and J_fom >= J_hist[-1]:
            record["decision"] = "objective increased; keep previous iterate"
            trace.outer.append(record)
            trace.status = "converged: objective increase"
            return P_hist[-2], trace
        if k >= 1 and abs(J_fom - J_hist[-1]) <= cfg.tol_F * abs(
                J_hist[0] - (J_hist[1] if len(J_hist) > 1 else J_fom)):
            record["decision"] = "objective plateau"
            trace.outer.append(record)
            trace.status = "converged: objective plateau"
            J_hist.append(J_fom)
            return P_k, trace
        J_hist.append(J_fom)
        if k == cfg.max_outer:
            record["decision"] = "outer iteration cap"
            trace.outer.append(record)
            trace.status = "stopped: outer iteration cap"
            return P_k, trace

        t2 = time.perf_counter()
        pods = build_pod_array(snaps, cfg.ic, weights)
        t3 = time.perf_counter()
        from .rom import assemble_rom_tensors
        tensors = assemble_rom_tensors(pods, case)
        t4 = time.perf_counter()
        ctx = RomContext(pods, tensors, case, cfg, threads=threads)
        P_next, J_rom = rom_inner_loop(P_k, ctx, box, dP0, trace=trace,
                                       outer_index=k)
        t5 = time.perf_counter()
        record.update({"N_pod": pods.n_pod, "J_rom_final": J_rom,
                       "wall_step1": t2 - t1, "wall_step2": t3 - t2,
                       "wall_step3": t4 - t3, "wall_step4": t5 - t4,
                       "decision": "continue"})
        trace.outer.append(record)
        P_hist.append(P_next)
        P_k = P_next
    trace.status = "stopped: outer iteration cap"
    return P_k, trace
