"""Reduced-order model: projected tensors, Newton stepper, sensitivities.

The full-order operators are projected onto the POD bases once, into a
fixed family of dense tensors (orders two to five); afterwards every
reduced time step costs only small dense algebra.  Mobility and
chemotaxis are projected exactly, by elementwise quadrature against the
per-cell anisotropy tensors, never by interpolating the tensors
themselves.

Naming convention for indices: trailing (m, l) are always (test row,
solution column); leading indices are contracted against reduced
coefficient vectors.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import (NewtonDivergenceError, RomSeparationError, RomStepError,
                     SensitivityFailureError)
from .fom import degenerate_mobility_weights  # noqa: F401 (FOM counterpart)
from .params import ParameterSet, therapy_rate
from .phantom import CaseData
from .pod import PodArray, deim_approx

_CELL_CHUNK = 2048


@dataclass
class RomTensors:
    # order 2 (matrices k x k) and vectors (k,)
    V1: np.ndarray
    U1: np.ndarray
    U2: np.ndarray
    U4: np.ndarray
    U5: np.ndarray
    U6: np.ndarray
    W1: np.ndarray
    W2: np.ndarray
    W4: np.ndarray
    W5: np.ndarray
    # order 3, shape (k, k, k) = (i, m, l)
    V4: np.ndarray
    V5: np.ndarray
    V7: np.ndarray
    V10: np.ndarray
    U3: np.ndarray
    U7: np.ndarray
    W3: np.ndarray
    # order 4, shape (k, k, k, k) = (i, j, m, l)
    V3: np.ndarray
    V6: np.ndarray
    V9: np.ndarray
    # order 5, shape (k, k, k, k, k) = (i, j, s, m, l)
    V2: np.ndarray
    V8: np.ndarray

    @property
    def n_pod(self) -> int:
        return self.V1.shape[0]


def _basis_gradients(mesh, vectors):
    """Per-cell constant gradients of each basis vector, (Nc, k, dim)."""
    return np.einsum("ckd,ckb->cbd", mesh.grads, vectors[mesh.cells])


def _gradient_pairing(mesh, K, grads_sol, grads_test):
    """G[c, m, l] = vol_c (K_c grad xi_l^sol) . grad xi_m^test."""
    Kg = np.einsum("cde,cle->cld", K, grads_sol)
    return mesh.cell_volumes[:, None, None] * np.einsum(
        "cld,cmd->cml", Kg, grads_test)


def _lumped3(m, X, Y, Z):
    """T[i, m, l] = sum_p m_p X_pi Y_pm Z_pl."""
    return np.einsum("p,pi,pm,pl->iml", m, X, Y, Z, optimize=True)


def assemble_rom_tensors(pods: PodArray, case: CaseData) -> RomTensors:
    mesh = case.mesh
    m = mesh.lumped_mass
    Phi = pods.phi.vectors
    Sig = pods.sigma.vectors
    Nb = pods.n.vectors
    Upsi = pods.psi1p.vectors
    Upp = pods.psi1pp.vectors
    k = pods.n_pod

    mPhi = m[:, None] * Phi
    V1 = Phi.T @ mPhi
    U1 = Sig.T @ (m[:, None] * Sig)
    U2 = Sig.T @ (m[:, None] * Upsi)
    U4 = Sig.T @ mPhi
    U5 = Sig.T @ m
    W1 = Nb.T @ (m[:, None] * Nb)
    W4 = Nb.T @ m
    W5 = Nb.T @ mPhi

    from .mesh import assemble_stiffness
    A_plain = assemble_stiffness(mesh)
    A_D = assemble_stiffness(mesh, case.D)
    U6 = Sig.T @ (A_plain @ Phi)
    W2 = Nb.T @ (A_D @ Nb)

    V5 = _lumped3(m, Phi, Phi, Nb)
    V7 = _lumped3(m, Phi, Phi, Phi)
    U3 = _lumped3(m, Phi, Sig, Phi)
    U7 = _lumped3(m, Upp, Sig, Phi)
    W3 = _lumped3(m, Phi, Nb, Nb)
    V6 = np.einsum("p,pi,pj,pm,pl->ijml", m, Phi, Phi, Phi, Nb, optimize=True)

    # mobility/chemotaxis families: weight phi(1-phi)^2 expanded as
    # phi - 2 phi^2 + phi^3, each power integrated exactly per cell
    chiT = case.chi[:, None, None] * case.T
    gPhi = _basis_gradients(mesh, Phi)
    gSig = _basis_gradients(mesh, Sig)
    gN = _basis_gradients(mesh, Nb)
    qw = mesh.quad_weights

    V4 = np.zeros((k, k, k))
    V3 = np.zeros((k, k, k, k))
    V2 = np.zeros((k, k, k, k, k))
    V10 = np.zeros((k, k, k))
    V9 = np.zeros((k, k, k, k))
    V8 = np.zeros((k, k, k, k, k))
    nc = mesh.num_cells
    for lo in range(0, nc, _CELL_CHUNK):
        sl = slice(lo, min(lo + _CELL_CHUNK, nc))
        sub = _SubMeshView(mesh, sl)
        Pq = np.einsum("ckb,qk->bcq", Phi[mesh.cells[sl]], mesh.quad_points)
        w1 = np.einsum("bcq,q->bc", Pq, qw)               # int xi_i / vol
        w2 = np.einsum("acq,bcq,q->abc", Pq, Pq, qw, optimize=True)
        Pq2 = np.einsum("acq,bcq->abcq", Pq, Pq).reshape(k * k, -1, len(qw))
        w3 = np.einsum("acq,bcq,q->abc", Pq2, Pq, qw,
                       optimize=True).reshape(k, k, k, -1)
        GT = _gradient_pairing(sub, case.T[sl], gSig[sl], gPhi[sl])
        GX = _gradient_pairing(sub, chiT[sl], gN[sl], gPhi[sl])
        for G, t4, t3, t2 in ((GT, V4, V3, V2), (GX, V10, V9, V8)):
            Gf = G.reshape(-1, k * k)
            t4 += (w1 @ Gf).reshape(k, k, k)
            t3 += (w2.reshape(k * k, -1) @ Gf).reshape(k, k, k, k)
            t2 += (w3.reshape(k ** 3, -1) @ Gf).reshape(k, k, k, k, k)
    return RomTensors(V1=V1, U1=U1, U2=U2, U4=U4, U5=U5, U6=U6,
                      W1=W1, W2=W2, W4=W4, W5=W5,
                      V4=V4, V5=V5, V7=V7, V10=V10, U3=U3, U7=U7, W3=W3,
                      V3=V3, V6=V6, V9=V9, V2=V2, V8=V8)


class _SubMeshView:
    """Just enough of the Mesh interface for chunked quadrature."""

    def __init__(self, mesh, sl):
        self.cell_volumes = mesh.cell_volumes[sl]


# -- contracted operators ------------------------------------------------

def contract3(T, a):
    return np.einsum("iml,i->ml", T, a)


def contract4(T, a, b=None):
    return np.einsum("ijml,i,j->ml", T, a, a if b is None else b)


def contract5(T, a):
    return np.einsum("ijsml,i,j,s->ml", T, a, a, a, optimize=True)


def mobility_matrix_rom(T: RomTensors, alpha):
    """B(alpha): projection of the degenerate mobility flux operator."""
    return (contract5(T.V2, alpha) - 2.0 * contract4(T.V3, alpha)
            + contract3(T.V4, alpha))


def chemotaxis_matrix_rom(T: RomTensors, alpha):
    return (contract5(T.V8, alpha) - 2.0 * contract4(T.V9, alpha)
            + contract3(T.V10, alpha))


def mobility_matrix_rom_deriv(T: RomTensors, alpha, dalpha):
    """Directional derivative of B(alpha) along dalpha."""
    return (3.0 * np.einsum("ijsml,i,j,s->ml", T.V2, dalpha, alpha, alpha,
                            optimize=True)
            - 4.0 * contract4(T.V3, dalpha, alpha)
            + contract3(T.V4, dalpha))


def chemotaxis_matrix_rom_deriv(T: RomTensors, alpha, dalpha):
    return (3.0 * np.einsum("ijsml,i,j,s->ml", T.V8, dalpha, alpha, alpha,
                            optimize=True)
            - 4.0 * contract4(T.V9, dalpha, alpha)
            + contract3(T.V10, dalpha))


def u22_matrix(T: RomTensors, psi1pp_coeffs):
    return np.einsum("iml,i->ml", T.U7, psi1pp_coeffs)


# -- time stepping --------------------------------------------------------

@dataclass
class RomState:
    alpha: np.ndarray
    beta: np.ndarray
    eta: np.ndarray
    step: int = 0


@dataclass
class RomTrajectory:
    alpha: np.ndarray   # (N+1, k)
    beta: np.ndarray
    eta: np.ndarray
    dt: float

    @property
    def num_steps(self) -> int:
        return self.alpha.shape[0] - 1


def rom_nutrient_init(alpha_prev, eta_prev, P: ParameterSet, T: RomTensors,
                      dt: float) -> np.ndarray:
    A = (T.W1 / dt + T.W2
         + (P.delta_n - P.S_n) * contract3(T.W3, alpha_prev)
         + P.S_n * T.W1)
    rhs = T.W1 @ eta_prev / dt + P.S_n * T.W4 - P.S_n * (T.W5 @ alpha_prev)
    try:
        return np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise RomStepError(f"reduced nutrient solve failed: {exc}") from exc


def _beta_rhs(T: RomTensors, P: ParameterSet, pods: PodArray, alpha,
              alpha_prev):
    """Right side of the reduced chemical-potential equation U1 beta = ..."""
    dpsi = deim_approx(alpha, pods.deim_psi1p, "psi1p", pods.phi.vectors,
                       P.phi_e)
    return (P.gamma2 * (T.U6 @ alpha)
            + P.E * P.c_e * (T.U2 @ dpsi)
            - P.E * contract3(T.U3, alpha_prev) @ alpha_prev
            - P.E * P.c_e * (T.U4 @ alpha_prev)
            - P.E * P.c_e * T.U5)


def recover_beta(T: RomTensors, P, pods, alpha, alpha_prev) -> np.ndarray:
    return np.linalg.solve(T.U1, _beta_rhs(T, P, pods, alpha, alpha_prev))


def rom_newton_solve(state_prev: RomState, P: ParameterSet, T: RomTensors,
                     pods: PodArray, dt: float, k_T: float,
                     tol: float = 1e-3, max_iters: int = 1000) -> RomState:
    """One reduced time step: nutrient solve, then Newton on (alpha, beta).

    The beta increment is eliminated through the linearized potential
    equation, so each iteration solves a single k x k system; damping by
    halving recovers from trial iterates that violate separation at the
    interpolation nodes.
    """
    a_prev = state_prev.alpha
    eta = rom_nutrient_init(a_prev, state_prev.eta, P, T, dt)

    B = mobility_matrix_rom(T, a_prev)
    K = chemotaxis_matrix_rom(T, a_prev)
    V5m = contract3(T.V5, a_prev)
    V6m = contract4(T.V6, a_prev)
    V7m = contract3(T.V7, a_prev)
    forcing = (P.k_n * (K @ eta)
               + P.nu * ((V5m - V6m) @ eta)
               + (P.nu * P.delta * (V7m - T.V1)
                  + T.V1 / dt - k_T * T.V1) @ a_prev)
    LB = P.L * B
    U1_inv = np.linalg.inv(T.U1)

    alpha = a_prev.copy()
    beta = state_prev.beta.copy()
    for p in range(max_iters):
        try:
            cpp = deim_approx(alpha, pods.deim_psi1pp, "psi1pp",
                              pods.phi.vectors, P.phi_e)
            D = _beta_rhs(T, P, pods, alpha, a_prev) - T.U1 @ beta
        except RomSeparationError:
            if p == 0:
                raise
            # back off half of the last accepted update
            alpha = 0.5 * (alpha + last_alpha)
            beta = 0.5 * (beta + last_beta)
            continue
        C = U1_inv @ (P.gamma2 * T.U6 + P.E * P.c_e * u22_matrix(T, cpp))
        rhs = (-LB @ (U1_inv @ D) - T.V1 @ alpha / dt - LB @ beta + forcing)
        try:
            dalpha = np.linalg.solve(T.V1 / dt + LB @ C, rhs)
        except np.linalg.LinAlgError as exc:
            raise RomStepError(f"reduced Newton solve failed: {exc}") from exc
        dbeta = C @ dalpha + U1_inv @ D
        err = float(np.sqrt(dalpha @ dalpha + dbeta @ dbeta))
        last_alpha, last_beta = alpha, beta
        alpha = alpha + dalpha
        beta = beta + dbeta
        if err <= tol:
            return RomState(alpha=alpha, beta=beta, eta=eta,
                            step=state_prev.step + 1)
    raise NewtonDivergenceError(
        f"reduced Newton did not converge in {max_iters} iterations")


def initial_coefficients(pods: PodArray, case: CaseData, P: ParameterSet,
                         T: RomTensors):
    """Projected initial data; beta from the potential equation at t=0."""
    m = case.mesh.lumped_mass
    alpha0 = pods.phi.vectors.T @ (m * case.phi0)
    eta0 = pods.n.vectors.T @ (m * case.n0)
    beta0 = recover_beta(T, P, pods, alpha0, alpha0)
    return alpha0, beta0, eta0


def rom_solve(pods: PodArray, T: RomTensors, P: ParameterSet, case: CaseData,
              newton_tol: float = 1e-3,
              max_newton_iters: int = 1000) -> RomTrajectory:
    k = pods.n_pod
    N = case.N_steps
    alpha = np.empty((N + 1, k))
    beta = np.empty((N + 1, k))
    eta = np.empty((N + 1, k))
    a0, b0, e0 = initial_coefficients(pods, case, P, T)
    alpha[0], beta[0], eta[0] = a0, b0, e0
    state = RomState(alpha=a0, beta=b0, eta=e0, step=0)
    for n in range(1, N + 1):
        k_T = therapy_rate(n * case.dt, case.therapy)
        try:
            state = rom_newton_solve(state, P, T, pods, case.dt, k_T,
                                     tol=newton_tol,
                                     max_iters=max_newton_iters)
        except (NewtonDivergenceError, RomSeparationError, RomStepError) as exc:
            raise type(exc)(f"step {n}: {exc}") from exc
        alpha[n], beta[n], eta[n] = state.alpha, state.beta, state.eta
    return RomTrajectory(alpha=alpha, beta=beta, eta=eta, dt=case.dt)


def reconstruct(pods: PodArray, coeffs, which: str = "phi") -> np.ndarray:
    return getattr(pods, which).vectors @ np.asarray(coeffs, dtype=float)


# -- linearized sensitivity systems ---------------------------------------

@dataclass
class SensitivityBlock:
    param_index: int           # 0..8 into the canonical parameter order
    dalpha: np.ndarray         # (N+1, k)
    dbeta: np.ndarray
    deta: np.ndarray


class _StepContext:
    """Per-time-step quantities shared by all nine linearized systems."""

    def __init__(self, T, P, pods, a_prev, a_new, eta_new, dt, k_T):
        self.a_prev = a_prev
        self.a_new = a_new
        self.eta_new = eta_new
        self.k_T = k_T
        self.B = mobility_matrix_rom(T, a_prev)
        self.K = chemotaxis_matrix_rom(T, a_prev)
        self.V5m = contract3(T.V5, a_prev)
        self.V6m = contract4(T.V6, a_prev)
        self.V7m = contract3(T.V7, a_prev)
        self.W3m = contract3(T.W3, a_prev)
        self.U3m = contract3(T.U3, a_prev)
        self.dpsi_new = deim_approx(a_new, pods.deim_psi1p, "psi1p",
                                    pods.phi.vectors, P.phi_e)
        cpp = deim_approx(a_new, pods.deim_psi1pp, "psi1pp",
                          pods.phi.vectors, P.phi_e)
        self.U1_inv = np.linalg.inv(T.U1)
        self.C = self.U1_inv @ (P.gamma2 * T.U6
                                + P.E * P.c_e * u22_matrix(T, cpp))
        self.nutrient_lhs = (T.W1 / dt + T.W2
                             + (P.delta_n - P.S_n) * self.W3m + P.S_n * T.W1)
        self.alpha_lhs = T.V1 / dt + P.L * self.B @ self.C


def _step_forcings(ctx: _StepContext, T: RomTensors, P: ParameterSet,
                   param_index: int):
    """(F_eta, F_alpha, F_beta): explicit parameter derivatives of the
    reduced residuals at this step."""
    k = T.n_pod
    Fe = np.zeros(k)
    Fa = np.zeros(k)
    Fb = np.zeros(k)
    a_prev, eta = ctx.a_prev, ctx.eta_new
    if param_index == 0:      # L
        Fa = -(ctx.B @ ctx.beta_new)
    elif param_index == 1:    # nu
        Fa = ((ctx.V5m - ctx.V6m) @ eta
              + P.delta * ((ctx.V7m - T.V1) @ a_prev))
    elif param_index == 2:    # k_n
        Fa = ctx.K @ eta
    elif param_index == 3:    # S_n
        Fe = T.W4 - T.W5 @ a_prev + (ctx.W3m - T.W1) @ eta
    elif param_index == 4:    # delta_n
        Fe = -(ctx.W3m @ eta)
    elif param_index == 5:    # gamma2
        Fb = T.U6 @ ctx.a_new
    elif param_index == 6:    # E
        Fb = (P.c_e * (T.U2 @ ctx.dpsi_new)
              - ctx.U3m @ a_prev - P.c_e * (T.U4 @ a_prev) - P.c_e * T.U5)
    elif param_index == 7:    # delta
        Fa = P.nu * ((ctx.V7m - T.V1) @ a_prev)
    elif param_index == 8:    # c_e
        Fb = P.E * (T.U2 @ ctx.dpsi_new) - P.E * (T.U4 @ a_prev) - P.E * T.U5
    else:
        raise SensitivityFailureError(f"bad parameter index {param_index}")
    return Fe, Fa, Fb


def _march_sensitivity(param_index, contexts, T, P, dt):
    k = T.n_pod
    N = len(contexts)
    da = np.zeros((N + 1, k))
    db = np.zeros((N + 1, k))
    de = np.zeros((N + 1, k))
    for n, ctx in enumerate(contexts, start=1):
        dap, dep = da[n - 1], de[n - 1]
        Fe, Fa, Fb = _step_forcings(ctx, T, P, param_index)
        rhs_e = (T.W1 @ dep / dt
                 + (P.S_n - P.delta_n) * (contract3(T.W3, dap) @ ctx.eta_new)
                 - P.S_n * (T.W5 @ dap) + Fe)
        try:
            de[n] = np.linalg.solve(ctx.nutrient_lhs, rhs_e)
        except np.linalg.LinAlgError as exc:
            raise SensitivityFailureError(
                f"nutrient sensitivity solve failed at step {n}") from exc
        G_beta = (-P.E * (contract3(T.U3, dap) @ ctx.a_prev)
                  - P.E * (ctx.U3m @ dap)
                  - P.E * P.c_e * (T.U4 @ dap) + Fb)
        Bp = mobility_matrix_rom_deriv(T, ctx.a_prev, dap)
        Kp = chemotaxis_matrix_rom_deriv(T, ctx.a_prev, dap)
        V5p = contract3(T.V5, dap)
        V6p = 2.0 * contract4(T.V6, dap, ctx.a_prev)
        V7p = contract3(T.V7, dap)
        rest = (-P.L * (Bp @ ctx.beta_new)
                + P.k_n * (ctx.K @ de[n]) + P.k_n * (Kp @ ctx.eta_new)
                + P.nu * ((V5p - V6p) @ ctx.eta_new)
                + P.nu * ((ctx.V5m - ctx.V6m) @ de[n])
                + (P.nu * P.delta * (ctx.V7m - T.V1)
                   + T.V1 / dt - ctx.k_T * T.V1) @ dap
                + P.nu * P.delta * (V7p @ ctx.a_prev)
                + Fa)
        rhs_a = rest - P.L * (ctx.B @ (ctx.U1_inv @ G_beta))
        try:
            da[n] = np.linalg.solve(ctx.alpha_lhs, rhs_a)
        except np.linalg.LinAlgError as exc:
            raise SensitivityFailureError(
                f"coupled sensitivity solve failed at step {n}") from exc
        db[n] = ctx.C @ da[n] + ctx.U1_inv @ G_beta
    return SensitivityBlock(param_index=param_index, dalpha=da, dbeta=db,
                            deta=de)


def _build_contexts(traj: RomTrajectory, P, T, pods, case):
    contexts = []
    for n in range(1, traj.num_steps + 1):
        ctx = _StepContext(T, P, pods, traj.alpha[n - 1], traj.alpha[n],
                           traj.eta[n], traj.dt,
                           therapy_rate(n * traj.dt, case.therapy))
        ctx.beta_new = traj.beta[n]
        contexts.append(ctx)
    return contexts


def rom_linearized_solve(param_index: int, traj: RomTrajectory,
                         P: ParameterSet, T: RomTensors, pods: PodArray,
                         case: CaseData) -> SensitivityBlock:
    """Sensitivity of the reduced trajectory to one parameter.

    All nine systems share the homogeneous recursion; they differ only in
    the explicit forcing, so this marches one shared template with a
    per-parameter forcing selector.
    """
    contexts = _build_contexts(traj, P, T, pods, case)
    return _march_sensitivity(param_index, contexts, T, P, traj.dt)


def rom_sensitivities(traj: RomTrajectory, P: ParameterSet, T: RomTensors,
                      pods: PodArray, case: CaseData,
                      param_indices=None, threads: int = 1):
    """Sensitivity blocks for several parameters over one shared trajectory."""
    if param_indices is None:
        param_indices = range(9)
    contexts = _build_contexts(traj, P, T, pods, case)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(
                lambda m: _march_sensitivity(m, contexts, T, P, traj.dt),
                param_indices))
    return [_march_sensitivity(m, contexts, T, P, traj.dt)
            for m in param_indices]


def timed_rom_steps(pods, T, P, case, n_steps: int,
                    newton_tol: float = 1e-3) -> float:
    """Mean wall seconds per reduced time step (for speedup reporting)."""
    a0, b0, e0 = initial_coefficients(pods, case, P, T)
    state = RomState(alpha=a0, beta=b0, eta=e0, step=0)
    t0 = time.perf_counter()
    for n in range(1, n_steps + 1):
        state = rom_newton_solve(state, P, T, pods, case.dt,
                                 therapy_rate(n * case.dt, case.therapy),
                                 tol=newton_tol)
    return (time.perf_counter() - t0) / n_steps
