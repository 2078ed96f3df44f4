"""Full-order semi-implicit time stepper.

Each step solves the nutrient reaction-diffusion equation implicitly
(using the previous volume fraction in the reaction coefficients), then
the degenerate Cahn-Hilliard system as a nodal variational inequality:
the convex logarithmic potential term is implicit, the concave
polynomial part and the mobility/chemotaxis coefficients are explicit.

Positivity of phi is enforced exactly by a primal-dual active-set
iteration on the nodal complementarity system; the logarithmic term
keeps phi strictly below 1 (a damped Newton guard makes that robust).
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (SeparationViolationError, SolverError, StepFailureError)
from .mesh import assemble_stiffness, assemble_weighted_stiffness
from .params import ParameterSet, therapy_rate
from .phantom import CaseData

EPS_SEP = 1e-9       # numerical guard phi <= 1 - EPS_SEP
TOL_VI = 1e-8        # complementarity tolerance (scaled residual)
MAX_VI_ITERS = 200
TOL_NUTRIENT = 1e-12


def potential_derivatives(phi, phi_e):
    """(psi1', psi1'', psi2') of the single-well potential split.

    psi1(phi) = -log(1 - phi) is the convex part, treated implicitly;
    psi2 collects the concave polynomial remainder, treated explicitly.
    """
    phi = np.asarray(phi, dtype=float)
    if np.any(phi >= 1.0):
        raise SeparationViolationError("phi >= 1 in potential evaluation")
    one_m = 1.0 - phi
    psi1p = 1.0 / one_m
    psi1pp = psi1p * psi1p
    psi2p = -phi * phi - (1.0 - phi_e) * (phi + 1.0)
    if phi.ndim == 0:
        return float(psi1p), float(psi1pp), float(psi2p)
    return psi1p, psi1pp, psi2p


def degenerate_mobility_weights(mesh, phi):
    """Per-cell integrals of phi(1-phi)^2 for a P1 field (exact quadrature)."""
    vals = mesh.p1_values_at_quadpoints(phi)
    return mesh.integrate_cellwise(vals * (1.0 - vals) ** 2)


@dataclass
class FomState:
    phi: np.ndarray
    sigma: np.ndarray
    n: np.ndarray
    t: float
    step: int


@dataclass
class SnapshotSet:
    """Column j of each matrix is the nodal field at time index j."""
    F1: np.ndarray   # phi
    F2: np.ndarray   # sigma
    F3: np.ndarray   # n
    G1: np.ndarray   # psi1'(phi)
    G2: np.ndarray   # psi1''(phi)
    dt: float = None

    @property
    def num_snapshots(self) -> int:
        return self.F1.shape[1]


class FomOperators:
    """Parameter-independent matrices cached per case."""

    def __init__(self, case: CaseData):
        self.case = case
        self.mesh = case.mesh
        self.m = case.mesh.lumped_mass
        self.A_plain = assemble_stiffness(case.mesh)       # identity tensor
        self.A_D = assemble_stiffness(case.mesh, case.D)
        self.chiT = case.chi[:, None, None] * case.T

    def mobility_matrix(self, phi_prev) -> sp.csr_matrix:
        w = degenerate_mobility_weights(self.mesh, phi_prev)
        return assemble_weighted_stiffness(self.mesh, self.case.T, w)

    def chemotaxis_matrix(self, phi_prev) -> sp.csr_matrix:
        w = degenerate_mobility_weights(self.mesh, phi_prev)
        return assemble_weighted_stiffness(self.mesh, self.chiT, w)


def solve_nutrient_step(phi_prev, n_prev, P: ParameterSet, ops: FomOperators,
                        dt: float) -> np.ndarray:
    """Implicit nutrient step with frozen phi in the reaction terms."""
    m = ops.m
    diag = m / dt + m * ((P.delta_n - P.S_n) * phi_prev + P.S_n)
    A = ops.A_D + sp.diags(diag)
    rhs = m * n_prev / dt + P.S_n * m * (1.0 - phi_prev)
    M_inv = sp.diags(1.0 / A.diagonal())
    n_new, info = spla.cg(A, rhs, rtol=TOL_NUTRIENT, atol=0.0, M=M_inv,
                          x0=n_prev.copy(), maxiter=5000)
    if info != 0:
        try:
            n_new = spla.spsolve(A.tocsc(), rhs)
        except Exception as exc:
            raise SolverError(f"nutrient solve failed: {exc}") from exc
    if not np.all(np.isfinite(n_new)):
        raise SolverError("nutrient solve produced non-finite values")
    return n_new


def recover_sigma(phi, phi_prev, P: ParameterSet, ops: FomOperators) -> np.ndarray:
    """Nodal chemical potential from the lumped stationarity identity.

    At nodes where phi > 0 this equals the multiplier produced by the
    variational-inequality solve; at phi = 0 nodes the same expression is
    used so downstream snapshot matrices are fully populated.
    """
    psi1p, _, _ = potential_derivatives(phi, P.phi_e)
    _, _, psi2p_prev = potential_derivatives(phi_prev, P.phi_e)
    return (P.gamma2 * (ops.A_plain @ phi) / ops.m
            + P.E * P.c_e * psi1p + P.E * psi2p_prev)


def _vi_residual(x, y, phi_prev_psi2p, P, ops):
    """Scaled stationarity residual r/(m*E); complementarity pairs with x."""
    psi1p = 1.0 / (1.0 - x)
    return (P.gamma2 * (ops.A_plain @ x) / ops.m
            + P.E * P.c_e * psi1p + P.E * phi_prev_psi2p - y) / P.E


def solve_ch_step(phi_prev, n_new, P: ParameterSet, ops: FomOperators,
                  dt: float, k_T: float):
    """One Cahn-Hilliard step: positivity-constrained (phi, sigma) solve.

    Unknowns x = phi, y = sigma.  The phi-equation is linear in (x, y);
    the sigma-equation holds as a nodal complementarity system
    x_j >= 0, r_j >= 0, x_j r_j = 0.  Primal-dual active set with Newton
    linearization of the logarithmic term on inactive rows; damped
    whenever a trial iterate approaches the singularity at 1.
    """
    mesh = ops.mesh
    nv = mesh.num_vertices
    m = ops.m
    B = ops.mobility_matrix(phi_prev)
    K = ops.chemotaxis_matrix(phi_prev)
    _, _, psi2p_prev = potential_derivatives(phi_prev, P.phi_e)

    b1 = (m * phi_prev / dt
          + P.nu * m * phi_prev * (1.0 - phi_prev) * (n_new - P.delta)
          + P.k_n * (K @ n_new)
          - k_T * m * phi_prev)
    M_dt = sp.diags(m / dt)
    LB = P.L * B
    top = sp.hstack([M_dt, LB]).tocsr()
    # columns whose mobility coupling is negligible against the mass term:
    # there the multiplier is (numerically) non-unique
    col = P.L * np.asarray(np.abs(B).sum(axis=0)).ravel()
    degenerate = col <= 1e-8 * m / dt
    b1_scale = max(np.abs(b1).max(), np.abs(m * phi_prev / dt).max(), 1e-300)

    x = np.clip(phi_prev, 0.0, 1.0 - 1e-6)
    y = recover_sigma(x, phi_prev, P, ops)

    gA = P.gamma2 * ops.A_plain
    I = sp.identity(nv, format="csr")
    best_res = np.inf
    stall = 0
    for _ in range(MAX_VI_ITERS):
        r = _vi_residual(x, y, psi2p_prev, P, ops)
        comp = np.abs(np.minimum(x, r)).max()
        eq1 = np.abs(M_dt @ x + LB @ y - b1).max() / b1_scale
        res = max(comp, eq1)
        if res <= TOL_VI:
            x = np.maximum(x, 0.0)
            x[x < 1e-12] = 0.0  # keep the far field exactly degenerate
            return x, recover_sigma(x, phi_prev, P, ops)
        if res < best_res * (1.0 - 1e-12):
            best_res = res
            stall = 0
        else:
            stall += 1
            if stall > 50:
                raise StepFailureError("active-set iteration stalled")

        active = r > x  # estimated contact set: enforce x_j = 0 there
        # Where the mobility degenerates on the whole patch of a node, the
        # corresponding sigma column vanishes and the multiplier is
        # non-unique; there the mass-balance row already forces x_j = 0
        # exactly, so pin sigma by the stationarity row instead.
        active &= ~degenerate
        inactive = ~active
        psi1pp = 1.0 / (1.0 - x) ** 2
        # inactive rows: Newton-linearized stationarity; active rows: x_j = 0
        rows_scale = np.where(inactive, 1.0, 0.0)
        bottom_left = (sp.diags(rows_scale) @ gA
                       + sp.diags(np.where(inactive,
                                           m * P.E * P.c_e * psi1pp, 1.0)))
        bottom_right = sp.diags(np.where(inactive, -m, 0.0))
        psi1p = 1.0 / (1.0 - x)
        rhs_bottom = np.where(
            inactive,
            m * P.E * P.c_e * (psi1pp * x - psi1p) - m * P.E * psi2p_prev,
            0.0)
        Asys = sp.vstack([top, sp.hstack([bottom_left, bottom_right])]).tocsc()
        try:
            z = spla.splu(Asys).solve(np.concatenate([b1, rhs_bottom]))
        except RuntimeError as exc:
            raise StepFailureError(f"saddle solve failed: {exc}") from exc
        x_new, y_new = z[:nv], z[nv:]
        # damp toward the previous iterate if the step approaches phi = 1
        s = 1.0
        for _half in range(60):
            xt = x + s * (x_new - x)
            if xt.max() < 1.0 - EPS_SEP:
                break
            s *= 0.5
        else:
            raise StepFailureError("could not damp step below separation cap")
        x = x + s * (x_new - x)
        y = y + s * (y_new - y)
    raise StepFailureError("variational inequality did not converge")


def _advance(state: FomState, P, ops, dt, k_T) -> FomState:
    n_new = solve_nutrient_step(state.phi, state.n, P, ops, dt)
    phi_new, sigma_new = solve_ch_step(state.phi, n_new, P, ops, dt, k_T)
    return FomState(phi=phi_new, sigma=sigma_new, n=n_new,
                    t=state.t + dt, step=state.step + 1)


def fom_solve(case: CaseData, P: ParameterSet, collect_snapshots: bool = True):
    """March the full-order model over the case's time grid.

    Returns (snapshots or None, final state, wall seconds).  A failed
    step is retried once with two half-steps before raising.
    """
    ops = FomOperators(case)
    nv = case.mesh.num_vertices
    N = case.N_steps
    state = FomState(phi=case.phi0.copy(),
                     sigma=recover_sigma(case.phi0, case.phi0, P, ops),
                     n=case.n0.copy(), t=0.0, step=0)
    snaps = None
    if collect_snapshots:
        snaps = SnapshotSet(F1=np.empty((nv, N + 1)), F2=np.empty((nv, N + 1)),
                            F3=np.empty((nv, N + 1)), G1=np.empty((nv, N + 1)),
                            G2=np.empty((nv, N + 1)), dt=case.dt)
        _store(snaps, 0, state, P)
    t0 = time.perf_counter()
    for n in range(1, N + 1):
        k_T = therapy_rate(n * case.dt, case.therapy)
        try:
            state = _advance(state, P, ops, case.dt, k_T)
        except SolverError:
            # one retry: split the step in two
            half = case.dt / 2.0
            try:
                mid = _advance(state, P, ops, half, k_T)
                state = _advance(mid, P, ops, half, k_T)
            except SolverError as exc:
                raise StepFailureError(str(exc), step=n) from exc
            state = FomState(phi=state.phi, sigma=state.sigma, n=state.n,
                             t=n * case.dt, step=n)
        if collect_snapshots:
            _store(snaps, n, state, P)
    wall = time.perf_counter() - t0
    return snaps, state, wall


def _store(snaps: SnapshotSet, j: int, state: FomState, P: ParameterSet):
    psi1p, psi1pp, _ = potential_derivatives(state.phi, P.phi_e)
    snaps.F1[:, j] = state.phi
    snaps.F2[:, j] = state.sigma
    snaps.F3[:, j] = state.n
    snaps.G1[:, j] = psi1p
    snaps.G2[:, j] = psi1pp
