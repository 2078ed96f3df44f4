"""POD basis extraction and discrete empirical interpolation.

Bases are computed by eigendecomposition of the snapshot correlation
matrix in the lumped-L2 (mass-weighted) inner product, so energy
fractions are mesh-independent.  Five bases (phi, sigma, n, psi1',
psi1'') are padded to a common dimension; interpolation nodes for both
potential nonlinearities are selected greedily from the psi1'' basis
alone, which is what keeps the reconstructed phi separated from 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (DeimSelectionError, EmptySnapshotError,
                     InvalidConfigError, RankDeficiencyError,
                     RomSeparationError)
from .fom import SnapshotSet

RANK_CUTOFF = 1e-14   # eigenvalues below cutoff*lambda_1 count as zero


@dataclass
class PodBasis:
    vectors: np.ndarray        # (Nv, N_basis), orthonormal in the weighted ip
    eigenvalues: np.ndarray    # full spectrum, nonincreasing
    energy: np.ndarray         # cumulative energy fractions
    n_basis: int

    @property
    def num_vectors(self) -> int:
        return self.vectors.shape[1]


@dataclass
class DeimSelection:
    U: np.ndarray              # (Nv, k) nonlinearity basis
    nodes: np.ndarray          # (k,) distinct vertex indices
    PtU: np.ndarray            # (k, k) interpolation matrix U[nodes]
    cond: float = field(default=np.nan)

    def __post_init__(self):
        self.cond = float(np.linalg.cond(self.PtU))


@dataclass
class PodArray:
    phi: PodBasis
    sigma: PodBasis
    n: PodBasis
    psi1p: PodBasis
    psi1pp: PodBasis
    deim_psi1p: DeimSelection
    deim_psi1pp: DeimSelection
    n_pod: int


def _weighted_gram(F, weights):
    return (F * weights[:, None]).T @ F


def _pod_spectrum(F, weights):
    """Eigen-pairs of the correlation matrix, descending, with trace/rank."""
    C = _weighted_gram(F, weights)
    trace = float(np.trace(C))
    if trace <= 0.0:
        raise EmptySnapshotError("snapshot sequence has zero energy")
    lam, V = np.linalg.eigh(C)
    lam = lam[::-1]
    V = V[:, ::-1]
    lam = np.maximum(lam, 0.0)
    rank = int(np.sum(lam > RANK_CUTOFF * lam[0]))
    return lam, V, trace, rank


def _build_vectors(F, weights, lam, V, count):
    vecs = F @ (V[:, :count] / np.sqrt(lam[:count]))
    # modified Gram-Schmidt in the weighted inner product: the scaling
    # formula is exact in real arithmetic but drifts for tiny eigenvalues
    for j in range(count):
        for i in range(j):
            vecs[:, j] -= np.dot(weights * vecs[:, i], vecs[:, j]) * vecs[:, i]
        nrm = np.sqrt(np.dot(weights * vecs[:, j], vecs[:, j]))
        vecs[:, j] /= nrm
    return vecs


def compute_pod(F, ic, weights) -> PodBasis:
    """Minimal basis capturing a cumulative energy fraction >= ic.

    F has one snapshot per column; `weights` are the lumped nodal masses
    defining the inner product.
    """
    if not 0.0 < ic <= 1.0:
        raise InvalidConfigError("information content must be in (0, 1]")
    F = np.asarray(F, dtype=float)
    lam, V, trace, rank = _pod_spectrum(F, weights)
    frac = np.cumsum(lam) / trace
    n_basis = int(np.searchsorted(frac, ic - 1e-12) + 1)
    n_basis = min(max(n_basis, 1), rank)
    return PodBasis(vectors=_build_vectors(F, weights, lam, V, n_basis),
                    eigenvalues=lam, energy=frac, n_basis=n_basis)


def build_pod_array(snaps: SnapshotSet, ic, weights) -> PodArray:
    """Five bases at threshold ic, padded to the common dimension N_POD."""
    seqs = {"phi": snaps.F1, "sigma": snaps.F2, "n": snaps.F3,
            "psi1p": snaps.G1, "psi1pp": snaps.G2}
    spectra = {}
    n_pod = 1
    for name, F in seqs.items():
        lam, V, trace, rank = _pod_spectrum(F, weights)
        frac = np.cumsum(lam) / trace
        nb = int(np.searchsorted(frac, ic - 1e-12) + 1)
        nb = min(max(nb, 1), rank)
        spectra[name] = (lam, V, frac, rank, nb)
        n_pod = max(n_pod, nb)
    bases = {}
    for name, F in seqs.items():
        lam, V, frac, rank, nb = spectra[name]
        if rank < n_pod:
            raise RankDeficiencyError(
                f"sequence {name} has rank {rank} < N_POD {n_pod}",
                sequence=name)
        bases[name] = PodBasis(
            vectors=_build_vectors(F, weights, lam, V, n_pod),
            eigenvalues=lam, energy=frac, n_basis=nb)
    sel_pp = deim_select(bases["psi1pp"])
    sel_p = DeimSelection(U=bases["psi1p"].vectors, nodes=sel_pp.nodes,
                          PtU=bases["psi1p"].vectors[sel_pp.nodes])
    if abs(np.linalg.det(sel_p.PtU)) == 0.0:
        raise DeimSelectionError("singular interpolation matrix for psi1'")
    return PodArray(phi=bases["phi"], sigma=bases["sigma"], n=bases["n"],
                    psi1p=bases["psi1p"], psi1pp=bases["psi1pp"],
                    deim_psi1p=sel_p, deim_psi1pp=sel_pp, n_pod=n_pod)


def deim_select(basis: PodBasis) -> DeimSelection:
    """Greedy residual-argmax node selection (ties -> lowest index)."""
    U = basis.vectors
    k = U.shape[1]
    if k < 1:
        raise DeimSelectionError("empty basis")
    nodes = [int(np.argmax(np.abs(U[:, 0])))]
    for l in range(1, k):
        sub = U[nodes, :l]
        try:
            c = np.linalg.solve(sub, U[nodes, l])
        except np.linalg.LinAlgError as exc:
            raise DeimSelectionError(
                "singular interpolation matrix during greedy loop") from exc
        r = U[:, l] - U[:, :l] @ c
        p = int(np.argmax(np.abs(r)))
        if p in nodes:
            raise DeimSelectionError("greedy selection repeated a node")
        nodes.append(p)
    nodes = np.array(nodes, dtype=np.int64)
    return DeimSelection(U=U, nodes=nodes, PtU=U[nodes])


def deim_approx(alpha, sel: DeimSelection, nl: str, Phi, phi_e,
                return_nodal=False):
    """Interpolated coefficients of psi1' or psi1'' at reduced state alpha.

    The nonlinearity is evaluated only at the interpolation nodes of the
    reconstructed phi.  Raises if phi reaches 1 at any node, which the
    Newton driver treats as a damping signal.
    """
    phi_nodes = Phi[sel.nodes] @ np.asarray(alpha, dtype=float)
    if np.any(phi_nodes >= 1.0):
        raise RomSeparationError("phi >= 1 at a DEIM interpolation node")
    one_m = 1.0 - phi_nodes
    if nl == "psi1p":
        vals = 1.0 / one_m
    elif nl == "psi1pp":
        vals = 1.0 / one_m ** 2
    else:
        raise InvalidConfigError(f"unknown nonlinearity {nl!r}")
    coeffs = np.linalg.solve(sel.PtU, vals)
    if return_nodal:
        return coeffs, sel.U @ coeffs
    return coeffs
