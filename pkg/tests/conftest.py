"""Shared fixtures: one default forward run feeds most of the suite."""
import numpy as np
import pytest

from tumorrom import (PhantomConfig, assemble_rom_tensors, build_pod_array,
                      default_initial_parameters, fom_solve, generate_phantom)
from tumorrom.mesh import build_structured_mesh
from tumorrom.params import TherapySchedule
from tumorrom.phantom import CaseData
from tumorrom.pod import DeimSelection, PodArray, PodBasis


@pytest.fixture(scope="session")
def P0():
    return default_initial_parameters()


@pytest.fixture(scope="session")
def case50():
    return generate_phantom(PhantomConfig())


@pytest.fixture(scope="session")
def fom50(case50, P0):
    """(snapshots, final state, wall seconds) of the default forward run."""
    return fom_solve(case50, P0)


@pytest.fixture(scope="session")
def pods50(case50, fom50):
    return build_pod_array(fom50[0], 0.9999, case50.mesh.lumped_mass)


@pytest.fixture(scope="session")
def tensors50(case50, pods50):
    return assemble_rom_tensors(pods50, case50)


@pytest.fixture(scope="session")
def rich50(case50, fom50):
    """High-information-content basis for derivative checks."""
    pods = build_pod_array(fom50[0], 0.99999999, case50.mesh.lumped_mass)
    return pods, assemble_rom_tensors(pods, case50)


def small_case(nx=4, ny=4, extent=(10.0, 10.0), n_steps=5, dt=0.1225,
               phi0=None):
    """Uniform grey-matter slab with smooth strictly interior initial data."""
    mesh = build_structured_mesh(nx, ny, extent)
    nc = mesh.num_cells
    nv = mesh.num_vertices
    if phi0 is None:
        x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
        r2 = (x - extent[0] / 2) ** 2 + (y - extent[1] / 2) ** 2
        phi0 = 0.3 + 0.25 * np.exp(-r2 / (0.3 * extent[0]) ** 2)
    return CaseData(
        mesh=mesh, tissue=np.full(nc, "GM"),
        D=10.0 * np.tile(np.eye(2), (nc, 1, 1)),
        T=np.tile(np.eye(2), (nc, 1, 1)),
        chi=np.ones(nc), phi0=phi0, n0=np.ones(nv), target=np.zeros(nv),
        T_final=n_steps * dt, N_steps=n_steps, dt=dt,
        therapy=TherapySchedule())


def full_rank_pods(mesh, seed=7):
    """One dense orthonormal basis (in the lumped inner product) reused for
    all five sequences, with every vertex an interpolation node.  On such a
    basis the Galerkin projection is exact and the reduced model must
    reproduce the full one."""
    nv = mesh.num_vertices
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((nv, nv))
    w = mesh.lumped_mass
    for j in range(nv):
        for i in range(j):
            V[:, j] -= np.dot(w * V[:, i], V[:, j]) * V[:, i]
        V[:, j] /= np.sqrt(np.dot(w * V[:, j], V[:, j]))
    lam = np.ones(nv)
    energy = np.cumsum(lam) / nv
    basis = PodBasis(vectors=V, eigenvalues=lam, energy=energy, n_basis=nv)
    nodes = np.arange(nv, dtype=np.int64)
    sel = DeimSelection(U=V, nodes=nodes, PtU=V[nodes])
    return PodArray(phi=basis, sigma=basis, n=basis, psi1p=basis,
                    psi1pp=basis, deim_psi1p=sel, deim_psi1pp=sel, n_pod=nv)


@pytest.fixture(scope="session")
def tiny_exact(P0):
    """4x4 slab + full-rank basis: the reduced model is exact here."""
    case = small_case()
    pods = full_rank_pods(case.mesh)
    tensors = assemble_rom_tensors(pods, case)
    return case, pods, tensors
