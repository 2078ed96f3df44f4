import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tumorrom import (build_pod_array, compute_pod, deim_approx, deim_select)
from tumorrom.errors import (EmptySnapshotError, RankDeficiencyError,
                             RomSeparationError)
from tumorrom.fom import SnapshotSet
from tumorrom.mesh import build_structured_mesh


def _weights(n):
    return np.full(n, 1.0 / n)


def test_pod_known_rank():
    rng = np.random.default_rng(0)
    U = rng.standard_normal((40, 3))
    C = rng.standard_normal((3, 12))
    F = U @ C
    basis = compute_pod(F, 1.0 - 1e-13, _weights(40))
    assert basis.n_basis == 3
    assert np.all(np.diff(basis.energy) >= -1e-14)
    assert np.isclose(basis.energy[-1], 1.0)


def test_pod_orthonormal_and_reconstruction():
    rng = np.random.default_rng(1)
    F = rng.standard_normal((30, 20)) @ np.diag(2.0 ** -np.arange(20))
    w = np.abs(rng.standard_normal(30)) + 0.1
    basis = compute_pod(F, 0.999, w)
    V = basis.vectors
    G = (V * w[:, None]).T @ V
    assert np.abs(G - np.eye(basis.n_basis)).max() < 1e-10
    # projection error equals the discarded spectrum
    proj = V @ ((V * w[:, None]).T @ F)
    err2 = float(((F - proj) ** 2 * w[:, None]).sum())
    assert np.isclose(err2, basis.eigenvalues[basis.n_basis:].sum(),
                      rtol=1e-8, atol=1e-12)


def test_pod_empty_snapshots_rejected():
    with pytest.raises(EmptySnapshotError):
        compute_pod(np.zeros((10, 4)), 0.9999, _weights(10))


def test_rank_deficiency_names_sequence():
    rng = np.random.default_rng(2)
    nv, ns = 25, 8
    rich = rng.standard_normal((nv, ns))
    flat = np.outer(np.ones(nv), np.linspace(1.0, 1.1, ns))  # rank deficient
    snaps = SnapshotSet(F1=rich, F2=rich.copy(), F3=flat, G1=rich.copy(),
                        G2=rich.copy(), dt=0.1)
    with pytest.raises(RankDeficiencyError) as err:
        build_pod_array(snaps, 1.0 - 1e-13, _weights(nv))
    assert err.value.sequence == "n"


def test_padded_common_dimension(pods50):
    names = ("phi", "sigma", "n", "psi1p", "psi1pp")
    sizes = [getattr(pods50, n).num_vectors for n in names]
    assert set(sizes) == {pods50.n_pod}
    assert pods50.n_pod == max(getattr(pods50, n).n_basis for n in names)


def test_deim_nodes_distinct_and_shared(pods50):
    nodes = pods50.deim_psi1pp.nodes
    assert len(set(nodes.tolist())) == len(nodes)
    assert np.array_equal(nodes, pods50.deim_psi1p.nodes)
    assert np.isfinite(pods50.deim_psi1p.cond)


def test_deim_exact_at_nodes(pods50, case50, fom50):
    m = case50.mesh.lumped_mass
    phi = fom50[0].F1[:, 37]
    alpha = pods50.phi.vectors.T @ (m * phi)
    phi_e = default_phi_e()
    sel = pods50.deim_psi1pp
    _, nodal = deim_approx(alpha, sel, "psi1pp", pods50.phi.vectors, phi_e,
                           return_nodal=True)
    phi_nodes = pods50.phi.vectors[sel.nodes] @ alpha
    exact = 1.0 / (1.0 - phi_nodes) ** 2
    rel = np.abs(nodal[sel.nodes] - exact) / np.abs(exact)
    assert rel.max() < 1e-12


def default_phi_e():
    from tumorrom import default_initial_parameters
    return default_initial_parameters().phi_e


def test_deim_separation_guard(pods50):
    sel = pods50.deim_psi1pp
    # scale an alpha until phi exceeds 1 at some interpolation node
    alpha = np.zeros(pods50.n_pod)
    col = pods50.phi.vectors[sel.nodes, 0]
    alpha[0] = 2.0 / np.abs(col).max() * np.sign(col[np.abs(col).argmax()])
    with pytest.raises(RomSeparationError):
        deim_approx(alpha, sel, "psi1p", pods50.phi.vectors, 0.389)


def test_deim_greedy_hand_case():
    # orthonormal indicator-like vectors on a 5-node toy
    U = np.zeros((5, 2))
    U[3, 0] = 1.0
    U[[3, 1], 1] = [0.6, 0.8]
    basis_vectors = U
    from tumorrom.pod import PodBasis
    basis = PodBasis(vectors=basis_vectors, eigenvalues=np.ones(2),
                     energy=np.array([0.5, 1.0]), n_basis=2)
    sel = deim_select(basis)
    assert sel.nodes.tolist() == [3, 1]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_pod_orthonormal_property(seed):
    rng = np.random.default_rng(seed)
    mesh = build_structured_mesh(4, 4)
    F = rng.standard_normal((mesh.num_vertices, 6))
    if np.linalg.norm(F) == 0.0:
        return
    w = mesh.lumped_mass
    basis = compute_pod(F, 0.99, w)
    V = basis.vectors
    G = (V * w[:, None]).T @ V
    assert np.abs(G - np.eye(V.shape[1])).max() < 1e-9
