import numpy as np
import pytest

from tumorrom import PhantomConfig, generate_phantom, make_target
from tumorrom.errors import InvalidConfigError, InvalidTargetError
from tumorrom.phantom import CHI_WM, TISSUE_CSF, TISSUE_GM, TISSUE_WM


@pytest.fixture(scope="module")
def case():
    return generate_phantom(PhantomConfig(
        nx=12, ny=12, csf_disk=(10.0, 50.0, 6.0), fiber_jitter=5.0,
        rng_seed=3, n_steps=4))


def test_tissue_and_chi(case):
    labels = set(np.unique(case.tissue))
    assert labels <= {TISSUE_WM, TISSUE_GM, TISSUE_CSF}
    assert TISSUE_WM in labels and TISSUE_CSF in labels
    wm = case.tissue == TISSUE_WM
    assert np.all(case.chi[wm] == CHI_WM)
    assert np.all(case.chi[~wm] == 1.0)


def test_initial_fields(case):
    assert case.phi0.min() >= 0.0 and case.phi0.max() < 1.0
    assert case.phi0.max() > 0.5          # seed present
    assert np.all(case.n0 == 1.0)
    assert np.all(case.target == 0.0)
    assert np.isclose(case.N_steps * case.dt, case.T_final)


def test_tensors_psd(case):
    for K in (case.D, case.T):
        eigs = np.linalg.eigvalsh(K)
        assert eigs.min() >= -1e-12
    # unit largest eigenvalue of the mobility tensor
    assert np.allclose(np.linalg.eigvalsh(case.T).max(axis=1), 1.0)


def test_seed_determinism():
    cfg = PhantomConfig(nx=8, ny=8, fiber_jitter=10.0, rng_seed=5, n_steps=2)
    a = generate_phantom(cfg)
    b = generate_phantom(cfg)
    assert np.array_equal(a.D, b.D)
    assert np.array_equal(a.phi0, b.phi0)
    c = generate_phantom(PhantomConfig(nx=8, ny=8, fiber_jitter=10.0,
                                       rng_seed=6, n_steps=2))
    assert not np.array_equal(a.D, c.D)


def test_seed_outside_domain_rejected():
    with pytest.raises(InvalidConfigError):
        PhantomConfig(seed_center=(2.0, 30.0), seed_radius=8.0)


def test_make_target_exclusive(case):
    with pytest.raises(InvalidConfigError):
        make_target(case)
    with pytest.raises(InvalidTargetError):
        make_target(case, mask=np.full(case.mesh.num_vertices, 0.5))
    mask = np.zeros(case.mesh.num_vertices)
    mask[:4] = 1.0
    assert np.array_equal(make_target(case, mask=mask), mask)


def test_case_validation():
    case = generate_phantom(PhantomConfig(nx=6, ny=6, n_steps=2))
    with pytest.raises(InvalidConfigError):
        case.with_target(np.zeros(3))
    with pytest.raises(InvalidTargetError):
        case.with_target(np.full(case.mesh.num_vertices, 2.0))
