import numpy as np
import pytest

from tumorrom import PhantomConfig, generate_phantom, load_case, save_case
from tumorrom.errors import TumorRomError


def test_round_trip(tmp_path):
    case = generate_phantom(PhantomConfig(
        nx=7, ny=5, csf_disk=(12.0, 48.0, 5.0), fiber_jitter=3.0,
        rng_seed=11, n_steps=3))
    case = case.with_target((case.phi0 > 0.3).astype(float))
    save_case(case, tmp_path / "case")
    back = load_case(tmp_path / "case")
    assert np.array_equal(back.mesh.vertices, case.mesh.vertices)
    assert np.array_equal(back.mesh.cells, case.mesh.cells)
    assert np.array_equal(back.tissue, case.tissue)
    for name in ("D", "T", "chi", "phi0", "n0", "target"):
        assert np.array_equal(getattr(back, name), getattr(case, name)), name
    assert back.dt == case.dt and back.N_steps == case.N_steps
    assert back.T_final == case.T_final
    assert back.therapy == case.therapy


def test_load_missing_path(tmp_path):
    with pytest.raises((TumorRomError, OSError)):
        load_case(tmp_path / "nope")
