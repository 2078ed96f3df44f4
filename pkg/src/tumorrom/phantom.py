"""Synthetic case generation: tissue maps, tensors, initial data, targets.

A phantom stands in for segmented imaging data: a rectangular slab of
grey matter with an optional white-matter band (anisotropic diffusion
and mobility along a fiber field, chemotactic sensitivity chi = 4), an
optional cerebrospinal-fluid inclusion, and a circular tumour seed at
the tissue equilibrium volume fraction.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfigError, InvalidTargetError
from .mesh import Mesh, build_structured_mesh, validate_cell_tensors
from .params import (ParameterSet, TherapySchedule, default_chemo_schedule,
                     default_initial_parameters, equilibrium_volume_fraction)

TISSUE_WM = "WM"
TISSUE_GM = "GM"
TISSUE_CSF = "CSF"
CHI_WM = 4.0
CHI_OTHER = 1.0


@dataclass
class CaseData:
    """Everything a forward solve needs: geometry, coefficients, schedule."""

    mesh: Mesh
    tissue: np.ndarray          # (Nc,) labels in {WM, GM, CSF}
    D: np.ndarray               # (Nc, dim, dim) nutrient diffusion, mm^2/day
    T: np.ndarray               # (Nc, dim, dim) preferential mobility, unit max eig
    chi: np.ndarray             # (Nc,) chemotactic sensitivity
    phi0: np.ndarray            # (Nv,) initial tumour volume fraction
    n0: np.ndarray              # (Nv,) initial nutrient, identically 1
    target: np.ndarray          # (Nv,) 0/1 indicator of target tumour extent
    T_final: float              # days
    N_steps: int
    dt: float                   # days
    therapy: TherapySchedule = field(default_factory=TherapySchedule)

    def __post_init__(self):
        nv, nc = self.mesh.num_vertices, self.mesh.num_cells
        self.tissue = np.asarray(self.tissue)
        self.chi = np.asarray(self.chi, dtype=float)
        for name in ("phi0", "n0", "target"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (nv,):
                raise InvalidConfigError(f"{name} length does not match mesh")
            if not np.all(np.isfinite(arr)):
                raise InvalidConfigError(f"{name} contains non-finite values")
            setattr(self, name, arr)
        if self.tissue.shape != (nc,) or self.chi.shape != (nc,):
            raise InvalidConfigError("per-cell fields do not match mesh")
        bad = set(np.unique(self.tissue)) - {TISSUE_WM, TISSUE_GM, TISSUE_CSF}
        if bad:
            raise InvalidConfigError(f"unknown tissue labels {sorted(bad)}")
        expected_chi = np.where(self.tissue == TISSUE_WM, CHI_WM, CHI_OTHER)
        if not np.array_equal(self.chi, expected_chi):
            raise InvalidConfigError("chi must be 4 on WM cells and 1 elsewhere")
        self.D = validate_cell_tensors(self.mesh, self.D)
        self.T = validate_cell_tensors(self.mesh, self.T)
        for name, K in (("D", self.D), ("T", self.T)):
            eigs = np.linalg.eigvalsh(K)
            if eigs.min() < -1e-10 * max(eigs.max(), 1.0):
                raise InvalidConfigError(f"tensor field {name} is not PSD")
        if np.any(self.phi0 < 0) or np.any(self.phi0 >= 1):
            raise InvalidConfigError("phi0 must satisfy 0 <= phi0 < 1")
        if not np.allclose(self.n0, 1.0):
            raise InvalidConfigError("n0 must be identically 1")
        if not np.all(np.isin(self.target, (0.0, 1.0))):
            raise InvalidTargetError("target values must be exactly 0 or 1")
        if self.N_steps < 0 or self.dt <= 0:
            raise InvalidConfigError("need N_steps >= 0 and dt > 0")
        if abs(self.N_steps * self.dt - self.T_final) > 1e-9 * max(self.T_final, 1.0):
            raise InvalidConfigError("N_steps * dt must equal T_final")

    def with_target(self, target) -> "CaseData":
        return CaseData(mesh=self.mesh, tissue=self.tissue, D=self.D, T=self.T,
                        chi=self.chi, phi0=self.phi0, n0=self.n0,
                        target=np.asarray(target, dtype=float),
                        T_final=self.T_final, N_steps=self.N_steps, dt=self.dt,
                        therapy=self.therapy)


@dataclass(frozen=True)
class PhantomConfig:
    nx: int = 50
    ny: int = 50
    extent: tuple = (60.0, 60.0)         # mm
    wm_band: tuple = (0.35, 0.65)        # x-extent of the WM band, fractions
    csf_disk: tuple = None               # (cx, cy, r) in mm, optional
    fiber_angle: float = 90.0            # degrees from x-axis, WM fibers
    fiber_jitter: float = 0.0            # rms per-cell angle jitter, degrees
    anisotropy_ratio: float = 4.0        # largest/smallest eigenvalue in WM
    d_magnitude: float = 10.0            # nutrient diffusivity scale, mm^2/day
    seed_center: tuple = (30.0, 30.0)    # mm
    seed_radius: float = 8.0             # mm
    dt: float = 0.1225                   # days
    n_steps: int = 100
    equilibrium_params: ParameterSet = field(
        default_factory=default_initial_parameters)
    therapy: TherapySchedule = field(default_factory=default_chemo_schedule)
    rng_seed: int = 0

    def __post_init__(self):
        if self.anisotropy_ratio < 1:
            raise InvalidConfigError("anisotropy ratio must be >= 1")
        if self.d_magnitude <= 0 or self.seed_radius <= 0:
            raise InvalidConfigError("d_magnitude and seed_radius must be positive")
        cx, cy = self.seed_center
        lx, ly = self.extent
        if not (0 <= cx - self.seed_radius and cx + self.seed_radius <= lx
                and 0 <= cy - self.seed_radius and cy + self.seed_radius <= ly):
            raise InvalidConfigError("tumour seed region extends outside the domain")


def _anisotropic_tensor(angles, ratio):
    """Unit-largest-eigenvalue tensors e x e + (1/ratio)(I - e x e)."""
    e = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    outer = e[:, :, None] * e[:, None, :]
    eye = np.eye(2)[None, :, :]
    return outer + (1.0 / ratio) * (eye - outer)


def generate_phantom(config: PhantomConfig) -> CaseData:
    mesh = build_structured_mesh(config.nx, config.ny, config.extent)
    centroids = mesh.vertices[mesh.cells].mean(axis=1)
    nc = mesh.num_cells
    lx, _ = config.extent

    tissue = np.full(nc, TISSUE_GM, dtype=object)
    if config.wm_band is not None:
        x0, x1 = config.wm_band
        in_band = (centroids[:, 0] >= x0 * lx) & (centroids[:, 0] <= x1 * lx)
        tissue[in_band] = TISSUE_WM
    if config.csf_disk is not None:
        cx, cy, r = config.csf_disk
        in_disk = np.hypot(centroids[:, 0] - cx, centroids[:, 1] - cy) <= r
        tissue[in_disk] = TISSUE_CSF
    tissue = tissue.astype(str)

    rng = np.random.default_rng(config.rng_seed)
    angles = np.full(nc, np.deg2rad(config.fiber_angle))
    if config.fiber_jitter:
        angles = angles + np.deg2rad(config.fiber_jitter) * rng.standard_normal(nc)

    wm = tissue == TISSUE_WM
    T = np.tile(np.eye(2), (nc, 1, 1))
    if np.any(wm):
        T[wm] = _anisotropic_tensor(angles[wm], config.anisotropy_ratio)
    # D shares the fiber structure; CSF diffuses fastest (free water).
    D = config.d_magnitude * T.copy()
    D[tissue == TISSUE_CSF] *= 3.0

    chi = np.where(wm, CHI_WM, CHI_OTHER)

    P = config.equilibrium_params
    phi_bar = equilibrium_volume_fraction(P.S_n, P.delta, P.delta_n)
    h = max(config.extent[0] / config.nx, config.extent[1] / config.ny)
    ramp_width = 2.0 * h
    dist = np.hypot(mesh.vertices[:, 0] - config.seed_center[0],
                    mesh.vertices[:, 1] - config.seed_center[1])
    phi0 = phi_bar * np.clip((config.seed_radius + ramp_width - dist) / ramp_width,
                             0.0, 1.0)

    return CaseData(mesh=mesh, tissue=tissue, D=D, T=T, chi=chi,
                    phi0=phi0, n0=np.ones(mesh.num_vertices),
                    target=np.zeros(mesh.num_vertices),
                    T_final=config.n_steps * config.dt,
                    N_steps=config.n_steps, dt=config.dt,
                    therapy=config.therapy)


def make_target(case: CaseData, P_true: ParameterSet = None,
                mask=None) -> np.ndarray:
    """Target indicator: threshold a forward run at phi_e/2, or load a mask.

    Synthetic mode runs the full-order solver at P_true and binarizes the
    final volume fraction.  Mask mode validates a supplied 0/1 field.
    """
    if (P_true is None) == (mask is None):
        raise InvalidConfigError("provide exactly one of P_true or mask")
    if mask is not None:
        mask = np.asarray(mask, dtype=float)
        if mask.shape != (case.mesh.num_vertices,):
            raise InvalidTargetError("mask length does not match mesh")
        if not np.all(np.isin(mask, (0.0, 1.0))):
            raise InvalidTargetError("mask values must be exactly 0 or 1")
        return mask
    from .fom import fom_solve
    _, final, _ = fom_solve(case, P_true, collect_snapshots=False)
    return (final.phi >= P_true.phi_e / 2.0).astype(float)
