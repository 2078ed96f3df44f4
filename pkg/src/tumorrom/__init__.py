"""Tumour-growth parameter estimation with POD/DEIM reduced-order models."""

from .errors import TumorRomError
from .mesh import (Mesh, assemble_stiffness, assemble_weighted_stiffness,
                   build_structured_mesh, p1_interpolate)
from .params import (ParameterBox, ParameterSet, TherapySchedule,
                     default_chemo_schedule, default_initial_parameters,
                     default_parameter_box, equilibrium_volume_fraction,
                     radiotherapy_rate, therapy_rate)
from .phantom import CaseData, PhantomConfig, generate_phantom, make_target
from .caseio import load_case, save_case
from .fom import (FomState, SnapshotSet, fom_solve, potential_derivatives,
                  recover_sigma, solve_ch_step, solve_nutrient_step)
from .pod import (DeimSelection, PodArray, PodBasis, build_pod_array,
                  compute_pod, deim_approx, deim_select)
from .rom import (RomTensors, RomTrajectory, SensitivityBlock,
                  assemble_rom_tensors, rom_linearized_solve,
                  rom_newton_solve, rom_nutrient_init, rom_sensitivities,
                  rom_solve)
from .optimize import (ObjectiveConfig, OptimizationTrace, jaccard_index,
                       objective, project_params, pwg_step,
                       regularized_heaviside, rom_inner_loop,
                       run_optimization, weighted_gradient)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
