"""Exception hierarchy shared across the package.

Error families map onto CLI exit codes: configuration problems (exit 2),
solver failures (exit 3) and failed check thresholds (exit 4).
"""


class TumorRomError(Exception):
    """Base class for all package errors."""


class InvalidConfigError(TumorRomError):
    """Bad user-supplied configuration (geometry, schedule, schema...)."""


class DimensionError(TumorRomError):
    """Fields or operators defined on incompatible meshes/sizes."""


class InvalidTensorError(TumorRomError):
    """A per-cell tensor violates symmetry/PSD requirements."""


class DegenerateEquilibriumError(TumorRomError):
    """Equilibrium volume fraction has a non-positive denominator."""


class InvalidTargetError(TumorRomError):
    """Target indicator field contains values outside {0, 1}."""


class SolverError(TumorRomError):
    """Base class for numerical solver failures."""


class StepFailureError(SolverError):
    """A full-order time step did not converge."""

    def __init__(self, msg, step=None):
        super().__init__(msg if step is None else f"step {step}: {msg}")
        self.step = step


class SeparationViolationError(SolverError):
    """phi reached the singular value 1 at a full-order node."""


class EmptySnapshotError(SolverError):
    """POD requested on an all-zero snapshot sequence."""


class RankDeficiencyError(SolverError):
    """Snapshot correlation rank too small to pad a POD basis."""

    def __init__(self, msg, sequence=None):
        super().__init__(msg)
        self.sequence = sequence


class DeimSelectionError(SolverError):
    """Singular interpolation matrix during greedy DEIM selection."""


class RomSeparationError(SolverError):
    """Reconstructed phi reached 1 at a DEIM interpolation node."""


class RomStepError(SolverError):
    """A reduced-order linear solve failed."""


class NewtonDivergenceError(SolverError):
    """ROM Newton hit the iteration cap without converging."""


class SensitivityFailureError(SolverError):
    """A linearised sensitivity solve failed."""


class NormalizationError(TumorRomError):
    """Objective target has zero lumped norm."""
