"""Model parameters, biological bounds, and therapy schedules.

The nine estimated parameters, in fixed order:

    L       inverse mobility prefactor     mm^2/(Pa day)
    nu      proliferation rate             1/day
    k_n     chemotaxis coefficient         mm^2/day
    S_n     nutrient supply rate           1/day
    delta_n nutrient consumption rate      1/day
    gamma2  interface energy (gamma^2)     Pa mm^2
    E       cell stiffness                 Pa
    delta   hypoxia threshold              dimensionless
    c_e     1 - phi_e                      dimensionless
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateEquilibriumError, InvalidConfigError

PARAM_NAMES = ("L", "nu", "k_n", "S_n", "delta_n", "gamma2", "E", "delta", "c_e")
NUM_PARAMS = 9


@dataclass(frozen=True)
class ParameterSet:
    L: float
    nu: float
    k_n: float
    S_n: float
    delta_n: float
    gamma2: float
    E: float
    delta: float
    c_e: float

    def __post_init__(self):
        for name in PARAM_NAMES:
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise InvalidConfigError(
                    f"parameter {name} must be finite and positive, got {v}")

    @property
    def phi_e(self) -> float:
        return 1.0 - self.c_e

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES])

    @classmethod
    def from_array(cls, arr) -> "ParameterSet":
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (NUM_PARAMS,):
            raise InvalidConfigError("parameter array must have 9 entries")
        return cls(**dict(zip(PARAM_NAMES, arr)))

    def replace(self, **kw) -> "ParameterSet":
        d = {n: getattr(self, n) for n in PARAM_NAMES}
        d.update(kw)
        return ParameterSet(**d)

    def to_dict(self) -> dict:
        return {n: getattr(self, n) for n in PARAM_NAMES}


@dataclass(frozen=True)
class ParameterBox:
    lower: ParameterSet
    upper: ParameterSet
    expected: ParameterSet

    def __post_init__(self):
        lo, up, ex = (p.to_array() for p in (self.lower, self.upper, self.expected))
        if np.any(lo > up):
            raise InvalidConfigError("parameter box has lower > upper")
        if np.any(ex < lo) or np.any(ex > up):
            raise InvalidConfigError("expected parameters outside the box")

    def clip(self, arr) -> np.ndarray:
        return np.clip(np.asarray(arr, dtype=float),
                       self.lower.to_array(), self.upper.to_array())

    def contains(self, P: ParameterSet, rtol: float = 1e-12) -> bool:
        a = P.to_array()
        lo, up = self.lower.to_array(), self.upper.to_array()
        return bool(np.all(a >= lo * (1 - rtol) - 1e-300)
                    and np.all(a <= up * (1 + rtol)))


def default_initial_parameters() -> ParameterSet:
    """Manually tuned initial guess P_0."""
    return ParameterSet(L=0.0002, nu=0.08, k_n=2.0, S_n=1.0e4, delta_n=8640.0,
                        gamma2=0.1225, E=694.0, delta=0.3, c_e=0.611)


def default_expected_parameters() -> ParameterSet:
    """Regularization center P_exp (differs from P_0 in L and nu)."""
    return default_initial_parameters().replace(L=1.0 / 3991.06, nu=0.06)


def default_parameter_box() -> ParameterBox:
    lower = ParameterSet(L=1.0 / 5032.2, nu=0.012, k_n=0.007, S_n=1.0e3,
                         delta_n=1.0e3, gamma2=0.0841, E=106.66,
                         delta=0.1, c_e=0.2)
    upper = ParameterSet(L=1.0 / 1377.86, nu=0.5, k_n=90.72, S_n=1.0e5,
                         delta_n=1.0e5, gamma2=0.6084, E=1533.3,
                         delta=0.33, c_e=0.611)
    return ParameterBox(lower=lower, upper=upper,
                        expected=default_expected_parameters())


# Therapy constants: LQ radiotherapy and the three chemotherapy rates (1/day).
RADIO_ALPHA = 0.027      # 1/Gy
RADIO_BETA = 0.0027      # 1/Gy^2
RADIO_FRACTIONS_PER_DAY = 1.0
RADIO_DOSE_GY = 2.0
K_C1 = 0.00735
K_C2 = 0.0147
K_C3 = 0.0196


def radiotherapy_rate(alpha, beta, m, d) -> float:
    """Effective radiotherapy decay rate R_eff = alpha*m*d + beta*m*d^2."""
    if min(alpha, beta, m, d) < 0:
        raise InvalidConfigError("radiotherapy inputs must be nonnegative")
    return alpha * m * d + beta * m * d ** 2


def equilibrium_volume_fraction(S_n, delta, delta_n) -> float:
    """Homogeneous equilibrium phi_bar = S_n(1-delta)/(S_n + delta(delta_n - S_n)).

    The pair (phi_bar, n = delta) makes both reaction terms vanish when
    no therapy is applied.
    """
    den = S_n + delta * (delta_n - S_n)
    if den <= 0:
        raise DegenerateEquilibriumError(
            f"equilibrium denominator {den} is not positive")
    return S_n * (1.0 - delta) / den


@dataclass(frozen=True)
class TherapySchedule:
    """Piecewise-constant decay rate k_T(t) = k_R(t) + k_C(t).

    radio_windows: list of (t_start, t_end) day intervals at rate R_eff.
    chemo_windows: list of (t_start, t_end, rate) triples.
    Windows are closed intervals; overlapping radio and chemo rates add.
    """
    radio_windows: tuple = ()
    R_eff: float = 0.0
    chemo_windows: tuple = ()

    def __post_init__(self):
        if self.R_eff < 0:
            raise InvalidConfigError("R_eff must be nonnegative")
        object.__setattr__(self, "radio_windows",
                           tuple((float(a), float(b)) for a, b in self.radio_windows))
        object.__setattr__(self, "chemo_windows",
                           tuple((float(a), float(b), float(r))
                                 for a, b, r in self.chemo_windows))
        for a, b in self.radio_windows:
            if b < a:
                raise InvalidConfigError("radio window with negative length")
        for a, b, r in self.chemo_windows:
            if b < a or r < 0:
                raise InvalidConfigError("invalid chemo window")
        _check_disjoint([w[:2] for w in self.radio_windows], "radio")
        _check_disjoint([w[:2] for w in self.chemo_windows], "chemo")

    def rate(self, t: float) -> float:
        k = 0.0
        for a, b in self.radio_windows:
            if a <= t <= b:
                k += self.R_eff
                break
        for a, b, r in self.chemo_windows:
            if a <= t <= b:
                k += r
                break
        return k


def _check_disjoint(windows, label):
    ws = sorted(windows)
    for (a0, b0), (a1, b1) in zip(ws, ws[1:]):
        if a1 < b0:
            raise InvalidConfigError(f"overlapping {label} windows")


def therapy_rate(t: float, sched: TherapySchedule) -> float:
    """Decay rate k_T at time t (days)."""
    if t < 0:
        raise InvalidConfigError("t must be nonnegative")
    return sched.rate(t)


def default_chemo_schedule() -> TherapySchedule:
    """Two chemotherapy cycles at rate k_C3: days [0, 8] and [33, 38]."""
    return TherapySchedule(chemo_windows=((0.0, 8.0, K_C3), (33.0, 38.0, K_C3)))
