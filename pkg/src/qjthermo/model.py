"""Two-level molecule, thermal occupations and the partial-swap coupling.

The joint molecule+bath-mode space is ordered as

    index 0: |g,0>    index 1: |g,1>    index 2: |e,0>    index 3: |e,1>

where the second label is the photon number of the bath mode. The coupling
acts as the identity on |g,0> and |e,1> and rotates the single-excitation
pair {|g,1>, |e,0>} with the 2x2 block [[mu, -conj(nu)], [nu, conj(mu)]].

Very cold, large-gap molecules (785 nm at 4 K gives gap/kT ~ 4582) push the
excited occupation far below the smallest double. Linear probabilities then
underflow to 0 by design; use the ``log_*`` accessors for anything that has
to stay exact in that regime.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constants import HC, kT
from .errors import DomainError

_UNITARITY_TOL = 1e-12
_NORM_TOL = 1e-10

GROUND_0, GROUND_1, EXCITED_0, EXCITED_1 = range(4)
BASIS_LABELS = ("g0", "g1", "e0", "e1")


@dataclass(frozen=True)
class TwoLevelMolecule:
    """Ground and excited electronic levels in eV."""

    e_ground: float
    e_excited: float

    def __post_init__(self):
        if not (math.isfinite(self.e_ground) and math.isfinite(self.e_excited)):
            raise DomainError("level energies must be finite")
        # zero gap is allowed for symmetry tests; estimators that divide by it reject it
        if self.e_excited < self.e_ground:
            raise DomainError(
                f"excited level {self.e_excited} eV lies below ground level {self.e_ground} eV"
            )

    @property
    def delta_e(self) -> float:
        return self.e_excited - self.e_ground

    @classmethod
    def from_gap(cls, gap_ev: float, e_ground: float = 0.0) -> "TwoLevelMolecule":
        return cls(e_ground, e_ground + gap_ev)

    @classmethod
    def from_wavelength(cls, wavelength_nm: float, e_ground: float = 0.0) -> "TwoLevelMolecule":
        return cls.from_gap(photon_energy(wavelength_nm), e_ground)


@dataclass(frozen=True)
class ThermalOccupation:
    """Initial level populations.

    ``log_p_ground``/``log_p_excited`` default to the logs of the linear values
    but can be supplied separately when the linear values underflow.
    """

    p_ground: float
    p_excited: float
    log_p_ground: float = field(default=None, compare=False)
    log_p_excited: float = field(default=None, compare=False)

    def __post_init__(self):
        for p in (self.p_ground, self.p_excited):
            if not (0.0 <= p <= 1.0):
                raise DomainError(f"occupation {p} outside [0, 1]")
        if abs(self.p_ground + self.p_excited - 1.0) > 1e-12:
            raise DomainError("occupations must sum to 1")
        if self.log_p_ground is None:
            object.__setattr__(self, "log_p_ground", _safe_log(self.p_ground))
        if self.log_p_excited is None:
            object.__setattr__(self, "log_p_excited", _safe_log(self.p_excited))

    @classmethod
    def from_excited(cls, p_excited: float) -> "ThermalOccupation":
        return cls(1.0 - p_excited, p_excited)

    def swapped(self) -> "ThermalOccupation":
        return ThermalOccupation(
            self.p_excited, self.p_ground, self.log_p_excited, self.log_p_ground
        )


def _safe_log(p):
    return math.log(p) if p > 0 else -math.inf


@dataclass(frozen=True)
class PartialSwap:
    """Molecule-bath coupling amplitudes with |mu|^2 + |nu|^2 = 1."""

    mu: complex
    nu: complex

    def __post_init__(self):
        object.__setattr__(self, "mu", complex(self.mu))
        object.__setattr__(self, "nu", complex(self.nu))
        norm = abs(self.mu) ** 2 + abs(self.nu) ** 2
        if abs(norm - 1.0) > _UNITARITY_TOL:
            raise DomainError(f"|mu|^2 + |nu|^2 = {norm!r}, expected 1")

    @property
    def survival(self) -> float:
        """Per-round probability that an excited molecule does not emit, |mu|^2."""
        return min(1.0, abs(self.mu) ** 2)

    @property
    def transfer(self) -> float:
        """Per-round excitation transfer probability, |nu|^2."""
        return min(1.0, abs(self.nu) ** 2)

    def matrix(self) -> np.ndarray:
        mu, nu = self.mu, self.nu
        return np.array(
            [
                [1, 0, 0, 0],
                [0, mu, -nu.conjugate(), 0],
                [0, nu, mu.conjugate(), 0],
                [0, 0, 0, 1],
            ],
            dtype=complex,
        )


def swap_from_survival(s: float) -> PartialSwap:
    """Real non-negative coupling with survival probability ``s`` per round."""
    if not (0.0 <= s <= 1.0):
        raise DomainError(f"survival probability {s} outside [0, 1]")
    return PartialSwap(math.sqrt(s), math.sqrt(1.0 - s))


def swap_from_lifetime(tau_ns: float, dt_ns: float) -> PartialSwap:
    """Coupling whose n-round survival reproduces exp(-n*dt/tau).

    mu = exp(-dt / (2 tau)), nu = sqrt(1 - mu^2), both real and non-negative.
    """
    if not tau_ns > 0:
        raise DomainError(f"lifetime must be positive, got {tau_ns}")
    if not dt_ns >= 0:
        raise DomainError(f"time step must be non-negative, got {dt_ns}")
    x = dt_ns / tau_ns
    mu = math.exp(-0.5 * x)
    nu = math.sqrt(-math.expm1(-x))
    return PartialSwap(mu, nu)


@dataclass(frozen=True)
class JointState:
    """Pure state of molecule plus one bath mode, amplitudes over (g0, g1, e0, e1)."""

    amplitudes: tuple

    def __post_init__(self):
        amps = tuple(complex(a) for a in self.amplitudes)
        if len(amps) != 4:
            raise DomainError("a joint state has exactly 4 amplitudes")
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def basis(cls, index: int) -> "JointState":
        amps = [0j] * 4
        amps[index] = 1.0
        return cls(tuple(amps))

    @classmethod
    def from_array(cls, arr) -> "JointState":
        return cls(tuple(np.asarray(arr, dtype=complex)))

    def as_array(self) -> np.ndarray:
        return np.array(self.amplitudes, dtype=complex)

    @property
    def norm_sq(self) -> float:
        return float(np.sum(np.abs(self.as_array()) ** 2))

    @property
    def probabilities(self) -> np.ndarray:
        return np.abs(self.as_array()) ** 2

    def is_normalized(self, tol: float = _NORM_TOL) -> bool:
        return abs(self.norm_sq - 1.0) <= tol


def apply_partial_swap(state: JointState, swap: PartialSwap) -> JointState:
    if not state.is_normalized():
        raise DomainError(f"state not normalized (norm^2 = {state.norm_sq!r})")
    return JointState.from_array(swap.matrix() @ state.as_array())


@dataclass(frozen=True)
class EnergyShift:
    """Common shift ``delta`` of both levels plus extra ``epsilon`` on the excited one (eV)."""

    delta: float = 0.0
    epsilon: float = 0.0

    def inverse(self) -> "EnergyShift":
        return EnergyShift(-self.delta, -self.epsilon)


def shift_levels(molecule: TwoLevelMolecule, shift: EnergyShift) -> TwoLevelMolecule:
    new_gap = molecule.delta_e + shift.epsilon
    if not new_gap > 0:
        raise DomainError(
            f"shift closes or inverts the gap ({molecule.delta_e} + {shift.epsilon} eV)"
        )
    return TwoLevelMolecule(
        molecule.e_ground + shift.delta,
        molecule.e_excited + shift.delta + shift.epsilon,
    )


@dataclass(frozen=True)
class TimeGrid:
    dt_ns: float
    n_steps: int

    def __post_init__(self):
        if not self.dt_ns > 0:
            raise DomainError("dt_ns must be positive")
        if self.n_steps < 0:
            raise DomainError("n_steps must be non-negative")

    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt_ns


def reduced_gap(gap_ev: float, temperature_k: float) -> float:
    """gap / (k_B T)."""
    if not temperature_k > 0:
        raise DomainError(f"temperature must be positive, got {temperature_k}")
    return gap_ev / kT(temperature_k)


def thermal_state(molecule: TwoLevelMolecule, temperature_k: float) -> ThermalOccupation:
    """Gibbs populations at ``temperature_k``; log values stay finite when linear ones underflow."""
    x = reduced_gap(molecule.delta_e, temperature_k)
    # log p_g = -log(1 + e^-x), log p_e = -x - log(1 + e^-x) = -log(1 + e^x)
    log_pg = -float(np.logaddexp(0.0, -x))
    log_pe = -float(np.logaddexp(0.0, x))
    pe = math.exp(log_pe)
    pg = 1.0 - pe if pe < 0.5 else math.exp(log_pg)
    return ThermalOccupation(pg, pe, log_pg, log_pe)


def photon_energy(wavelength_nm: float) -> float:
    """Photon energy in eV for a vacuum wavelength in nm."""
    if not wavelength_nm > 0:
        raise DomainError(f"wavelength must be positive, got {wavelength_nm}")
    return HC / wavelength_nm
