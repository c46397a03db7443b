"""Quantum-jump thermodynamics of single-molecule fluorescence.

Simulates two-level emitter trajectories under a partial-swap bath coupling,
builds heat/work statistics, checks the Jarzynski functional round by round
and infers absolute level shifts from free-energy differences. A TCSPC layer
synthesizes, ingests and fits photon arrival histograms.
"""

from .errors import DomainError, FitError, DegenerateModelError, HistogramParseError
from .constants import CONSTANTS, PhysicalConstants
from .model import (
    TwoLevelMolecule,
    ThermalOccupation,
    PartialSwap,
    JointState,
    EnergyShift,
    TimeGrid,
    thermal_state,
    photon_energy,
    swap_from_lifetime,
    swap_from_survival,
    apply_partial_swap,
    shift_levels,
)

__version__ = "0.1.0"

__all__ = [
    "DomainError",
    "FitError",
    "DegenerateModelError",
    "HistogramParseError",
    "CONSTANTS",
    "PhysicalConstants",
    "TwoLevelMolecule",
    "ThermalOccupation",
    "PartialSwap",
    "JointState",
    "EnergyShift",
    "TimeGrid",
    "thermal_state",
    "photon_energy",
    "swap_from_lifetime",
    "swap_from_survival",
    "apply_partial_swap",
    "shift_levels",
]
