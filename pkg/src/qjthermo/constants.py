"""Physical constants in spectroscopic units.

Energies are in eV, lengths in nm, temperatures in K and times in ns.

    boltzmann_ev_per_k = 8.617333262e-5 eV/K    (CODATA 2018, exact)
    hc_ev_nm           = 1239.841984 eV nm      (CODATA 2018, h*c/e)
"""

from dataclasses import dataclass


@dataclass(frozen=True)
class PhysicalConstants:
    boltzmann_ev_per_k: float = 8.617333262e-5
    hc_ev_nm: float = 1239.841984

    def __post_init__(self):
        if not (self.boltzmann_ev_per_k > 0 and self.hc_ev_nm > 0):
            raise ValueError("physical constants must be strictly positive")


CONSTANTS = PhysicalConstants()

K_B = CONSTANTS.boltzmann_ev_per_k
HC = CONSTANTS.hc_ev_nm


def kT(temperature_k):
    """Thermal energy k_B*T in eV."""
    return K_B * temperature_k
