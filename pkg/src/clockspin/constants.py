"""Unit conversions. Energies are carried as frequencies in GHz throughout."""

from dataclasses import dataclass


@dataclass(frozen=True)
class PhysicalConstants:
    cm1_to_GHz: float = 29.9792458
    bohr_magneton_over_h: float = 13.99624  # GHz/T
    boltzmann_over_h: float = 20.83661912  # GHz/K


CONSTANTS = PhysicalConstants()


def kT_GHz(temperature: float) -> float:
    """Thermal energy k_B T / h in GHz."""
    return CONSTANTS.boltzmann_over_h * temperature
