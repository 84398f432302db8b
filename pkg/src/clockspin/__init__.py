"""Spin clock transitions coupled to microwave transmission lines and cavities."""

from .constants import CONSTANTS, PhysicalConstants
from .hamiltonian import (
    Anticrossing,
    EigenSolution,
    FieldVector,
    LevelDiagram,
    SpinSystem,
    build_hamiltonian,
    diagonalize,
    find_anticrossings,
    solve,
    sweep,
    tunneling_gap,
)

__version__ = "0.1.0"

__all__ = [
    "CONSTANTS",
    "PhysicalConstants",
    "Anticrossing",
    "EigenSolution",
    "FieldVector",
    "LevelDiagram",
    "SpinSystem",
    "build_hamiltonian",
    "diagonalize",
    "find_anticrossings",
    "solve",
    "sweep",
    "tunneling_gap",
]
