"""
Angular-momentum matrices and the crystal-field Stevens operators.

All matrices are written in the |j, m> basis ordered m = +j, j-1, ..., -j.
Electro-nuclear operators are Kronecker products with the electronic index
varying slowest, so the full index of |m_J, m_I> is
``e * (2i+1) + n`` with ``e = j - m_J`` and ``n = i - m_I``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from fractions import Fraction

import numpy as np

SUPPORTED_STEVENS = ((2, 0), (4, 0), (6, 0), (4, 4))


@dataclass(frozen=True)
class AngularMomentumBasis:
    """Basis of a single angular-momentum multiplet of quantum number ``j``."""

    j: float

    def __post_init__(self):
        twice = Fraction(self.j).limit_denominator(2) * 2
        if twice.denominator != 1 or twice < 0 or abs(float(twice) - 2 * self.j) > 1e-12:
            raise ValueError(f"j must be a non-negative integer or half-integer, got {self.j}")

    @property
    def dimension(self) -> int:
        return int(round(2 * self.j)) + 1

    @property
    def m_values(self) -> np.ndarray:
        """Projections m in basis order, from +j down to -j."""
        return self.j - np.arange(self.dimension)


@lru_cache(maxsize=32)
def _ladder(j: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    basis = AngularMomentumBasis(j)
    m = basis.m_values
    # <m+1|J+|m> sits one row above the diagonal in descending-m order
    plus = np.diag(np.sqrt(j * (j + 1) - m[1:] * (m[1:] + 1)), k=1).astype(complex)
    jz = np.diag(m).astype(complex)
    for a in (plus, jz):
        a.setflags(write=False)
    return plus, plus.conj().T, jz


def ladder_matrices(basis: AngularMomentumBasis) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (J+, J-, Jz) for ``basis``."""
    plus, minus, jz = _ladder(float(basis.j))
    return plus.copy(), minus.copy(), jz.copy()


def cartesian_matrices(basis: AngularMomentumBasis) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (Jx, Jy, Jz)."""
    plus, minus, jz = ladder_matrices(basis)
    return (plus + minus) / 2, (plus - minus) / 2j, jz


def stevens_operator(basis: AngularMomentumBasis, k: int, q: int) -> np.ndarray:
    """Extended Stevens operator O_k^q for the supported (k, q) pairs.

    Uses the Abragam-Bleaney polynomial forms with X = j(j+1)::

        O20 = 3Jz^2 - X
        O40 = 35Jz^4 - (30X - 25)Jz^2 + 3X^2 - 6X
        O60 = 231Jz^6 - (315X - 735)Jz^4 + (105X^2 - 525X + 294)Jz^2
              - 5X^3 + 40X^2 - 60X
        O44 = (J+^4 + J-^4) / 2
    """
    if (k, q) not in SUPPORTED_STEVENS:
        raise ValueError(
            f"unsupported Stevens operator (k={k}, q={q}); supported pairs are {SUPPORTED_STEVENS}"
        )
    j = float(basis.j)
    x = j * (j + 1)
    m = basis.m_values
    if q == 0:
        if k == 2:
            diag = 3 * m**2 - x
        elif k == 4:
            diag = 35 * m**4 - (30 * x - 25) * m**2 + 3 * x**2 - 6 * x
        else:
            diag = (
                231 * m**6
                - (315 * x - 735) * m**4
                + (105 * x**2 - 525 * x + 294) * m**2
                - 5 * x**3
                + 40 * x**2
                - 60 * x
            )
        return np.diag(diag).astype(complex)
    plus, minus, _ = _ladder(j)
    p4 = np.linalg.matrix_power(plus, 4)
    return 0.5 * (p4 + p4.conj().T)


def identity(dimension: int) -> np.ndarray:
    return np.eye(dimension, dtype=complex)


def tensor_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product a (x) b, first factor's index varying slowest."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or b.ndim != 2 or b.shape[0] != b.shape[1]:
        raise ValueError("tensor_product expects two square matrices")
    return np.kron(a, b)


def is_hermitian(a: np.ndarray, rtol: float = 1e-12) -> bool:
    scale = max(np.abs(a).max(initial=0.0), 1.0)
    return bool(np.abs(a - a.conj().T).max(initial=0.0) <= rtol * scale)
