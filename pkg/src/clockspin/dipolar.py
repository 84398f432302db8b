"""Static dipolar bias fields: Gaussian model and lattice Monte Carlo."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import constants as sc

from .constants import CONSTANTS

# mu0/(4 pi) * muB expressed in T nm^3
_DIPOLE_T_NM3 = sc.mu_0 / (4 * sc.pi) * sc.physical_constants["Bohr magneton"][0] * 1e27

_CHUNK = 256


@dataclass(frozen=True)
class DipolarLattice:
    """Crystal lattice of identical Ising moments aligned with the anisotropy axis.

    cell: three lattice vectors (nm), as rows.
    sites: fractional coordinates of the magnetic sites in the cell.
    moment_muB: moment magnitude, g_J |m_J| Bohr magnetons.
    cutoff_nm: radius of the summation sphere around the probe site.
    """

    cell: tuple
    sites: tuple = ((0.0, 0.0, 0.0),)
    moment_muB: float = 5.0
    cutoff_nm: float = 5.0

    def neighbours(self) -> np.ndarray:
        """Cartesian positions (nm) of all sites within the cutoff, probe excluded."""
        cell = np.asarray(self.cell, dtype=float)
        sites = np.asarray(self.sites, dtype=float).reshape(-1, 3)
        volume = abs(np.linalg.det(cell))
        if volume == 0:
            raise ValueError("lattice cell is degenerate")
        heights = [
            volume / np.linalg.norm(np.cross(cell[(k + 1) % 3], cell[(k + 2) % 3]))
            for k in range(3)
        ]
        n = [int(math.ceil(self.cutoff_nm / h)) + 1 for h in heights]
        grid = np.stack(
            np.meshgrid(*(np.arange(-m, m + 1) for m in n), indexing="ij"), axis=-1
        ).reshape(-1, 3)
        frac = (grid[:, None, :] + sites[None, :, :]).reshape(-1, 3)
        pos = frac @ cell
        # probe sits on the first site of the home cell
        pos -= sites[0] @ cell
        r = np.linalg.norm(pos, axis=1)
        keep = (r > 1e-9) & (r <= self.cutoff_nm)
        return pos[keep]

    def field_factors(self) -> np.ndarray:
        """z-field (T) at the probe per neighbour for a +1 Ising orientation."""
        pos = self.neighbours()
        if len(pos) == 0:
            raise ValueError("cutoff sphere encloses no magnetic sites")
        r = np.linalg.norm(pos, axis=1)
        cos2 = (pos[:, 2] / r) ** 2
        return _DIPOLE_T_NM3 * self.moment_muB * (3 * cos2 - 1) / r**3


@dataclass(frozen=True)
class DipolarDistribution:
    """Distribution of static bias fields along the anisotropy axis.

    ``sigma_T`` is read as a standard deviation in gaussian mode.
    """

    mode: str = "gaussian"
    sigma_T: float = 6e-3
    lattice: Optional[DipolarLattice] = None
    mc_samples: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("gaussian", "lattice_mc"):
            raise ValueError(f"unknown dipolar mode {self.mode!r}")
        if not self.sigma_T >= 0:
            raise ValueError("sigma_T must be >= 0")
        if self.mc_samples < 1000:
            raise ValueError("mc_samples must be >= 1000")
        if self.mode == "lattice_mc" and self.lattice is None:
            raise ValueError("lattice_mc mode needs a lattice")

    @property
    def is_trivial(self) -> bool:
        return self.mode == "gaussian" and self.sigma_T == 0


def dipolar_bias_samples(d: DipolarDistribution, n: Optional[int] = None) -> np.ndarray:
    """Draw ``n`` bias fields (T); defaults to ``d.mc_samples``.

    Samples are produced in fixed chunks, each with its own stream spawned from
    ``d.seed``, so the result only depends on (seed, n).
    """
    n = d.mc_samples if n is None else int(n)
    if n < 1:
        raise ValueError("sample count must be >= 1")
    if d.mode == "lattice_mc":
        factors = d.lattice.field_factors()
    streams = np.random.SeedSequence(d.seed).spawn(-(-n // _CHUNK))
    out = []
    for k, ss in enumerate(streams):
        size = min(_CHUNK, n - k * _CHUNK)
        rng = np.random.default_rng(ss)
        if d.mode == "gaussian":
            out.append(rng.standard_normal(size) * d.sigma_T)
        else:
            spins = rng.integers(0, 2, size=(size, len(factors)), dtype=np.int8) * 2 - 1
            out.append(spins @ factors)
    return np.concatenate(out)


def energy_broadening(sigma_T: float, g_j: float = 1.25, m_j: float = 4.0) -> float:
    """Frequency spread (GHz) of a pure +-m_J transition under a field spread sigma_T.

    The transition slope is 2 |m_J| g_J muB / h.
    """
    return 2 * abs(m_j) * g_j * CONSTANTS.bohr_magneton_over_h * sigma_T


def histogram(samples: np.ndarray, bins: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Bin centres (T) and counts."""
    counts, edges = np.histogram(samples, bins=bins)
    return 0.5 * (edges[1:] + edges[:-1]), counts
