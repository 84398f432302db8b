"""
Spin ensemble coupled to a low-Q cavity mode.

The mode width is broadened by spin transitions close to resonance:

    kappa_eff = kappa + gamma G_N^2 / ((w12 - w_r)^2 + gamma^2)

Widths here are half widths in GHz and the intrinsic width is w_r / Q.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .hamiltonian import LevelDiagram
from .spectro import (
    BroadeningModel,
    TransmissionMap,
    _fmt,
    enumerate_transitions,
    homogeneous_width,
)


@dataclass(frozen=True)
class CavityModel:
    """Cavity mode and collective coupling.

    ``g_n_full`` is G_N at full concentration; G_N(x) = g_n_full sqrt(x).
    """

    omega_r: float = 11.7
    kappa: float = 0.117
    g_n_full: float = 0.1
    concentration: float = 1.0

    def __post_init__(self):
        if not (self.omega_r > 0 and self.kappa > 0):
            raise ValueError("omega_r and kappa must be positive")
        if not 0 < self.concentration <= 1:
            raise ValueError("concentration must lie in (0, 1]")
        if self.g_n_full < 0:
            raise ValueError("g_n_full must be >= 0")

    @classmethod
    def from_quality_factor(cls, omega_r: float, q: float, **kw) -> "CavityModel":
        return cls(omega_r=omega_r, kappa=omega_r / q, **kw)

    @property
    def g_n(self) -> float:
        return self.g_n_full * math.sqrt(self.concentration)

    def at_concentration(self, x: float) -> "CavityModel":
        return CavityModel(self.omega_r, self.kappa, self.g_n_full, x)


def effective_kappa(c: CavityModel, omega12, gamma, weight=1.0):
    """Mode width with one (or an array of) spin transitions at ``omega12``."""
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma <= 0):
        raise ValueError("gamma must be positive")
    detuning = np.asarray(omega12, dtype=float) - c.omega_r
    value = c.kappa + weight * gamma * c.g_n**2 / (detuning**2 + gamma**2)
    return float(value) if np.ndim(value) == 0 else value


def kappa_curve(
    c: CavityModel,
    diagram: LevelDiagram,
    b: BroadeningModel,
    temperature: float,
    *,
    window: float = 3.0,
    weighting: str = "population",
    floor: float = 1e-4,
) -> np.ndarray:
    """kappa_eff at every field point of ``diagram``.

    Transitions within ``window`` GHz of w_r add Lorentzian width terms. With
    ``weighting="population"`` each term is scaled by dP_k / max_j dP_j over
    the lines in the window, so a single line carries the full G_N^2;
    ``weighting="none"`` gives every line unit weight.
    """
    if weighting not in ("population", "none"):
        raise ValueError(f"unknown weighting {weighting!r}")
    out = np.empty(len(diagram))
    for i, eig in enumerate(diagram.solutions):
        lines = [
            t
            for t in enumerate_transitions(
                eig, temperature, c.omega_r + window, floor=floor, system=diagram.system
            )
            if abs(t.omega12 - c.omega_r) <= window
        ]
        kappa = c.kappa
        if lines:
            dp = np.array([t.delta_p for t in lines])
            w = dp / dp.max() if weighting == "population" and dp.max() > 0 else np.ones(len(lines))
            omega = np.array([t.omega12 for t in lines])
            gamma = homogeneous_width(b, omega)
            kappa += float(np.sum(w * gamma * c.g_n**2 / ((omega - c.omega_r) ** 2 + gamma**2)))
        out[i] = kappa
    return out


def mode_response(c: CavityModel, kappa_eff, freqs, contrast: float = 0.5):
    """Notch transmission 1 - contrast kappa / (kappa_eff + i(w - w_r)).

    kappa_eff broadcasts against ``freqs`` (fields along axis 0).
    """
    kappa_eff = np.asarray(kappa_eff, dtype=float)[..., None]
    freqs = np.asarray(freqs, dtype=float)
    return 1.0 - contrast * c.kappa / (kappa_eff + 1j * (freqs - c.omega_r))


def cavity_map(
    c: CavityModel,
    diagram: LevelDiagram,
    b: BroadeningModel,
    freqs: Sequence[float],
    temperature: float,
    *,
    window: float = 3.0,
    weighting: str = "population",
    contrast: float = 0.5,
) -> tuple[TransmissionMap, np.ndarray]:
    """Transmission near the cavity mode and the kappa_eff(H) curve behind it."""
    freqs = np.asarray(freqs, dtype=float)
    if not (freqs.min() <= c.omega_r <= freqs.max()):
        raise ValueError("frequency grid must span omega_r")
    if not 0 < contrast <= 1:
        raise ValueError("contrast must lie in (0, 1]")
    kappa = kappa_curve(c, diagram, b, temperature, window=window, weighting=weighting)
    values = mode_response(c, kappa, freqs, contrast)
    meta = {
        "kind": "cavity",
        "temperature_K": temperature,
        "cavity": c,
        "broadening": b,
        "window_GHz": window,
        "weighting": weighting,
        "contrast": contrast,
        "theta_rad": diagram.theta,
        "phi_rad": diagram.phi,
        "system": diagram.system,
    }
    return TransmissionMap(diagram.fields, freqs, values, meta), kappa


def write_kappa_csv(path, fields, kappa) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["field_T", "kappa_eff_GHz"])
        for h, k in zip(fields, kappa):
            w.writerow([_fmt(h), _fmt(k)])


def cooperativity(c: CavityModel, gamma: float) -> float:
    """C = G_N(x)^2 / (kappa gamma)."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return c.g_n**2 / (c.kappa * gamma)


def is_strongly_coupled(c: CavityModel, gamma: float) -> bool:
    """G_N exceeds both the cavity and the spin decay rates."""
    return c.g_n > max(c.kappa, gamma)


def strong_coupling_threshold(
    c: CavityModel,
    gamma_of_x: Callable[[float], float],
    *,
    criterion: str = "rates",
    xs: Optional[Sequence[float]] = None,
) -> Optional[float]:
    """Smallest concentration at which coupling becomes strong.

    criterion "rates": G_N(x) > max(kappa, gamma(x)); "cooperativity": C(x) > 1.
    ``gamma_of_x`` supplies the spin decay rate (GHz) at concentration x, e.g.
    interpolated from measured T2 values. Scans ``xs`` (default 1e-3..1) and
    refines the first sign change by bisection. Returns None if never strong.
    """
    def margin(x):
        cx = c.at_concentration(x)
        g = gamma_of_x(x)
        if criterion == "rates":
            return cx.g_n - max(cx.kappa, g)
        if criterion == "cooperativity":
            return cooperativity(cx, g) - 1.0
        raise ValueError(f"unknown criterion {criterion!r}")

    grid = np.linspace(1e-3, 1.0, 1000) if xs is None else np.asarray(xs, dtype=float)
    m = np.array([margin(x) for x in grid])
    hit = np.flatnonzero(m > 0)
    if hit.size == 0:
        return None
    k = hit[0]
    if k == 0:
        return float(grid[0])
    lo, hi = grid[k - 1], grid[k]
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if margin(mid) > 0:
            hi = mid
        else:
            lo = mid
    return float(hi)


def gamma_from_t2_table(concentrations, t2_seconds, t1: float = 20e-6):
    """gamma(x) in GHz from a concentration -> T2 table (log-log interpolation)."""
    x = np.log(np.asarray(concentrations, dtype=float))
    y = np.log(np.asarray(t2_seconds, dtype=float))
    order = np.argsort(x)
    x, y = x[order], y[order]

    def gamma(c):
        t2 = math.exp(float(np.interp(math.log(c), x, y)))
        return 1e-9 * (1.0 / t1 + 1.0 / t2)

    return gamma
