"""
Spectroscopy on top of the spin Hamiltonian.

Lines are transitions inside one nuclear sector. Each carries a resonance
frequency, a |<1|Jz|2>| matrix element and a thermal population difference;
a coupling density and a broadening model turn them into a rate Gamma and a
linewidth gamma. Transmission through the line is

    S21 / S21(0) = 1 / (1 + sum_k Gamma_k dP_k / (gamma_k + i(w_k - w)))

averaged over static dipolar bias fields along the anisotropy axis.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field as dc_field, replace
from typing import Optional, Sequence

import numpy as np

from .constants import kT_GHz
from .dipolar import DipolarDistribution, dipolar_bias_samples
from .hamiltonian import (
    EigenSolution,
    FieldVector,
    SpinSystem,
    _operators,
    _unit,
    solve_sectors,
)
from .spinops import AngularMomentumBasis, cartesian_matrices, identity, tensor_product


@dataclass(frozen=True)
class CouplingDensity:
    """Spin-photon coupling density g(w) = g0 (w / w_ref)^(p/2), in GHz^(1/2)."""

    g0: float = 0.06
    exponent: float = 0.0
    omega_ref: float = 9.1

    def __post_init__(self):
        if not self.g0 >= 0:
            raise ValueError("g0 must be >= 0")

    def __call__(self, omega):
        if self.exponent == 0:
            return self.g0 * np.ones_like(np.asarray(omega, dtype=float))
        return self.g0 * (np.asarray(omega, dtype=float) / self.omega_ref) ** (self.exponent / 2)


@dataclass(frozen=True)
class BroadeningModel:
    """Homogeneous width from T1 and a field-dependent T2, plus dipolar bias fields.

    t1, t2_clock in seconds; omega_clock in GHz. ``average_samples`` is the
    number of bias fields averaged per transmission evaluation.
    """

    t1: float = 20e-6
    t2_clock: float = 8e-9
    omega_clock: float = 9.1
    dipolar: Optional[DipolarDistribution] = DipolarDistribution()
    average_samples: int = 200

    def __post_init__(self):
        if not (self.t1 > 0 and self.t2_clock > 0):
            raise ValueError("t1 and t2_clock must be positive")
        if self.omega_clock <= 0:
            raise ValueError("omega_clock must be positive")
        if self.average_samples < 1:
            raise ValueError("average_samples must be >= 1")

    def bias_samples(self) -> np.ndarray:
        if self.dipolar is None or self.dipolar.is_trivial:
            return np.zeros(1)
        return dipolar_bias_samples(self.dipolar, self.average_samples)


@dataclass(frozen=True)
class Transition:
    lower: int
    upper: int
    omega12: float  # GHz
    matrix_element: float
    delta_p: float
    m_i: float = float("nan")
    gamma: Optional[float] = None  # GHz
    rate: Optional[float] = None  # GHz


# --- thermal factors ---------------------------------------------------------


def boltzmann_populations(energies, temperature: float) -> np.ndarray:
    e = np.asarray(energies, dtype=float)
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    w = np.exp(-(e - e.min()) / kT_GHz(temperature))
    return w / w.sum()


def population_difference(e1: float, e2: float, all_energies, temperature: float) -> float:
    """(exp(-E1/kT) - exp(-E2/kT)) / Z with energies referenced to the ground level."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    all_energies = np.asarray(all_energies, dtype=float)
    e0 = all_energies.min()
    kt = kT_GHz(temperature)
    z = np.exp(-(all_energies - e0) / kt).sum()
    return float((math.exp(-(e1 - e0) / kt) - math.exp(-(e2 - e0) / kt)) / z)


def occupation(omega, temperature: float):
    """Bose occupation 1 / (exp(h w / kT) - 1); zero at T = 0."""
    omega = np.asarray(omega, dtype=float)
    if np.any(omega <= 0):
        raise ValueError("occupation number diverges for omega <= 0")
    if temperature == 0:
        return np.zeros_like(omega)
    with np.errstate(over="ignore"):
        return 1.0 / np.expm1(omega / kT_GHz(temperature))


# --- rates and widths -------------------------------------------------------


def transition_rate(t: Transition, g: CouplingDensity, temperature: float) -> float:
    """Gamma = 2 pi g(w)^2 |M|^2 (n(w) + 1), in GHz."""
    return float(_rate(t.omega12, t.matrix_element, g, temperature))


def _rate(omega, element, g, temperature):
    return 2 * np.pi * g(omega) ** 2 * np.abs(element) ** 2 * (occupation(omega, temperature) + 1)


def t2_of_field(b: BroadeningModel, omega12) -> np.ndarray | float:
    """T2 scaled by (w_clock / w12)^2, in seconds."""
    omega12 = np.asarray(omega12, dtype=float)
    if np.any(omega12 <= 0):
        raise ValueError("omega12 must be positive")
    t2 = b.t2_clock * (b.omega_clock / omega12) ** 2
    return float(t2) if t2.ndim == 0 else t2


def homogeneous_width(b: BroadeningModel, omega12):
    """gamma = 1/T1 + 1/T2 expressed in GHz."""
    return 1e-9 * (1.0 / b.t1 + 1.0 / np.asarray(t2_of_field(b, omega12)))


# --- transitions ------------------------------------------------------------


def _drive_operator(tilt: float, jz: np.ndarray, jx: np.ndarray) -> np.ndarray:
    if tilt == 0:
        return jz
    return math.cos(tilt) * jz + math.sin(tilt) * jx


def enumerate_transitions(
    eig: EigenSolution,
    temperature: float,
    max_freq: float,
    *,
    floor: float = 1e-4,
    tilt: float = 0.0,
    system: Optional[SpinSystem] = None,
) -> list[Transition]:
    """Allowed lines at one field point, sorted by frequency.

    A pair qualifies when both levels share the nuclear projection (to 0.5),
    0 < w12 <= max_freq, and the drive matrix element is at least ``floor``.
    The drive is Jz, or cos(tilt) Jz + sin(tilt) Jx.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if eig.iz_expect is None:
        raise ValueError("EigenSolution carries no nuclear labels")
    op = _full_drive(eig, tilt, system)
    v = eig.eigenvectors
    elements = np.abs(v.conj().T @ op @ v)
    e = eig.energies
    pops = boltzmann_populations(e, temperature)
    iz = eig.iz_expect
    lo, hi = np.triu_indices(len(e), 1)
    omega = e[hi] - e[lo]
    keep = (
        (omega > 1e-9)
        & (omega <= max_freq)
        & (np.abs(iz[lo] - iz[hi]) < 0.5)
        & (elements[lo, hi] >= floor)
    )
    out = [
        Transition(
            int(a),
            int(b),
            float(e[b] - e[a]),
            float(elements[a, b]),
            float(pops[a] - pops[b]),
            float(np.round(2 * iz[a]) / 2),
        )
        for a, b in zip(lo[keep], hi[keep])
    ]
    return sorted(out, key=lambda t: (t.omega12, t.lower))


def _full_drive(eig, tilt, system):
    if system is not None:
        jx, jz = _operators(system).jx, _operators(system).jz
        di = system.dims[1]
    elif eig.dims is not None:
        dj, di = eig.dims
        jx, _, jz = cartesian_matrices(AngularMomentumBasis((dj - 1) / 2))
    else:
        raise ValueError("cannot build the drive operator without dims or a SpinSystem")
    return tensor_product(_drive_operator(tilt, jz, jx), identity(di))


def dress(
    transitions: Sequence[Transition],
    g: CouplingDensity,
    b: BroadeningModel,
    temperature: float,
) -> list[Transition]:
    """Attach rate Gamma and homogeneous width gamma to each transition."""
    return [
        replace(
            t,
            rate=transition_rate(t, g, temperature),
            gamma=float(homogeneous_width(b, t.omega12)),
        )
        for t in transitions
    ]


# --- transmission -----------------------------------------------------------


def lineshape(omega, rate: float, delta_p: float, gamma: float, omega12: float):
    """Single-line transmission ratio S21 / S21(0)."""
    omega = np.asarray(omega, dtype=float)
    return 1.0 / (1.0 + rate * delta_p / (gamma + 1j * (omega12 - omega)))


def multiline_transmission(omega, transitions: Sequence[Transition]):
    """All dressed lines summed inside one denominator."""
    omega = np.asarray(omega, dtype=float)
    chi = np.zeros(omega.shape, dtype=complex)
    for t in transitions:
        chi = chi + t.rate * t.delta_p / (t.gamma + 1j * (t.omega12 - omega))
    return 1.0 / (1.0 + chi)


@dataclass
class LineSet:
    """Flat arrays of lines from a batch of field points; ``point`` indexes the batch."""

    point: np.ndarray
    sector: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    omega: np.ndarray
    element: np.ndarray
    delta_p: np.ndarray


def sector_lines(
    system: SpinSystem,
    h_xyz: np.ndarray,
    temperature: float,
    max_freq: float,
    *,
    floor: float = 1e-4,
    tilt: float = 0.0,
) -> LineSet:
    """Vectorized line enumeration over a batch of field vectors of shape (N, 3).

    Equivalent to `enumerate_transitions` on each point, but works sector by
    sector so it never forms 136x136 matrices.
    """
    h_xyz = np.atleast_2d(h_xyz)
    ops = _operators(system)
    energies, vectors = solve_sectors(system, h_xyz)  # (N, di, dj), (N, di, dj, dj)
    n, di, dj = energies.shape
    kt = kT_GHz(temperature)
    e0 = energies.reshape(n, -1).min(axis=1)
    w = np.exp(-(energies - e0[:, None, None]) / kt)
    z = w.reshape(n, -1).sum(axis=1)
    pops = w / z[:, None, None]
    op = _drive_operator(tilt, ops.jz, ops.jx)
    lo, hi = np.triu_indices(dj, 1)
    # <lo| op |hi> for every sector
    elements = np.abs((np.swapaxes(vectors.conj(), -1, -2) @ op @ vectors)[..., lo, hi])
    omega = energies[..., hi] - energies[..., lo]
    keep = (omega > 1e-9) & (omega <= max_freq) & (elements >= floor)
    p_idx, s_idx, k_idx = np.nonzero(keep)
    return LineSet(
        point=p_idx,
        sector=s_idx,
        lower=lo[k_idx],
        upper=hi[k_idx],
        omega=omega[keep],
        element=elements[keep],
        delta_p=(pops[..., lo] - pops[..., hi])[keep],
    )


def _averaged_transmission(lines: LineSet, npoints, omega, g, b, temperature):
    """Mean over ``npoints`` bias samples of the multi-line transmission."""
    rate = _rate(lines.omega, lines.element, g, temperature)
    gamma = homogeneous_width(b, lines.omega)
    chi_lines = (rate * lines.delta_p)[:, None] / (
        gamma[:, None] + 1j * (lines.omega[:, None] - omega[None, :])
    )
    chi = np.zeros((npoints, len(omega)), dtype=complex)
    np.add.at(chi, lines.point, chi_lines)
    return (1.0 / (1.0 + chi)).mean(axis=0)


def transmission(
    system: SpinSystem,
    g: CouplingDensity,
    b: BroadeningModel,
    field: FieldVector,
    omega,
    temperature: float,
    *,
    biases: Optional[np.ndarray] = None,
    max_freq: Optional[float] = None,
    floor: float = 1e-4,
    tilt: float = 0.0,
):
    """S21 / S21(0) at ``field`` for frequencies ``omega`` (GHz).

    Dipolar bias fields shift H_z; the complex transmission is averaged over
    them. ``biases`` overrides the samples drawn from ``b``.
    """
    scalar = np.ndim(omega) == 0
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    if biases is None:
        biases = b.bias_samples()
    biases = np.atleast_1d(np.asarray(biases, dtype=float))
    if max_freq is None:
        max_freq = float(omega.max()) + 3.0
    h = field.cartesian()[None, :] + biases[:, None] * np.array([0.0, 0.0, 1.0])
    lines = sector_lines(system, h, temperature, max_freq, floor=floor, tilt=tilt)
    s = _averaged_transmission(lines, len(biases), omega, g, b, temperature)
    return complex(s[0]) if scalar else s


# --- maps -------------------------------------------------------------------


@dataclass
class TransmissionMap:
    """Complex transmission on a (field x frequency) grid; values[i, k] at fields[i], freqs[k]."""

    fields: np.ndarray
    freqs: np.ndarray
    values: np.ndarray
    metadata: dict = dc_field(default_factory=dict)
    reference: Optional[np.ndarray] = None  # empty-line transmission per frequency

    def __post_init__(self):
        self.fields = np.asarray(self.fields, dtype=float)
        self.freqs = np.asarray(self.freqs, dtype=float)
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (len(self.fields), len(self.freqs)):
            raise ValueError("values shape does not match the grids")

    def to_csv(self, path, header_path=None) -> None:
        """CSV rows (field_T, freq_GHz, re_t, im_t, abs_t) plus a JSON header file."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["field_T", "freq_GHz", "re_t", "im_t", "abs_t"])
            for i, h in enumerate(self.fields):
                for k, f in enumerate(self.freqs):
                    v = self.values[i, k]
                    w.writerow([_fmt(h), _fmt(f), _fmt(v.real), _fmt(v.imag), _fmt(abs(v))])
        if header_path is None:
            header_path = str(path).rsplit(".", 1)[0] + ".json"
        with open(header_path, "w") as fh:
            json.dump(_jsonable(self.metadata), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _fmt(x: float) -> str:
    x = float(x)
    return "0" if x == 0 else format(x, ".12g")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if hasattr(obj, "__dataclass_fields__"):
        return _jsonable(asdict(obj))
    return obj


def read_map_csv(path) -> TransmissionMap:
    """Load a map written in the (field_T, freq_GHz, re_t, im_t, abs_t) schema.

    Rows may come in any order; the grid is rebuilt from the unique values.
    ``im_t`` may be left empty for magnitude-only data, in which case ``abs_t``
    is stored as a real value.
    """
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            re_t = rec.get("re_t") or ""
            im_t = rec.get("im_t") or ""
            if re_t == "" and im_t == "":
                v = complex(float(rec["abs_t"]), 0.0)
            else:
                v = complex(float(re_t or 0.0), float(im_t or 0.0))
            rows.append((float(rec["field_T"]), float(rec["freq_GHz"]), v))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    fields = np.unique([r[0] for r in rows])
    freqs = np.unique([r[1] for r in rows])
    values = np.full((len(fields), len(freqs)), np.nan + 0j)
    fi = {v: i for i, v in enumerate(fields)}
    ki = {v: k for k, v in enumerate(freqs)}
    for h, f, v in rows:
        values[fi[h], ki[f]] = v
    if np.isnan(values).any():
        raise ValueError(f"{path}: incomplete grid")
    return TransmissionMap(fields, freqs, values)


def map_residual(model: TransmissionMap, measured: TransmissionMap) -> float:
    """RMS complex difference, model interpolated onto the measured grid."""
    from scipy.interpolate import RegularGridInterpolator

    pts = np.stack(np.meshgrid(measured.fields, measured.freqs, indexing="ij"), axis=-1)
    interp = [
        RegularGridInterpolator((model.fields, model.freqs), part, bounds_error=True)(pts)
        for part in (model.values.real, model.values.imag)
    ]
    diff = interp[0] + 1j * interp[1] - measured.values
    return float(np.sqrt(np.mean(np.abs(diff) ** 2)))


def _map_rows(args):
    system, g, b, direction, fields, freqs, temperature, biases, max_freq, floor, tilt = args
    out = np.empty((len(fields), len(freqs)), dtype=complex)
    dz = np.array([0.0, 0.0, 1.0])
    for i, h in enumerate(fields):
        hv = h * direction[None, :] + biases[:, None] * dz
        lines = sector_lines(system, hv, temperature, max_freq, floor=floor, tilt=tilt)
        out[i] = _averaged_transmission(lines, len(biases), freqs, g, b, temperature)
    return out


def transmission_map(
    system: SpinSystem,
    g: CouplingDensity,
    b: BroadeningModel,
    direction: tuple[float, float],
    fields: Sequence[float],
    freqs: Sequence[float],
    temperature: float,
    *,
    reference_field: Optional[float] = None,
    threads: int = 1,
    floor: float = 1e-4,
    tilt: float = 0.0,
    max_freq: Optional[float] = None,
) -> TransmissionMap:
    """Raw S21 / S21(0) map; identical bias samples at every field point.

    With ``reference_field`` the empty-line transmission is evaluated there and
    stored as ``reference``.
    """
    fields = np.asarray(fields, dtype=float)
    freqs = np.asarray(freqs, dtype=float)
    if fields.size == 0 or freqs.size == 0:
        raise ValueError("field and frequency grids must be non-empty")
    theta, phi = direction
    unit = _unit(theta, phi)
    biases = b.bias_samples()
    if max_freq is None:
        max_freq = float(freqs.max()) + 3.0
    all_fields = fields if reference_field is None else np.append(fields, reference_field)
    chunks = np.array_split(all_fields, max(1, min(threads, len(all_fields))))
    jobs = [
        (system, g, b, unit, c, freqs, temperature, biases, max_freq, floor, tilt)
        for c in chunks
    ]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_map_rows, jobs))
    else:
        parts = [_map_rows(j) for j in jobs]
    values = np.concatenate(parts, axis=0)
    reference = None
    if reference_field is not None:
        values, reference = values[:-1], values[-1]
    meta = {
        "kind": "raw",
        "temperature_K": temperature,
        "theta_rad": theta,
        "phi_rad": phi,
        "coupling": g,
        "broadening": b,
        "system": system,
        "reference_field_T": reference_field,
        "bias_samples": len(biases),
        "matrix_element_floor": floor,
        "tilt_rad": tilt,
    }
    return TransmissionMap(fields, freqs, values, meta, reference)


def normalize_map(
    raw: TransmissionMap,
    delta_field: float,
    reference_field: Optional[float] = None,
) -> TransmissionMap:
    """t(H1, w) = (S21(H1, w) - S21(H1 + dH, w)) / S21(0)(w).

    S21(0) is taken from the raw map at ``reference_field`` when it lies on the
    grid span, otherwise from ``raw.reference``. Rows whose partner field falls
    beyond the grid are dropped.
    """
    fields = raw.fields
    if not delta_field > 0:
        raise ValueError("delta_field must be positive")
    span = fields[-1] - fields[0]
    if delta_field > span + 1e-12:
        raise ValueError(f"delta_field {delta_field} T exceeds the grid span {span} T")
    if reference_field is not None and fields[0] <= reference_field <= fields[-1]:
        s0 = _interp_rows(raw, np.array([reference_field]))[0]
    elif raw.reference is not None:
        s0 = raw.reference
    else:
        raise ValueError("no empty-line reference: give a reference_field on the grid")
    keep = fields + delta_field <= fields[-1] + 1e-12
    h1 = fields[keep]
    s2 = _interp_rows(raw, np.minimum(h1 + delta_field, fields[-1]))
    t = (raw.values[keep] - s2) / s0[None, :]
    meta = dict(raw.metadata)
    meta.update(kind="normalized", delta_field_T=delta_field)
    if reference_field is not None:
        meta["reference_field_T"] = reference_field
    return TransmissionMap(h1, raw.freqs, t, meta, None)


def _interp_rows(m: TransmissionMap, at: np.ndarray) -> np.ndarray:
    idx = np.clip(np.searchsorted(m.fields, at, side="right") - 1, 0, len(m.fields) - 2)
    h0, h1 = m.fields[idx], m.fields[idx + 1]
    w = ((at - h0) / (h1 - h0))[:, None]
    return (1 - w) * m.values[idx] + w * m.values[idx + 1]


# --- single-line diagnostics --------------------------------------------------


def clock_line(system: SpinSystem, field: FieldVector, m_i: float, temperature: float,
               biases=None, tilt: float = 0.0):
    """(omega12, matrix_element, delta_p) of the lowest pair in nuclear sector m_I.

    Arrays over ``biases`` (T, added along the anisotropy axis).
    """
    ops = _operators(system)
    n = int(round(system.i_nuclear - m_i))
    biases = np.zeros(1) if biases is None else np.atleast_1d(biases)
    h = field.cartesian()[None, :] + biases[:, None] * np.array([0.0, 0.0, 1.0])
    energies, vectors = solve_sectors(system, h)
    op = _drive_operator(tilt, ops.jz, ops.jx)
    e = energies[:, n]
    v = vectors[:, n]
    omega = e[:, 1] - e[:, 0]
    element = np.abs(np.einsum("pa,ab,pb->p", v[:, :, 0].conj(), op, v[:, :, 1]))
    kt = kT_GHz(temperature)
    flat = energies.reshape(len(e), -1)
    e0 = flat.min(axis=1)
    z = np.exp(-(flat - e0[:, None]) / kt).sum(axis=1)
    dp = (np.exp(-(e[:, 0] - e0) / kt) - np.exp(-(e[:, 1] - e0) / kt)) / z
    return omega, element, dp


def line_width(
    system: SpinSystem,
    g: CouplingDensity,
    b: BroadeningModel,
    field: FieldVector,
    m_i: float,
    temperature: float,
    *,
    biases: Optional[np.ndarray] = None,
    span: float = 3.0,
    points: int = 6001,
) -> tuple[float, float]:
    """Centre and half width at half maximum (GHz) of one dipolar-averaged line.

    Only the lowest pair of sector m_I contributes, so neighbouring lines do
    not distort the profile. Absorption is 1 - |<S21>|.
    """
    if biases is None:
        biases = b.bias_samples()
    omega, element, dp = clock_line(system, field, m_i, temperature, biases)
    rate = _rate(omega, element, g, temperature)
    gamma = homogeneous_width(b, omega)
    centre = float(np.median(omega))
    grid = np.linspace(centre - span, centre + span, points)
    s = (1.0 / (1.0 + (rate * dp)[:, None] / (gamma[:, None] + 1j * (omega[:, None] - grid)))).mean(axis=0)
    absorption = 1 - np.abs(s)
    k = int(np.argmax(absorption))
    half = absorption[k] / 2
    left = k
    while left > 0 and absorption[left] > half:
        left -= 1
    right = k
    while right < points - 1 and absorption[right] > half:
        right += 1
    if absorption[left] > half or absorption[right] > half:
        raise ValueError("line wider than the scan window; increase span")

    def cross(i0, i1):
        a0, a1 = absorption[i0] - half, absorption[i1] - half
        return grid[i0] + (grid[i1] - grid[i0]) * a0 / (a0 - a1)

    return float(grid[k]), float((cross(right - 1, right) - cross(left, left + 1)) / 2)
