"""
Electro-nuclear spin Hamiltonian of a rare-earth ion in an axial crystal field.

    H = B20 O20 + B40 O40 + B60 O60 + B44 O44 + g_J muB H.J + A Jz Iz

Coefficients are given in cm^-1 and converted to GHz. Because the hyperfine
coupling is Ising-like, Iz commutes with H for any field direction and the
136-dimensional problem for Ho3+ splits into eight 17x17 nuclear sectors.
`solve` exploits this; `build_hamiltonian` + `diagonalize` is the plain dense
route on the full product space.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field, replace
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment, minimize_scalar

from .constants import CONSTANTS
from .spinops import (
    AngularMomentumBasis,
    cartesian_matrices,
    identity,
    is_hermitian,
    stevens_operator,
    tensor_product,
)


@dataclass(frozen=True)
class SpinSystem:
    """Spin quantum numbers and Hamiltonian coefficients (cm^-1).

    Defaults are the HoW10 parameter set.
    """

    j_electronic: float = 8.0
    i_nuclear: float = 3.5
    g_j: float = 1.25
    B20: float = 0.601
    B40: float = 6.93e-3
    B60: float = -5.1e-5
    B44: float = 3.14e-3
    A: float = 2.77e-2

    def __post_init__(self):
        for name in ("g_j", "B20", "B40", "B60", "B44", "A"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        # validates half-integer quantum numbers
        AngularMomentumBasis(self.j_electronic)
        AngularMomentumBasis(self.i_nuclear)

    @property
    def electronic(self) -> AngularMomentumBasis:
        return AngularMomentumBasis(self.j_electronic)

    @property
    def nuclear(self) -> AngularMomentumBasis:
        return AngularMomentumBasis(self.i_nuclear)

    @property
    def dims(self) -> tuple[int, int]:
        return self.electronic.dimension, self.nuclear.dimension

    @property
    def dimension(self) -> int:
        dj, di = self.dims
        return dj * di

    @property
    def zeeman_GHz_per_T(self) -> float:
        """g_J muB / h."""
        return self.g_j * CONSTANTS.bohr_magneton_over_h

    @property
    def hyperfine_GHz(self) -> float:
        return self.A * CONSTANTS.cm1_to_GHz

    def replace(self, **changes) -> "SpinSystem":
        return replace(self, **changes)


@dataclass(frozen=True)
class FieldVector:
    """Applied field: magnitude (T) and direction relative to the anisotropy axis (rad)."""

    magnitude: float
    theta: float = 0.0
    phi: float = 0.0

    def __post_init__(self):
        if not self.magnitude >= 0:
            raise ValueError(f"field magnitude must be >= 0, got {self.magnitude}")

    @property
    def direction(self) -> np.ndarray:
        return _unit(self.theta, self.phi)

    def cartesian(self) -> np.ndarray:
        return self.magnitude * self.direction


def _unit(theta: float, phi: float) -> np.ndarray:
    return np.array(
        [math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)]
    )


@dataclass(frozen=True)
class _Operators:
    crystal_field: np.ndarray  # electronic space, GHz
    jx: np.ndarray
    jy: np.ndarray
    jz: np.ndarray
    m_i: np.ndarray  # nuclear projections in basis order


@lru_cache(maxsize=64)
def _operators(system: SpinSystem) -> _Operators:
    basis = system.electronic
    cf = sum(
        coeff * stevens_operator(basis, k, q)
        for coeff, (k, q) in (
            (system.B20, (2, 0)),
            (system.B40, (4, 0)),
            (system.B60, (6, 0)),
            (system.B44, (4, 4)),
        )
    ) * CONSTANTS.cm1_to_GHz
    jx, jy, jz = cartesian_matrices(basis)
    ops = _Operators(np.asarray(cf, dtype=complex), jx, jy, jz, system.nuclear.m_values)
    for a in (ops.crystal_field, ops.jx, ops.jy, ops.jz, ops.m_i):
        a.setflags(write=False)
    return ops


def full_operators(system: SpinSystem) -> dict[str, np.ndarray]:
    """Jx, Jy, Jz, Iz embedded in the electro-nuclear product space."""
    ops = _operators(system)
    dj, di = system.dims
    one_i, one_j = identity(di), identity(dj)
    return {
        "Jx": tensor_product(ops.jx, one_i),
        "Jy": tensor_product(ops.jy, one_i),
        "Jz": tensor_product(ops.jz, one_i),
        "Iz": tensor_product(one_j, np.diag(ops.m_i).astype(complex)),
    }


def build_hamiltonian(system: SpinSystem, field: FieldVector) -> np.ndarray:
    """Full Hamiltonian matrix (GHz) on the (2j+1)(2i+1) product space."""
    return _full_hamiltonian(system, field.cartesian())


def _full_hamiltonian(system: SpinSystem, h_xyz: np.ndarray) -> np.ndarray:
    ops = _operators(system)
    dj, di = system.dims
    hx, hy, hz = h_xyz
    electronic = ops.crystal_field + system.zeeman_GHz_per_T * (
        hx * ops.jx + hy * ops.jy + hz * ops.jz
    )
    h = tensor_product(electronic, identity(di))
    h += system.hyperfine_GHz * tensor_product(ops.jz, np.diag(ops.m_i).astype(complex))
    return h


def sector_hamiltonians(system: SpinSystem, h_xyz: np.ndarray) -> np.ndarray:
    """Electronic Hamiltonians of every nuclear sector.

    ``h_xyz`` has shape (..., 3); the result has shape (..., 2i+1, 2j+1, 2j+1),
    sector n carrying m_I = i - n.
    """
    ops = _operators(system)
    h_xyz = np.asarray(h_xyz, dtype=float)
    zee = system.zeeman_GHz_per_T * (
        h_xyz[..., 0, None, None] * ops.jx
        + h_xyz[..., 1, None, None] * ops.jy
        + h_xyz[..., 2, None, None] * ops.jz
    )
    electronic = ops.crystal_field + zee
    hyper = system.hyperfine_GHz * ops.m_i[:, None, None] * ops.jz
    return electronic[..., None, :, :] + hyper


@dataclass
class EigenSolution:
    """Sorted spectrum at one field point.

    ``eigenvectors[:, k]`` is the state with energy ``energies[k]``.
    """

    energies: np.ndarray
    eigenvectors: np.ndarray
    jz_expect: Optional[np.ndarray] = None
    iz_expect: Optional[np.ndarray] = None
    field: Optional[FieldVector] = None
    dims: Optional[tuple[int, int]] = None

    def __len__(self) -> int:
        return len(self.energies)

    def residual(self, h: np.ndarray) -> float:
        """max_k ||H v_k - E_k v_k|| / ||H||_2."""
        r = h @ self.eigenvectors - self.eigenvectors * self.energies
        norm = np.linalg.norm(h, 2)
        return float(np.linalg.norm(r, axis=0).max() / (norm if norm > 0 else 1.0))

    def nuclear_labels(self, i: float) -> np.ndarray:
        return np.array([nearest_projection(v, i) for v in self.iz_expect])


def nearest_projection(value: float, j: float) -> float:
    """Round to the nearest allowed projection of ``j``; ties go to the smaller |m|."""
    m = j - np.arange(int(round(2 * j)) + 1)
    d = np.abs(m - value)
    best = np.flatnonzero(np.isclose(d, d.min(), rtol=0, atol=1e-9))
    return float(m[best[np.argmin(np.abs(m[best]))]])


def _fix_phase(vectors: np.ndarray) -> np.ndarray:
    # largest component real and positive, for reproducible output
    idx = np.argmax(np.round(np.abs(vectors), 8), axis=-2)
    pivot = np.take_along_axis(vectors, idx[..., None, :], axis=-2)
    return vectors * (np.abs(pivot) / pivot)


def _resolve_degeneracies(energies, vectors, label_ops, tol):
    """Rotate inside degenerate eigenspaces so the label operators become diagonal."""
    n = len(energies)
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and energies[stop] - energies[stop - 1] <= tol:
            stop += 1
        if stop - start > 1:
            block = vectors[:, start:stop]
            vectors[:, start:stop] = _diagonalize_labels(block, label_ops)
        start = stop
    return vectors


def _diagonalize_labels(block, label_ops):
    if not label_ops:
        return block
    op, rest = label_ops[0], label_ops[1:]
    proj = block.conj().T @ op @ block
    vals, rot = np.linalg.eigh((proj + proj.conj().T) / 2)
    block = block @ rot
    out = block.copy()
    start = 0
    while start < len(vals):
        stop = start + 1
        while stop < len(vals) and vals[stop] - vals[stop - 1] <= 1e-8:
            stop += 1
        if stop - start > 1:
            out[:, start:stop] = _diagonalize_labels(block[:, start:stop], rest)
        start = stop
    return out


def diagonalize(
    h: np.ndarray,
    *,
    jz: Optional[np.ndarray] = None,
    iz: Optional[np.ndarray] = None,
    field: Optional[FieldVector] = None,
    dims: Optional[tuple[int, int]] = None,
) -> EigenSolution:
    """Dense Hermitian eigendecomposition with ascending energies.

    Degenerate eigenspaces are rotated to diagonalize ``iz`` then ``jz`` so the
    expectation labels are sharp where symmetry allows.
    """
    h = np.asarray(h)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError("diagonalize expects a square matrix")
    if not is_hermitian(h, rtol=1e-12):
        raise ValueError("matrix is not Hermitian")
    energies, vectors = np.linalg.eigh(h)
    scale = max(float(np.abs(energies).max(initial=0.0)), 1.0)
    label_ops = [op for op in (iz, jz) if op is not None]
    vectors = _resolve_degeneracies(energies, vectors, label_ops, 1e-10 * scale)
    vectors = _fix_phase(vectors)

    def expect(op):
        if op is None:
            return None
        return np.real(np.einsum("ik,ij,jk->k", vectors.conj(), op, vectors))

    return EigenSolution(energies, vectors, expect(jz), expect(iz), field, dims)


def solve_sectors(system: SpinSystem, h_xyz: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched sector eigenproblems: energies (..., 2i+1, 2j+1) and vectors."""
    return np.linalg.eigh(sector_hamiltonians(system, h_xyz))


def solve(system: SpinSystem, field: FieldVector, method: str = "sectors") -> EigenSolution:
    """Eigen-solution of the full Hamiltonian at ``field``.

    ``method="sectors"`` diagonalizes each nuclear sector separately and embeds
    the result in the product space; ``method="dense"`` diagonalizes the full
    matrix.
    """
    if method == "dense":
        ops = full_operators(system)
        return diagonalize(
            build_hamiltonian(system, field),
            jz=ops["Jz"],
            iz=ops["Iz"],
            field=field,
            dims=system.dims,
        )
    if method != "sectors":
        raise ValueError(f"unknown method {method!r}")
    return _embed(system, field, *solve_sectors(system, field.cartesian()))


def _embed(system, field, energies, vectors) -> EigenSolution:
    ops = _operators(system)
    dj, di = system.dims
    vectors = _fix_phase(vectors)
    flat_e = energies.reshape(-1)
    order = np.argsort(flat_e, kind="stable")
    sector = order // dj
    level = order % dj
    full = np.zeros((dj * di, dj * di), dtype=complex)
    # full index = e * di + n
    rows = np.arange(dj)[:, None] * di + sector[None, :]
    full[rows, np.arange(dj * di)[None, :]] = vectors[sector, :, level].T
    jz_sector = np.real(np.einsum("nik,ij,njk->nk", vectors.conj(), ops.jz, vectors))
    return EigenSolution(
        energies=flat_e[order],
        eigenvectors=full,
        jz_expect=jz_sector[sector, level],
        iz_expect=ops.m_i[sector].astype(float),
        field=field,
        dims=(dj, di),
    )


@dataclass
class LevelDiagram:
    """Eigen-solutions along a straight field path through the origin."""

    system: SpinSystem
    theta: float
    phi: float
    fields: np.ndarray
    solutions: list[EigenSolution] = dc_field(default_factory=list)

    def __len__(self) -> int:
        return len(self.solutions)

    @property
    def energies(self) -> np.ndarray:
        """(n_fields, n_levels) array of sorted energies."""
        return np.array([s.energies for s in self.solutions])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["field_T", "level_index", "energy_GHz", "jz_expect", "iz_expect"])
            for h, sol in zip(self.fields, self.solutions):
                for k in range(len(sol)):
                    w.writerow(
                        [
                            _fmt(h),
                            k,
                            _fmt(sol.energies[k]),
                            _fmt(sol.jz_expect[k]),
                            _fmt(sol.iz_expect[k]),
                        ]
                    )


def _fmt(x: float) -> str:
    x = float(x)
    return "0" if x == 0 else format(x, ".12g")


def sweep(
    system: SpinSystem,
    direction: tuple[float, float],
    magnitudes: Sequence[float],
    threads: int = 1,
    method: str = "sectors",
) -> LevelDiagram:
    """Diagonalize along a monotone field grid in direction (theta, phi)."""
    grid = np.asarray(magnitudes, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("field grid must be a non-empty 1-D sequence")
    if grid.size > 1 and not np.all(np.diff(grid) > 0):
        raise ValueError("field grid must be strictly increasing")
    theta, phi = direction
    points = [FieldVector(float(h), theta, phi) for h in grid]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            sols = list(pool.map(lambda f: solve(system, f, method), points))
    else:
        sols = [solve(system, f, method) for f in points]
    return LevelDiagram(system, theta, phi, grid, sols)


def track_levels(diagram: LevelDiagram) -> np.ndarray:
    """Follow states across the sweep by maximum eigenvector overlap.

    Returns ``perm`` of shape (n_fields, n_levels): tracked state ``s`` at grid
    point ``k`` is sorted level ``perm[k, s]``. Tracked states are labelled by
    their sorted index at the first grid point.
    """
    n = len(diagram)
    nlev = len(diagram.solutions[0])
    perm = np.empty((n, nlev), dtype=int)
    perm[0] = np.arange(nlev)
    for k in range(1, n):
        prev = diagram.solutions[k - 1].eigenvectors[:, perm[k - 1]]
        cur = diagram.solutions[k].eigenvectors
        overlap = np.abs(prev.conj().T @ cur) ** 2
        _, cols = linear_sum_assignment(-overlap)
        perm[k] = cols
    return perm


PairSelector = Callable[[EigenSolution], dict]


def lowest_pair_per_sector(eig: EigenSolution) -> dict[float, tuple[int, int]]:
    """Two lowest levels of every nuclear sector, keyed by m_I."""
    labels = np.round(eig.iz_expect * 2) / 2
    pairs = {}
    for m in sorted(set(labels.tolist()), reverse=True):
        idx = np.flatnonzero(labels == m)
        if idx.size >= 2:
            pairs[float(m)] = (int(idx[0]), int(idx[1]))
    return pairs


@dataclass(frozen=True)
class Anticrossing:
    field_center: float  # T
    gap: float  # GHz
    level_pair: tuple[int, int]
    nuclear_label: float
    is_crossing: bool = False

    @property
    def kind(self) -> str:
        return "crossing" if self.is_crossing else "anticrossing"


def find_anticrossings(
    diagram: LevelDiagram,
    pair_selector: Optional[PairSelector] = None,
    xatol: float = 1e-6,
    crossing_gap: float = 1e-2,
) -> list[Anticrossing]:
    """Locate minima of level separation and refine them by golden-section search.

    ``pair_selector`` maps an EigenSolution to ``{label: (i, j)}``; by default
    the lowest two levels of each nuclear sector. Minima whose refined gap is
    below ``crossing_gap`` (GHz) are flagged as true crossings.
    """
    if len(diagram) < 3:
        raise ValueError("need at least 3 field points to locate anticrossings")
    select = pair_selector or lowest_pair_per_sector
    system, theta, phi = diagram.system, diagram.theta, diagram.phi
    fields = diagram.fields
    direction = _unit(theta, phi)

    def at(h: float) -> EigenSolution:
        # signed magnitude: negative values continue the path through the origin
        return _embed(system, None, *solve_sectors(system, h * direction))

    seps: dict = {}
    for k, sol in enumerate(diagram.solutions):
        for label, (a, b) in select(sol).items():
            seps.setdefault(label, np.full(len(fields), np.nan))[k] = abs(
                sol.energies[b] - sol.energies[a]
            )

    found = []
    step_lo = fields[1] - fields[0]
    step_hi = fields[-1] - fields[-2]
    for label, s in seps.items():
        for k in range(len(fields)):
            left = s[k - 1] if k > 0 else np.inf
            right = s[k + 1] if k < len(fields) - 1 else np.inf
            if not (s[k] <= left and s[k] <= right and (s[k] < left or s[k] < right)):
                continue
            lo = fields[k - 1] if k > 0 else fields[0] - step_lo
            hi = fields[k + 1] if k < len(fields) - 1 else fields[-1] + step_hi

            def separation(h, label=label):
                sol = at(h)
                pair = select(sol).get(label)
                if pair is None:
                    return np.inf
                return abs(sol.energies[pair[1]] - sol.energies[pair[0]])

            res = minimize_scalar(separation, bounds=(lo, hi), method="bounded",
                                  options={"xatol": xatol})
            x = float(res.x)
            if x - lo < 10 * xatol or hi - x < 10 * xatol:
                continue
            if x < fields[0] - xatol or x > fields[-1] + xatol:
                continue
            x = min(max(x, fields[0]), fields[-1])
            sol = at(x)
            pair = select(sol)[label]
            gap = float(res.fun)
            found.append(Anticrossing(x, gap, pair, float(label), gap < crossing_gap))
    return _merge_replicas(sorted(found, key=lambda a: (a.field_center, abs(a.nuclear_label))))


def _merge_replicas(found: list[Anticrossing]) -> list[Anticrossing]:
    # identical minima from symmetry-equivalent sectors (e.g. A = 0) collapse to one
    out: list[Anticrossing] = []
    for ac in found:
        dup = next(
            (
                o
                for o in out
                if abs(o.field_center - ac.field_center) < 1e-4
                and abs(o.gap - ac.gap) <= 1e-6 + 1e-4 * max(o.gap, ac.gap)
            ),
            None,
        )
        if dup is None:
            out.append(ac)
    return out


def tunneling_gap(system: SpinSystem) -> float:
    """Zero-field splitting of the electronic ground doublet (hyperfine switched off)."""
    e = np.linalg.eigvalsh(_operators(system.replace(A=0.0)).crystal_field)
    return float(e[1] - e[0])
