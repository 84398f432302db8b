"""Acceptance criteria, one test per criterion.

Each test prints a single PASS/FAIL line with the measured numbers; the same
lines are repeated in the terminal summary by conftest.py.
"""

import json
import os
import time

import numpy as np
import pytest
from scipy.integrate import trapezoid

from clockspin.cavity import CavityModel, effective_kappa
from clockspin.cli import main
from clockspin.config import load_config
from clockspin.constants import CONSTANTS
from clockspin.dipolar import dipolar_bias_samples, energy_broadening
from clockspin.fitlab import fit_cavity_width, fit_lineshape
from clockspin.hamiltonian import (
    FieldVector,
    SpinSystem,
    build_hamiltonian,
    solve,
    sweep,
    tunneling_gap,
)
from clockspin.spectro import (
    BroadeningModel,
    CouplingDensity,
    clock_line,
    line_width,
    normalize_map,
    occupation,
    population_difference,
    transmission_map,
)
from clockspin.spinops import SUPPORTED_STEVENS, AngularMomentumBasis, stevens_operator
from oracles import brute_force_stevens, direct_population_difference
from synthetic import CAVITY, LINE, LINE_DP, cavity_trace, line_trace, omega_linear

SYSTEM = SpinSystem()
ZEEMAN = SYSTEM.g_j * CONSTANTS.bohr_magneton_over_h
HYPERFINE = SYSTEM.A * CONSTANTS.cm1_to_GHz
M_I = np.array([0.5, 1.5, 2.5, 3.5])


def report(number, ok, detail):
    print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def clock_fields(tmp_path_factory):
    out = tmp_path_factory.mktemp("clock")
    start = time.perf_counter()
    code = main(["clock", "--out", str(out)])
    elapsed = time.perf_counter() - start
    assert code == 0
    return json.loads((out / "clock.json").read_text()), elapsed


def test_criterion_1_clock_fields(clock_fields):
    found, elapsed = clock_fields
    fields = np.array([a["field_T"] for a in found])
    analytic = M_I * HYPERFINE / ZEEMAN
    spacing = np.diff(fields) * 1e3
    ok = (
        len(found) == 4
        and np.abs(fields - analytic).max() < 1e-4
        and 0.161 <= fields[-1] <= 0.171
        and np.all(np.abs(spacing - 47.5) <= 1.0)
        and elapsed < 30
    )
    report(
        1, ok,
        f"fields {np.round(fields, 5).tolist()} T (analytic {np.round(analytic, 5).tolist()}), "
        f"spacing {np.round(spacing, 2).tolist()} mT, runtime {elapsed:.1f} s",
    )


def test_criterion_2_tunneling_gap(clock_fields):
    found, _ = clock_fields
    zero = tunneling_gap(SYSTEM)
    gaps = np.array([a["gap_GHz"] for a in found])
    ok = (
        abs(zero - 9.1) <= 0.9
        and np.all(np.abs(gaps - 9.1) <= 0.9)
        and (gaps.max() - gaps.min()) / gaps.min() <= 0.10
    )
    report(2, ok, f"zero-field gap {zero:.4f} GHz, clock gaps {np.round(gaps, 4).tolist()} GHz")


def test_criterion_3_clock_extremality(clock_fields):
    found, _ = clock_fields
    centre = found[-1]["field_T"]
    m_i = found[-1]["m_I"]
    fields = centre + np.linspace(-0.03, 0.03, 25)
    mid = 12
    g = CouplingDensity()
    b = BroadeningModel()
    biases = b.bias_samples()
    elements, rates, widths = [], [], []
    for h in fields:
        f = FieldVector(h)
        omega, element, _ = clock_line(SYSTEM, f, m_i, 4.2)
        elements.append(element[0])
        rates.append(2 * np.pi * g(omega[0]) ** 2 * element[0] ** 2 * (occupation(omega[0], 4.2) + 1))
        widths.append(line_width(SYSTEM, g, b, f, m_i, 4.2, biases=biases)[1])
    ok = np.argmax(elements) == mid and np.argmax(rates) == mid and np.argmin(widths) == mid
    report(
        3, ok,
        f"|M| {elements[mid]:.4f} at centre vs {elements[0]:.4f}/{elements[-1]:.4f} at -/+30 mT; "
        f"HWHM {widths[mid]:.3f} GHz vs {widths[0]:.3f}/{widths[-1]:.3f} GHz",
    )


def test_criterion_4_dipolar_broadening():
    sigma = 6e-3
    closed = energy_broadening(sigma, SYSTEM.g_j, 4.0)
    # Hellmann-Feynman slope of the ground-doublet line far from any clock field
    sol = solve(SYSTEM, FieldVector(1.0))
    idx = np.flatnonzero(np.round(2 * sol.iz_expect) == -7)[:2]
    slope = ZEEMAN * abs(sol.jz_expect[idx[1]] - sol.jz_expect[idx[0]])
    hf = slope * sigma
    # Monte Carlo spread of the same line under the configured bias distribution
    d = load_config().dipolar
    biases = dipolar_bias_samples(d)
    mc = float(np.std(clock_line(SYSTEM, FieldVector(1.0), -3.5, 4.2, biases)[0]))
    ok = all(abs(v - 0.84) <= 0.02 for v in (closed, hf, mc))
    report(4, ok, f"closed form {closed:.4f} GHz, slope x sigma {hf:.4f} GHz, Monte Carlo std {mc:.4f} GHz")


def _rel(result, truth):
    return max(abs(result[k] / v - 1) for k, v in truth.items())


def test_criterion_5_fit_roundtrips():
    lines = []
    ok = True
    batches = {
        "lineshape": (lambda noise, s: fit_lineshape(line_trace(noise, s), LINE_DP), LINE),
        "lineshape-complex": (
            lambda noise, s: fit_lineshape(line_trace(noise, s, complex_valued=True), LINE_DP), LINE),
        "cavity": (lambda noise, s: fit_cavity_width(cavity_trace(noise, s), omega_linear), CAVITY),
    }
    for name, (fit, truth) in batches.items():
        exact = _rel(fit(0.0, 0), truth)
        start = time.perf_counter()
        median = np.median([[abs(fit(0.01, s)[k] / v - 1) for k, v in truth.items()] for s in range(50)],
                           axis=0).max()
        elapsed = time.perf_counter() - start
        ok &= exact < 1e-6 and median < 0.05 and elapsed < 10
        lines.append(f"{name}: noiseless {exact:.1e}, noisy median {median:.2%}, {elapsed:.2f} s")
    report(5, ok, "; ".join(lines))


def test_criterion_6_cavity_algebra():
    c = CavityModel(g_n_full=0.1)
    gamma = 0.2
    excess = effective_kappa(c, c.omega_r, gamma) - c.kappa
    algebra = abs(excess / (c.g_n**2 / gamma) - 1)
    delta = np.linspace(-1000 * gamma, 1000 * gamma, 2_000_001)
    area = trapezoid(effective_kappa(c, c.omega_r + delta, gamma) - c.kappa, delta)
    area_err = abs(area / (np.pi * c.g_n**2) - 1)
    ok = algebra <= 1e-12 and area_err <= 0.01
    report(6, ok, f"zero-detuning relative error {algebra:.1e}, area relative error {area_err:.2e}")


def test_criterion_7_oracles():
    stevens = 0.0
    for twice in range(9):
        j = twice / 2
        for kq in SUPPORTED_STEVENS:
            ours = stevens_operator(AngularMomentumBasis(j), *kq)
            ref = brute_force_stevens(j, *kq)
            stevens = max(stevens, np.abs(ours - ref).max() / max(1.0, np.abs(ref).max()))
    dp = 0.0
    for h in (0.0, 0.1, 0.16613, 0.25):
        e = solve(SYSTEM, FieldVector(h)).energies
        for lo, hi in ((0, 1), (0, 8), (3, 40), (10, 135)):
            dp = max(dp, abs(population_difference(e[lo], e[hi], e, 4.2)
                             - direct_population_difference(list(e), lo, hi, 4.2)))
    cfg = load_config()
    diagram = sweep(cfg.system, cfg.direction, cfg.fields)
    residual = max(
        sol.residual(build_hamiltonian(cfg.system, FieldVector(h, *cfg.direction)))
        for h, sol in zip(diagram.fields, diagram.solutions)
    )
    ok = stevens <= 1e-10 and dp <= 1e-12 and residual <= 1e-10
    report(7, ok, f"Stevens {stevens:.1e}, dP {dp:.1e}, max eigen residual {residual:.1e} "
                  f"over {len(diagram)} points")


def test_criterion_8_transmission_map():
    cfg = load_config()
    fields = np.linspace(0.0, 0.25, 200)
    freqs = np.linspace(0.01, 14.0, 500)
    start = time.perf_counter()
    raw = transmission_map(
        cfg.system, cfg.coupling, cfg.broadening, cfg.direction, fields, freqs, cfg.temperature,
        reference_field=1.0, threads=os.cpu_count() or 1, max_freq=17.0,
    )
    t = normalize_map(raw, cfg.data["normalization"]["delta_field_T"])
    elapsed = time.perf_counter() - start
    ratio = np.abs(raw.values / raw.reference[None, :])

    def depth(h, m_i):
        k = int(np.argmin(np.abs(fields - h)))
        branch = clock_line(SYSTEM, FieldVector(fields[k]), m_i, 4.2)[0][0]
        window = np.abs(freqs - branch) <= 0.3
        return 1 - ratio[k, window].min(), branch

    details, ok = [], elapsed < 300 and np.all(np.isfinite(t.values))
    for m in M_I:
        centre = m * HYPERFINE / ZEEMAN
        d0, w0 = depth(centre, -m)
        sides = [depth(centre + s, -m) for s in (-0.03, 0.03) if 0 <= centre + s <= 0.25]
        ok &= all(d0 > d for d, _ in sides) and all(w0 < w for _, w in sides)
        ok &= abs(w0 - 9.1) <= 0.9
        details.append(f"{centre * 1e3:.1f} mT: depth {d0:.3f} vs " + "/".join(f"{d:.3f}" for d, _ in sides))
    report(8, ok, f"{len(fields)}x{len(freqs)} map in {elapsed:.1f} s; " + "; ".join(details))
