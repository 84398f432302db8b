import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import least_squares

from clockspin.fitlab import (
    FitError,
    Trace,
    fit_cavity_width,
    fit_lineshape,
    levenberg_marquardt,
    lineshape_model,
    _lineshape_jacobian,
)
from synthetic import CAVITY, LINE, LINE_DP, cavity_trace, line_trace, omega_linear


def rel_err(result, truth):
    return np.array([abs(result[k] / v - 1) for k, v in truth.items()])


@pytest.mark.parametrize("complex_valued", [False, True])
def test_noiseless_lineshape_roundtrip(complex_valued):
    r = fit_lineshape(line_trace(complex_valued=complex_valued), LINE_DP)
    assert r.converged
    assert rel_err(r, LINE).max() < 1e-6


def test_noisy_lineshape_median_error():
    errs = np.array([rel_err(fit_lineshape(line_trace(0.01, seed), LINE_DP), LINE) for seed in range(50)])
    assert np.median(errs, axis=0).max() < 0.05


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 0.5), st.floats(0.05, 0.5), st.floats(8.0, 12.0))
def test_lineshape_roundtrip_property(rate, gamma, omega12):
    truth = dict(rate=rate, gamma=gamma, omega12=omega12)
    r = fit_lineshape(line_trace(params=truth), LINE_DP)
    assert rel_err(r, truth).max() < 1e-6


def test_population_rescaling_degeneracy():
    # only Gamma * dP is identified: doubling dP halves the fitted rate
    trace = line_trace()
    a = fit_lineshape(trace, LINE_DP)
    b = fit_lineshape(trace, 2 * LINE_DP)
    assert b["rate"] == pytest.approx(a["rate"] / 2, rel=1e-8)
    assert b["gamma"] == pytest.approx(a["gamma"], rel=1e-8)


def test_analytic_jacobian_matches_finite_differences():
    x = np.linspace(9, 9.6, 50)
    p = np.array([0.05, 0.12, 9.3])
    for complex_valued in (False, True):
        jac = _lineshape_jacobian(x, p, LINE_DP, complex_valued)
        for k in range(3):
            step = np.zeros(3)
            step[k] = 1e-7
            fd = (lineshape_model(x, *(p + step), LINE_DP, complex_valued)
                  - lineshape_model(x, *(p - step), LINE_DP, complex_valued)) / 2e-7
            np.testing.assert_allclose(jac[:, k], fd, atol=1e-6)


def test_agrees_with_reference_optimizer():
    trace = line_trace(0.01, seed=4)
    ours = fit_lineshape(trace, LINE_DP)
    ref = least_squares(
        lambda p: lineshape_model(trace.x, *p, LINE_DP) - trace.y,
        x0=[0.04, 0.1, 9.28], method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15,
    )
    np.testing.assert_allclose(ours.values, ref.x, rtol=1e-6)


def test_history_monotone():
    r = fit_lineshape(line_trace(0.02, seed=1), LINE_DP, init=[0.2, 0.3, 9.2])
    assert len(r.history) >= 2
    assert np.all(np.diff(r.history) <= 0)


def test_flat_trace_rejected():
    x = np.linspace(9, 10, 101)
    with pytest.raises(FitError, match="no absorption"):
        fit_lineshape(Trace(x, np.zeros(101)), LINE_DP)


def test_boundary_extremum_rejected():
    t = line_trace()
    half = len(t.x) // 2
    with pytest.raises(FitError, match="boundary"):
        fit_lineshape(Trace(t.x[half:], t.y[half:]), LINE_DP)


def test_trace_validation(tmp_path):
    with pytest.raises(ValueError):
        Trace([1, 1, 2], [0, 0, 0])
    path = tmp_path / "t.csv"
    path.write_text("x,y,sigma\n1,0.1,0.01\n2,0.2,0.01\n")
    t = Trace.from_csv(path)
    np.testing.assert_array_equal(t.sigma, [0.01, 0.01])


def test_weighted_fit_errors_scale_with_sigma():
    base = line_trace(0.01, seed=3)
    sigma = np.full(len(base.x), 0.01 * np.ptp(base.y))
    r = fit_lineshape(Trace(base.x, base.y, sigma), LINE_DP)
    r2 = fit_lineshape(Trace(base.x, base.y, 2 * sigma), LINE_DP)
    np.testing.assert_allclose(r2.stderr, 2 * r.stderr, rtol=1e-6)


def test_cavity_noiseless_roundtrip():
    r = fit_cavity_width(cavity_trace(), omega_linear)
    assert rel_err(r, CAVITY).max() < 1e-6


def test_cavity_tabulated_dispersion():
    fields = np.linspace(0.1, 0.3, 2001)
    r = fit_cavity_width(cavity_trace(), (fields, omega_linear(fields)))
    assert rel_err(r, CAVITY).max() < 1e-6


def test_cavity_noisy_median_error():
    errs = np.array([rel_err(fit_cavity_width(cavity_trace(0.01, s), omega_linear), CAVITY) for s in range(50)])
    assert np.median(errs, axis=0).max() < 0.05


def test_cavity_without_peak_rejected():
    fields = np.linspace(0.17, 0.23, 51)
    with pytest.raises(FitError, match="no peak"):
        fit_cavity_width(Trace(fields, np.full(51, 0.117)), omega_linear)


def test_generic_lm_on_exponential():
    t = np.linspace(0, 2, 40)
    y = 3.0 * np.exp(-1.5 * t)
    p, _, r, converged, _, history = levenberg_marquardt(
        lambda p: p[0] * np.exp(-p[1] * t) - y,
        lambda p: np.stack([np.exp(-p[1] * t), -p[0] * t * np.exp(-p[1] * t)], axis=-1),
        [1.0, 0.5],
    )
    assert converged
    np.testing.assert_allclose(p, [3.0, 1.5], rtol=1e-9)


def test_result_json():
    r = fit_lineshape(line_trace(), LINE_DP)
    d = json.loads(r.to_json())
    assert [p["name"] for p in d["parameters"]] == ["rate", "gamma", "omega12"]
    assert all(p["unit"] == "GHz" for p in d["parameters"])
    assert d["converged"] is True
