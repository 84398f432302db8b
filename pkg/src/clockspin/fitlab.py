"""
Least-squares inversion of absorption lines and cavity-width curves.

Both models are fitted with a Levenberg-Marquardt loop using analytic
Jacobians. The loop records the residual norm after every accepted step,
which is non-increasing by construction.

A single transmission trace only identifies the product Gamma * dP, so
`fit_lineshape` takes dP from the thermal model and reports Gamma.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


class FitError(RuntimeError):
    """Raised when a fit cannot start or does not converge.

    ``best`` holds the best-so-far parameters when the loop ran.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass
class Trace:
    """Ordinate ``y`` sampled at strictly monotone abscissa ``x``."""

    x: np.ndarray
    y: np.ndarray
    sigma: Optional[np.ndarray] = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y)
        if self.x.ndim != 1 or self.x.shape != self.y.shape:
            raise ValueError("x and y must be 1-D arrays of equal length")
        d = np.diff(self.x)
        if not (np.all(d > 0) or np.all(d < 0)):
            raise ValueError("abscissa must be strictly monotone")
        if self.sigma is not None:
            self.sigma = np.asarray(self.sigma, dtype=float)
            if self.sigma.shape != self.x.shape or np.any(self.sigma <= 0):
                raise ValueError("sigma must be positive and match x")

    @classmethod
    def from_csv(cls, path) -> "Trace":
        """Read (x, y[, sigma]) columns; a non-numeric first row is a header."""
        rows = []
        with open(path, newline="") as fh:
            for k, rec in enumerate(csv.reader(fh)):
                if not rec or rec[0].lstrip().startswith("#"):
                    continue
                try:
                    rows.append([float(v) for v in rec])
                except ValueError:
                    if k == 0:
                        continue
                    raise ValueError(f"{path}:{k + 1}: non-numeric row {rec!r}") from None
        if not rows:
            raise ValueError(f"{path}: no data")
        data = np.array(rows)
        sigma = data[:, 2] if data.shape[1] > 2 else None
        return cls(data[:, 0], data[:, 1], sigma)


@dataclass
class FitResult:
    names: list[str]
    values: np.ndarray
    stderr: np.ndarray
    units: list[str]
    residual_norm: float
    converged: bool
    iterations: int
    history: list[float] = field(default_factory=list)
    model: str = ""

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    def error(self, name: str) -> float:
        return float(self.stderr[self.names.index(name)])

    def as_dict(self) -> dict:
        return {
            "model": self.model,
            "parameters": [
                {"name": n, "value": float(v), "stderr": float(e), "unit": u}
                for n, v, e, u in zip(self.names, self.values, self.stderr, self.units)
            ],
            "residual_norm": float(self.residual_norm),
            "converged": self.converged,
            "iterations": self.iterations,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"


def levenberg_marquardt(
    residual: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], np.ndarray],
    x0,
    *,
    max_iter: int = 200,
    gtol: float = 1e-10,
    xtol: float = 1e-14,
    lower=None,
):
    """Minimize ||residual(x)||^2 by damped Gauss-Newton steps.

    Marquardt scaling (damping proportional to diag(J^T J)). Steps that do not
    lower the cost are rejected and the damping raised. ``lower`` clamps
    parameters from below. Returns (x, J, r, converged, iterations, history).
    """
    x = np.asarray(x0, dtype=float).copy()
    lower = None if lower is None else np.asarray(lower, dtype=float)
    r = residual(x)
    cost = float(r @ r)
    history = [np.sqrt(cost)]
    lam = 1e-3
    converged = False
    it = 0
    jac = jacobian(x)
    while it < max_iter:
        it += 1
        g = jac.T @ r
        col = np.linalg.norm(jac, axis=0)
        rn = np.sqrt(cost)
        if rn == 0 or np.max(np.abs(g) / np.where(col > 0, col, 1.0)) <= gtol * rn:
            converged = True
            break
        a = jac.T @ jac
        d = np.diag(a).copy()
        d[d == 0] = 1.0
        while True:
            try:
                step = np.linalg.solve(a + lam * np.diag(d), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            trial = x + step
            if lower is not None:
                trial = np.maximum(trial, lower)
            r_new = residual(trial)
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new < cost:
                break
            if np.linalg.norm(trial - x) <= xtol * (np.linalg.norm(x) + xtol):
                # no representable improvement left
                return x, jac, r, True, it, history
            lam *= 4
            if lam > 1e16:
                return x, jac, r, False, it, history
        dx = trial - x
        x, r = trial, r_new
        small_step = np.linalg.norm(dx) <= xtol * (np.linalg.norm(x) + xtol)
        small_gain = cost - cost_new <= 1e-30 + 1e-15 * cost
        cost = cost_new
        history.append(np.sqrt(cost))
        lam = max(lam / 3, 1e-12)
        jac = jacobian(x)
        if small_step or small_gain:
            converged = True
            break
    return x, jac, r, converged, it, history


def _finish(model, names, units, x, jac, r, converged, it, history, weighted):
    m, n = jac.shape
    try:
        cov = np.linalg.inv(jac.T @ jac)
    except np.linalg.LinAlgError:
        cov = np.full((n, n), np.nan)
    s2 = 1.0 if weighted else float(r @ r) / max(m - n, 1)
    stderr = np.sqrt(np.abs(np.diag(cov)) * s2)
    return FitResult(
        list(names), x, stderr, list(units), float(np.linalg.norm(r)), converged, it, history, model
    )


# --- absorption line ----------------------------------------------------------

LINESHAPE_NAMES = ("rate", "gamma", "omega12")
LINESHAPE_UNITS = ("GHz", "GHz", "GHz")


def lineshape_model(omega, rate, gamma, omega12, delta_p, complex_valued=False):
    """|S21/S21(0)| - 1, or S21/S21(0) - 1 when ``complex_valued``."""
    s = 1.0 / (1.0 + rate * delta_p / (gamma + 1j * (omega12 - np.asarray(omega, dtype=float))))
    return s - 1.0 if complex_valued else np.abs(s) - 1.0


def _lineshape_jacobian(omega, p, delta_p, complex_valued):
    rate, gamma, omega12 = p
    a = rate * delta_p
    delta = omega12 - omega
    if complex_valued:
        d = gamma + 1j * delta
        w = d + a
        return np.stack([-delta_p * d / w**2, a / w**2, 1j * a / w**2], axis=-1)
    u = gamma**2 + delta**2
    v = (gamma + a) ** 2 + delta**2
    mag = np.sqrt(u / v)
    return np.stack(
        [
            mag * (-(gamma + a) * delta_p / v),
            mag * (gamma / u - (gamma + a) / v),
            mag * (delta / u - delta / v),
        ],
        axis=-1,
    )


def initial_lineshape(trace: Trace, delta_p: float) -> np.ndarray:
    """Estimate (rate, gamma, omega12) from the dip depth, position and half width."""
    x = trace.x
    depth_curve = -np.real(trace.y) if not np.iscomplexobj(trace.y) else 1 - np.abs(1 + trace.y)
    k = int(np.argmax(depth_curve))
    depth = float(depth_curve[k])
    if not depth > 0 or np.ptp(depth_curve) <= 1e-12:
        raise FitError("trace shows no absorption dip")
    if k == 0 or k == len(x) - 1:
        raise FitError("absorption extremum lies on the trace boundary")
    above = depth_curve >= depth / 2
    left = k
    while left > 0 and above[left - 1]:
        left -= 1
    right = k
    while right < len(x) - 1 and above[right + 1]:
        right += 1
    hwhm = max(abs(x[right] - x[left]) / 2, abs(x[1] - x[0]))
    depth = min(depth, 0.95)
    gamma = hwhm
    rate = depth * gamma / (1 - depth) / delta_p
    return np.array([rate, gamma, x[k]])


def fit_lineshape(
    trace: Trace,
    delta_p: float,
    init: Optional[Sequence[float]] = None,
    *,
    max_iter: int = 200,
) -> FitResult:
    """Fit (Gamma, gamma, omega12) of one resonance.

    Magnitude data (real ``trace.y``) are fitted with |S21/S21(0)| - 1, complex
    data with S21/S21(0) - 1. ``delta_p`` is the thermal population difference.
    """
    if not delta_p > 0:
        raise ValueError("delta_p must be positive")
    complex_valued = np.iscomplexobj(trace.y)
    p0 = initial_lineshape(trace, delta_p) if init is None else np.asarray(init, dtype=float)
    x = trace.x
    y = trace.y
    w = 1.0 if trace.sigma is None else 1.0 / trace.sigma

    def split(z):
        return np.concatenate([z.real, z.imag]) if complex_valued else z

    def residual(p):
        return split(w * (lineshape_model(x, *p, delta_p, complex_valued) - y))

    def jacobian(p):
        j = _lineshape_jacobian(x, p, delta_p, complex_valued)
        j = j * (w[:, None] if np.ndim(w) else w)
        return np.concatenate([j.real, j.imag]) if complex_valued else j

    out = levenberg_marquardt(residual, jacobian, p0, max_iter=max_iter,
                              lower=[0.0, 1e-12, -np.inf])
    p, jac, r, converged, it, history = out
    if not converged:
        raise FitError(f"lineshape fit did not converge in {it} iterations", best=p)
    return _finish("lineshape", LINESHAPE_NAMES, LINESHAPE_UNITS, p, jac, r, converged, it,
                   history, trace.sigma is not None)


# --- cavity width ---------------------------------------------------------------

CAVITY_NAMES = ("kappa", "gamma", "g_n")
CAVITY_UNITS = ("GHz", "GHz", "GHz")


def cavity_width_model(omega12, kappa, gamma, g_n, omega_r):
    delta = np.asarray(omega12, dtype=float) - omega_r
    return kappa + gamma * g_n**2 / (delta**2 + gamma**2)


def _cavity_jacobian(delta, p):
    kappa, gamma, g_n = p
    lor = 1.0 / (delta**2 + gamma**2)
    return np.stack(
        [np.ones_like(delta), g_n**2 * (delta**2 - gamma**2) * lor**2, 2 * gamma * g_n * lor],
        axis=-1,
    )


def _omega_of(curve: Trace, omega12_of_field):
    if callable(omega12_of_field):
        return np.asarray(omega12_of_field(curve.x), dtype=float)
    fields, freqs = (np.asarray(a, dtype=float) for a in omega12_of_field)
    order = np.argsort(fields)
    return np.interp(curve.x, fields[order], freqs[order])


def fit_cavity_width(
    curve: Trace,
    omega12_of_field,
    init: Optional[Sequence[float]] = None,
    *,
    omega_r: float = 11.7,
    max_iter: int = 200,
) -> FitResult:
    """Fit (kappa, gamma, G_N) to a kappa_eff(H) curve.

    ``omega12_of_field`` is a callable H -> w12 (GHz) or a (fields, freqs) pair
    to interpolate.
    """
    y = np.asarray(curve.y, dtype=float)
    delta = _omega_of(curve, omega12_of_field) - omega_r
    k = int(np.argmax(y))
    if np.ptp(y) <= 1e-12 * max(np.abs(y).max(), 1.0):
        raise FitError("width curve shows no peak")
    if k == 0 or k == len(y) - 1:
        raise FitError("width maximum lies on the curve boundary")
    if init is None:
        base = float(np.min(y))
        peak = float(y[k] - base)
        above = (y - base) >= peak / 2
        hw = np.abs(delta[above]).max() if above.any() else abs(delta[1] - delta[0])
        gamma = max(hw, 1e-6)
        p0 = np.array([base, gamma, np.sqrt(peak * gamma)])
    else:
        p0 = np.asarray(init, dtype=float)
    w = 1.0 if curve.sigma is None else 1.0 / curve.sigma

    def residual(p):
        return w * (cavity_width_model(delta + omega_r, *p, omega_r) - y)

    def jacobian(p):
        j = _cavity_jacobian(delta, p)
        return j * (w[:, None] if np.ndim(w) else w)

    p, jac, r, converged, it, history = levenberg_marquardt(
        residual, jacobian, p0, max_iter=max_iter, lower=[-np.inf, 1e-12, 0.0]
    )
    if not converged:
        raise FitError(f"cavity-width fit did not converge in {it} iterations", best=p)
    return _finish("cavity_width", CAVITY_NAMES, CAVITY_UNITS, p, jac, r, converged, it,
                   history, curve.sigma is not None)
