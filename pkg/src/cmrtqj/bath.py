"""Harmonic-bath spectral densities and line-broadening functions.

The line-broadening function of one site bath is

    g(t) = int_0^inf dw J(w)/w^2 [(1 - cos wt) coth(beta w / 2) + i (sin wt - wt)]

with J and w in cm^-1 and wt converted to radians. Its first and second time
derivatives are obtained by differentiating under the integral sign, so the
three tables share one set of quadrature nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import integrate

from .constants import CM_TO_RAD_PER_FS, beta_cm


class BathError(ValueError):
    """Invalid bath parameters or spectral-density data."""


class QuadratureError(RuntimeError):
    """Frequency quadrature failed to converge."""

    def __init__(self, message, worst_time=None, error=None):
        super().__init__(message)
        self.worst_time = worst_time
        self.error = error


#: Ohmic integrals are truncated at this multiple of the cutoff frequency.
OHMIC_TRUNCATION = 40.0


@dataclass(frozen=True)
class BathSpec:
    """Ohmic bath with exponential cutoff, J(w) = lam * (w/wc) * exp(-w/wc)."""

    reorganization: float
    cutoff: float
    temperature: float
    form: str = "ohmic_exp"

    def __post_init__(self):
        if self.form != "ohmic_exp":
            raise BathError(f"unknown spectral density form {self.form!r}")
        if not self.reorganization >= 0:
            raise BathError("reorganization energy must be >= 0")
        if not self.cutoff > 0:
            raise BathError("cutoff frequency must be > 0")
        if not self.temperature > 0:
            raise BathError("temperature must be > 0 K")

    @property
    def omega_max(self) -> float:
        return OHMIC_TRUNCATION * self.cutoff

    def spectral_density(self, w):
        w = np.asarray(w, dtype=float)
        return self.reorganization * (w / self.cutoff) * np.exp(-w / self.cutoff)

    def density_over_omega(self, w):
        """J(w)/w, finite at w = 0."""
        w = np.asarray(w, dtype=float)
        return (self.reorganization / self.cutoff) * np.exp(-w / self.cutoff)

    def panel_edges(self):
        return np.array([0.0, self.omega_max])


@dataclass(frozen=True)
class TabulatedBath:
    """Spectral density given on a grid and linearly interpolated in w.

    A point (0, 0) is prepended when the table starts above zero frequency.
    """

    omega: np.ndarray
    values: np.ndarray
    temperature: float
    form: str = "tabulated"

    def __post_init__(self):
        w = np.asarray(self.omega, dtype=float).reshape(-1)
        j = np.asarray(self.values, dtype=float).reshape(-1)
        if w.size != j.size or w.size < 2:
            raise BathError("tabulated spectral density needs >= 2 (w, J) pairs")
        if np.any(np.diff(w) <= 0):
            raise BathError("tabulated frequencies must be strictly increasing")
        if w[0] < 0:
            raise BathError("tabulated frequencies must be non-negative")
        if not self.temperature > 0:
            raise BathError("temperature must be > 0 K")
        if w[0] > 0:
            w = np.concatenate(([0.0], w))
            j = np.concatenate(([0.0], j))
        object.__setattr__(self, "omega", w)
        object.__setattr__(self, "values", j)

    @classmethod
    def from_file(cls, path, temperature):
        data = np.loadtxt(Path(path), ndmin=2)
        if data.shape[1] != 2:
            raise BathError(f"{path}: expected two columns (w, J), got {data.shape[1]}")
        return cls(data[:, 0], data[:, 1], temperature)

    @property
    def omega_max(self) -> float:
        return float(self.omega[-1])

    def spectral_density(self, w):
        return np.interp(w, self.omega, self.values, right=0.0)

    def density_over_omega(self, w):
        w = np.asarray(w, dtype=float)
        if self.values[0] != 0.0:
            raise BathError("J(0) != 0: the reorganization integral diverges")
        slope = self.values[1] / self.omega[1]
        safe = np.where(w < self.omega[1], 1.0, w)
        return np.where(w < self.omega[1], slope, self.spectral_density(safe) / safe)

    def panel_edges(self):
        return self.omega


def reorganization_energy(spec, numeric: bool = False) -> float:
    """lam = int_0^inf J(w)/w dw in cm^-1.

    The Ohmic form is integrated analytically unless ``numeric`` is set.
    """
    if isinstance(spec, BathSpec) and not numeric:
        return float(spec.reorganization)
    def integrand(w):
        return float(spec.density_over_omega(w))

    if isinstance(spec, TabulatedBath):
        if spec.values[0] != 0.0:
            raise BathError("J(0) != 0: the reorganization integral diverges")
        pieces = [
            integrate.quad(integrand, a, b, epsabs=0.0, epsrel=1e-12)[0]
            for a, b in zip(spec.omega[:-1], spec.omega[1:])
        ]
        return float(sum(pieces))
    value, err = integrate.quad(integrand, 0.0, np.inf, epsabs=0.0, epsrel=1e-12, limit=200)
    if not np.isfinite(value) or err > 1e-8 * abs(value) + 1e-300:
        raise BathError(f"reorganization integral failed to converge (estimate {value}, error {err})")
    return float(value)


def time_grid(t_max: float, dt: float) -> np.ndarray:
    """Uniform grid 0, dt, ..., t_max; ``dt`` must divide ``t_max``."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    n = round(t_max / dt)
    if n < 1 or abs(n * dt - t_max) > 1e-9 * max(1.0, t_max):
        raise ValueError(f"dt={dt} does not divide t_max={t_max}")
    return np.arange(n + 1) * dt


@dataclass(frozen=True)
class LineBroadeningTable:
    """g(t), dg/dt and d2g/dt2 of one site bath on a uniform grid.

    g is dimensionless, gdot is in fs^-1 and gddot in fs^-2.
    """

    times: np.ndarray
    g: np.ndarray
    gdot: np.ndarray
    gddot: np.ndarray
    reorganization: float

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0


def _x_coth_x(x):
    small = x < 1e-6
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 + x * x / 3.0, safe / np.tanh(safe))


def _sin_minus_x_over_x(x):
    small = np.abs(x) < 1e-2
    safe = np.where(small, 1.0, x)
    x2 = x * x
    series = -x2 / 6.0 * (1.0 - x2 / 20.0 * (1.0 - x2 / 42.0 * (1.0 - x2 / 72.0)))
    return np.where(small, series, np.sin(safe) / safe - 1.0)


def _nodes(spec, t_max, order, panel_scale=1.0):
    """Gauss-Legendre nodes/weights on panels narrow enough for exp(i w t_max)."""
    tau_max = CM_TO_RAD_PER_FS * max(t_max, 1.0)
    edges = np.asarray(spec.panel_edges(), dtype=float)
    x, w = np.polynomial.legendre.leggauss(order)
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        n_panels = max(16, math.ceil(panel_scale * (b - a) * tau_max / (0.5 * np.pi)))
        if len(edges) > 2:
            # tabulated data: knots are panel edges, J is linear in between
            n_panels = max(1, math.ceil(panel_scale * (b - a) * tau_max / (0.5 * np.pi)))
        sub = np.linspace(a, b, n_panels + 1)
        half = 0.5 * np.diff(sub)
        mid = 0.5 * (sub[:-1] + sub[1:])
        nodes.append((mid[:, None] + half[:, None] * x[None, :]).ravel())
        weights.append((half[:, None] * w[None, :]).ravel())
    return np.concatenate(nodes), np.concatenate(weights)


def _integrate(spec, times, order, panel_scale=1.0, chunk=None, derivatives=True):
    """Return (G, G', G'') in reduced time tau = K t; see module docstring.

    Without ``derivatives`` only G is evaluated and the other two are None.
    """
    times = np.asarray(times, dtype=float)
    w, wt = _nodes(spec, float(np.max(np.abs(times))) if times.size else 1.0, order, panel_scale)
    jw = spec.density_over_omega(w) * wt
    beta = beta_cm(spec.temperature)
    wcoth = (2.0 / beta) * _x_coth_x(0.5 * beta * w)

    if chunk is None:
        # keep the (times x nodes) work arrays near 2e6 elements
        chunk = max(1, min(128, int(2e6 // w.size)))
    tau = CM_TO_RAD_PER_FS * times
    g = np.empty(times.size, dtype=complex)
    g1 = np.empty(times.size, dtype=complex) if derivatives else None
    g2 = np.empty(times.size, dtype=complex) if derivatives else None
    for s in range(0, times.size, chunk):
        tt = tau[s : s + chunk, None]
        x = tt * w[None, :]
        half_sinc = np.sinc(x / (2.0 * np.pi))
        one_minus_cos_over_w2 = 0.5 * tt * tt * half_sinc * half_sinc
        re_g = (one_minus_cos_over_w2 * wcoth) @ jw
        im_g = (tt * _sin_minus_x_over_x(x)) @ jw
        g[s : s + chunk] = re_g + 1j * im_g
        if not derivatives:
            continue
        re_g1 = (tt * np.sinc(x / np.pi) * wcoth) @ jw
        im_g1 = -(2.0 * np.sin(0.5 * x) ** 2) @ jw
        re_g2 = (np.cos(x) * wcoth) @ jw
        im_g2 = -(np.sin(x) * w[None, :]) @ jw
        g1[s : s + chunk] = re_g1 + 1j * im_g1
        g2[s : s + chunk] = re_g2 + 1j * im_g2
    return g, g1, g2


def tabulate_linebroadening(
    spec, times, order: int = 24, check: bool = True, rtol: float = 1e-8, derivatives: bool = True
) -> LineBroadeningTable:
    """Tabulate g, dg/dt and d2g/dt2 on ``times`` (fs).

    ``derivatives=False`` skips dg/dt and d2g/dt2 (left as None), which is
    all the absorption lineshape needs.

    With ``check`` set, the result is compared with a lower-order rule on the
    same panels and a :class:`QuadratureError` naming the worst time is raised
    when they disagree by more than ``rtol`` relative to the local value.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("times must be a non-empty 1-d grid")
    if times.size > 2:
        steps = np.diff(times)
        if np.any(steps <= 0) or np.ptp(steps) > 1e-9 * steps[0]:
            raise ValueError("times must form a uniform increasing grid")

    g, g1, g2 = _integrate(spec, times, order, derivatives=derivatives)
    if check:
        lo = _integrate(spec, times, order - 8, derivatives=derivatives)
        worst_err, worst_t = 0.0, None
        for ref, est in zip((g, g1, g2), lo):
            if ref is None:
                continue
            floor = 1e-6 * np.max(np.abs(ref)) + 1e-300
            rel = np.abs(ref - est) / np.maximum(np.abs(ref), floor)
            i = int(np.argmax(rel))
            if rel[i] > worst_err:
                worst_err, worst_t = float(rel[i]), float(times[i])
        if worst_err > rtol:
            raise QuadratureError(
                f"line-broadening quadrature not converged: relative error {worst_err:.3g} at t={worst_t} fs",
                worst_time=worst_t,
                error=worst_err,
            )

    k = CM_TO_RAD_PER_FS
    zero = times == 0.0
    g[zero] = 0.0
    if derivatives:
        g1[zero] = 0.0
    return LineBroadeningTable(
        times=times,
        g=g,
        gdot=k * g1 if derivatives else None,
        gddot=k * k * g2 if derivatives else None,
        reorganization=reorganization_energy(spec),
    )
