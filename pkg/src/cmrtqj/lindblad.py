"""Generalized Lindblad form of the CMRT equations and a deterministic integrator.

In the eigenbasis |e_k> of one segment the generator is

    d rho/dt = -i [H_e, rho] + sum_{k,k'} R_{kk'}(t) (A rho A^+ - {A^+ A, rho}/2),
    A = |e_k><e_k'|,

with R_{kk'} = R^dis_{kk'} for k != k' and R_{kk} = Gamma_k, the dephasing
rates fitted to the CMRT pure-dephasing matrix. Because every jump operator
is an eigenbasis projector pair, the dissipator only needs the rate matrix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .constants import CM_TO_RAD_PER_FS
from .rates import RateTables

log = logging.getLogger(__name__)


class IntegrationError(RuntimeError):
    """The deterministic integrator lost trace or Hermiticity."""


@dataclass(frozen=True)
class DephasingFit:
    """Fitted Gamma_k(t_i) (fs^-1) with the mean-square misfit per time."""

    gamma: np.ndarray
    residual: np.ndarray


@lru_cache(maxsize=32)
def _pair_pinv(n: int):
    pairs = [(k, kp) for k in range(n) for kp in range(k + 1, n)]
    a = np.zeros((len(pairs), n))
    for row, (k, kp) in enumerate(pairs):
        a[row, k] = a[row, kp] = 0.5
    rows = np.array([p[0] for p in pairs], dtype=int)
    cols = np.array([p[1] for p in pairs], dtype=int)
    return a, np.linalg.pinv(a), rows, cols


def fit_lindblad_dephasing(rpd) -> DephasingFit:
    """Minimum-norm least-squares Gamma with (Gamma_k + Gamma_k')/2 = R^pd_kk'.

    Args:
        rpd: symmetric pure-dephasing matrix with zero diagonal, shape (n, n),
            or a stack of them with shape (T, n, n).

    Returns:
        A fit whose arrays carry the same leading time axis as ``rpd``.
    """
    rpd = np.asarray(rpd, dtype=float)
    single = rpd.ndim == 2
    stack = rpd[None] if single else rpd
    if stack.ndim != 3 or stack.shape[1] != stack.shape[2]:
        raise ValueError(f"pure-dephasing matrix must be square, got shape {rpd.shape}")
    n = stack.shape[1]
    if n < 2:
        gamma = np.zeros(stack.shape[:2])
        residual = np.zeros(stack.shape[0])
    else:
        a, pinv, rows, cols = _pair_pinv(n)
        rhs = stack[:, rows, cols]
        gamma = rhs @ pinv.T
        residual = np.mean((gamma @ a.T - rhs) ** 2, axis=1)
    if single:
        return DephasingFit(gamma[0], residual[0])
    return DephasingFit(gamma, residual)


def mean_square_displacement(gamma, rpd) -> float:
    """Objective minimized by :func:`fit_lindblad_dephasing`."""
    gamma = np.asarray(gamma, dtype=float)
    n = gamma.size
    iu = np.triu_indices(n, 1)
    pred = 0.5 * (gamma[:, None] + gamma[None, :])
    return float(np.mean((np.asarray(rpd)[iu] - pred[iu]) ** 2)) if n > 1 else 0.0


@dataclass(frozen=True)
class LindbladGenerator:
    """Generator of one constant-field segment on the global time grid.

    Attributes:
        energies: eigenvalues of H_e in cm^-1 (reorganization-shifted).
        vectors: rows are the eigenstates over the site-basis levels.
        carrier: frame frequency in cm^-1 (0 for the lab frame).
        times: global grid times (fs) covered by this segment, both ends.
        rates: R_{kk'}(t_i) in fs^-1 with Gamma_k on the diagonal.
    """

    energies: np.ndarray
    vectors: np.ndarray
    carrier: float
    times: np.ndarray
    rates: np.ndarray

    @property
    def num_levels(self) -> int:
        return self.energies.size

    @property
    def num_steps(self) -> int:
        return self.times.size - 1

    def decay(self, i: int) -> np.ndarray:
        """Total outflow D_k = sum_j R_{jk} of every eigenstate at step ``i``."""
        return self.rates[i].sum(axis=0)

    def to_eigen(self, rho_site: np.ndarray) -> np.ndarray:
        v = self.vectors
        return np.conj(v) @ rho_site @ v.T

    def to_site(self, rho_eigen: np.ndarray) -> np.ndarray:
        v = self.vectors
        return v.T @ rho_eigen @ np.conj(v)

    def hamiltonian_site(self) -> np.ndarray:
        """H_e in the site basis of the segment frame, cm^-1."""
        v = self.vectors
        return v.T @ np.diag(self.energies) @ np.conj(v)


def assemble_generator(basis, tables: RateTables, fit: DephasingFit | None = None, start=0, stop=None):
    """Generator over grid indices ``start..stop`` of ``tables`` (inclusive)."""
    stop = tables.times.size - 1 if stop is None else int(stop)
    if not 0 <= start <= stop < tables.times.size:
        raise ValueError(f"segment [{start}, {stop}] outside the rate grid")
    if fit is None:
        fit = fit_lindblad_dephasing(tables.pure_dephasing[start : stop + 1])
        gamma = fit.gamma
    else:
        gamma = fit.gamma[start : stop + 1]
    rates = tables.dissipative[start : stop + 1].copy()
    idx = np.arange(rates.shape[1])
    rates[:, idx, idx] = gamma
    return LindbladGenerator(
        energies=np.asarray(basis.shifted_energies, dtype=float),
        vectors=np.asarray(basis.site_vectors),
        carrier=float(basis.carrier),
        times=tables.times[start : stop + 1],
        rates=rates,
    )


def _dissipator(rho, rates, decay):
    out = -0.5 * (decay[:, None] + decay[None, :]) * rho
    out[np.diag_indices_from(out)] += rates @ np.real(np.diag(rho))
    return out


def lawson_rk4_step(rho, omega, rates, h):
    """One integrating-factor RK4 step in the eigenbasis.

    ``omega[a, b]`` is the Bohr frequency K (e_a - e_b) in rad/fs; the unitary
    part is applied exactly and RK4 acts on the dissipator only.
    """
    decay = rates.sum(axis=0)
    half = np.exp(-0.5j * h * omega)
    full = half * half
    k1 = _dissipator(rho, rates, decay)
    a_half = half * rho
    k2 = _dissipator(a_half + 0.5 * h * half * k1, rates, decay)
    k3 = _dissipator(a_half + 0.5 * h * k2, rates, decay)
    k4 = _dissipator(full * rho + h * half * k3, rates, decay)
    return full * rho + (h / 6.0) * (full * k1 + 2.0 * half * (k2 + k3) + k4)


@dataclass(frozen=True)
class OracleResult:
    """Site-basis density matrices at every grid point of a segment."""

    times: np.ndarray
    rho: np.ndarray
    min_eigenvalue: float


def oracle_propagate(generator: LindbladGenerator, rho0, substeps: int = 1, trace_tol: float = 1e-8) -> OracleResult:
    """Integrate the generator from ``rho0`` (site basis, segment frame).

    Rates are frozen on each grid step [t_i, t_i+1); ``substeps`` subdivides
    each step for convergence checks.

    Raises:
        IntegrationError: if the trace drifts by more than ``trace_tol`` or the
            state loses Hermiticity.
    """
    rho0 = np.asarray(rho0, dtype=complex)
    n = generator.num_levels
    if rho0.shape != (n, n):
        raise ValueError(f"rho0 must be {n}x{n}")
    if np.max(np.abs(rho0 - rho0.conj().T)) > 1e-12:
        raise ValueError("rho0 must be Hermitian")
    trace0 = np.trace(rho0).real
    if abs(trace0 - 1.0) > 1e-10:
        raise ValueError(f"rho0 must have unit trace, got {trace0}")

    eps = generator.energies
    omega = CM_TO_RAD_PER_FS * (eps[:, None] - eps[None, :])
    out = np.empty((generator.times.size, n, n), dtype=complex)
    rho = generator.to_eigen(rho0)
    out[0] = rho0
    min_eig = float(np.min(np.linalg.eigvalsh(rho0)))
    for i in range(generator.num_steps):
        h = (generator.times[i + 1] - generator.times[i]) / substeps
        for _ in range(substeps):
            rho = lawson_rk4_step(rho, omega, generator.rates[i], h)
        drift = abs(np.trace(rho).real - 1.0)
        if drift > trace_tol:
            raise IntegrationError(f"trace drifted by {drift:.3g} at t={generator.times[i + 1]} fs")
        herm = np.max(np.abs(rho - rho.conj().T))
        if herm > 1e-10:
            raise IntegrationError(f"Hermiticity lost ({herm:.3g}) at t={generator.times[i + 1]} fs")
        out[i + 1] = generator.to_site(rho)
        lowest = float(np.min(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))))
        if lowest < min_eig:
            if lowest < -1e-12 and min_eig >= -1e-12:
                log.info("transient positivity violation at t=%s fs (eigenvalue %.3g)", generator.times[i + 1], lowest)
            min_eig = lowest
    return OracleResult(times=generator.times, rho=out, min_eigenvalue=min_eig)
