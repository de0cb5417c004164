"""Site populations, concurrence and the linear absorption spectrum."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.signal import find_peaks

from .bath import tabulate_linebroadening, time_grid
from .constants import CM_TO_RAD_PER_FS
from .exciton import ExcitonBasis


class DomainError(ValueError):
    """The state lies outside the domain of the requested formula."""


def site_populations(rho) -> np.ndarray:
    """Diagonal of a site-basis density matrix: (P_G, P_1, ..., P_M).

    Accepts a single matrix or a stack with a leading time axis.
    """
    rho = np.asarray(rho)
    return np.real(np.einsum("...ii->...i", rho))


def exciton_to_site(rho_exciton, basis: ExcitonBasis) -> np.ndarray:
    """rho_site = C^T rho_exc C* for an exciton-basis density matrix."""
    c = basis.coefficients
    return c.T @ rho_exciton @ np.conj(c)


def concurrence(rho) -> float:
    """C = 2 |rho_21| of a state confined to the zero/single-excitation block.

    ``rho`` is either the (M+1)x(M+1) site-basis matrix {G, 1, 2, ...} or a
    4x4 two-qubit matrix in the order |00>, |10>, |01>, |11>, whose doubly
    excited population must vanish.
    """
    rho = np.asarray(rho)
    if rho.shape == (4, 4):
        if abs(rho[3, 3]) > 1e-10:
            raise DomainError(f"double-excitation population {abs(rho[3, 3]):.3g} > 1e-10")
        return float(2.0 * abs(rho[2, 1]))
    if rho.ndim != 2 or rho.shape[0] < 3 or rho.shape[0] != rho.shape[1]:
        raise DomainError(f"need a square matrix with at least two sites, got shape {rho.shape}")
    return float(2.0 * abs(rho[2, 1]))


def block_to_two_qubit(rho) -> np.ndarray:
    """Embed the {G, 1, 2} block into two qubits: G -> |00>, 1 -> |10>, 2 -> |01>."""
    rho = np.asarray(rho)
    out = np.zeros((4, 4), dtype=complex)
    out[:3, :3] = rho[:3, :3]
    return out


def wootters_concurrence(rho4) -> float:
    """General two-qubit concurrence max(0, l1 - l2 - l3 - l4)."""
    rho4 = np.asarray(rho4, dtype=complex)
    sy = np.array([[0.0, -1j], [1j, 0.0]])
    flip = np.kron(sy, sy)
    tilde = flip @ rho4.conj() @ flip
    ev = np.linalg.eigvals(rho4 @ tilde)
    lam = np.sort(np.sqrt(np.clip(ev.real, 0.0, None)))[::-1]
    return float(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]))


@dataclass(frozen=True)
class AbsorptionSpectrum:
    """Max-normalized I(omega); ``components[k]`` is exciton k+1's share on the same scale."""

    omega: np.ndarray
    intensity: np.ndarray
    components: np.ndarray
    t_cut: float
    windowed: bool = False

    def peaks(self, prominence: float = 1e-3) -> np.ndarray:
        """Frequencies of the local maxima of I, ignoring bumps below ``prominence``."""
        idx, _ = find_peaks(self.intensity, prominence=prominence)
        return self.omega[idx]

    def component_areas(self) -> np.ndarray:
        return integrate.simpson(self.components, x=self.omega, axis=1)


def correlation_function(basis: ExcitonBasis, baths, rates_inf, dipoles, times):
    """Per-exciton dipole correlation chi_k(t) on ``times`` (fs); shape (M, T)."""
    m = basis.num_levels - 1
    mu2 = np.abs(np.asarray(dipoles, dtype=complex).reshape(-1)) ** 2
    if mu2.size != m:
        raise ValueError(f"expected {m} transition dipoles, got {mu2.size}")
    rates_inf = np.asarray(rates_inf, dtype=float)
    if rates_inf.shape != (m + 1, m + 1):
        raise ValueError(f"stationary rates must be {(m + 1, m + 1)}")

    if isinstance(baths, (list, tuple)):
        if len(baths) != m:
            raise ValueError(f"expected {m} site baths, got {len(baths)}")
        g_sites = np.stack([tabulate_linebroadening(b, times, derivatives=False).g for b in baths], axis=1)
    else:
        g_sites = np.repeat(tabulate_linebroadening(baths, times, derivatives=False).g[:, None], m, axis=1)

    d = np.real(np.einsum("kkn->kn", basis.overlap))[1:]
    g_kkkk = g_sites @ (d**2).T
    out_rate = rates_inf[:, 1:].sum(axis=0) - np.diag(rates_inf)[1:]
    eps = basis.shifted_energies
    phase = CM_TO_RAD_PER_FS * (eps[0] - eps[1:])
    t = np.asarray(times, dtype=float)
    return mu2[:, None] * np.exp(1j * phase[:, None] * t[None, :] - g_kkkk.T - 0.5 * out_rate[:, None] * t[None, :])


def absorption_spectrum(
    basis: ExcitonBasis,
    baths,
    rates_inf,
    dipoles,
    omega,
    dt: float = 0.5,
    t_max: float = 8192.0,
    cutoff: float = 1e-8,
    horizon: float = 512.0,
) -> AbsorptionSpectrum:
    """I(omega) = Re int_0^inf chi(t) exp(i omega t) dt, max-normalized.

    The half-line integral uses Simpson's rule on a ``dt`` grid and stops
    once |chi| stays below ``cutoff`` * |chi(0)|. The tabulated horizon starts
    at ``horizon`` fs and doubles until chi has decayed; if it still has not
    by ``t_max``, an exponential window is applied and a warning issued.
    """
    while True:
        times = time_grid(horizon, dt)
        chi_k = correlation_function(basis, baths, rates_inf, dipoles, times)
        mag = np.abs(chi_k.sum(axis=0))
        above = np.flatnonzero(mag >= cutoff * mag[0])
        last = int(above[-1]) if above.size else 0
        if last < times.size - 1 or horizon >= t_max:
            break
        horizon = min(2.0 * horizon, t_max)
    windowed = last >= times.size - 1
    if windowed:
        warnings.warn(
            "dipole correlation did not decay within t_max; applying an exponential window",
            RuntimeWarning,
            stacklevel=2,
        )
        window = np.exp(-np.log(1.0 / cutoff) * times / times[-1])
        chi_k = chi_k * window[None, :]
    else:
        # odd sample count keeps Simpson's rule in its composite form
        stop = min(last + 2 + (last % 2), times.size)
        times = times[:stop]
        chi_k = chi_k[:, :stop]

    omega = np.asarray(omega, dtype=float)
    kernel = np.exp(1j * CM_TO_RAD_PER_FS * omega[:, None] * times[None, :])
    comps = np.stack([np.real(integrate.simpson(kernel * c[None, :], x=times, axis=1)) for c in chi_k])
    total = comps.sum(axis=0)
    scale = np.max(total)
    return AbsorptionSpectrum(
        omega=omega,
        intensity=total / scale,
        components=comps / scale,
        t_cut=float(times[-1]),
        windowed=windowed,
    )
