"""Time-dependent CMRT dissipation and pure-dephasing rates.

Rates are in fs^-1. ``dissipative[i, k, kp]`` is the transfer rate from level
``kp`` into level ``k`` at grid time ``times[i]``; the electronic ground state
is level 0 and is included so that dressed bases, whose states mix ground and
excited levels, use the same code path.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .bath import LineBroadeningTable
from .constants import CM_TO_RAD_PER_FS


class RateError(ValueError):
    """Inconsistent inputs for a rate calculation."""


class PlateauError(RuntimeError):
    """Rates have not settled to a stationary value on the grid."""

    def __init__(self, message, drift=None):
        super().__init__(message)
        self.drift = drift


@dataclass(frozen=True)
class SiteBroadening:
    """Line-broadening tables of all sites stacked on a common grid.

    Arrays have shape (T, M); ``reorganization`` has shape (M,).
    """

    times: np.ndarray
    g: np.ndarray
    gdot: np.ndarray
    gddot: np.ndarray
    reorganization: np.ndarray

    @classmethod
    def from_tables(cls, tables, num_sites=None):
        """Stack per-site tables; a single table is shared by ``num_sites`` sites."""
        if isinstance(tables, LineBroadeningTable):
            if num_sites is None:
                raise RateError("num_sites is required with a single shared table")
            tables = [tables] * num_sites
        tables = list(tables)
        if num_sites is not None and len(tables) != num_sites:
            raise RateError(f"expected {num_sites} broadening tables, got {len(tables)}")
        times = tables[0].times
        for tab in tables[1:]:
            if tab.times.shape != times.shape or not np.array_equal(tab.times, times):
                raise RateError("site broadening tables use different time grids")
        return cls(
            times=times,
            g=np.stack([t.g for t in tables], axis=1),
            gdot=np.stack([t.gdot for t in tables], axis=1),
            gddot=np.stack([t.gddot for t in tables], axis=1),
            reorganization=np.array([t.reorganization for t in tables], dtype=float),
        )

    @property
    def num_sites(self) -> int:
        return self.g.shape[1]


@dataclass(frozen=True)
class RateTables:
    """Dissipation and pure-dephasing rates of one basis on the grid."""

    times: np.ndarray
    dissipative: np.ndarray
    pure_dephasing: np.ndarray
    basis_tag: str = "exciton"

    @property
    def num_levels(self) -> int:
        return self.dissipative.shape[1]


def _site_diagonals(overlap):
    return np.real(np.einsum("kkn->kn", overlap))


def composite_lineshape(overlap, values, i1, i2, i3, i4):
    """Contract site values into g_{k1k2k3k4} = sum_n a_{k1k2}(n) a_{k3k4}(n) v_n.

    ``values`` has shape (M,) for reorganization energies or (T, M) for
    line-broadening tables.
    """
    w = overlap[i1, i2] * overlap[i3, i4]
    return np.asarray(values) @ w


def _check_grid(basis, broadening: SiteBroadening):
    m = basis.overlap.shape[2]
    if broadening.num_sites != m:
        raise RateError(f"basis has {m} sites but broadening tables cover {broadening.num_sites}")


def dissipation_integrand(basis, broadening: SiteBroadening, stop=None) -> np.ndarray:
    """Integrand f_{kk'}(tau) of the dissipation rate on the first ``stop`` grid points."""
    _check_grid(basis, broadening)
    stop = broadening.times.size if stop is None else stop
    g = broadening.g[:stop]
    gdot = broadening.gdot[:stop]
    gddot = broadening.gddot[:stop]
    lam = broadening.reorganization
    k = CM_TO_RAD_PER_FS

    a = basis.overlap
    b = a.transpose(1, 0, 2)
    d = _site_diagonals(a)
    eps = basis.shifted_energies
    shifts = (d**2) @ lam
    cross = np.einsum("an,bn,n->ab", d, d, lam)

    # phase[k, kp]: energy gap and reorganization shifts, both in rad/fs
    phase = k * ((eps[None, :] - eps[:, None]) - (shifts[:, None] + shifts[None, :] - 2.0 * cross))
    g2 = np.einsum("an,bn,tn->tab", d, d, g)
    g1 = np.einsum("tkk->tk", g2)
    envelope = np.exp(
        1j * phase[None] * broadening.times[:stop, None, None]
        - g1[:, :, None]
        - g1[:, None, :]
        + 2.0 * g2
    )

    diff = d[:, None, :] - d[None, :, :]
    x1 = np.einsum("abn,tn->tab", b * diff, gdot) - 2j * k * np.einsum("abn,bn,n->ab", b, d, lam)[None]
    x2 = np.einsum("abn,tn->tab", a * diff, gdot) - 2j * k * np.einsum("abn,bn,n->ab", a, d, lam)[None]
    y = np.einsum("abn,tn->tab", b * a, gddot)
    return envelope * (y - x1 * x2)


def dissipation_rate_table(basis, broadening: SiteBroadening, stop=None) -> np.ndarray:
    """R^dis_{kk'}(t_i) by cumulative trapezoid integration of the integrand."""
    f = dissipation_integrand(basis, broadening, stop)
    times = broadening.times[: f.shape[0]]
    if f.shape[0] == 1:
        out = np.zeros(f.shape)
    else:
        dt = times[1] - times[0]
        out = 2.0 * np.real(integrate.cumulative_trapezoid(f, dx=dt, axis=0, initial=0.0))
    idx = np.arange(out.shape[1])
    out[:, idx, idx] = 0.0
    return out


def pure_dephasing_rate_table(basis, broadening: SiteBroadening, stop=None) -> np.ndarray:
    """R^pd_{kk'}(t_i) = sum_n (a_kk(n) - a_k'k'(n))^2 Re gdot_n(t_i)."""
    _check_grid(basis, broadening)
    d = _site_diagonals(basis.overlap)
    diff2 = (d[:, None, :] - d[None, :, :]) ** 2
    stop = broadening.times.size if stop is None else stop
    return np.einsum("abn,tn->tab", diff2, broadening.gdot[:stop].real)


def compute_rate_tables(basis, broadening: SiteBroadening, stop=None) -> RateTables:
    """Both rate tables of ``basis`` on the broadening grid (optionally truncated)."""
    stop = broadening.times.size if stop is None else int(stop)
    if not 1 <= stop <= broadening.times.size:
        raise RateError(f"stop index {stop} outside the broadening grid")
    return RateTables(
        times=broadening.times[:stop],
        dissipative=dissipation_rate_table(basis, broadening, stop),
        pure_dephasing=pure_dephasing_rate_table(basis, broadening, stop),
        basis_tag=getattr(basis, "tag", "exciton"),
    )


def stationary_dissipation_rates(
    tables: RateTables, fraction: float = 0.1, rtol: float = 0.01, atol: float = 1e-5
) -> np.ndarray:
    """Plateau R^dis(inf) as the mean over the final ``fraction`` of the grid.

    Drift is the difference between the means of the two halves of that
    window, which is insensitive to residual oscillations of the integral.
    ``atol`` (fs^-1) is a floor below which a rate counts as zero; the default
    corresponds to a 100 ps lifetime.

    Raises:
        PlateauError: when any pair drifts by more than max(rtol * |plateau|, atol).
    """
    rates = tables.dissipative
    n = rates.shape[0]
    start = min(n - 2, int(np.floor((1.0 - fraction) * (n - 1))))
    if start < 0:
        raise PlateauError("grid too short to detect a plateau")
    tail = rates[start:]
    plateau = tail.mean(axis=0)
    half = tail.shape[0] // 2
    drift = np.abs(tail[:half].mean(axis=0) - tail[half:].mean(axis=0))
    limit = np.maximum(rtol * np.abs(plateau), atol)
    if np.any(drift > limit):
        worst = float(np.max(drift / np.maximum(np.abs(plateau), atol)))
        raise PlateauError(
            f"dissipation rates not stationary: relative drift {worst:.3g} over the final "
            f"{fraction:.0%} of the grid; extend t_max",
            drift=worst,
        )
    if np.any(plateau < -atol):
        warnings.warn("negative stationary dissipation rate", RuntimeWarning, stacklevel=2)
    return plateau
