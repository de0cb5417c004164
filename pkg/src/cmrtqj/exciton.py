"""Electronic Hamiltonian in the site, exciton and laser-dressed bases.

Level index 0 is always the electronic ground state |G>; indices 1..M are the
single-excitation states. Basis vectors are stored as rows: ``vectors[k, n]``
is the amplitude of site-basis level ``n`` in basis state ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constants import CM_TO_RAD_PER_FS


class ModelError(ValueError):
    """Raised when an electronic model violates its invariants."""


def _as_array(values, name, dtype=float):
    arr = np.array(values, dtype=dtype)
    if not np.all(np.isfinite(arr)):
        raise ModelError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class SiteBasisModel:
    """Frenkel-exciton Hamiltonian with an explicit ground level.

    Attributes:
        site_energies: E_n in cm^-1, length M.
        couplings: symmetric M x M coupling matrix J_nm in cm^-1, zero diagonal.
        ground_energy: E_0 in cm^-1.
        transition_dipoles: |mu| in Debye for each exciton->ground transition,
            or per site when ``dipole_basis == "site"``.
        dipole_basis: ``"exciton"`` or ``"site"``.
    """

    site_energies: np.ndarray
    couplings: np.ndarray
    ground_energy: float = 0.0
    transition_dipoles: np.ndarray | None = None
    dipole_basis: str = "exciton"

    def __post_init__(self):
        energies = _as_array(self.site_energies, "site_energies").reshape(-1)
        m = energies.size
        if m < 1:
            raise ModelError("model needs at least one site")
        couplings = _as_array(self.couplings, "couplings")
        if m == 1 and couplings.size in (0, 1):
            couplings = np.zeros((1, 1))
        if couplings.shape != (m, m):
            raise ModelError(
                f"couplings must be {m}x{m} to match site_energies, got {couplings.shape}"
            )
        if not np.array_equal(couplings, couplings.T):
            raise ModelError("coupling matrix must be symmetric")
        if np.any(np.diag(couplings) != 0.0):
            raise ModelError("coupling matrix must have an exactly zero diagonal")
        dipoles = self.transition_dipoles
        if dipoles is not None:
            dipoles = _as_array(dipoles, "transition_dipoles").reshape(-1)
            if dipoles.size != m:
                raise ModelError(f"expected {m} transition dipoles, got {dipoles.size}")
        if self.dipole_basis not in ("exciton", "site"):
            raise ModelError(f"dipole_basis must be 'exciton' or 'site', got {self.dipole_basis!r}")
        object.__setattr__(self, "site_energies", energies)
        object.__setattr__(self, "couplings", couplings)
        object.__setattr__(self, "ground_energy", float(self.ground_energy))
        object.__setattr__(self, "transition_dipoles", dipoles)

    @property
    def num_sites(self) -> int:
        return self.site_energies.size

    @property
    def num_levels(self) -> int:
        return self.num_sites + 1

    def hamiltonian(self) -> np.ndarray:
        """Full (M+1) x (M+1) electronic Hamiltonian in the site basis."""
        h = np.zeros((self.num_levels, self.num_levels))
        h[0, 0] = self.ground_energy
        h[1:, 1:] = np.diag(self.site_energies) + self.couplings
        return h


def _fix_gauge(vectors: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude entry of each row positive real."""
    out = np.array(vectors, dtype=complex)
    idx = np.argmax(np.abs(out), axis=1)
    pivot = out[np.arange(out.shape[0]), idx]
    out *= (np.conj(pivot) / np.abs(pivot))[:, None]
    if np.allclose(out.imag, 0.0, atol=0.0):
        return out.real.copy()
    return out


def overlap_tensor(vectors: np.ndarray) -> np.ndarray:
    """a_{kk'}(n) = conj(V_kn) V_k'n over the sites n = 1..M."""
    sites = vectors[:, 1:]
    a = np.conj(sites)[:, None, :] * sites[None, :, :]
    if np.iscomplexobj(a) and np.allclose(a.imag, 0.0, atol=1e-15):
        a = a.real
    return a


def _reorg_shifts(a: np.ndarray, site_reorganization: np.ndarray) -> np.ndarray:
    diag = np.real(np.einsum("kkn->kn", a))
    return (diag**2) @ site_reorganization


@dataclass(frozen=True)
class ExcitonBasis:
    """Eigenbasis of the undriven electronic Hamiltonian."""

    eigenenergies: np.ndarray
    coefficients: np.ndarray
    overlap: np.ndarray
    reorg_shifts: np.ndarray
    site_reorganization: np.ndarray
    ground_energy: float = 0.0
    tag: str = field(default="exciton", init=False)

    @property
    def shifted_energies(self) -> np.ndarray:
        return self.eigenenergies - self.reorg_shifts

    @property
    def site_vectors(self) -> np.ndarray:
        return self.coefficients

    @property
    def num_levels(self) -> int:
        return self.eigenenergies.size

    @property
    def carrier(self) -> float:
        return 0.0


@dataclass(frozen=True)
class DressedBasis:
    """Eigenbasis of the rotating-frame Hamiltonian under a constant field.

    ``coefficients`` holds C^(2): rows are dressed states expanded over the
    exciton basis of ``exciton``.
    """

    carrier: float
    laser_couplings: np.ndarray
    eigenenergies: np.ndarray
    coefficients: np.ndarray
    exciton: ExcitonBasis
    overlap: np.ndarray
    reorg_shifts: np.ndarray
    tag: str = field(default="dressed", init=False)

    @property
    def shifted_energies(self) -> np.ndarray:
        return self.eigenenergies - self.reorg_shifts

    @property
    def site_vectors(self) -> np.ndarray:
        return self.coefficients @ self.exciton.coefficients

    @property
    def num_levels(self) -> int:
        return self.eigenenergies.size


def diagonalize_site_hamiltonian(
    model: SiteBasisModel, site_reorganization=None
) -> ExcitonBasis:
    """Diagonalize the single-excitation block; the ground level stays index 0.

    Excited eigenstates are sorted by ascending energy, ties broken by larger
    |C_k1| and then by eigensolver index.
    """
    m = model.num_sites
    lam = np.zeros(m) if site_reorganization is None else np.asarray(site_reorganization, float)
    if lam.shape != (m,):
        raise ModelError(f"site_reorganization must have length {m}")
    if np.any(lam < 0):
        raise ModelError("site reorganization energies must be non-negative")

    block = np.diag(model.site_energies) + model.couplings
    w, v = np.linalg.eigh(block)
    rows = _fix_gauge(v.T)
    order = np.lexsort((np.arange(m), -np.abs(rows[:, 0]), np.round(w, 9)))
    w, rows = w[order], rows[order]

    coeffs = np.zeros((m + 1, m + 1), dtype=rows.dtype)
    coeffs[0, 0] = 1.0
    coeffs[1:, 1:] = rows
    energies = np.concatenate(([model.ground_energy], w))
    a = overlap_tensor(coeffs)
    return ExcitonBasis(
        eigenenergies=energies,
        coefficients=coeffs,
        overlap=a,
        reorg_shifts=_reorg_shifts(a, lam),
        site_reorganization=lam,
        ground_energy=model.ground_energy,
    )


def build_dressed_basis(basis: ExcitonBasis, carrier: float, couplings) -> DressedBasis:
    """Diagonalize the RWA Hamiltonian in the frame rotating at ``carrier``.

    The ground level is lifted by ``carrier`` and coupled to exciton k by g_k.
    The dressed state with the largest ground-state weight is stored first,
    the rest in ascending energy, so that zero field reproduces the exciton
    basis exactly.
    """
    g = np.asarray(couplings, dtype=float).reshape(-1)
    n = basis.num_levels
    if g.size != n - 1:
        raise ModelError(f"expected {n - 1} laser couplings, got {g.size}")
    if not np.isfinite(carrier):
        raise ModelError("carrier frequency must be finite")

    h = np.diag(basis.eigenenergies.astype(float))
    h[0, 0] += carrier
    h[0, 1:] = g
    h[1:, 0] = g
    w, v = np.linalg.eigh(h)
    rows = _fix_gauge(v.T)
    first = int(np.argmax(np.abs(rows[:, 0]) ** 2))
    rest = [k for k in np.argsort(w, kind="stable") if k != first]
    order = np.array([first, *rest])
    w, rows = w[order], rows[order]

    site_vectors = rows @ basis.coefficients
    a = overlap_tensor(site_vectors)
    return DressedBasis(
        carrier=float(carrier),
        laser_couplings=g,
        eigenenergies=w,
        coefficients=rows,
        exciton=basis,
        overlap=a,
        reorg_shifts=_reorg_shifts(a, basis.site_reorganization),
    )


def exciton_dipoles(model: SiteBasisModel, basis: ExcitonBasis) -> np.ndarray:
    """Transition dipoles mu_{k0} for k = 1..M in the exciton basis."""
    if model.transition_dipoles is None:
        raise ModelError("model has no transition dipoles")
    if model.dipole_basis == "exciton":
        return model.transition_dipoles.copy()
    return basis.coefficients[1:, 1:] @ model.transition_dipoles


def _ground_phase(carrier, t, direction):
    sign = 1.0 if direction == "to_lab" else -1.0
    if direction not in ("to_lab", "to_rotating"):
        raise ValueError(f"direction must be 'to_lab' or 'to_rotating', got {direction!r}")
    return np.exp(sign * 1j * CM_TO_RAD_PER_FS * carrier * t)


def frame_transform(obj, carrier: float, t: float, direction: str = "to_lab") -> np.ndarray:
    """Apply U(t) = exp(i w t |G><G|) (``to_lab``) or its adjoint (``to_rotating``).

    A 1-d input is a ket, a 2-d input a density matrix. Only the ground-state
    amplitude (row/column 0) picks up the phase.
    """
    phase = _ground_phase(carrier, t, direction)
    out = np.array(obj, dtype=complex)
    if out.ndim == 1:
        out[0] *= phase
    elif out.ndim == 2:
        # the diagonal is left untouched so populations and trace stay exact
        out[0, 1:] *= phase
        out[1:, 0] *= np.conj(phase)
    else:
        raise ValueError("frame_transform expects a ket or a density matrix")
    return out


def transform_kets(kets: np.ndarray, carrier: float, t: float, direction: str = "to_lab") -> np.ndarray:
    """Frame transform of a stack of kets with shape (n, L), in place."""
    kets[:, 0] *= _ground_phase(carrier, t, direction)
    return kets
