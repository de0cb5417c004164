from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmrtqj.constants import CM_TO_RAD_PER_FS
from cmrtqj.exciton import (
    ModelError,
    SiteBasisModel,
    build_dressed_basis,
    diagonalize_site_hamiltonian,
    frame_transform,
    transform_kets,
)

from conftest import dimer


def test_unit_constant():
    assert CM_TO_RAD_PER_FS == pytest.approx(1.8836515673e-4, rel=1e-9)


@pytest.mark.parametrize(
    "energies, couplings",
    [
        ([1.0, 2.0], [[0.0, 1.0], [2.0, 0.0]]),
        ([1.0, 2.0], [[1.0, 1.0], [1.0, 0.0]]),
        ([1.0, 2.0], [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]),
        ([], []),
    ],
)
def test_model_validation(energies, couplings):
    with pytest.raises(ModelError):
        SiteBasisModel(energies, couplings)


def test_dimer_eigenenergies_analytic():
    basis = diagonalize_site_hamiltonian(dimer(300.0, 120.0, 100.0))
    split = np.sqrt(10.0**2 + 300.0**2)
    np.testing.assert_allclose(basis.eigenenergies[1:], [110.0 - split, 110.0 + split], atol=1e-10)
    np.testing.assert_allclose(basis.eigenenergies[1:], [-190.17, 410.17], atol=5e-3)


def test_uncoupled_sites_identity():
    basis = diagonalize_site_hamiltonian(dimer(0.0))
    # ascending order puts site 2 (100 cm^-1) first
    np.testing.assert_allclose(np.abs(basis.coefficients), [[1, 0, 0], [0, 0, 1], [0, 1, 0]], atol=0)
    np.testing.assert_array_equal(basis.overlap[1, 2], 0.0)


def test_symmetric_dimer_half_weights():
    basis = diagonalize_site_hamiltonian(dimer(75.0, 100.0, 100.0), [35.0, 35.0])
    a = np.real(np.einsum("kkn->kn", basis.overlap))[1:]
    np.testing.assert_allclose(a, 0.5, atol=1e-14)
    np.testing.assert_allclose(basis.reorg_shifts[1:], 17.5, atol=1e-12)


def random_model(rng, m):
    e = rng.uniform(-300, 300, m)
    j = rng.normal(0, 80, (m, m))
    j = np.triu(j, 1)
    return SiteBasisModel(e, j + j.T, rng.uniform(-13000, -12000))


@settings(max_examples=40, deadline=None)
@given(m=st.integers(1, 8), seed=st.integers(0, 2**31))
def test_exciton_basis_invariants(m, seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, m)
    basis = diagonalize_site_hamiltonian(model, rng.uniform(0, 50, m))
    c = basis.coefficients
    np.testing.assert_allclose(c @ c.conj().T, np.eye(m + 1), atol=1e-12)
    assert np.all(np.diff(basis.eigenenergies[1:]) >= -1e-9)
    # ground decoupled; diagonal sum rule; gauge: largest component positive
    assert np.all(basis.overlap[0] == 0) and np.all(basis.overlap[:, 0] == 0)
    np.testing.assert_allclose(np.einsum("kkn->k", basis.overlap)[1:], 1.0, atol=1e-12)
    rows = c[1:, 1:]
    lead = rows[np.arange(m), np.argmax(np.abs(rows), axis=1)]
    assert np.all(lead > 0)
    h = model.hamiltonian()
    np.testing.assert_allclose(c.conj() @ h @ c.T, np.diag(basis.eigenenergies), atol=1e-9)


def test_dressed_zero_field_is_exciton_basis():
    basis = diagonalize_site_hamiltonian(dimer(120.0), [35.0, 35.0])
    dressed = build_dressed_basis(basis, 0.0, [0.0, 0.0])
    np.testing.assert_allclose(dressed.coefficients, np.eye(3), atol=0)
    np.testing.assert_allclose(dressed.overlap, basis.overlap, atol=1e-15)
    dressed = build_dressed_basis(basis, 13000.0, [0.0, 0.0])
    np.testing.assert_allclose(dressed.eigenenergies[0], basis.eigenenergies[0] + 13000.0)
    np.testing.assert_allclose(dressed.eigenenergies[1:], basis.eigenenergies[1:])


def test_dressed_resonant_rabi_splitting():
    model = SiteBasisModel([0.0], [[0.0]], -12800.0)
    basis = diagonalize_site_hamiltonian(model)
    dressed = build_dressed_basis(basis, 12800.0, [75.0])
    assert abs(dressed.eigenenergies[1] - dressed.eigenenergies[0]) == pytest.approx(150.0, abs=1e-10)


def test_dressed_dimer_matches_dense_eigensolve():
    basis = diagonalize_site_hamiltonian(dimer(120.0), [35.0, 35.0])
    dressed = build_dressed_basis(basis, 13000.0, [100.0, 200.0])
    # independent oracle: RWA Hamiltonian assembled in the site basis
    c = basis.coefficients
    hx = np.diag(basis.eigenenergies)
    hx[0, 0] += 13000.0
    hx[0, 1:] = hx[1:, 0] = [100.0, 200.0]
    h_site = c.T @ hx @ c
    np.testing.assert_allclose(np.sort(dressed.eigenenergies), np.linalg.eigvalsh(h_site), atol=1e-9)
    v = dressed.site_vectors
    np.testing.assert_allclose(v @ v.conj().T, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(v.conj() @ h_site @ v.T, np.diag(dressed.eigenenergies), atol=1e-9)
    np.testing.assert_allclose(np.einsum("kkn->k", dressed.overlap), 1.0 - np.abs(v[:, 0]) ** 2, atol=1e-12)


def test_frame_transform_properties(rng):
    a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    rho = a @ a.conj().T
    rho /= np.trace(rho)
    np.testing.assert_array_equal(frame_transform(rho, 13000.0, 0.0), rho)
    for t in (0.3, 17.0, 999.0):
        lab = frame_transform(rho, 13000.0, t, "to_lab")
        assert np.trace(lab) == np.trace(rho)
        np.testing.assert_array_equal(np.diag(lab), np.diag(rho))
        back = frame_transform(lab, 13000.0, t, "to_rotating")
        np.testing.assert_allclose(back, rho, atol=1e-14)
    kets = rng.normal(size=(4, 3)) + 0j
    orig = kets.copy()
    transform_kets(kets, 13000.0, 5.0, "to_lab")
    transform_kets(kets, 13000.0, 5.0, "to_rotating")
    np.testing.assert_allclose(kets, orig, atol=1e-14)
