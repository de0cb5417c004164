from __future__ import annotations

import numpy as np
import pytest

from cmrtqj.bath import BathSpec, time_grid
from cmrtqj.cli import preset_path
from cmrtqj.config import load_config
from cmrtqj.dynamics import build_problem, run_oracle, site_broadening
from cmrtqj.exciton import SiteBasisModel, diagonalize_site_hamiltonian, exciton_dipoles
from cmrtqj.observables import (
    DomainError,
    absorption_spectrum,
    block_to_two_qubit,
    concurrence,
    exciton_to_site,
    site_populations,
    wootters_concurrence,
)
from cmrtqj.rates import compute_rate_tables, stationary_dissipation_rates

from conftest import DIMER_BATH, dimer


def random_block_state(rng, n=3, ground_coherence=True):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    rho = a @ a.conj().T
    if not ground_coherence:
        rho[0, 1:] = rho[1:, 0] = 0.0
    return rho / np.trace(rho).real


def test_populations_simple():
    rho = np.diag([0.2, 0.5, 0.3]).astype(complex)
    rho[1, 2] = rho[2, 1] = 0.1
    np.testing.assert_allclose(site_populations(rho), [0.2, 0.5, 0.3])
    stack = np.stack([rho, np.diag([1.0, 0, 0])])
    np.testing.assert_allclose(site_populations(stack)[1], [1.0, 0.0, 0.0])


def test_fmo_initial_site_six():
    cfg = load_config(preset_path("fmo"))
    prob = build_problem(cfg.model, cfg.baths, None, 10.0, 1.0, cfg.initial)
    pops = site_populations(run_oracle(prob).rho[0])
    expected = np.zeros(8)
    expected[6] = 1.0
    np.testing.assert_allclose(pops, expected, atol=1e-14)


def test_exciton_to_site_roundtrip():
    basis = diagonalize_site_hamiltonian(dimer(120.0))
    rho_exc = np.diag([0.0, 1.0, 0.0]).astype(complex)
    rho = exciton_to_site(rho_exc, basis)
    np.testing.assert_allclose(np.trace(rho), 1.0)
    np.testing.assert_allclose(rho[1:, 1:], np.outer(basis.coefficients[1, 1:], basis.coefficients[1, 1:].conj()), atol=1e-15)


@pytest.mark.parametrize(
    "rho, expected",
    [
        (np.diag([1.0, 0.0, 0.0]), 0.0),
        (np.diag([0.0, 0.5, 0.5]), 0.0),
        (np.array([[0, 0, 0], [0, 0.5, 0.5], [0, 0.5, 0.5]]), 1.0),
        (np.array([[0.5, 0, 0], [0, 0.25, 0.25j], [0, -0.25j, 0.25]]), 0.5),
    ],
)
def test_concurrence_examples(rho, expected):
    assert concurrence(rho) == pytest.approx(expected, abs=1e-15)


def test_concurrence_domain():
    rho4 = np.zeros((4, 4))
    rho4[3, 3] = 1e-6
    rho4[0, 0] = 1 - 1e-6
    with pytest.raises(DomainError):
        concurrence(rho4)
    with pytest.raises(DomainError):
        concurrence(np.eye(2) / 2)
    with pytest.raises(DomainError):
        concurrence(np.ones((3, 4)))


@pytest.mark.parametrize("ground_coherence", [False, True])
def test_concurrence_matches_wootters(rng, ground_coherence):
    for _ in range(200):
        rho = random_block_state(rng, ground_coherence=ground_coherence)
        c = concurrence(rho)
        assert c == pytest.approx(wootters_concurrence(block_to_two_qubit(rho)), abs=1e-10)
        assert concurrence(block_to_two_qubit(rho)) == pytest.approx(c, abs=1e-15)


def test_concurrence_bounded_by_excited_population(rng):
    for _ in range(200):
        rho = random_block_state(rng)
        c = concurrence(rho)
        assert 0.0 <= c <= rho[1, 1].real + rho[2, 2].real + 1e-15


def test_wootters_bell_state():
    psi = np.array([0, 1, 1, 0]) / np.sqrt(2)
    assert wootters_concurrence(np.outer(psi, psi)) == pytest.approx(1.0, abs=1e-12)
    assert wootters_concurrence(np.eye(4) / 4) == 0.0


def _spectrum(model, bath, omega, t_max=2000.0, dt=0.5):
    times = time_grid(t_max, 1.0)
    broadening = site_broadening(bath, times, model.num_sites)
    basis = diagonalize_site_hamiltonian(model, broadening.reorganization)
    rinf = stationary_dissipation_rates(compute_rate_tables(basis, broadening))
    return absorption_spectrum(basis, bath, rinf, exciton_dipoles(model, basis), omega, dt=dt)


def test_single_level_peak_near_shifted_gap():
    model = SiteBasisModel([100.0], [[0.0]], -12800.0, [1.0], "site")
    bath = BathSpec(35.0, 50.0, 300.0)
    basis = diagonalize_site_hamiltonian(model, [35.0])
    rinf = np.zeros((2, 2))
    spec = absorption_spectrum(basis, bath, rinf, [1.0], np.arange(12500.0, 13200.0))
    (peak,) = spec.peaks()
    assert abs(peak - (12900.0 - 35.0)) < 10.0
    assert not spec.windowed
    assert spec.intensity.max() == 1.0


def test_undamped_line_warns_and_windows():
    model = SiteBasisModel([100.0], [[0.0]], -12800.0, [1.0], "site")
    basis = diagonalize_site_hamiltonian(model, [1e-9])
    with pytest.warns(RuntimeWarning, match="window"):
        spec = absorption_spectrum(
            basis, BathSpec(1e-9, 50.0, 300.0), np.zeros((2, 2)), [1.0], np.arange(12800.0, 12950.0), t_max=1024.0
        )
    assert spec.windowed
    np.testing.assert_array_equal(spec.peaks(), [12900.0])


@pytest.fixture(scope="module")
def dimer_absorption():
    model = SiteBasisModel([120.0, 100.0], [[0, 300.0], [300.0, 0]], -12800.0, [10.0, 5.0], "exciton")
    omega = np.arange(12000.0, 14001.0)
    return model, omega, _spectrum(model, DIMER_BATH, omega)


def test_dimer_absorption_peaks(dimer_absorption):
    _, _, spec = dimer_absorption
    peaks = spec.peaks()
    assert peaks.size == 2
    assert np.diff(peaks)[0] == pytest.approx(np.hypot(20.0, 600.0), abs=5.0)
    np.testing.assert_array_equal(peaks, [12588.0, 13188.0])  # frozen reference run
    areas = spec.component_areas()
    assert areas[0] / areas[1] == pytest.approx(4.0, rel=0.1)
    np.testing.assert_allclose(spec.components.sum(axis=0), spec.intensity, atol=1e-14)


def test_dimer_absorption_grid_refinement(dimer_absorption):
    model, omega, spec = dimer_absorption
    fine = _spectrum(model, DIMER_BATH, omega, dt=0.25)
    assert np.max(np.abs(fine.intensity - spec.intensity)) < 1e-6
