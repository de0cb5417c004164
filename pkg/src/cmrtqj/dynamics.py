"""Segment planning shared by the oracle and the jump propagator.

A run is a sequence of constant-field segments on one uniform grid. Each
segment has its own eigenbasis (exciton basis when the field is off, dressed
basis otherwise) and a generator whose rates are read from tables evaluated
on the global clock, i.e. the bath memory starts at t = 0 for every basis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bath import tabulate_linebroadening, time_grid
from .exciton import (
    ExcitonBasis,
    SiteBasisModel,
    build_dressed_basis,
    diagonalize_site_hamiltonian,
    frame_transform,
)
from .lindblad import LindbladGenerator, assemble_generator, oracle_propagate
from .pulses import PulseError, PulseSchedule, PulseSegment, complete_schedule
from .rates import SiteBroadening, compute_rate_tables


@dataclass(frozen=True)
class SegmentPlan:
    """One constant-field segment covering grid indices start..stop."""

    segment: PulseSegment
    start: int
    stop: int
    basis: object
    generator: LindbladGenerator


@dataclass(frozen=True)
class Problem:
    """Everything a propagator needs: grid, bases, generators and the initial ket."""

    model: SiteBasisModel
    exciton: ExcitonBasis
    broadening: SiteBroadening
    times: np.ndarray
    segments: tuple
    initial_state: np.ndarray

    @property
    def num_levels(self) -> int:
        return self.exciton.num_levels

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


def initial_ket(spec, basis: ExcitonBasis) -> np.ndarray:
    """Site-basis ket from ``"ground"``, ``("site", n)`` or ``("exciton", k)`` (1-based n, k)."""
    n = basis.num_levels
    ket = np.zeros(n, dtype=complex)
    if isinstance(spec, str):
        spec = (spec, 0)
    kind, index = spec[0], int(spec[1])
    if kind == "ground":
        ket[0] = 1.0
    elif kind == "site":
        if not 1 <= index < n:
            raise ValueError(f"initial site must be in 1..{n - 1}, got {index}")
        ket[index] = 1.0
    elif kind == "exciton":
        if not 1 <= index < n:
            raise ValueError(f"initial exciton must be in 1..{n - 1}, got {index}")
        ket[:] = basis.site_vectors[index]
    else:
        raise ValueError(f"unknown initial state kind {kind!r}")
    return ket


def grid_index(t: float, dt: float) -> int:
    i = round(t / dt)
    if abs(i * dt - t) > 1e-9 * max(1.0, abs(t)):
        raise PulseError(f"segment boundary t={t} fs is not on the dt={dt} fs grid")
    return int(i)


def site_broadening(baths, times, num_sites) -> SiteBroadening:
    """Tabulate one table per distinct bath and stack them per site."""
    if isinstance(baths, (list, tuple)):
        if len(baths) != num_sites:
            raise ValueError(f"expected {num_sites} site baths, got {len(baths)}")
        cache = {}
        tables = []
        for b in baths:
            key = id(b)
            if key not in cache:
                cache[key] = tabulate_linebroadening(b, times)
            tables.append(cache[key])
        return SiteBroadening.from_tables(tables)
    return SiteBroadening.from_tables(tabulate_linebroadening(baths, times), num_sites)


def build_problem(
    model: SiteBasisModel,
    baths,
    schedule: PulseSchedule | None,
    t_max: float,
    dt: float = 1.0,
    initial="ground",
    broadening: SiteBroadening | None = None,
) -> Problem:
    """Diagonalize, tabulate the bath and assemble one generator per segment."""
    times = time_grid(t_max, dt)
    m = model.num_sites
    if broadening is None:
        broadening = site_broadening(baths, times, m)
    elif broadening.times.size != times.size or not np.allclose(broadening.times, times):
        raise ValueError("broadening tables do not match the simulation grid")
    lam = broadening.reorganization
    exciton = diagonalize_site_hamiltonian(model, lam)
    full = complete_schedule(schedule, t_max, m)

    spans = [(s, grid_index(s.start, dt), grid_index(s.end, dt)) for s in full.segments]
    bases = {}
    reach = {}
    for seg, _, stop in spans:
        key = None if seg.is_free else (seg.carrier, seg.couplings)
        if key not in bases:
            bases[key] = exciton if key is None else build_dressed_basis(exciton, seg.carrier, seg.couplings)
        reach[key] = max(reach.get(key, 0), stop)
    tables: dict = {key: compute_rate_tables(bases[key], broadening, reach[key] + 1) for key in bases}

    plans = []
    for seg, start, stop in spans:
        key = None if seg.is_free else (seg.carrier, seg.couplings)
        gen = assemble_generator(bases[key], tables[key], start=start, stop=stop)
        plans.append(SegmentPlan(seg, start, stop, bases[key], gen))
    return Problem(
        model=model,
        exciton=exciton,
        broadening=broadening,
        times=times,
        segments=tuple(plans),
        initial_state=initial_ket(initial, exciton),
    )


def change_frame(rho, old_carrier, new_carrier, t):
    """Re-express a site-basis density matrix from one rotating frame in another."""
    if old_carrier == new_carrier:
        return rho
    return frame_transform(frame_transform(rho, old_carrier, t, "to_lab"), new_carrier, t, "to_rotating")


@dataclass(frozen=True)
class DensityTrajectory:
    """Site-basis density matrices in the lab frame at selected grid times."""

    times: np.ndarray
    rho: np.ndarray
    min_eigenvalue: float = 0.0


def run_oracle(problem: Problem, stride: int = 1, substeps: int = 1) -> DensityTrajectory:
    """Deterministic integration of the segment generators."""
    psi = problem.initial_state
    rho = np.outer(psi, psi.conj())
    carrier = 0.0
    n = problem.times.size
    out = np.empty((n, problem.num_levels, problem.num_levels), dtype=complex)
    out[0] = rho
    min_eig = 0.0
    for plan in problem.segments:
        t0 = problem.times[plan.start]
        rho = change_frame(rho, carrier, plan.generator.carrier, t0)
        carrier = plan.generator.carrier
        res = oracle_propagate(plan.generator, rho, substeps=substeps)
        min_eig = min(min_eig, res.min_eigenvalue)
        for j in range(1, res.rho.shape[0]):
            out[plan.start + j] = frame_transform(res.rho[j], carrier, res.times[j], "to_lab")
        rho = res.rho[-1]
    keep = np.arange(0, n, stride)
    return DensityTrajectory(problem.times[keep], out[keep], min_eig)
