"""Laser pulse schedules made of constant-amplitude segments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special


class PulseError(ValueError):
    """Invalid pulse parameters or schedule."""


@dataclass(frozen=True)
class PulseSegment:
    """Constant field on [start, end) fs: carrier in cm^-1, one coupling per exciton."""

    start: float
    end: float
    carrier: float
    couplings: tuple

    def __post_init__(self):
        if not self.end > self.start:
            raise PulseError(f"segment end {self.end} must exceed start {self.start}")
        object.__setattr__(self, "couplings", tuple(float(g) for g in np.ravel(self.couplings)))

    @property
    def is_free(self) -> bool:
        return not any(self.couplings)

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class PulseSchedule:
    """Contiguous, non-overlapping segments in time order."""

    segments: tuple

    def __post_init__(self):
        segs = tuple(self.segments)
        for prev, nxt in zip(segs[:-1], segs[1:]):
            if not np.isclose(prev.end, nxt.start, rtol=0.0, atol=1e-9):
                raise PulseError(f"segments not contiguous at t={prev.end} / {nxt.start} fs")
        object.__setattr__(self, "segments", segs)

    def __len__(self):
        return len(self.segments)

    @property
    def start(self) -> float:
        return self.segments[0].start if self.segments else 0.0

    @property
    def end(self) -> float:
        return self.segments[-1].end if self.segments else 0.0


@dataclass(frozen=True)
class GaussianPulseSpec:
    """Profile g_k(t) = g0_k exp[-2 (t - t0)^2 / T^2] truncated to [t0 - T, t0 + T]."""

    center: float
    width: float
    peak_couplings: tuple
    carrier: float
    tolerance: float = 1e-6

    def __post_init__(self):
        if not self.width > 0:
            raise PulseError("gaussian width T must be > 0")
        if not self.tolerance > 0:
            raise PulseError("area tolerance must be > 0")
        object.__setattr__(self, "peak_couplings", tuple(float(g) for g in np.ravel(self.peak_couplings)))

    def profile(self, t):
        return np.exp(-2.0 * (np.asarray(t, dtype=float) - self.center) ** 2 / self.width**2)

    def area(self) -> float:
        """Exact area of the unit-peak profile over [t0 - T, t0 + T]."""
        return self.width * np.sqrt(np.pi / 2.0) * special.erf(np.sqrt(2.0))


def step_pulse(t1: float, carrier: float, couplings, start: float = 0.0) -> PulseSchedule:
    """A single rectangular pulse on [start, start + t1]."""
    if not t1 > 0:
        raise PulseError("pulse duration t1 must be > 0")
    return PulseSchedule((PulseSegment(start, start + t1, carrier, couplings),))


def midpoint_area_error(profile, start, end, exact_area, n_segments) -> float:
    """Relative difference between the exact area and the midpoint step sum."""
    width = (end - start) / n_segments
    mids = start + width * (np.arange(n_segments) + 0.5)
    steps = width * float(np.sum(profile(mids)))
    return abs(steps - exact_area) / abs(exact_area)


def discretize_profile(
    profile, start, end, exact_area, couplings, carrier, tolerance=1e-6, max_exponent=15
):
    """Split a pulse into N_p = 2^n + 1 equal segments with midpoint heights.

    n starts at 1 and grows until the relative area error is below
    ``tolerance``.

    Returns:
        (schedule, N_p, relative area error)
    """
    if not end > start:
        raise PulseError("pulse window must have positive length")
    g0 = np.ravel(np.asarray(couplings, dtype=float))
    for n in range(1, max_exponent + 1):
        n_p = 2**n + 1
        err = midpoint_area_error(profile, start, end, exact_area, n_p)
        if err < tolerance:
            break
    else:
        raise PulseError(
            f"area tolerance {tolerance:g} not reached with {2**max_exponent + 1} segments (error {err:.3g})"
        )
    edges = np.linspace(start, end, n_p + 1)
    heights = profile(0.5 * (edges[:-1] + edges[1:]))
    segs = tuple(
        PulseSegment(float(a), float(b), carrier, tuple(h * g0)) for a, b, h in zip(edges[:-1], edges[1:], heights)
    )
    return PulseSchedule(segs), n_p, err


def discretize_gaussian(spec: GaussianPulseSpec, max_exponent: int = 15):
    """Midpoint-step approximation of a Gaussian pulse; see :func:`discretize_profile`."""
    return discretize_profile(
        spec.profile,
        spec.center - spec.width,
        spec.center + spec.width,
        spec.area(),
        spec.peak_couplings,
        spec.carrier,
        spec.tolerance,
        max_exponent,
    )


def complete_schedule(schedule: PulseSchedule | None, t_max: float, num_excitons: int) -> PulseSchedule:
    """Fill gaps before, between and after pulse segments with field-free segments on [0, t_max]."""
    free = (0.0,) * num_excitons
    segs = [] if schedule is None else list(schedule.segments)
    for s in segs:
        if len(s.couplings) != num_excitons:
            raise PulseError(f"pulse segment has {len(s.couplings)} couplings, model has {num_excitons} excitons")
        if s.start < -1e-9 or s.end > t_max + 1e-9:
            raise PulseError(f"pulse segment [{s.start}, {s.end}] lies outside [0, {t_max}] fs")
    out = []
    t = 0.0
    for s in segs:
        if s.start > t + 1e-9:
            out.append(PulseSegment(t, s.start, 0.0, free))
        out.append(s)
        t = s.end
    if t < t_max - 1e-9:
        out.append(PulseSegment(t, t_max, 0.0, free))
    return PulseSchedule(tuple(out))
