"""YAML run configuration: parsing, defaults and validation.

A config has four blocks. ``model`` and ``bath`` are required, ``pulse`` and
``absorption`` are optional, and ``run`` fills in defaults. Relative file
paths are resolved against the config file's directory. See the README for
an annotated example.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .bath import BathSpec, TabulatedBath
from .exciton import SiteBasisModel
from .pulses import GaussianPulseSpec, PulseSchedule, discretize_gaussian, step_pulse


class ConfigError(ValueError):
    """A missing, ill-typed or physically invalid configuration entry."""


@dataclass(frozen=True)
class RunSettings:
    t_max: float
    dt: float = 1.0
    trajectories: int = 10_000
    seed: int = 0
    stride: int = 1
    workers: int | None = None
    policy: str = "signed"
    out: str | None = None


@dataclass(frozen=True)
class AbsorptionSettings:
    omega_min: float
    omega_max: float
    omega_step: float = 1.0
    dt: float = 0.5


@dataclass(frozen=True)
class RunConfig:
    model: SiteBasisModel
    baths: object
    schedule: PulseSchedule | None
    initial: object
    run: RunSettings
    absorption: AbsorptionSettings | None = None
    source: dict = field(default_factory=dict)
    path: str | None = None


def _block(raw, key, required=True):
    value = raw.get(key)
    if value is None:
        if required:
            raise ConfigError(f"missing required block '{key}'")
        return None
    if not isinstance(value, dict):
        raise ConfigError(f"'{key}' must be a mapping")
    return value


def _number(block, prefix, key, default=None, kind=float):
    if key not in block or block[key] is None:
        if default is None:
            raise ConfigError(f"missing required key '{prefix}.{key}'")
        return default
    value = block[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"'{prefix}.{key}' must be a number, got {value!r}")
    if kind is int:
        if float(value) != int(value):
            raise ConfigError(f"'{prefix}.{key}' must be an integer, got {value!r}")
        return int(value)
    if not math.isfinite(value):
        raise ConfigError(f"'{prefix}.{key}' must be finite")
    return float(value)


def _vector(block, prefix, key, size=None, required=True):
    if key not in block or block[key] is None:
        if required:
            raise ConfigError(f"missing required key '{prefix}.{key}'")
        return None
    try:
        arr = np.asarray(block[key], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"'{prefix}.{key}' must be a list of numbers") from exc
    if arr.ndim != 1 or (size is not None and arr.size != size):
        want = f" of length {size}" if size is not None else ""
        raise ConfigError(f"'{prefix}.{key}' must be a flat list{want}")
    return arr


def _resolve(path, base: Path) -> Path:
    p = Path(path)
    if not p.is_absolute():
        p = base / p
    if not p.is_file():
        raise ConfigError(f"referenced file {str(path)!r} does not exist")
    return p


def _parse_model(raw, base) -> SiteBasisModel:
    block = _block(raw, "model")
    ground = _number(block, "model", "ground_energy", 0.0)
    if "hamiltonian_file" in block:
        h = np.loadtxt(_resolve(block["hamiltonian_file"], base), comments="#", ndmin=2)
        if h.shape[0] != h.shape[1]:
            raise ConfigError("'model.hamiltonian_file' must hold a square matrix")
        energies = np.diag(h).copy()
        couplings = h - np.diag(energies)
    else:
        energies = _vector(block, "model", "site_energies")
        m = energies.size
        if "couplings" not in block:
            raise ConfigError("missing required key 'model.couplings'")
        c = block["couplings"]
        if isinstance(c, (int, float)) and not isinstance(c, bool):
            if m != 2:
                raise ConfigError("scalar 'model.couplings' is only allowed for a dimer")
            couplings = np.array([[0.0, c], [c, 0.0]])
        else:
            try:
                couplings = np.asarray(c, dtype=float)
            except (TypeError, ValueError) as exc:
                raise ConfigError("'model.couplings' must be a number or a matrix") from exc
    m = energies.size
    dipoles = _vector(block, "model", "dipoles", size=m, required=False)
    basis = block.get("dipole_basis", "exciton")
    try:
        return SiteBasisModel(energies, couplings, ground, dipoles, basis)
    except ValueError as exc:
        raise ConfigError(f"invalid 'model': {exc}") from exc


def _parse_baths(raw, base, m):
    block = _block(raw, "bath")
    temperature = _number(block, "bath", "temperature")
    if temperature <= 0:
        raise ConfigError("'bath.temperature' must be > 0 K")
    try:
        if "spectral_density_file" in block:
            bath = TabulatedBath.from_file(_resolve(block["spectral_density_file"], base), temperature)
        else:
            lam = _number(block, "bath", "reorganization")
            cutoff = _number(block, "bath", "cutoff")
            if lam < 0:
                raise ConfigError("'bath.reorganization' must be >= 0")
            if cutoff <= 0:
                raise ConfigError("'bath.cutoff' must be > 0")
            bath = BathSpec(lam, cutoff, temperature)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"invalid 'bath': {exc}") from exc
    return bath


def _parse_pulse(raw, m, t_max):
    block = _block(raw, "pulse", required=False)
    if block is None:
        return None
    shape = block.get("shape", "step")
    carrier = _number(block, "pulse", "carrier")
    couplings = _vector(block, "pulse", "couplings", size=m)
    try:
        if shape == "step":
            start = _number(block, "pulse", "start", 0.0)
            duration = _number(block, "pulse", "duration")
            schedule = step_pulse(duration, carrier, couplings, start=start)
        elif shape == "gaussian":
            spec = GaussianPulseSpec(
                center=_number(block, "pulse", "center"),
                width=_number(block, "pulse", "width"),
                peak_couplings=couplings,
                carrier=carrier,
                tolerance=_number(block, "pulse", "tolerance", 1e-6),
            )
            schedule = discretize_gaussian(spec)[0]
        else:
            raise ConfigError(f"'pulse.shape' must be 'step' or 'gaussian', got {shape!r}")
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"invalid 'pulse': {exc}") from exc
    if schedule.start < 0 or schedule.end > t_max + 1e-9:
        raise ConfigError(f"pulse window [{schedule.start}, {schedule.end}] fs must lie within [0, run.t_max]")
    return schedule


def _parse_initial(raw, m):
    init = raw.get("initial", "ground")
    if init == "ground":
        return "ground"
    if isinstance(init, dict) and len(init) == 1:
        (kind, index), = init.items()
        if kind in ("site", "exciton") and isinstance(index, int) and not isinstance(index, bool):
            if not 1 <= index <= m:
                raise ConfigError(f"'initial.{kind}' must be in 1..{m}, got {index}")
            return (kind, index)
    raise ConfigError("'initial' must be 'ground', {site: n} or {exciton: k}")


def _parse_run(raw) -> RunSettings:
    block = _block(raw, "run")
    t_max = _number(block, "run", "t_max")
    dt = _number(block, "run", "dt", 1.0)
    if t_max <= 0 or dt <= 0:
        raise ConfigError("'run.t_max' and 'run.dt' must be > 0")
    n = round(t_max / dt)
    if abs(n * dt - t_max) > 1e-9 * t_max:
        raise ConfigError(f"invariant violated: run.dt={dt} must divide run.t_max={t_max}")
    trajectories = _number(block, "run", "trajectories", 10_000, int)
    if trajectories < 1:
        raise ConfigError("'run.trajectories' must be >= 1")
    stride = _number(block, "run", "stride", 1, int)
    if stride < 1:
        raise ConfigError("'run.stride' must be >= 1")
    workers = block.get("workers")
    if workers is not None:
        workers = _number(block, "run", "workers", kind=int)
        if workers < 1:
            raise ConfigError("'run.workers' must be >= 1")
    policy = block.get("policy", "signed")
    if policy not in ("signed", "switch_off"):
        raise ConfigError("'run.policy' must be 'signed' or 'switch_off'")
    out = block.get("out")
    return RunSettings(
        t_max=t_max,
        dt=dt,
        trajectories=trajectories,
        seed=_number(block, "run", "seed", 0, int),
        stride=stride,
        workers=workers,
        policy=policy,
        out=None if out is None else str(out),
    )


def _parse_absorption(raw):
    block = _block(raw, "absorption", required=False)
    if block is None:
        return None
    lo = _number(block, "absorption", "omega_min")
    hi = _number(block, "absorption", "omega_max")
    step = _number(block, "absorption", "omega_step", 1.0)
    dt = _number(block, "absorption", "dt", 0.5)
    if not hi > lo or step <= 0 or dt <= 0:
        raise ConfigError("'absorption' needs omega_max > omega_min and positive omega_step, dt")
    return AbsorptionSettings(lo, hi, step, dt)


def parse_config(raw: dict, base: str | Path = ".", path: str | None = None) -> RunConfig:
    """Validate a config mapping; relative files resolve against ``base``."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping at the top level")
    base = Path(base)
    run = _parse_run(raw)
    model = _parse_model(raw, base)
    m = model.num_sites
    return RunConfig(
        model=model,
        baths=_parse_baths(raw, base, m),
        schedule=_parse_pulse(raw, m, run.t_max),
        initial=_parse_initial(raw, m),
        run=run,
        absorption=_parse_absorption(raw),
        source=raw,
        path=path,
    )


def load_config(path) -> RunConfig:
    """Read and validate a YAML config file."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {str(path)!r}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {str(path)!r}: {exc}") from exc
    return parse_config(raw, path.parent, str(path))
