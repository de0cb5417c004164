"""Command-line entry point: ``cmrtqj {simulate,oracle,rates,absorption}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .bath import time_grid
from .config import ConfigError, RunConfig, load_config
from .dynamics import DensityTrajectory, build_problem, run_oracle, site_broadening
from .exciton import diagonalize_site_hamiltonian, exciton_dipoles
from .nmqj import run_ensemble
from .observables import absorption_spectrum, site_populations
from .rates import compute_rate_tables, stationary_dissipation_rates

log = logging.getLogger("cmrtqj")

VERBS = ("simulate", "oracle", "rates", "absorption")


def preset_path(name: str) -> Path:
    """Path of a bundled preset config, e.g. ``dimer_j120``."""
    path = resources.files("cmrtqj") / "presets" / f"{name}.yaml"
    return Path(str(path))


def list_presets() -> list:
    root = Path(str(resources.files("cmrtqj") / "presets"))
    return sorted(p.stem for p in root.glob("*.yaml"))


def resolve_config(value: str) -> Path:
    """A config file path, or the name of a bundled preset."""
    p = Path(value)
    if p.is_file():
        return p
    if p.suffix == "" and preset_path(value).is_file():
        return preset_path(value)
    raise ConfigError(f"config {value!r} is neither a file nor a preset ({', '.join(list_presets())})")


def _fmt(x) -> str:
    return repr(float(x))


def write_atomic(path: Path, text: str) -> None:
    """Write via a temp file in the target directory and rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv(header, rows) -> str:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def observables_csv(traj: DensityTrajectory) -> str:
    """Columns t, P_G, P_1..P_M, Re_rho21, Im_rho21, C."""
    n = traj.rho.shape[1]
    pops = site_populations(traj.rho)
    header = ["t", "P_G"] + [f"P_{i}" for i in range(1, n)]
    cols = [traj.times[:, None], pops]
    if n >= 3:
        r21 = traj.rho[:, 2, 1]
        header += ["Re_rho21", "Im_rho21", "C"]
        cols.append(np.stack([r21.real, r21.imag, 2.0 * np.abs(r21)], axis=1))
    return _csv(header, np.hstack(cols))


def density_csv(traj: DensityTrajectory) -> str:
    """Every element of rho as Re/Im columns, row-major over (i, j), 0 = ground."""
    n = traj.rho.shape[1]
    header = ["t"]
    for i in range(n):
        for j in range(n):
            header += [f"Re_rho_{i}{j}", f"Im_rho_{i}{j}"]
    flat = traj.rho.reshape(traj.rho.shape[0], -1)
    parts = np.empty((flat.shape[0], 2 * flat.shape[1]))
    parts[:, 0::2] = flat.real
    parts[:, 1::2] = flat.imag
    return _csv(header, np.hstack([traj.times[:, None], parts]))


def _manifest(verb, cfg: RunConfig, settings: dict, outputs) -> str:
    body = {
        "verb": verb,
        "version": __version__,
        "config_path": cfg.path,
        "config": cfg.source,
        "settings": settings,
        "outputs": [str(p) for p in outputs],
    }
    return json.dumps(body, indent=2, sort_keys=True, default=str) + "\n"


def _problem(cfg: RunConfig, dt: float):
    return build_problem(cfg.model, cfg.baths, cfg.schedule, cfg.run.t_max, dt, cfg.initial)


def _stem(out: Path) -> Path:
    return out.with_suffix("") if out.suffix == ".csv" else out


def run_command(verb: str, cfg: RunConfig, settings: dict) -> list:
    """Execute ``verb`` and write its CSVs plus a manifest; returns the written paths."""
    out = Path(settings["out"])
    stem = _stem(out)
    written = []
    if verb in ("simulate", "oracle"):
        problem = _problem(cfg, settings["dt"])
        if verb == "simulate":
            traj = run_ensemble(
                problem,
                settings["trajectories"],
                seed=settings["seed"],
                stride=settings["stride"],
                workers=settings["workers"],
                policy=settings["policy"],
            )
            if traj.pairs_created:
                log.info("signed policy created %d member pairs", traj.pairs_created)
        else:
            traj = run_oracle(problem, stride=settings["stride"])
        files = {out: observables_csv(traj), Path(f"{stem}.rho.csv"): density_csv(traj)}
    elif verb == "rates":
        times = time_grid(cfg.run.t_max, settings["dt"])
        broadening = site_broadening(cfg.baths, times, cfg.model.num_sites)
        basis = diagonalize_site_hamiltonian(cfg.model, broadening.reorganization)
        tables = compute_rate_tables(basis, broadening)
        n = basis.num_levels
        header = ["t"]
        cols = [times[:, None]]
        for name, table in (("Rdis", tables.dissipative), ("Rpd", tables.pure_dephasing)):
            for k in range(n):
                for kp in range(n):
                    if k != kp:
                        header.append(f"{name}_{k}{kp}")
                        cols.append(table[:, k, kp][:, None])
        keep = np.arange(0, times.size, settings["stride"])
        files = {out: _csv(header, np.hstack(cols)[keep])}
    elif verb == "absorption":
        if cfg.absorption is None:
            raise ConfigError("missing required block 'absorption'")
        if cfg.model.transition_dipoles is None:
            raise ConfigError("missing required key 'model.dipoles'")
        a = cfg.absorption
        times = time_grid(cfg.run.t_max, settings["dt"])
        broadening = site_broadening(cfg.baths, times, cfg.model.num_sites)
        basis = diagonalize_site_hamiltonian(cfg.model, broadening.reorganization)
        rinf = stationary_dissipation_rates(compute_rate_tables(basis, broadening))
        omega = a.omega_min + a.omega_step * np.arange(int(round((a.omega_max - a.omega_min) / a.omega_step)) + 1)
        spec = absorption_spectrum(basis, cfg.baths, rinf, exciton_dipoles(cfg.model, basis), omega, dt=a.dt)
        if spec.windowed:
            log.warning("correlation function did not decay; spectrum is windowed")
        files = {out: _csv(["omega", "I"], np.stack([spec.omega, spec.intensity], axis=1))}
    else:
        raise ValueError(f"unknown verb {verb!r}")

    for path, text in files.items():
        write_atomic(path, text)
        written.append(path)
    manifest = Path(f"{stem}.manifest.json")
    write_atomic(manifest, _manifest(verb, cfg, settings, written))
    written.append(manifest)
    return written


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmrtqj", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        p = sub.add_parser(verb)
        p.add_argument("--config", required=True, help="YAML config file or bundled preset name")
        p.add_argument("--out", help="output CSV path (default: run.out or <verb>.csv)")
        p.add_argument("--dt", type=float, help="time step in fs (overrides run.dt)")
        p.add_argument("--stride", type=int, help="keep every K-th grid point")
        p.add_argument("-v", "--verbose", action="store_true")
        if verb == "simulate":
            p.add_argument("--trajectories", type=int, help="ensemble size N")
            p.add_argument("--seed", type=int)
            p.add_argument("--workers", type=int, help="worker threads (default: $CMRTQJ_WORKERS or 1)")
            p.add_argument("--policy", choices=("signed", "switch_off"))
    return parser


def _settings(args, cfg: RunConfig) -> dict:
    run = cfg.run
    dt = run.dt if args.dt is None else args.dt
    stride = run.stride if args.stride is None else args.stride
    if dt <= 0 or abs(round(run.t_max / dt) * dt - run.t_max) > 1e-9 * run.t_max:
        raise ConfigError(f"invariant violated: dt={dt} must divide run.t_max={run.t_max}")
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    settings = {
        "dt": dt,
        "stride": stride,
        "out": args.out or run.out or f"{args.verb}.csv",
    }
    if args.verb == "simulate":
        n = run.trajectories if args.trajectories is None else args.trajectories
        if n < 1:
            raise ConfigError("trajectories must be >= 1")
        settings.update(
            trajectories=n,
            seed=run.seed if args.seed is None else args.seed,
            workers=args.workers if args.workers is not None else run.workers,
            policy=args.policy or run.policy,
        )
    return settings


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = load_config(resolve_config(args.config))
        settings = _settings(args, cfg)
        written = run_command(args.verb, cfg, settings)
    except Exception as exc:  # every module error maps to a nonzero exit
        print(f"cmrtqj {args.verb}: error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
