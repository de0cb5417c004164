"""Coherent modified Redfield dynamics of laser-driven excitonic systems.

The package builds exciton and laser-dressed bases, tabulates bath
line-broadening functions and modified-Redfield rates, recasts them as a
time-dependent Lindblad generator, and propagates either a deterministic
density matrix or a non-Markovian quantum-jump ensemble.
"""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0.0.0"

from .bath import BathSpec, TabulatedBath, tabulate_linebroadening
from .dynamics import build_problem, run_oracle
from .exciton import SiteBasisModel, build_dressed_basis, diagonalize_site_hamiltonian
from .nmqj import run_ensemble
from .observables import absorption_spectrum, concurrence, site_populations
from .pulses import GaussianPulseSpec, discretize_gaussian, step_pulse

__all__ = [
    "BathSpec",
    "GaussianPulseSpec",
    "SiteBasisModel",
    "TabulatedBath",
    "absorption_spectrum",
    "build_dressed_basis",
    "build_problem",
    "concurrence",
    "diagonalize_site_hamiltonian",
    "discretize_gaussian",
    "run_ensemble",
    "run_oracle",
    "site_populations",
    "step_pulse",
    "tabulate_linebroadening",
    "__version__",
]
