"""Unit conventions.

Energies are stored in cm^-1 and times in fs everywhere. Every phase and
rate conversion goes through :data:`CM_TO_RAD_PER_FS`.
"""

from scipy import constants as _c

#: angular frequency in rad/fs of a 1 cm^-1 energy: 2*pi*c*1e-15 with c in cm/s
CM_TO_RAD_PER_FS = 2.0 * _c.pi * _c.c * 100.0 * 1e-15

#: Boltzmann constant in cm^-1 / K
KB_CM_PER_K = _c.k / (_c.h * _c.c * 100.0)


def beta_cm(temperature):
    """Inverse temperature 1/(k_B T) in cm."""
    return 1.0 / (KB_CM_PER_K * temperature)
