"""unit conversion at the config boundary

Everything inside combctl is in atomic units (hbar = m_e = e = 1).
"""

import math
from scipy import constants

HARTREE_TO_CM1 = constants.physical_constants["hartree-inverse meter relationship"][0] / 100.0
BOHR_TO_ANGSTROM = constants.physical_constants["Bohr radius"][0] * 1e10
AU_TIME_TO_FS = constants.physical_constants["atomic unit of time"][0] * 1e15
AMU_TO_ME = constants.physical_constants["atomic mass constant"][0] / constants.m_e
SPEED_OF_LIGHT_AU = 1.0 / constants.fine_structure


def cm1_to_hartree(value: float) -> float:
    return value / HARTREE_TO_CM1


def hartree_to_cm1(value: float) -> float:
    return value * HARTREE_TO_CM1


def angstrom_to_bohr(value: float) -> float:
    return value / BOHR_TO_ANGSTROM


def bohr_to_angstrom(value: float) -> float:
    return value * BOHR_TO_ANGSTROM


def inv_angstrom_to_inv_bohr(value: float) -> float:
    return value * BOHR_TO_ANGSTROM


def fs_to_au(value: float) -> float:
    return value / AU_TIME_TO_FS


def au_to_fs(value: float) -> float:
    return value * AU_TIME_TO_FS


def ns_to_au(value: float) -> float:
    return fs_to_au(value * 1e6)


def fs2_to_au(value: float) -> float:
    """group delay dispersion, fs^2 -> au^2"""
    return value / AU_TIME_TO_FS**2


def amu_to_me(value: float) -> float:
    return value * AMU_TO_ME


def nm_to_angular_frequency(wavelength_nm: float) -> float:
    """vacuum wavelength in nm -> angular frequency in hartree"""
    wavelength_bohr = angstrom_to_bohr(wavelength_nm * 10.0)
    return 2.0 * math.pi * SPEED_OF_LIGHT_AU / wavelength_bohr


def bandwidth_nm_to_angular(bandwidth_nm: float, center_nm: float) -> float:
    """FWHM in wavelength around center -> FWHM in angular frequency (hartree)"""
    return nm_to_angular_frequency(center_nm) * bandwidth_nm / center_nm
