"""conftest"""

import functools
import math

import numpy as np
import pytest

from combctl.config import parse_config, shipped_config
from combctl.franck_condon import fc_spectrum
from combctl.potentials import MorsePotential, RadialGrid, morse_wavefunction, vibration_period
from combctl.pulses import design_pair, detuning_grid, dispersion_phase, gaussian_amplitude

# toy Lambda system in atomic units: levels of the ground well at 1.875, 4.875, 6.875, 7.875
PUMP_CARRIER = 18.0
DUMP_CARRIER = 23.0


@pytest.fixture
def toy_potential():
    """mu = 1, D_e = 8, a = 1, r_e = 2: lambda = 4, four bound levels"""
    return MorsePotential(8.0, 1.0, 2.0, reduced_mass=1.0, name="ground")


@pytest.fixture
def toy_excited():
    return MorsePotential(8.0, 1.0, 2.4, electronic_offset=20.0, reduced_mass=1.0, name="excited")


@pytest.fixture
def toy_grid():
    return RadialGrid(-0.5, 30.0, 512)


@pytest.fixture
def toy_lambda(toy_potential, toy_excited, toy_grid):
    """input v=2 and target v=0 of the toy well, pumped and dumped through the displaced excited well"""
    input_level = morse_wavefunction(toy_potential, 2, toy_grid)
    target_level = morse_wavefunction(toy_potential, 0, toy_grid)
    window = (-8.0, 8.0)
    fc_pump = fc_spectrum(input_level, toy_excited, PUMP_CARRIER, window)
    fc_dump = fc_spectrum(target_level, toy_excited, DUMP_CARRIER, window)
    detunings = detuning_grid(1024, 8.0)
    envelope = functools.partial(gaussian_amplitude, fwhm=6.0)
    delay = vibration_period(toy_excited, 1) / 2.0
    phase = dispersion_phase(toy_excited, PUMP_CARRIER, delay, detunings, input_level.absolute_energy)
    pump, dump = design_pair(fc_pump, fc_dump, detunings, envelope, phase)
    return {
        "ground": toy_potential,
        "excited": toy_excited,
        "grid": toy_grid,
        "input": input_level,
        "target": target_level,
        "fc_pump": fc_pump,
        "fc_dump": fc_dump,
        "detunings": detunings,
        "envelope": envelope,
        "delay": delay,
        "phase": phase,
        "pump": pump,
        "dump": dump,
    }


@pytest.fixture
def gaussian_pulse_grid():
    """256 detunings over +-0.05 au; a 0.01 au FWHM Gaussian is ~277 au long"""
    return detuning_grid(256, 0.05)


@pytest.fixture
def desk_config_path():
    return shipped_config("desk_scale.toml")


@pytest.fixture
def desk_config(desk_config_path):
    return parse_config(desk_config_path)


@pytest.fixture
def flat_gaussian():
    """normalized Gaussian centred in the toy grid, used on flat surfaces"""

    def make(grid, center=10.0, width=1.0):
        r = grid.points
        psi = np.exp(-((r - center) ** 2) / (2.0 * width**2)).astype(complex)
        return psi / math.sqrt(np.sum(np.abs(psi) ** 2) * grid.spacing)

    return make
