"""test first-order wave-packets and their overlap"""

import math

import numpy as np
import pytest

from combctl.errors import DegenerateDesignError
from combctl.perturbative import (
    LevelWavepacket,
    overlap,
    pump_wavepacket,
    reversed_dump_wavepacket,
    transfer_amplitude,
)
from combctl.propagator import single_pulse_fraction
from combctl.pulses import SpectralPulse, apply_chirp, calibrate_area
from combctl.scenarios import build_scenario, build_setup

# pylint: disable=redefined-outer-name


def packets(toy_lambda, pump=None, dump=None):
    pump = pump or toy_lambda["pump"]
    dump = dump or toy_lambda["dump"]
    return (
        pump_wavepacket(pump, toy_lambda["fc_pump"], toy_lambda["phase"]),
        reversed_dump_wavepacket(dump, toy_lambda["fc_dump"]),
    )


def test_population():
    """Test that norm and per-level populations follow the coefficients."""
    packet = LevelWavepacket("excited", np.array([0, 1]), np.array([0.6, 0.8j]))
    assert packet.norm == pytest.approx(1.0)
    assert packet.population == pytest.approx(1.0)
    assert packet.populations() == pytest.approx({0: 0.36, 1: 0.64})


def test_self_overlap():
    """Test that a packet overlaps itself with modulus one."""
    packet = LevelWavepacket("excited", np.array([0, 1, 2]), np.array([0.1, -0.3j, 0.2]))
    assert overlap(packet, packet) == pytest.approx(1.0)


def test_zero_norm():
    """Test that an empty packet has no defined overlap."""
    empty = LevelWavepacket("excited", np.array([0]), np.array([0.0j]))
    with pytest.raises(DegenerateDesignError):
        overlap(empty, empty)


def test_different_potentials():
    """Test that packets on different excited potentials cannot be compared."""
    a = LevelWavepacket("excited", np.array([0]), np.array([1.0 + 0j]))
    b = LevelWavepacket("other", np.array([0]), np.array([1.0 + 0j]))
    with pytest.raises(ValueError):
        overlap(a, b)


def test_levels_matched_by_index():
    """Test that coefficients are paired by level index, not by position."""
    a = LevelWavepacket("excited", np.array([1, 2]), np.array([1.0 + 0j, 0.0j]))
    b = LevelWavepacket("excited", np.array([0, 1]), np.array([0.0j, 1.0 + 0j]))
    assert overlap(a, b) == pytest.approx(1.0)


def test_transfer_amplitude_sign():
    """Test that the second-order transfer amplitude is minus the overlap product."""
    packet = LevelWavepacket("excited", np.array([0, 1]), np.array([0.3j, 0.4]))
    assert transfer_amplitude(packet, packet) == pytest.approx(-0.25)


def test_designed_pair_overlaps(toy_lambda):
    """Test that the designed pump and reversed dump packets coincide."""
    pumped, dumped = packets(toy_lambda)
    assert abs(overlap(pumped, dumped)) > 0.999


def test_unshaped_pump_does_worse(toy_lambda):
    """Test that an unshaped pump overlaps the reversed dump strictly less than the designed one."""
    pumped, dumped = packets(toy_lambda)
    detunings = toy_lambda["detunings"]
    flat = SpectralPulse(toy_lambda["pump"].carrier, detunings, toy_lambda["envelope"](detunings).astype(complex))
    unshaped, _ = packets(toy_lambda, pump=flat)
    assert abs(overlap(unshaped, dumped)) < abs(overlap(pumped, dumped))


def test_common_chirp_keeps_overlap(toy_lambda):
    """Test that the same chirp on both pulses leaves the overlap intact."""
    pump = apply_chirp(toy_lambda["pump"], 0.5)
    dump = apply_chirp(toy_lambda["dump"], 0.5)
    pumped, dumped = packets(toy_lambda, pump=pump, dump=dump)
    assert abs(overlap(pumped, dumped)) > 0.999


def test_amplitudes_scale_with_field(toy_lambda):
    """Test that packet coefficients are linear in the field scale."""
    weak, _ = packets(toy_lambda)
    strong, _ = packets(toy_lambda, pump=toy_lambda["pump"].with_scale(3.0))
    np.testing.assert_allclose(strong.coefficients, 3.0 * weak.coefficients)


def test_second_order_transfer(toy_lambda):
    """Test that |transfer| equals the product of the packet norms when the overlap is one."""
    pumped, dumped = packets(toy_lambda)
    product = pumped.norm * dumped.norm
    assert abs(transfer_amplitude(pumped, dumped)) == pytest.approx(product, rel=1e-3)


@pytest.mark.slow
def test_weak_pump_matches_propagation(desk_config):
    """Test that a weak desk-scale pump excites what the first-order packet predicts."""
    scenario = build_scenario(desk_config)
    setup = build_setup(scenario)
    area = 2.0 * math.asin(math.sqrt(0.005))
    pump = scenario.pump.with_scale(calibrate_area(scenario.pump, scenario.fc_pump, 1.0, area))
    propagated = single_pulse_fraction(setup.propagator, setup.input_level, pump, setup.dipole)
    predicted = pump_wavepacket(pump, scenario.fc_pump, scenario.phase).population
    assert propagated == pytest.approx(predicted, rel=0.02)
    assert predicted == pytest.approx(0.005, rel=0.01)
