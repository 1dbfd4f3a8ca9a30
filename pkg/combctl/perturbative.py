"""first-order pump and reversed-dump wave-packets"""

import logging
from dataclasses import dataclass, field

import numpy as np

from combctl.errors import DegenerateDesignError
from combctl.franck_condon import FCSpectrum
from combctl.pulses import DispersionPhase, SpectralPulse

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class LevelWavepacket:
    """excited-surface packet as coefficients over the bound levels v"""

    excited_potential_id: str
    v: np.ndarray = field(repr=False)
    coefficients: np.ndarray = field(repr=False)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.coefficients))

    @property
    def population(self) -> float:
        """excited fraction under first-order theory"""
        return self.norm**2

    def populations(self) -> dict:
        return dict(zip(self.v.tolist(), (np.abs(self.coefficients) ** 2).tolist()))


def pump_wavepacket(pump: SpectralPulse, fc_pump: FCSpectrum, phase: DispersionPhase) -> LevelWavepacket:
    """packet excited by the pump, advanced by phi_D to the dump time"""
    coefficients = (
        0.5j
        * pump.field_scale
        * fc_pump.amplitudes
        * pump.at(fc_pump.detunings)
        * np.exp(1j * phase.at(fc_pump.detunings))
    )
    return LevelWavepacket(fc_pump.excited_potential_id, fc_pump.v, coefficients)


def reversed_dump_wavepacket(dump: SpectralPulse, fc_dump: FCSpectrum) -> LevelWavepacket:
    """packet the time-reversed dump would excite from the target level

    The dump spectrum is taken in its own time frame, centred on the dump.
    """
    coefficients = 0.5j * dump.field_scale * fc_dump.amplitudes * dump.at(fc_dump.detunings)
    return LevelWavepacket(fc_dump.excited_potential_id, fc_dump.v, coefficients)


def _inner(a: LevelWavepacket, b: LevelWavepacket) -> complex:
    if a.excited_potential_id != b.excited_potential_id:
        raise ValueError(
            f"packets live on different potentials: {a.excited_potential_id!r} vs {b.excited_potential_id!r}"
        )
    _, ia, ib = np.intersect1d(a.v, b.v, return_indices=True)
    return complex(np.vdot(a.coefficients[ia], b.coefficients[ib]))


def overlap(a: LevelWavepacket, b: LevelWavepacket) -> complex:
    """<a|b> / (|a| |b|)"""
    if a.norm == 0.0 or b.norm == 0.0:
        raise DegenerateDesignError("overlap of a zero-norm wave-packet")
    return _inner(a, b) / (a.norm * b.norm)


def transfer_amplitude(pumped: LevelWavepacket, dumped: LevelWavepacket) -> complex:
    """second-order amplitude landing in the target level, -<dumped|pumped>"""
    return -_inner(dumped, pumped)
