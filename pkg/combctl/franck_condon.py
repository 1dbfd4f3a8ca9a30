"""Franck-Condon spectra under the Condon approximation"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from combctl.errors import EmptyWindowError, GridMismatchError
from combctl.potentials import (
    MorsePotential,
    VibrationalLevel,
    count_bound_levels,
    morse_energy,
    morse_wavefunction,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FCSpectrum:
    """signed dipole matrix elements F(w) = d_el <anchor|v> at the detunings of the excited levels

    detunings are measured from ``carrier`` and increase with v.
    """

    anchor_level: VibrationalLevel
    excited_potential_id: str
    carrier: float
    dipole: float
    v: np.ndarray = field(repr=False)
    detunings: np.ndarray = field(repr=False)
    amplitudes: np.ndarray = field(repr=False)

    @property
    def entries(self) -> List[Tuple[int, float, float]]:
        return list(zip(self.v.tolist(), self.detunings.tolist(), self.amplitudes.tolist()))

    def __len__(self) -> int:
        return len(self.v)

    def weight(self) -> float:
        """sum of |F|^2; bounded by d_el^2"""
        return float(np.sum(self.amplitudes**2))


def fc_factor(level_a: VibrationalLevel, level_b: VibrationalLevel) -> float:
    """signed overlap <a|b> on the shared grid"""
    if level_a.grid != level_b.grid:
        raise GridMismatchError(f"levels sampled on different grids: {level_a.grid} vs {level_b.grid}")
    return float(np.dot(level_a.wavefunction, level_b.wavefunction) * level_a.grid.spacing)


def fc_spectrum(
    anchor: VibrationalLevel,
    excited: MorsePotential,
    carrier: float,
    window: Tuple[float, float],
    dipole: float = 1.0,
    excited_levels: Optional[Sequence[VibrationalLevel]] = None,
) -> FCSpectrum:
    """Franck-Condon spectrum of ``anchor`` into every excited bound level inside ``window``

    window is a (low, high) detuning range relative to carrier.  Precomputed
    excited levels may be passed in to avoid resampling them.
    """
    low, high = window
    cache = {level.v: level for level in excited_levels or ()}
    rows = []
    for v in range(count_bound_levels(excited)):
        detuning = excited.electronic_offset + morse_energy(excited, v) - anchor.absolute_energy - carrier
        if not low <= detuning <= high:
            continue
        level = cache.get(v) or morse_wavefunction(excited, v, anchor.grid)
        rows.append((v, detuning, dipole * fc_factor(anchor, level)))
    if not rows:
        raise EmptyWindowError(
            f"no level of {excited.name!r} lies within detuning window [{low:.6g}, {high:.6g}] "
            f"from anchor v={anchor.v}"
        )
    v, detunings, amplitudes = (np.array(column) for column in zip(*rows))
    logger.debug(
        "FC spectrum of %s v=%d: %d levels (v=%d..%d), weight %.6f",
        anchor.potential_id,
        anchor.v,
        len(rows),
        v[0],
        v[-1],
        float(np.sum(amplitudes**2)),
    )
    return FCSpectrum(
        anchor_level=anchor,
        excited_potential_id=excited.name,
        carrier=carrier,
        dipole=dipole,
        v=v.astype(int),
        detunings=detunings.astype(float),
        amplitudes=amplitudes.astype(float),
    )
