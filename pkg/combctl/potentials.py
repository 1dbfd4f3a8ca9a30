"""Morse potentials, their bound levels and the radial grid"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, special

from combctl.errors import GridTruncationError, UnboundLevelError

logger = logging.getLogger(__name__)

NORM_TOLERANCE = 1e-6


@dataclass(frozen=True)
class MorsePotential:
    """V(r) = T_e + D_e (1 - exp(-a (r - r_e)))^2, atomic units"""

    dissociation_energy: float
    width: float
    equilibrium_distance: float
    electronic_offset: float = 0.0
    reduced_mass: float = 1.0
    name: str = ""

    def __post_init__(self):
        for attr in ("dissociation_energy", "width", "equilibrium_distance", "reduced_mass"):
            if not getattr(self, attr) > 0:
                raise ValueError(f"{attr} must be positive, got {getattr(self, attr)}")
        if self.lam < 0.5:
            raise UnboundLevelError(
                f"potential {self.name!r} supports no bound level (lambda={self.lam:.4f} < 1/2)"
            )

    @property
    def lam(self) -> float:
        """lambda = sqrt(2 mu D_e) / a"""
        return math.sqrt(2.0 * self.reduced_mass * self.dissociation_energy) / self.width

    @property
    def omega0(self) -> float:
        """harmonic frequency a sqrt(2 D_e / mu)"""
        return self.width * math.sqrt(2.0 * self.dissociation_energy / self.reduced_mass)

    @property
    def v_max(self) -> int:
        return math.floor(self.lam - 0.5)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        x = 1.0 - np.exp(-self.width * (r - self.equilibrium_distance))
        return self.electronic_offset + self.dissociation_energy * x * x


@dataclass(frozen=True)
class RadialGrid:
    """uniform grid on [r_min, r_max] with n_points (a power of two) samples"""

    r_min: float
    r_max: float
    n_points: int

    def __post_init__(self):
        if not self.r_max > self.r_min:
            raise ValueError(f"r_max ({self.r_max}) must exceed r_min ({self.r_min})")
        if self.n_points < 2 or self.n_points & (self.n_points - 1):
            raise ValueError(f"n_points must be a power of two, got {self.n_points}")

    @property
    def spacing(self) -> float:
        return (self.r_max - self.r_min) / (self.n_points - 1)

    @cached_property
    def points(self) -> np.ndarray:
        return np.linspace(self.r_min, self.r_max, self.n_points)

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.spacing)

    def covers(self, potential: MorsePotential, v: int, margin: float = 0.1) -> bool:
        """True if both turning points of level v lie inside the grid with margin"""
        r_in, r_out = turning_points(potential, v)
        pad = margin * (r_out - r_in)
        return self.r_min <= r_in - pad and r_out + pad <= self.r_max


@dataclass(frozen=True, eq=False)
class VibrationalLevel:
    """bound eigenstate v of a Morse potential sampled on a grid (real, normalized)"""

    potential: MorsePotential
    v: int
    energy: float
    grid: RadialGrid
    wavefunction: np.ndarray = field(repr=False)

    @property
    def potential_id(self) -> str:
        return self.potential.name

    @property
    def absolute_energy(self) -> float:
        return self.potential.electronic_offset + self.energy


def count_bound_levels(potential: MorsePotential) -> int:
    return potential.v_max + 1


def _check_bound(potential: MorsePotential, v: int) -> None:
    if int(v) != v or v < 0 or v > potential.v_max:
        raise UnboundLevelError(
            f"level v={v} is not bound in potential {potential.name!r} (v_max={potential.v_max})"
        )


def morse_energy(potential: MorsePotential, v: int) -> float:
    """E_v above the potential minimum"""
    _check_bound(potential, v)
    x = potential.omega0 * (v + 0.5)
    return x - x * x / (4.0 * potential.dissociation_energy)


def turning_points(potential: MorsePotential, v: int) -> Tuple[float, float]:
    """classical turning points (r_in, r_out) of level v"""
    s = math.sqrt(morse_energy(potential, v) / potential.dissociation_energy)
    a, re = potential.width, potential.equilibrium_distance
    return re - math.log1p(s) / a, re - math.log1p(-s) / a


def vibration_period(potential: MorsePotential, v_center: int) -> float:
    """2 pi / local level spacing (E_{v+1} - E_{v-1}) / 2"""
    if v_center < 1 or v_center + 1 > potential.v_max:
        raise UnboundLevelError(
            f"vibration period needs v={v_center}+-1 bound (v_max={potential.v_max})"
        )
    spacing = (morse_energy(potential, v_center + 1) - morse_energy(potential, v_center - 1)) / 2.0
    return 2.0 * math.pi / spacing


def _morse_values(potential: MorsePotential, v: int, r: np.ndarray) -> np.ndarray:
    """analytically normalized closed-form eigenfunction at positions r"""
    lam = potential.lam
    s = 2.0 * lam - 2.0 * v - 1.0
    if s <= 0:
        raise UnboundLevelError(f"level v={v} sits at the dissociation limit")
    a = potential.width
    z = 2.0 * lam * np.exp(-a * (r - potential.equilibrium_distance))
    log_norm = 0.5 * (math.log(a) + special.gammaln(v + 1) + math.log(s) - special.gammaln(2.0 * lam - v))
    log_prefactor = log_norm + 0.5 * s * np.log(z) - 0.5 * z
    values = np.zeros_like(r, dtype=float)
    # below ~exp(-745) the prefactor underflows and the Laguerre factor may overflow
    live = log_prefactor > -700.0
    with np.errstate(over="ignore", invalid="ignore"):
        values[live] = np.exp(log_prefactor[live]) * special.eval_genlaguerre(v, s, z[live])
    values[~np.isfinite(values)] = 0.0
    # positive lobe at the inner turning point
    return values if v % 2 == 0 else -values


def morse_wavefunction(potential: MorsePotential, v: int, grid: RadialGrid) -> VibrationalLevel:
    """sample the closed-form Morse eigenfunction on grid and normalize it there"""
    energy = morse_energy(potential, v)
    psi = _morse_values(potential, v, grid.points)
    norm = float(np.sum(psi * psi) * grid.spacing)
    if abs(norm - 1.0) > NORM_TOLERANCE:
        raise GridTruncationError(
            f"grid [{grid.r_min:.3f}, {grid.r_max:.3f}] holds {norm:.8f} of level v={v} "
            f"of {potential.name!r}; enlarge the grid"
        )
    psi = psi / math.sqrt(norm)
    return VibrationalLevel(potential=potential, v=v, energy=energy, grid=grid, wavefunction=psi)


def bound_levels(
    potential: MorsePotential, grid: RadialGrid, v_range: Optional[Iterable[int]] = None
) -> List[VibrationalLevel]:
    """every bound level that fits on the grid; levels truncated by the grid are skipped"""
    levels = []
    for v in v_range if v_range is not None else range(count_bound_levels(potential)):
        try:
            levels.append(morse_wavefunction(potential, v, grid))
        except (GridTruncationError, UnboundLevelError):
            logger.debug("skipping level v=%d of %r: not representable on grid", v, potential.name)
    return levels


def grid_for_levels(
    requests: Sequence[Tuple[MorsePotential, int]],
    n_points: int,
    threshold: float = 1e-8,
    margin: float = 0.1,
) -> RadialGrid:
    """smallest grid whose boundary amplitude is below threshold * peak for every requested level"""
    lo, hi = math.inf, -math.inf
    for potential, v in requests:
        r_in, r_out = turning_points(potential, v)
        width = r_out - r_in
        kappa = math.sqrt(2.0 * potential.reduced_mass * (potential.dissociation_energy - morse_energy(potential, v)))
        r_a, r_b = r_in - width, r_out + width + 40.0 / kappa
        for _ in range(8):
            r = np.linspace(r_a, r_b, 16384)
            amplitude = np.abs(_morse_values(potential, v, r))
            inside = np.nonzero(amplitude >= threshold * amplitude.max())[0]
            grow_low, grow_high = inside[0] == 0, inside[-1] == r.size - 1
            if not (grow_low or grow_high):
                break
            if grow_low:
                r_a -= width
            if grow_high:
                r_b += width + 40.0 / kappa
        lo, hi = min(lo, r[inside[0]]), max(hi, r[inside[-1]])
    span = hi - lo
    grid = RadialGrid(lo - margin * span, hi + margin * span, n_points)
    logger.debug("auto grid [%.4f, %.4f] bohr, %d points", grid.r_min, grid.r_max, n_points)
    return grid


def grid_hamiltonian(potential: MorsePotential, grid: RadialGrid) -> np.ndarray:
    """sinc-DVR Hamiltonian matrix of the sampled potential"""
    n = np.arange(grid.n_points)
    diff = n[:, None] - n[None, :]
    with np.errstate(divide="ignore"):
        off = 2.0 / diff.astype(float) ** 2
    kinetic = np.where(diff == 0, np.pi**2 / 3.0, off) * np.where(diff % 2 == 0, 1.0, -1.0)
    kinetic /= 2.0 * potential.reduced_mass * grid.spacing**2
    return kinetic + np.diag(potential(grid.points))


def diagonalize(
    potential: MorsePotential, grid: RadialGrid, n_levels: Optional[int] = None, bound_only: bool = False
) -> Tuple[np.ndarray, np.ndarray]:
    """grid eigenpairs; energies above the potential minimum, vectors normalized with spacing"""
    hamiltonian = grid_hamiltonian(potential, grid)
    if bound_only:
        ceiling = potential.electronic_offset + potential.dissociation_energy
        energies, vectors = linalg.eigh(hamiltonian, subset_by_value=(-np.inf, ceiling))
    elif n_levels is not None:
        energies, vectors = linalg.eigh(hamiltonian, subset_by_index=(0, n_levels - 1))
    else:
        energies, vectors = linalg.eigh(hamiltonian)
    return energies - potential.electronic_offset, vectors / math.sqrt(grid.spacing)


def kinetic_diagonal(grid: RadialGrid, mass: float) -> np.ndarray:
    return grid.wavenumbers**2 / (2.0 * mass)


def expectation_energy(level: VibrationalLevel) -> float:
    """<psi|H|psi> on the grid (FFT kinetic term), measured from the potential minimum"""
    psi = level.wavefunction
    t_psi = np.fft.ifft(kinetic_diagonal(level.grid, level.potential.reduced_mass) * np.fft.fft(psi))
    h_psi = t_psi + level.potential(level.grid.points) * psi
    return float(np.real(np.vdot(psi, h_psi)) * level.grid.spacing) - level.potential.electronic_offset
