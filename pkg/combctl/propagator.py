"""Split-operator propagation of three coupled wave-packets in the rotating frame

Surfaces are ordered (g1, e, g2): the input ground manifold, the excited
surface and the target ground manifold.  The pump couples g1 and e, the dump
couples e and g2:

    H[e, g1] = -Omega_p(t) / 2,   H[e, g2] = -Omega_d(t) / 2

Each Strang step is K/2 L K/2 with K the kinetic factor in momentum space and
L the local factor exp(-i (V + C) dt).  In "split" mode L is approximated by
exp(-i V dt/2) exp(-i C dt) exp(-i V dt/2), where the r-independent coupling C
has a closed-form exponential; "exact" mode diagonalizes the 3x3 local
Hamiltonian at every grid point.  Consecutive kinetic half steps are fused.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from combctl.errors import ContinuumLeakageError, GridMismatchError, PropagationError
from combctl.potentials import MorsePotential, RadialGrid, VibrationalLevel, bound_levels, kinetic_diagonal
from combctl.pulses import SpectralPulse, envelope_at, pulse_support

logger = logging.getLogger(__name__)

SURFACES = ("g1", "e", "g2")
LOCAL_MODES = ("split", "exact")
STABILITY_PHASE = 0.5
FIELD_CUTOFF = 1e-12
CHUNK = 1024
Observer = Callable[[float, np.ndarray], Tuple]
FINITE_CHECK_EVERY = 256


@dataclass(frozen=True, eq=False)
class ThreeSurfaceState:
    """wavefunctions psi[0..2] on (g1, e, g2) sampled on one grid"""

    grid: RadialGrid
    psi: np.ndarray = field(repr=False)
    time: float = 0.0

    @classmethod
    def from_level(cls, level: VibrationalLevel, surface: str = "g1") -> "ThreeSurfaceState":
        psi = np.zeros((3, level.grid.n_points), dtype=complex)
        psi[SURFACES.index(surface)] = level.wavefunction
        return cls(grid=level.grid, psi=psi)

    def surface(self, name: str) -> np.ndarray:
        return self.psi[SURFACES.index(name)]

    def norms(self) -> np.ndarray:
        return np.sum(np.abs(self.psi) ** 2, axis=1) * self.grid.spacing

    @property
    def total_norm(self) -> float:
        return float(self.norms().sum())


@dataclass(frozen=True)
class CouplingFields:
    """Rabi frequencies Omega_p(t), Omega_d(t) as callables of time, offset by carrier detunings"""

    pump: Optional[Callable[[np.ndarray], np.ndarray]] = None
    dump: Optional[Callable[[np.ndarray], np.ndarray]] = None
    pump_detuning: float = 0.0
    dump_detuning: float = 0.0

    def rabi(self, times: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return (
            _sample(self.pump, self.pump_detuning, times),
            _sample(self.dump, self.dump_detuning, times),
        )


def _sample(function, detuning, times):
    if function is None:
        return np.zeros(times.shape, dtype=complex)
    values = np.asarray(function(times), dtype=complex)
    if detuning:
        values = values * np.exp(-1j * detuning * times)
    return values


def pulse_coupling(pulse: SpectralPulse, dipole: float, center: float = 0.0) -> Callable[[np.ndarray], np.ndarray]:
    """Rabi frequency of a pulse centred at ``center``; zero outside its support"""
    start, end = pulse_support(pulse.with_scale(1.0))

    def rabi(times):
        local = np.asarray(times, dtype=float) - center
        values = dipole * envelope_at(pulse, local)
        values[(local < start) | (local > end)] = 0.0
        return values

    return rabi


def coupling_exponential(pump, dump, tau: float) -> np.ndarray:
    """exp(-i C tau) for each (pump, dump) sample, shape (..., 3, 3)

    C = -M/2 with M[e, g1] = pump and M[e, g2] = dump.  M has eigenvalues 0 and
    +-R, R^2 = |pump|^2 + |dump|^2, so exp(i M s) = 1 + i sin(Rs)/R M + (cos(Rs) - 1)/R^2 M^2.
    """
    pump = np.asarray(pump, dtype=complex)
    dump = np.asarray(dump, dtype=complex)
    m = np.zeros(np.broadcast(pump, dump).shape + (3, 3), dtype=complex)
    m[..., 1, 0] = pump
    m[..., 0, 1] = np.conj(pump)
    m[..., 1, 2] = dump
    m[..., 2, 1] = np.conj(dump)
    s = 0.5 * tau
    rate = np.sqrt(np.abs(pump) ** 2 + np.abs(dump) ** 2)
    first = s * np.sinc(rate * s / math.pi)
    second = -0.5 * s**2 * np.sinc(rate * s / (2.0 * math.pi)) ** 2
    return np.eye(3) + 1j * first[..., None, None] * m + second[..., None, None] * (m @ m)


def stable_time_step(grid: RadialGrid, mass: float, diagonals: np.ndarray) -> float:
    """largest dt keeping both kinetic and potential phases per step below 0.5 rad"""
    max_kinetic = float(kinetic_diagonal(grid, mass).max())
    max_potential = float(np.max(np.abs(diagonals)))
    return STABILITY_PHASE / max(max_kinetic, max_potential)


def frame_diagonals(
    grid: RadialGrid, potentials: Sequence[MorsePotential], offsets: Sequence[float], cap: Optional[float] = None
) -> np.ndarray:
    """V_j(r) - offset_j per surface, clipped to +-cap"""
    diagonals = np.array([potential(grid.points) - offset for potential, offset in zip(potentials, offsets)])
    if cap is not None:
        diagonals = np.clip(diagonals, -cap, cap)
    return diagonals


def surface_grams(spacing: float) -> Observer:
    """observer returning (time, G) with G[s, a, b] = <psi_a|psi_b> on surface s for a batch of states"""

    def observe(time, psi):
        return time, np.einsum("asn,bsn->sab", psi.conj(), psi) * spacing

    return observe


class Propagator:
    """symmetric Strang stepper on a fixed grid with fixed frame potentials

    Wavefunctions have shape (3, n) or (batch, 3, n); a batch shares the fields.
    """

    def __init__(self, grid: RadialGrid, mass: float, diagonals: np.ndarray, dt: float, local: str = "split"):
        diagonals = np.asarray(diagonals, dtype=float)
        if diagonals.shape != (3, grid.n_points):
            raise ValueError(f"expected diagonals of shape (3, {grid.n_points}), got {diagonals.shape}")
        if local not in LOCAL_MODES:
            raise ValueError(f"unknown local step {local!r}; expected one of {LOCAL_MODES}")
        self.grid = grid
        self.mass = mass
        self.diagonals = diagonals
        self.dt = dt
        self.local = local
        kinetic = kinetic_diagonal(grid, mass)
        self._kinetic_half = np.exp(-0.5j * dt * kinetic)
        self._kinetic_full = np.exp(-1j * dt * kinetic)
        self._potential_half = np.exp(-0.5j * dt * diagonals)
        self._potential_phase = np.exp(-1j * dt * diagonals)
        limit = stable_time_step(grid, mass, diagonals)
        if dt > limit:
            logger.warning("time step %.4g au exceeds the 0.5 rad phase policy (limit %.4g au)", dt, limit)

    @classmethod
    def for_surfaces(
        cls,
        grid: RadialGrid,
        potentials: Sequence[MorsePotential],
        offsets: Sequence[float],
        dt: Optional[float] = None,
        cap: Optional[float] = None,
        local: str = "split",
    ) -> "Propagator":
        masses = {potential.reduced_mass for potential in potentials}
        if len(masses) != 1:
            raise ValueError(f"surfaces disagree on the reduced mass: {sorted(masses)}")
        mass = masses.pop()
        diagonals = frame_diagonals(grid, potentials, offsets, cap)
        if dt is None:
            dt = stable_time_step(grid, mass, diagonals)
        return cls(grid, mass, diagonals, dt, local)

    @staticmethod
    def _kinetic(psi, factor):
        return np.fft.ifft(factor * np.fft.fft(psi, axis=-1), axis=-1)

    def _two_level(self, upper, lower, i, j, coupling):
        # exp(-i H dt) for H = [[V_i, b], [conj(b), V_j]] with r-independent b
        dt = self.dt
        mean = 0.5 * (self.diagonals[i] + self.diagonals[j])
        half_gap = 0.5 * (self.diagonals[i] - self.diagonals[j])
        rate = np.sqrt(half_gap**2 + abs(coupling) ** 2)
        cos = np.cos(rate * dt)
        sin_over_rate = dt * np.sinc(rate * dt / np.pi)
        phase = np.exp(-1j * mean * dt)
        new_upper = phase * ((cos - 1j * half_gap * sin_over_rate) * upper - 1j * coupling * sin_over_rate * lower)
        new_lower = phase * (-1j * np.conj(coupling) * sin_over_rate * upper + (cos + 1j * half_gap * sin_over_rate) * lower)
        return new_upper, new_lower

    def _exact_local(self, psi, pump, dump):
        pump_on = abs(pump) * self.dt > FIELD_CUTOFF
        dump_on = abs(dump) * self.dt > FIELD_CUTOFF
        out = np.empty_like(psi)
        if pump_on and not dump_on:
            out[..., 0, :], out[..., 1, :] = self._two_level(psi[..., 0, :], psi[..., 1, :], 0, 1, -0.5 * np.conj(pump))
            out[..., 2, :] = psi[..., 2, :] * self._potential_phase[2]
        elif dump_on and not pump_on:
            out[..., 1, :], out[..., 2, :] = self._two_level(psi[..., 1, :], psi[..., 2, :], 1, 2, -0.5 * dump)
            out[..., 0, :] = psi[..., 0, :] * self._potential_phase[0]
        else:
            hamiltonian = np.zeros((self.grid.n_points, 3, 3), dtype=complex)
            for j in range(3):
                hamiltonian[:, j, j] = self.diagonals[j]
            hamiltonian[:, 1, 0] = -0.5 * pump
            hamiltonian[:, 0, 1] = -0.5 * np.conj(pump)
            hamiltonian[:, 1, 2] = -0.5 * dump
            hamiltonian[:, 2, 1] = -0.5 * np.conj(dump)
            energies, vectors = np.linalg.eigh(hamiltonian)
            rotated = np.einsum("nji,...jn->...in", vectors.conj(), psi) * np.exp(-1j * self.dt * energies.T)
            out = np.einsum("nij,...jn->...in", vectors, rotated)
        return out

    def _local(self, psi, pump, dump, coupling=None):
        if (abs(pump) + abs(dump)) * self.dt <= FIELD_CUTOFF:
            return psi * self._potential_phase
        if self.local == "exact":
            return self._exact_local(psi, pump, dump)
        if coupling is None:
            coupling = coupling_exponential(pump, dump, self.dt)
        return self._potential_half * (coupling @ (self._potential_half * psi))

    def _norm_row(self, time, psi):
        return (time, *(np.sum(np.abs(psi) ** 2, axis=-1) * self.grid.spacing).reshape(-1).tolist())

    def step(self, psi: np.ndarray, pump: complex = 0.0, dump: complex = 0.0) -> np.ndarray:
        """one Strang step with the Rabi frequencies sampled at the step midpoint"""
        return self._kinetic(self._local(self._kinetic(psi, self._kinetic_half), pump, dump), self._kinetic_half)

    def evolve(
        self,
        psi: np.ndarray,
        fields: CouplingFields,
        n_steps: int,
        start: float = 0.0,
        record_every: int = 0,
        pair_index: Optional[int] = None,
        observer: Optional[Observer] = None,
    ) -> Tuple[np.ndarray, np.ndarray, List[Tuple]]:
        """advance psi of shape (3, n) or (batch, 3, n) by n_steps from local time ``start``

        Returns the final psi, the excited-surface Gram matrix <psi_a|psi_b>
        before the first and after every step (shape (n_steps + 1, batch, batch))
        and, when record_every > 0, observer(time, psi) every record_every steps.
        """
        psi = np.asarray(psi, dtype=complex)
        single = psi.ndim == 2
        current = psi[None] if single else psi
        observer = observer or self._norm_row
        spacing = self.grid.spacing
        excited = np.empty((n_steps + 1, current.shape[0], current.shape[0]), dtype=complex)
        excited[0] = current[:, 1].conj() @ current[:, 1].T
        trace = []
        if n_steps:
            current = self._kinetic(current, self._kinetic_half)
        for first in range(0, n_steps, CHUNK):
            count = min(CHUNK, n_steps - first)
            midpoints = start + (first + np.arange(count) + 0.5) * self.dt
            pump, dump = fields.rabi(midpoints)
            couplings = coupling_exponential(pump, dump, self.dt) if self.local == "split" else None
            for k in range(count):
                index = first + k + 1
                coupling = None if couplings is None else couplings[k]
                current = self._local(current, pump[k], dump[k], coupling)
                excited[index] = current[:, 1].conj() @ current[:, 1].T
                if index % FINITE_CHECK_EVERY == 0 and not np.isfinite(current).all():
                    raise PropagationError("wavefunction became non-finite", pair_index=pair_index, step=index)
                if record_every and index % record_every == 0:
                    observed = self._kinetic(current, self._kinetic_half)
                    trace.append(observer(start + index * self.dt, observed[0] if single else observed))
                if index < n_steps:
                    current = self._kinetic(current, self._kinetic_full)
        if n_steps:
            current = self._kinetic(current, self._kinetic_half)
        if not np.isfinite(current).all():
            raise PropagationError("wavefunction became non-finite", pair_index=pair_index, step=n_steps)
        return (current[0] if single else current), excited * spacing, trace

    def run(
        self,
        state: ThreeSurfaceState,
        fields: CouplingFields,
        n_steps: int,
        start: float = 0.0,
        record_every: int = 0,
        pair_index: Optional[int] = None,
        observer: Optional[Observer] = None,
    ) -> Tuple[ThreeSurfaceState, float, List[Tuple]]:
        """advance a state n_steps from local time ``start``

        Returns the new state, the peak excited population seen and, when
        record_every > 0, one row every record_every steps: observer(time, psi)
        or by default (time, norm_g1, norm_e, norm_g2).
        """
        if state.grid != self.grid:
            raise GridMismatchError("state and propagator live on different grids")
        psi, excited, trace = self.evolve(state.psi, fields, n_steps, start, record_every, pair_index, observer)
        peak = float(excited[:, 0, 0].real.max())
        return dataclasses.replace(state, psi=psi, time=state.time + n_steps * self.dt), peak, trace


def split_step(state: ThreeSurfaceState, propagator: Propagator, fields: CouplingFields, t: float) -> ThreeSurfaceState:
    """one symmetric step from local time t to t + dt"""
    pump, dump = fields.rabi(np.array([t + 0.5 * propagator.dt]))
    psi = propagator.step(state.psi, pump[0], dump[0])
    return dataclasses.replace(state, psi=psi, time=state.time + propagator.dt)


@dataclass(frozen=True)
class PairDiagnostics:
    peak_excited: float
    start: float
    end: float
    n_steps: int
    norms: Tuple[float, float, float]
    trace: List[Tuple[float, ...]] = field(default_factory=list, repr=False)

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class PairWindow:
    """coupling fields of one pump-dump pair and the steps spanning both supports"""

    fields: CouplingFields
    start: float
    n_steps: int
    dt: float

    @property
    def end(self) -> float:
        return self.start + self.n_steps * self.dt


def _active(pulse: Optional[SpectralPulse]) -> bool:
    return pulse is not None and pulse.field_scale != 0.0


def pair_window(
    propagator: Propagator,
    pump: Optional[SpectralPulse],
    dump: Optional[SpectralPulse],
    delay: float,
    dipole: float = 1.0,
) -> Optional[PairWindow]:
    """pump centred at t = 0, dump centred at t = delay; None when neither pulse is on"""
    spans = []
    fields = {}
    if _active(pump):
        spans.append(pulse_support(pump.with_scale(1.0)))
        fields["pump"] = pulse_coupling(pump, dipole, 0.0)
    if _active(dump):
        start, end = pulse_support(dump.with_scale(1.0))
        spans.append((start + delay, end + delay))
        fields["dump"] = pulse_coupling(dump, dipole, delay)
    if not spans:
        return None
    start = min(span[0] for span in spans)
    end = max(span[1] for span in spans)
    n_steps = int(math.ceil((end - start) / propagator.dt))
    return PairWindow(fields=CouplingFields(**fields), start=start, n_steps=n_steps, dt=propagator.dt)


def propagate_pulse_pair(
    state: ThreeSurfaceState,
    propagator: Propagator,
    pump: Optional[SpectralPulse],
    dump: Optional[SpectralPulse],
    delay: float,
    dipole: float = 1.0,
    record_every: int = 0,
    pair_index: Optional[int] = None,
    observer: Optional[Observer] = None,
) -> Tuple[ThreeSurfaceState, PairDiagnostics]:
    """pump centred at t = 0, dump centred at t = delay, propagated across both supports"""
    window = pair_window(propagator, pump, dump, delay, dipole)
    if window is None:
        diagnostics = PairDiagnostics(
            peak_excited=float(state.norms()[1]), start=0.0, end=0.0, n_steps=0, norms=tuple(state.norms().tolist())
        )
        return state, diagnostics
    state, peak, trace = propagator.run(
        state,
        window.fields,
        window.n_steps,
        start=window.start,
        record_every=record_every,
        pair_index=pair_index,
        observer=observer,
    )
    diagnostics = PairDiagnostics(
        peak_excited=peak,
        start=window.start,
        end=window.end,
        n_steps=window.n_steps,
        norms=tuple(state.norms().tolist()),
        trace=trace,
    )
    return state, diagnostics


@dataclass(frozen=True, eq=False)
class SurfaceBasis:
    """bound levels of each surface on the grid with their rotating-frame energies"""

    grid: RadialGrid
    vectors: Tuple[np.ndarray, np.ndarray, np.ndarray] = field(repr=False)
    energies: Tuple[np.ndarray, np.ndarray, np.ndarray] = field(repr=False)
    v: Tuple[np.ndarray, np.ndarray, np.ndarray] = field(repr=False)

    @classmethod
    def build(cls, grid: RadialGrid, potentials: Sequence[MorsePotential], offsets: Sequence[float]) -> "SurfaceBasis":
        vectors, energies, indices = [], [], []
        for name, potential, offset in zip(SURFACES, potentials, offsets):
            levels = bound_levels(potential, grid)
            vectors.append(np.array([level.wavefunction for level in levels]))
            energies.append(np.array([level.absolute_energy - offset for level in levels]))
            indices.append(np.array([level.v for level in levels], dtype=int))
            logger.debug("surface %s: %d bound levels fit the grid", name, len(levels))
        return cls(grid=grid, vectors=tuple(vectors), energies=tuple(energies), v=tuple(indices))

    def project(self, psi: np.ndarray, surface: int) -> np.ndarray:
        return self.vectors[surface] @ psi * self.grid.spacing


def free_evolve(
    state: ThreeSurfaceState,
    duration: float,
    gamma: float,
    basis: SurfaceBasis,
    tolerance: float = 1e-6,
    significant_norm: float = 1e-6,
) -> ThreeSurfaceState:
    """exact evolution in the bound eigenbasis; the excited surface decays at rate gamma"""
    if duration < 0:
        raise ValueError(f"duration must not be negative, got {duration}")
    if duration == 0:
        return state
    if state.grid != basis.grid:
        raise GridMismatchError("state and basis live on different grids")
    norms = state.norms()
    psi = np.empty_like(state.psi)
    for j, name in enumerate(SURFACES):
        coefficients = basis.project(state.psi[j], j)
        captured = float(np.sum(np.abs(coefficients) ** 2))
        if norms[j] > significant_norm and captured < norms[j] * (1.0 - tolerance):
            raise ContinuumLeakageError(
                f"bound levels of surface {name} hold {captured / norms[j]:.8f} of its norm {norms[j]:.3e}"
            )
        coefficients = coefficients * np.exp(-1j * basis.energies[j] * duration)
        if j == 1 and gamma:
            coefficients = coefficients * math.exp(-0.5 * gamma * duration)
        psi[j] = coefficients @ basis.vectors[j]
    return dataclasses.replace(state, psi=psi, time=state.time + duration)


@dataclass(frozen=True)
class PopulationMap:
    levels: Dict[str, float]
    norms: Dict[str, float]
    purity: Optional[float] = None


def measure_populations(
    state: ThreeSurfaceState,
    projectors: Mapping[str, Tuple[str, VibrationalLevel]],
    purity_level: Optional[str] = "target",
) -> PopulationMap:
    """|<level|psi_surface>|^2 per named projector, plus surface norms

    purity is the purity_level population over the norm of its surface.
    """
    levels = {}
    for name, (surface, level) in projectors.items():
        if level.grid != state.grid:
            raise GridMismatchError(f"projector {name!r} sampled on a different grid")
        amplitude = np.vdot(level.wavefunction, state.surface(surface)) * state.grid.spacing
        levels[name] = float(abs(amplitude) ** 2)
    norms = dict(zip(SURFACES, state.norms().tolist()))
    purity = None
    if purity_level in projectors:
        surface_norm = norms[projectors[purity_level][0]]
        purity = levels[purity_level] / surface_norm if surface_norm > 0 else 0.0
    return PopulationMap(levels=levels, norms=norms, purity=purity)


def single_pulse_fraction(
    propagator: Propagator, level: VibrationalLevel, pulse: SpectralPulse, dipole: float = 1.0, surface: str = "g1"
) -> float:
    """excited population left by one pulse acting on an eigenstate of g1 (pump) or g2 (dump)"""
    state = ThreeSurfaceState.from_level(level, surface)
    if surface == "g1":
        state, diagnostics = propagate_pulse_pair(state, propagator, pulse, None, 0.0, dipole)
    elif surface == "g2":
        state, diagnostics = propagate_pulse_pair(state, propagator, None, pulse, 0.0, dipole)
    else:
        raise ValueError(f"a single pulse starts from g1 or g2, not {surface!r}")
    return diagnostics.norms[1]


def arg_parser(parser):
    parser.add_argument(
        "--record-every", type=int, default=0, metavar="STEPS", help="write norms every STEPS steps (0: per pair only)"
    )
    return parser
