"""Spectral pulses and the pump/dump design rules

Pulses live on a uniform detuning grid symmetric about their carrier.  The
time-domain envelope is

    eps(t) = field_scale * (dw / 2 pi) * sum_k E(w_k) exp(-i w_k t)

so a spectral phase phi(w) puts frequency w at group delay d(phi)/dw.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize
from scipy.interpolate import CubicSpline
from scipy.signal import czt

from combctl.errors import (
    AliasingError,
    AreaError,
    DegenerateDesignError,
    EmptyWindowError,
    PulseTruncationError,
)
from combctl.franck_condon import FCSpectrum
from combctl.potentials import MorsePotential, count_bound_levels, morse_energy

logger = logging.getLogger(__name__)

STRONG_AREA = math.pi / 3
SUPPORT_THRESHOLD = 1e-8
EDGE_FRACTION = 0.05
ALIASING_LIMIT = 1e-6
AREA_TOLERANCE = 1e-3


def detuning_grid(n_points: int, half_width: float) -> np.ndarray:
    """uniform grid of n_points detunings on [-half_width, half_width]"""
    if n_points < 2 or half_width <= 0:
        raise ValueError(f"detuning grid needs n_points >= 2 and half_width > 0, got {n_points}, {half_width}")
    return np.linspace(-half_width, half_width, n_points)


@dataclass(frozen=True, eq=False)
class SpectralPulse:
    """complex spectral amplitude E(w_k) around a carrier, times a real field_scale"""

    carrier: float
    detunings: np.ndarray = field(repr=False)
    amplitude: np.ndarray = field(repr=False)
    field_scale: float = 1.0

    def __post_init__(self):
        steps = np.diff(self.detunings)
        if steps.size == 0 or not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
            raise ValueError("detuning grid must be uniform")
        if not np.allclose(self.detunings, -self.detunings[::-1], rtol=0.0, atol=1e-9 * abs(steps[0])):
            raise ValueError("detuning grid must be symmetric about the carrier")
        if self.amplitude.shape != self.detunings.shape:
            raise ValueError("amplitude and detuning grid differ in shape")
        if not np.isfinite(self.amplitude).all() or not np.any(self.amplitude):
            raise ValueError("spectral energy must be finite and non-zero")

    @property
    def spacing(self) -> float:
        return float(self.detunings[1] - self.detunings[0])

    @property
    def period(self) -> float:
        """time period of the discrete synthesis 2 pi / dw"""
        return 2.0 * math.pi / self.spacing

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.amplitude) ** 2) * self.spacing)

    def at(self, omega) -> np.ndarray:
        """shape amplitude at arbitrary detunings (linear interpolation, zero outside the grid)"""
        omega = np.asarray(omega, dtype=float)
        real = np.interp(omega, self.detunings, self.amplitude.real, left=0.0, right=0.0)
        imag = np.interp(omega, self.detunings, self.amplitude.imag, left=0.0, right=0.0)
        return real + 1j * imag

    def with_scale(self, field_scale: float) -> "SpectralPulse":
        return dataclasses.replace(self, field_scale=field_scale)

    def with_phase(self, phase: float) -> "SpectralPulse":
        """multiply the whole spectrum by exp(i phase)"""
        return dataclasses.replace(self, amplitude=self.amplitude * np.exp(1j * phase))


@dataclass(frozen=True, eq=False)
class DispersionPhase:
    """phi_D(w) on the detuning grid, fixed at the excited level detunings"""

    detunings: np.ndarray = field(repr=False)
    phase: np.ndarray = field(repr=False)
    delay: float
    level_detunings: np.ndarray = field(repr=False)
    level_phase: np.ndarray = field(repr=False)

    def at(self, omega) -> np.ndarray:
        return _linear_with_slope(np.asarray(omega, dtype=float), self.level_detunings, self.level_phase, self.delay)


def _linear_with_slope(omega, nodes, values, delay):
    # piecewise linear through the nodes, continued outside with slope -delay
    residual = values + nodes * delay
    return np.interp(omega, nodes, residual) - omega * delay


def gaussian_amplitude(detunings: np.ndarray, fwhm: float) -> np.ndarray:
    """real Gaussian amplitude whose intensity FWHM is fwhm (angular frequency)"""
    if fwhm <= 0:
        raise ValueError(f"bandwidth must be positive, got {fwhm}")
    return np.exp(-2.0 * math.log(2.0) * (np.asarray(detunings) / fwhm) ** 2)


def table_amplitude(detunings: np.ndarray, table_detunings: Sequence[float], table_values: Sequence[float]) -> np.ndarray:
    """per-point amplitude table interpolated onto the grid, zero outside the table"""
    table_detunings = np.asarray(table_detunings, dtype=float)
    if table_detunings.size < 2 or np.any(np.diff(table_detunings) <= 0):
        raise ValueError("amplitude table needs at least two strictly increasing detunings")
    return np.interp(detunings, table_detunings, np.asarray(table_values, dtype=float), left=0.0, right=0.0)


def dispersion_phase(
    excited: MorsePotential,
    carrier: float,
    delay: float,
    detunings: np.ndarray,
    anchor_energy: float,
) -> DispersionPhase:
    """phase acquired by each excited level during ``delay``

    anchor_energy is the absolute energy of the pumped level, so
    anchor_energy + carrier is the excited energy resonant with the carrier
    and carries zero phase.
    """
    if delay < 0:
        raise ValueError(f"delay must not be negative, got {delay}")
    reference = anchor_energy + carrier
    low, high = detunings[0], detunings[-1]
    nodes, values = [], []
    for v in range(count_bound_levels(excited)):
        level_energy = excited.electronic_offset + morse_energy(excited, v)
        detuning = level_energy - reference
        if low <= detuning <= high:
            nodes.append(detuning)
            values.append(-(level_energy - reference) * delay)
    if not nodes:
        raise EmptyWindowError(f"no level of {excited.name!r} lies on the detuning grid")
    nodes, values = np.array(nodes), np.array(values)
    return DispersionPhase(
        detunings=detunings,
        phase=_linear_with_slope(detunings, nodes, values, delay),
        delay=delay,
        level_detunings=nodes,
        level_phase=values,
    )


def _lattice_to_grid(nodes: np.ndarray, values: np.ndarray, envelope: Callable, detunings: np.ndarray) -> np.ndarray:
    """spread level values over the grid: spline value/A between nodes, hold it outside, times A"""
    weights = envelope(nodes)
    ratio = np.divide(values, weights, out=np.zeros_like(values), where=weights != 0)
    if nodes.size == 1:
        return ratio[0] * envelope(detunings)
    spline = CubicSpline(nodes, ratio)
    return spline(np.clip(detunings, nodes[0], nodes[-1])) * envelope(detunings)


def design_pair(
    fc_pump: FCSpectrum,
    fc_dump: FCSpectrum,
    detunings: np.ndarray,
    envelope: Callable[[np.ndarray], np.ndarray],
    phase: DispersionPhase,
) -> Tuple[SpectralPulse, SpectralPulse]:
    """shape the pump by the dump matrix elements and the dump by the pump's

    E_p(w_v) ~ F_d A and E_d(w_v) ~ F_p A exp(i phi_D), both multiplied by
    exp(-i arg F_d) so the pump is real and centred at t = 0 and the dump is
    compact in its own time frame.  envelope evaluates the common amplitude
    A(w) at any detuning; each output is normalized to max |E| = 1.
    """
    common, pump_index, dump_index = np.intersect1d(fc_pump.v, fc_dump.v, return_indices=True)
    if common.size == 0:
        raise DegenerateDesignError("pump and dump Franck-Condon windows share no excited level")
    pump_nodes = fc_pump.detunings[pump_index]
    dump_nodes = fc_dump.detunings[dump_index]
    f_pump = fc_pump.amplitudes[pump_index]
    f_dump = fc_dump.amplitudes[dump_index]
    weight = np.abs(envelope(pump_nodes) * f_dump) * np.abs(envelope(dump_nodes) * f_pump)
    if not np.any(weight > 0):
        raise DegenerateDesignError("common amplitude or Franck-Condon weight vanishes on every shared level")

    gauge = np.where(f_dump < 0, -1.0, 1.0)
    pump_values = np.abs(f_dump) * envelope(pump_nodes)
    dump_values = f_pump * envelope(dump_nodes) * np.exp(1j * phase.at(pump_nodes)) * gauge

    pump_amplitude = _lattice_to_grid(pump_nodes, pump_values.astype(complex), envelope, detunings)
    dump_amplitude = _lattice_to_grid(dump_nodes, dump_values, envelope, detunings)
    pump_amplitude = pump_amplitude / np.max(np.abs(pump_amplitude))
    dump_amplitude = dump_amplitude / np.max(np.abs(dump_amplitude))
    logger.info(
        "designed pulse pair on %d shared levels (v=%d..%d)", common.size, int(common[0]), int(common[-1])
    )
    return (
        SpectralPulse(carrier=fc_pump.carrier, detunings=detunings, amplitude=pump_amplitude),
        SpectralPulse(carrier=fc_dump.carrier, detunings=detunings, amplitude=dump_amplitude),
    )


def apply_chirp(pulse: SpectralPulse, gdd: float) -> SpectralPulse:
    """quadratic spectral phase exp(i gdd/2 w^2); gdd > 0 sends red before blue"""
    if gdd == 0:
        return pulse
    return dataclasses.replace(pulse, amplitude=pulse.amplitude * np.exp(0.5j * gdd * pulse.detunings**2))


def envelope_at(pulse: SpectralPulse, times) -> np.ndarray:
    """field envelope (field_scale included) on uniformly spaced times

    Evaluated with a chirp-z transform, i.e. an FFT sampled at the time step
    of ``times`` rather than at the synthesis step 2 pi / (n dw).
    """
    times = np.asarray(times, dtype=float)
    flat = np.atleast_1d(times).reshape(-1)
    step = float(flat[1] - flat[0]) if flat.size > 1 else 0.0
    if flat.size > 2 and not np.allclose(np.diff(flat), step, rtol=1e-9, atol=1e-12 * abs(step)):
        raise ValueError("envelope times must be uniformly spaced")
    weights = pulse.amplitude * (pulse.field_scale * pulse.spacing / (2.0 * math.pi))
    spectrum = czt(
        weights,
        m=flat.size,
        w=np.exp(-1j * pulse.spacing * step),
        a=np.exp(1j * pulse.spacing * flat[0]),
    )
    return (spectrum * np.exp(-1j * pulse.detunings[0] * flat)).reshape(np.shape(np.atleast_1d(times)))


def synthesize_time_domain(pulse: SpectralPulse, dt: float, span: float) -> Tuple[np.ndarray, np.ndarray]:
    """sample the envelope on a uniform time grid of width span centred at t = 0

    Raises AliasingError when dt does not resolve the detuning grid, when span
    exceeds one synthesis period, or when the pulse reaches the span edges.
    """
    nyquist = math.pi / np.max(np.abs(pulse.detunings))
    if dt > nyquist:
        raise AliasingError(f"time step {dt:.6g} exceeds the Nyquist limit {nyquist:.6g} of the detuning grid")
    if span > pulse.period:
        raise AliasingError(f"span {span:.6g} exceeds the synthesis period {pulse.period:.6g}")
    n_samples = int(round(span / dt)) + 1
    times = (np.arange(n_samples) - (n_samples - 1) / 2.0) * dt
    envelope = envelope_at(pulse, times)
    intensity = np.abs(envelope) ** 2
    edge = max(1, int(EDGE_FRACTION * n_samples))
    edge_energy = intensity[:edge].sum() + intensity[-edge:].sum()
    if edge_energy >= ALIASING_LIMIT * intensity.sum():
        raise AliasingError(
            f"{edge_energy / intensity.sum():.3g} of the pulse energy sits at the span edges; widen the span"
        )
    return times, envelope


def pulse_support(pulse: SpectralPulse, threshold: float = SUPPORT_THRESHOLD) -> Tuple[float, float]:
    """time interval where the intensity exceeds threshold * peak

    Raises PulseTruncationError unless both edge bands of the synthesis period
    stay below threshold and hold less than ALIASING_LIMIT of the energy: a
    pulse reaching them wraps around the period.
    """
    half = pulse.period / 2.0
    dt = 0.5 * math.pi / np.max(np.abs(pulse.detunings))
    times = np.arange(-half, half, dt)
    intensity = np.abs(envelope_at(pulse, times)) ** 2
    loud = intensity > threshold * intensity.max()
    edge = max(1, int(EDGE_FRACTION * times.size))
    edge_energy = intensity[:edge].sum() + intensity[-edge:].sum()
    if loud[:edge].any() or loud[-edge:].any() or edge_energy >= ALIASING_LIMIT * intensity.sum():
        raise PulseTruncationError(
            f"pulse reaches the edges of its {pulse.period:.6g} au synthesis period; "
            "refine the detuning grid or reduce the chirp"
        )
    above = np.nonzero(loud)[0]
    return float(times[above[0]] - dt), float(times[above[-1]] + dt)


def fwhm(times: np.ndarray, intensity: np.ndarray) -> float:
    """full width at half maximum of a single-peaked trace, crossings linearly interpolated"""
    intensity = np.asarray(intensity, dtype=float)
    half = intensity.max() / 2.0
    above = np.nonzero(intensity >= half)[0]
    first, last = above[0], above[-1]
    if first == 0 or last == intensity.size - 1:
        raise ValueError("trace does not fall below half maximum on both sides")

    def crossing(i, j):
        return times[i] + (half - intensity[i]) * (times[j] - times[i]) / (intensity[j] - intensity[i])

    return float(crossing(last, last + 1) - crossing(first - 1, first))


def first_order_norm(pulse: SpectralPulse, fc: FCSpectrum) -> float:
    """|| F(w_v) E(w_v) || of the unscaled shape"""
    return float(np.linalg.norm(fc.amplitudes * pulse.at(fc.detunings)))


def calibrate_area(
    pulse: SpectralPulse,
    fc: FCSpectrum,
    source_population: float,
    area: float,
    refine: Optional[Callable[[float], float]] = None,
) -> float:
    """field_scale giving excited population source_population * sin^2(area/2)

    The first-order scale is area / ||F E||.  For area above pi/3 and a refine
    callable (field_scale -> excited population from full propagation), the
    scale is solved with brentq against that oracle.  A goal the oracle never
    crosses but approaches within AREA_TOLERANCE (area pi asks for complete
    excitation) resolves to the scale of maximum excitation; anything further
    off raises AreaError.
    """
    if not 0.0 < area <= math.pi:
        raise AreaError(f"pulse area must lie in (0, pi], got {area}")
    norm = first_order_norm(pulse, fc)
    if norm == 0.0:
        raise AreaError("pulse spectrum has no weight on the Franck-Condon lines")
    scale = area / norm
    if refine is None or area <= STRONG_AREA:
        return scale

    goal = source_population * math.sin(area / 2.0) ** 2
    trial = scale * np.geomspace(0.25, 4.0, 13)
    excess = np.array([refine(s) - goal for s in trial])
    crossings = np.nonzero(np.diff(np.sign(excess)) != 0)[0]
    if crossings.size == 0:
        i = int(np.argmax(excess))
        if excess[i] >= -AREA_TOLERANCE * goal and 0 < i < trial.size - 1:
            peak = optimize.minimize_scalar(
                lambda s: -refine(s),
                bounds=(trial[i - 1], trial[i + 1]),
                method="bounded",
                options={"xatol": 1e-8 * scale},
            )
            logger.info("area %.4f: excited population peaks at %.6f; using scale %.6g", area, -peak.fun, peak.x)
            return float(peak.x)
        best = float(trial[i])
        raise AreaError(
            f"excited population {goal:.4f} unreachable; best {excess.max() + goal:.4f} at scale {best:.6g}",
            best_scale=best,
        )
    i = crossings[0]
    refined = optimize.brentq(lambda s: refine(s) - goal, trial[i], trial[i + 1], xtol=1e-10 * scale)
    logger.debug("area %.4f: first-order scale %.6g refined to %.6g", area, scale, refined)
    return float(refined)


def arg_parser(parser):
    parser.add_argument("--check", action="store_true", help="print the perturbative overlap of the designed pair")
    return parser
