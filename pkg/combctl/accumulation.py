"""pulse-train driver: area schedules, comb phase and the accumulation loop"""

import cmath
import dataclasses
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from combctl.errors import AreaError, ConfigError, ScheduleError
from combctl.franck_condon import FCSpectrum
from combctl.potentials import VibrationalLevel
from combctl.propagator import (
    PairDiagnostics,
    Propagator,
    SurfaceBasis,
    ThreeSurfaceState,
    free_evolve,
    measure_populations,
    pair_window,
    propagate_pulse_pair,
    single_pulse_fraction,
)
from combctl.pulses import SpectralPulse, apply_chirp, calibrate_area

logger = logging.getLogger(__name__)

SCHEDULE_MODES = ("eq1", "fixed_pump", "fixed_both")
LOCK_FLOOR = 1e-12
OPTIMIZE_EVALUATIONS = 40
OPTIMIZE_STEP = 0.3


@dataclass(frozen=True)
class PulsePairSchedule:
    pump_areas: Tuple[float, ...]
    dump_areas: Tuple[float, ...]
    phase: float = 0.0
    repetition_time: float = 0.0
    delay: float = 0.0
    matched_dump: bool = False
    mode: str = "eq1"

    def __post_init__(self):
        if len(self.pump_areas) != len(self.dump_areas) or not self.pump_areas:
            raise ScheduleError("pump and dump area lists must be non-empty and of equal length")
        for name, areas in (("pump", self.pump_areas), ("dump", self.dump_areas)):
            bad = [a for a in areas if not 0.0 < a <= math.pi + 1e-12]
            if bad:
                raise ScheduleError(f"{name} areas must lie in (0, pi], got {bad[0]}")

    @property
    def n_pairs(self) -> int:
        return len(self.pump_areas)


def _area(fraction: float) -> float:
    return 2.0 * math.asin(math.sqrt(min(max(fraction, 0.0), 1.0)))


def area_schedule(
    n_pairs: int,
    mode: str = "eq1",
    pump_area: Optional[float] = None,
    dump_area: Optional[float] = None,
    phase: float = 0.0,
    repetition_time: float = 0.0,
    delay: float = 0.0,
) -> PulsePairSchedule:
    """areas for every pair

    eq1: each pair transfers 1/N of the initial population,
    sin^2(A_d[n]/2) n = 1 and sin^2(A_p[n]/2) (N - n + 1) = 1.
    fixed_pump: constant pump area; dump areas matched to the lossless
    three-level populations (and re-matched online by run_train).
    fixed_both: both areas constant.
    """
    if n_pairs < 1:
        raise ScheduleError(f"pair count must be positive, got {n_pairs}")
    if mode == "eq1":
        pumps = [_area(1.0 / (n_pairs - n + 1)) for n in range(1, n_pairs + 1)]
        dumps = [_area(1.0 / n) for n in range(1, n_pairs + 1)]
    elif mode == "fixed_pump":
        if pump_area is None:
            raise ScheduleError("fixed_pump mode needs a pump area")
        pumps = [pump_area] * n_pairs
        dumps, source, target = [], 1.0, 0.0
        for _ in range(n_pairs):
            excited = math.sin(pump_area / 2.0) ** 2 * source
            if excited <= 0:
                raise ScheduleError(f"pump area {pump_area} empties the input before pair {len(dumps) + 1}")
            dumps.append(_area(excited / (excited + target)))
            source, target = source - excited, target + excited
    elif mode == "fixed_both":
        if pump_area is None or dump_area is None:
            raise ScheduleError("fixed_both mode needs pump and dump areas")
        pumps, dumps = [pump_area] * n_pairs, [dump_area] * n_pairs
    else:
        raise ScheduleError(f"unknown schedule mode {mode!r}; expected one of {SCHEDULE_MODES}")
    return PulsePairSchedule(
        pump_areas=tuple(pumps),
        dump_areas=tuple(dumps),
        phase=phase,
        repetition_time=repetition_time,
        delay=delay,
        matched_dump=mode == "fixed_pump",
        mode=mode,
    )


def raman_phase(input_energy: float, target_energy: float, repetition_time: float) -> float:
    """phase (E_i - E_t) T_rep mod 2 pi; zero when the comb is Raman matched"""
    if repetition_time <= 0:
        raise ValueError(f"repetition time must be positive, got {repetition_time}")
    phase = float(np.mod((input_energy - target_energy) * repetition_time, 2.0 * math.pi))
    return 0.0 if phase == 2.0 * math.pi else phase


def _rotation(area: float) -> np.ndarray:
    c, s = math.cos(area / 2.0), math.sin(area / 2.0)
    return np.array([[c, -1j * s], [-1j * s, c]])


def _ideal_pairs(schedule: PulsePairSchedule, phase: Optional[float], excited_loss: float) -> Iterator[np.ndarray]:
    # pump rotation, excited decay exp(-excited_loss), dump rotation; target dephases between pairs
    phase = schedule.phase if phase is None else phase
    amplitudes = np.array([1.0, 0.0, 0.0], dtype=complex)
    for n, (pump_area, dump_area) in enumerate(zip(schedule.pump_areas, schedule.dump_areas)):
        if n:
            amplitudes[2] *= np.exp(-1j * phase)
        amplitudes[0:2] = _rotation(pump_area) @ amplitudes[0:2]
        amplitudes[1] *= math.exp(-0.5 * excited_loss)
        amplitudes[1:3] = _rotation(dump_area) @ amplitudes[1:3]
        yield amplitudes.copy()


def ideal_lambda_map(schedule: PulsePairSchedule, phase: Optional[float] = None, excited_loss: float = 0.0) -> np.ndarray:
    """final (input, excited, target) amplitudes of the discrete three-level model"""
    *_, final = _ideal_pairs(schedule, phase, excited_loss)
    return final


def ideal_lambda_history(
    schedule: PulsePairSchedule, phase: Optional[float] = None, excited_loss: float = 0.0
) -> np.ndarray:
    """(input, excited, target) populations after each pair, shape (N, 3)"""
    return np.array([np.abs(a) ** 2 for a in _ideal_pairs(schedule, phase, excited_loss)])


@dataclass(frozen=True, eq=False)
class TrainSetup:
    """everything a train needs besides its schedule"""

    propagator: Propagator
    basis: SurfaceBasis
    input_level: VibrationalLevel
    target_level: VibrationalLevel
    pump: SpectralPulse
    dump: SpectralPulse
    fc_pump: FCSpectrum
    fc_dump: FCSpectrum
    dipole: float
    delay: float
    repetition_time: float
    gamma: float = 0.0
    neighbor_levels: Tuple[VibrationalLevel, ...] = ()
    refine_strong_areas: bool = False
    projection_tolerance: float = 1e-6
    record_every: int = 0
    track_light_shifts: bool = True
    optimize_pair: bool = False

    def projectors(self) -> Dict[str, Tuple[str, VibrationalLevel]]:
        projectors = {"input": ("g1", self.input_level), "target": ("g2", self.target_level)}
        for level in self.neighbor_levels:
            projectors[f"neighbor_{level.v}"] = ("g1", level)
        return projectors

    @property
    def target_frame_energy(self) -> float:
        """rotating-frame energy of the target level on g2"""
        index = np.flatnonzero(self.basis.v[2] == self.target_level.v)
        return float(self.basis.energies[2][index[0]]) if index.size else 0.0


@dataclass(frozen=True)
class AccumulationRow:
    n: int
    pop_input: float
    pop_excited_peak: float
    pop_target: float
    pop_leaked: float
    pop_lost: float
    residual_excited: float
    purity: float
    input_purity: float
    pump_area: float
    dump_area: float
    neighbors: Dict[str, float] = field(default_factory=dict)
    dump_phase: float = 0.0

    @property
    def closure(self) -> float:
        return self.pop_input + self.pop_target + self.pop_leaked + self.pop_lost + self.residual_excited


@dataclass
class AccumulationRecord:
    schedule: PulsePairSchedule
    rows: List[AccumulationRow] = field(default_factory=list)
    trace: List[Tuple[float, ...]] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(row, name) for row in self.rows])

    @property
    def final(self) -> AccumulationRow:
        return self.rows[-1]

    @property
    def efficiency(self) -> float:
        return self.final.pop_target


class _AreaCalibrator:
    """field scales per area for one pulse shape, with optional refinement against propagation"""

    def __init__(self, setup: TrainSetup, pulse: SpectralPulse, fc: FCSpectrum, level: VibrationalLevel, surface: str):
        self.setup = setup
        self.pulse = pulse
        self.fc = fc
        self.level = level
        self.surface = surface
        self._cache: Dict[float, float] = {}
        self._fractions: Dict[float, float] = {}

    def _oracle(self, scale: float) -> float:
        return single_pulse_fraction(
            self.setup.propagator, self.level, self.pulse.with_scale(scale), self.setup.dipole, self.surface
        )

    def fraction(self, scale: float) -> float:
        """propagated excited population one pulse of this scale leaves behind"""
        if scale not in self._fractions:
            self._fractions[scale] = self._oracle(scale)
        return self._fractions[scale]

    def __call__(self, area: float, pair_index: Optional[int] = None) -> float:
        if area not in self._cache:
            refine = self._oracle if self.setup.refine_strong_areas else None
            try:
                self._cache[area] = calibrate_area(self.pulse, self.fc, 1.0, area, refine)
            except AreaError as err:
                if pair_index is None:
                    raise
                raise AreaError(f"pair {pair_index}: {err}", best_scale=err.best_scale) from err
        return self._cache[area]


class RamanLock:
    """dump phases keeping every transferred target amplitude in step with the stored one

    The reference phase starts at the first transferred amplitude and then
    follows the pulse-induced shift of the stored target amplitude, so pair n
    adds its amplitude at reference + (n - 1) phase.
    """

    def __init__(self, phase: float, target_energy: float = 0.0):
        self.phase = phase
        self.target_energy = target_energy
        self.reference: Optional[float] = None

    def dump_phase(self, n: int, transferred: complex, stored: complex, before: complex, duration: float) -> float:
        """dump phase for pair n from its transferred, stored and incoming target amplitudes"""
        if self.reference is None:
            if abs(transferred) <= LOCK_FLOOR:
                return -(n - 1) * self.phase
            self.reference = cmath.phase(transferred)
        elif abs(before) > LOCK_FLOOR and abs(stored) > LOCK_FLOOR:
            self.reference += cmath.phase(stored / before) + self.target_energy * duration
        if abs(transferred) <= LOCK_FLOOR:
            return -(n - 1) * self.phase
        return cmath.phase(transferred) - self.reference - (n - 1) * self.phase


def _target_amplitude(setup: TrainSetup, psi: np.ndarray) -> complex:
    return complex(np.vdot(setup.target_level.wavefunction, psi) * setup.target_level.grid.spacing)


def locked_pair(
    state: ThreeSurfaceState,
    setup: TrainSetup,
    pump: SpectralPulse,
    dump: SpectralPulse,
    lock: RamanLock,
    pair_index: int,
) -> Tuple[ThreeSurfaceState, PairDiagnostics, float]:
    """one pair with its dump phase chosen by the lock; returns the state, diagnostics and dump phase

    With dump phase theta the pair acts as W U W^+, W = diag(1, 1, exp(-i theta)),
    so one batched run of the (g1, e) part and of the g2 part serves every theta.
    """
    propagator = setup.propagator
    window = pair_window(propagator, pump, dump, setup.delay, setup.dipole)
    if window is None:
        state, diagnostics = propagate_pulse_pair(state, propagator, pump, dump, setup.delay, setup.dipole)
        return state, diagnostics, 0.0
    batch = np.zeros((2,) + state.psi.shape, dtype=complex)
    batch[0, :2] = state.psi[:2]
    batch[1, 2] = state.psi[2]
    final, excited, trace = propagator.evolve(
        batch,
        window.fields,
        window.n_steps,
        start=window.start,
        record_every=setup.record_every,
        pair_index=pair_index,
        observer=lambda time, psi: (time, psi),
    )
    theta = lock.dump_phase(
        pair_index,
        _target_amplitude(setup, final[0, 2]),
        _target_amplitude(setup, final[1, 2]),
        _target_amplitude(setup, state.psi[2]),
        window.n_steps * window.dt,
    )
    weight = cmath.exp(1j * theta)

    def combine(parts):
        psi = parts[0] + weight * parts[1]
        psi[2] *= np.conj(weight)
        return psi

    psi = combine(final)
    peak = np.real(excited[:, 0, 0] + excited[:, 1, 1] + 2.0 * np.real(weight * excited[:, 0, 1])).max()
    spacing = state.grid.spacing
    rows = [(time, *(np.sum(np.abs(combine(parts)) ** 2, axis=1) * spacing).tolist()) for time, parts in trace]
    state = dataclasses.replace(state, psi=psi, time=state.time + window.n_steps * window.dt)
    diagnostics = PairDiagnostics(
        peak_excited=float(peak),
        start=window.start,
        end=window.end,
        n_steps=window.n_steps,
        norms=tuple(state.norms().tolist()),
        trace=rows,
    )
    return state, diagnostics, theta


def _matched_dump_area(excited: float, target: float) -> float:
    return _area(excited / (excited + target)) if excited > 0 else math.pi


def run_train(
    setup: TrainSetup,
    schedule: PulsePairSchedule,
    pump_intensity: float = 1.0,
    dump_intensity: float = 1.0,
    on_pair: Optional[Callable[[int, ThreeSurfaceState], None]] = None,
) -> AccumulationRecord:
    """propagate the train pair by pair

    Pair n's dump carries the phase exp(-i (n-1) phase); with track_light_shifts
    the pulse-induced shifts of the input and target phases are folded in as well.
    Matched dumps take their area from the measured excited and target populations.
    """
    pump_scale = _AreaCalibrator(setup, setup.pump, setup.fc_pump, setup.input_level, "g1")
    dump_scale = _AreaCalibrator(setup, setup.dump, setup.fc_dump, setup.target_level, "g2")
    lock = RamanLock(schedule.phase, setup.target_frame_energy) if setup.track_light_shifts else None
    projectors = setup.projectors()
    state = ThreeSurfaceState.from_level(setup.input_level, "g1")
    record = AccumulationRecord(schedule=schedule)
    pop_input, pop_target, residual = 1.0, 0.0, 0.0
    for n in range(1, schedule.n_pairs + 1):
        pump_area = schedule.pump_areas[n - 1]
        scale = pump_scale(pump_area, n) * math.sqrt(pump_intensity)
        pump = setup.pump.with_scale(scale)
        if schedule.matched_dump:
            excited = pump_scale.fraction(scale) * pop_input + residual
            dump_area = _matched_dump_area(excited, pop_target)
        else:
            dump_area = schedule.dump_areas[n - 1]
        dump = setup.dump.with_scale(dump_scale(dump_area, n) * math.sqrt(dump_intensity))

        if lock is not None:
            state, diagnostics, dump_phase = locked_pair(state, setup, pump, dump, lock, n)
        else:
            dump_phase = -(n - 1) * schedule.phase
            if dump_phase:
                dump = dump.with_phase(dump_phase)
            state, diagnostics = propagate_pulse_pair(
                state, setup.propagator, pump, dump, setup.delay, setup.dipole, setup.record_every, pair_index=n
            )
        record.trace.extend(diagnostics.trace)
        gap = setup.repetition_time - diagnostics.duration
        if gap < 0:
            raise ScheduleError(
                f"pair {n} window {diagnostics.duration:.6g} au exceeds the repetition time {setup.repetition_time:.6g} au"
            )
        state = free_evolve(state, gap, setup.gamma, setup.basis, setup.projection_tolerance)
        if on_pair is not None:
            on_pair(n, state)

        populations = measure_populations(state, projectors)
        norms = populations.norms
        pop_input = populations.levels["input"]
        pop_target = populations.levels["target"]
        residual = norms["e"]
        row = AccumulationRow(
            n=n,
            pop_input=pop_input,
            pop_excited_peak=diagnostics.peak_excited,
            pop_target=pop_target,
            pop_leaked=(norms["g1"] - pop_input) + (norms["g2"] - pop_target),
            pop_lost=1.0 - sum(norms.values()),
            residual_excited=residual,
            purity=populations.purity,
            input_purity=pop_input / norms["g1"] if norms["g1"] > 0 else 0.0,
            pump_area=pump_area,
            dump_area=dump_area,
            neighbors={k: v for k, v in populations.levels.items() if k.startswith("neighbor_")},
            dump_phase=dump_phase,
        )
        record.rows.append(row)
        logger.info(
            "pair %d/%d: input %.5f target %.5f peak excited %.5f leaked %.2e lost %.2e dump phase %.4f",
            n,
            schedule.n_pairs,
            row.pop_input,
            row.pop_target,
            row.pop_excited_peak,
            row.pop_leaked,
            row.pop_lost,
            dump_phase,
        )
    return record


@dataclass(frozen=True)
class LeakageFit:
    leak_exponent: Optional[float]
    depletion_exponent: Optional[float]
    neighbor_exponents: Dict[str, Optional[float]]
    n_fit: int


def _log_slope(n: np.ndarray, values: np.ndarray, label: str) -> Optional[float]:
    if np.any(values <= 0):
        logger.warning("%s has non-positive entries; exponent fit skipped", label)
        return None
    return float(np.polyfit(np.log(n), np.log(values), 1)[0])


def _amplitude(population: np.ndarray) -> np.ndarray:
    return np.sign(population) * np.sqrt(np.abs(population))


def leakage_exponent(record: AccumulationRecord, fit_fraction: float = 0.5) -> LeakageFit:
    """power-law exponents vs pair count over the last fit_fraction of the train

    Leak and neighbour exponents fit the leaked amplitude sqrt(population): a
    random walk gives 1/2, a coherently driven level 1.  The depletion exponent
    fits the population 1 - pop_input.
    """
    n = record.column("n").astype(float)
    first = int(len(n) * (1.0 - fit_fraction))
    window = slice(first, None)
    if len(n[window]) < 2:
        logger.warning("train too short for an exponent fit (%d rows)", len(n))
        return LeakageFit(None, None, {}, len(n[window]))
    neighbors = {
        name: _log_slope(n[window], _amplitude(np.array([row.neighbors[name] for row in record.rows])[window]), name)
        for name in record.rows[0].neighbors
    }
    return LeakageFit(
        leak_exponent=_log_slope(n[window], _amplitude(record.column("pop_leaked")[window]), "pop_leaked"),
        depletion_exponent=_log_slope(n[window], 1.0 - record.column("pop_input")[window], "input depletion"),
        neighbor_exponents=neighbors,
        n_fit=len(n[window]),
    )


def thread_count() -> int:
    value = os.environ.get("COMBCTL_THREADS")
    if not value:
        return os.cpu_count() or 1
    try:
        count = int(value)
    except ValueError:
        count = 0
    if count < 1:
        raise ConfigError("COMBCTL_THREADS", f"must be a positive integer, got {value!r}")
    return count


@dataclass(frozen=True)
class ScanRow:
    factor: float
    efficiency: float
    final_input: float
    purity: float


def robustness_scan(
    setup: TrainSetup,
    schedule: PulsePairSchedule,
    factors: Sequence[float],
    mode: str = "both",
    threads: Optional[int] = None,
) -> List[ScanRow]:
    """rerun the train with field scales multiplied by sqrt(factor)

    mode selects which pulses are scaled: both, pump or dump.
    """
    if mode not in ("both", "pump", "dump"):
        raise ValueError(f"unknown scan mode {mode!r}")
    if any(f <= 0 for f in factors):
        raise ValueError(f"intensity factors must be positive, got {list(factors)}")

    def run(factor):
        record = run_train(
            setup,
            schedule,
            pump_intensity=factor if mode in ("both", "pump") else 1.0,
            dump_intensity=factor if mode in ("both", "dump") else 1.0,
        )
        return ScanRow(factor, record.efficiency, record.final.pop_input, record.final.purity)

    with ThreadPoolExecutor(max_workers=threads or thread_count()) as pool:
        return list(pool.map(run, factors))


def pair_pulses(
    setup: TrainSetup, pump_area: float, dump_area: float, gdd: float = 0.0
) -> Tuple[SpectralPulse, SpectralPulse]:
    """designed pulses chirped by gdd and scaled to the requested areas"""
    pump = apply_chirp(setup.pump, gdd)
    dump = apply_chirp(setup.dump, gdd)
    pump = pump.with_scale(_AreaCalibrator(setup, pump, setup.fc_pump, setup.input_level, "g1")(pump_area))
    dump = dump.with_scale(_AreaCalibrator(setup, dump, setup.fc_dump, setup.target_level, "g2")(dump_area))
    return pump, dump


@dataclass(frozen=True)
class PairChoice:
    """a pump-dump pair ready to propagate: scaled pulses and the dump delay"""

    pump: SpectralPulse
    dump: SpectralPulse
    delay: float
    pop_target: Optional[float] = None


def _pair_populations(setup: TrainSetup, pump: SpectralPulse, dump: SpectralPulse, delay: float):
    state = ThreeSurfaceState.from_level(setup.input_level, "g1")
    state, diagnostics = propagate_pulse_pair(
        state, setup.propagator, pump, dump, delay, setup.dipole, setup.record_every, pair_index=1
    )
    return measure_populations(state, setup.projectors()), diagnostics


def optimize_pair(
    setup: TrainSetup,
    pump_area: float,
    dump_area: float,
    gdd: float = 0.0,
    max_evaluations: int = OPTIMIZE_EVALUATIONS,
) -> PairChoice:
    """maximize single-pair target population over pump scale, dump scale and delay

    The search starts from the calibrated areas and the designed delay and
    works on log factors of all three.
    """
    pump, dump = pair_pulses(setup, pump_area, dump_area, gdd)
    cache: Dict[Tuple[float, ...], float] = {}

    def choice(x) -> PairChoice:
        factors = np.exp(x)
        return PairChoice(
            pump=pump.with_scale(pump.field_scale * factors[0]),
            dump=dump.with_scale(dump.field_scale * factors[1]),
            delay=setup.delay * factors[2],
        )

    def loss(x):
        key = tuple(np.round(x, 12))
        if key not in cache:
            pair = choice(x)
            populations, _ = _pair_populations(setup, pair.pump, pair.dump, pair.delay)
            cache[key] = -populations.levels["target"]
            logger.debug("pair search %s: target %.5f", np.exp(x), -cache[key])
        return cache[key]

    simplex = np.vstack([np.zeros(3), OPTIMIZE_STEP * np.eye(3)])
    result = optimize.minimize(
        loss,
        np.zeros(3),
        method="Nelder-Mead",
        options={"initial_simplex": simplex, "maxfev": max_evaluations, "xatol": 1e-3, "fatol": 1e-4},
    )
    best = min(cache, key=cache.get)
    logger.info(
        "pair search: %d evaluations, target %.5f at pump x%.4f dump x%.4f delay x%.4f (%s)",
        len(cache),
        -cache[best],
        *np.exp(best),
        result.message,
    )
    return dataclasses.replace(choice(np.array(best)), pop_target=-cache[best])


@dataclass(frozen=True)
class PairTransfer:
    pop_input: float
    pop_target: float
    residual_excited: float
    purity: float
    duration: float
    delay: float = 0.0


def single_pair_transfer(
    setup: TrainSetup, pump_area: float, dump_area: float, gdd: float = 0.0, search: Optional[bool] = None
) -> PairTransfer:
    """one (optionally chirped) pump-dump pair acting on the input level

    With search (default: setup.optimize_pair) the pulse scales and the delay
    are searched for the largest target population first.
    """
    if search is None:
        search = setup.optimize_pair
    if search:
        pair = optimize_pair(setup, pump_area, dump_area, gdd)
    else:
        pump, dump = pair_pulses(setup, pump_area, dump_area, gdd)
        pair = PairChoice(pump, dump, setup.delay)
    populations, diagnostics = _pair_populations(setup, pair.pump, pair.dump, pair.delay)
    logger.info(
        "single pair (gdd %.4g au): target %.5f input %.5f over %.1f au",
        gdd,
        populations.levels["target"],
        populations.levels["input"],
        diagnostics.duration,
    )
    return PairTransfer(
        pop_input=populations.levels["input"],
        pop_target=populations.levels["target"],
        residual_excited=populations.norms["e"],
        purity=populations.purity,
        duration=diagnostics.duration,
        delay=pair.delay,
    )


def arg_parser(parser):
    parser.add_argument("--intensity", default="0.5,1,2", help="comma separated intensity factors")
    parser.add_argument("--mode", choices=("both", "pump", "dump"), default="both", help="pulses to scale")
    parser.add_argument("--constant-dump", action="store_true", help="hold the dump area fixed instead of matching it")
    return parser
