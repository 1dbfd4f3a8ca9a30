"""scenario orchestration: build the physics from a RunConfig and write the data files"""

import csv
import functools
import hashlib
import json
import logging
import os
import platform
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np
import scipy

from combctl import units
from combctl.accumulation import (
    AccumulationRecord,
    PairChoice,
    PulsePairSchedule,
    TrainSetup,
    area_schedule,
    ideal_lambda_map,
    leakage_exponent,
    optimize_pair,
    pair_pulses,
    raman_phase,
    robustness_scan,
    run_train,
)
from combctl.config import RunConfig
from combctl.franck_condon import FCSpectrum, fc_spectrum
from combctl.perturbative import overlap, pump_wavepacket, reversed_dump_wavepacket
from combctl.potentials import (
    MorsePotential,
    RadialGrid,
    VibrationalLevel,
    count_bound_levels,
    grid_for_levels,
    morse_energy,
    morse_wavefunction,
    turning_points,
    vibration_period,
)
from combctl.propagator import Propagator, SurfaceBasis, ThreeSurfaceState, propagate_pulse_pair
from combctl.pulses import (
    DispersionPhase,
    SpectralPulse,
    apply_chirp,
    design_pair,
    detuning_grid,
    dispersion_phase,
    first_order_norm,
    gaussian_amplitude,
    table_amplitude,
)
from combctl.snapshot import StateSnapshot, density_rows

logger = logging.getLogger(__name__)

COMMANDS = ("eigen", "fc", "design", "propagate", "accumulate", "scan")
ACCUMULATION_COLUMNS = ("n", "pop_input", "pop_excited_peak", "pop_target", "pop_leaked", "pop_lost", "purity")


@dataclass(frozen=True, eq=False)
class Scenario:
    """the physical system of one configuration, all in atomic units"""

    config: RunConfig
    ground: MorsePotential
    excited: MorsePotential
    target: MorsePotential
    grid: RadialGrid
    input_level: VibrationalLevel
    target_level: VibrationalLevel
    neighbor_levels: Tuple[VibrationalLevel, ...]
    pump_carrier: float
    dump_carrier: float
    delay: float
    detunings: np.ndarray = field(repr=False)
    envelope: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    fc_pump: FCSpectrum = field(repr=False)
    fc_dump: FCSpectrum = field(repr=False)
    phase: DispersionPhase = field(repr=False)
    pump: SpectralPulse = field(repr=False)
    dump: SpectralPulse = field(repr=False)

    @property
    def offsets(self) -> Tuple[float, float, float]:
        """rotating-frame energies subtracted from g1, e and g2"""
        reference = self.input_level.absolute_energy
        return reference, reference + self.pump_carrier, reference + self.pump_carrier - self.dump_carrier


def _window_levels(potential: MorsePotential, resonance: float, window: Tuple[float, float]) -> List[int]:
    low, high = window
    return [
        v
        for v in range(count_bound_levels(potential))
        if low <= potential.electronic_offset + morse_energy(potential, v) - resonance <= high
    ]


def build_scenario(config: RunConfig) -> Scenario:
    ground, excited, target = (config.potential(name) for name in ("ground", "excited", "target"))
    levels, pulse, numerics = config.levels, config.pulse, config.numerics

    input_energy = ground.electronic_offset + morse_energy(ground, levels.input_v)
    target_energy = target.electronic_offset + morse_energy(target, levels.target_v)
    pump_carrier = pulse.pump_carrier
    dump_carrier = pump_carrier + (input_energy - target_energy) + pulse.raman_detuning

    detunings = detuning_grid(pulse.detuning_points, pulse.grid_half_width)
    half_window = pulse.window if pulse.window is not None else pulse.grid_half_width
    window = (-half_window, half_window)
    excited_v = _window_levels(excited, input_energy + pump_carrier, window)
    if not excited_v:
        center = 1
    else:
        resonance = input_energy + pump_carrier - excited.electronic_offset
        center = min(excited_v, key=lambda v: abs(morse_energy(excited, v) - resonance))
    center = min(max(center, 1), excited.v_max - 1)
    delay = vibration_period(excited, center) / 2.0

    if numerics.r_min is not None:
        grid = RadialGrid(numerics.r_min, numerics.r_max, numerics.grid_points)
    else:
        requests = [(ground, levels.input_v), (target, levels.target_v)]
        requests += [(ground, v) for v in levels.neighbor_v]
        requests += [(excited, v) for v in excited_v]
        # levels the pulse bandwidth can stimulate back into
        reach = (-3.0 * pulse.bandwidth, 3.0 * pulse.bandwidth)
        requests += [(ground, v) for v in _window_levels(ground, input_energy, reach)]
        requests += [(target, v) for v in _window_levels(target, target_energy, reach)]
        grid = grid_for_levels(requests, numerics.grid_points)

    input_level = morse_wavefunction(ground, levels.input_v, grid)
    target_level = morse_wavefunction(target, levels.target_v, grid)
    neighbor_levels = tuple(morse_wavefunction(ground, v, grid) for v in levels.neighbor_v)
    excited_levels = [morse_wavefunction(excited, v, grid) for v in excited_v]

    if pulse.amplitude_table is not None:
        table_detunings, table_values = zip(*pulse.amplitude_table)
        envelope = functools.partial(table_amplitude, table_detunings=table_detunings, table_values=table_values)
    else:
        envelope = functools.partial(gaussian_amplitude, fwhm=pulse.bandwidth)

    fc_pump = fc_spectrum(input_level, excited, pump_carrier, window, pulse.dipole, excited_levels)
    fc_dump = fc_spectrum(target_level, excited, dump_carrier, window, pulse.dipole, excited_levels)
    phase = dispersion_phase(excited, pump_carrier, delay, detunings, input_energy)
    pump, dump = design_pair(fc_pump, fc_dump, detunings, envelope, phase)
    pump, dump = apply_chirp(pump, pulse.gdd), apply_chirp(dump, pulse.gdd)
    logger.info(
        "scenario: input v=%d, target v=%d, excited centre v=%d, delay %.1f fs, grid [%.3f, %.3f] A x %d",
        levels.input_v,
        levels.target_v,
        center,
        units.au_to_fs(delay),
        units.bohr_to_angstrom(grid.r_min),
        units.bohr_to_angstrom(grid.r_max),
        grid.n_points,
    )
    return Scenario(
        config=config,
        ground=ground,
        excited=excited,
        target=target,
        grid=grid,
        input_level=input_level,
        target_level=target_level,
        neighbor_levels=neighbor_levels,
        pump_carrier=pump_carrier,
        dump_carrier=dump_carrier,
        delay=delay,
        detunings=detunings,
        envelope=envelope,
        fc_pump=fc_pump,
        fc_dump=fc_dump,
        phase=phase,
        pump=pump,
        dump=dump,
    )


def build_setup(scenario: Scenario) -> TrainSetup:
    config = scenario.config
    surfaces = (scenario.ground, scenario.excited, scenario.target)
    propagator = Propagator.for_surfaces(
        scenario.grid,
        surfaces,
        scenario.offsets,
        config.numerics.dt,
        config.numerics.potential_cap,
        local=config.numerics.local_step,
    )
    logger.info("propagator time step %.4f fs", units.au_to_fs(propagator.dt))
    return TrainSetup(
        propagator=propagator,
        basis=SurfaceBasis.build(scenario.grid, surfaces, scenario.offsets),
        input_level=scenario.input_level,
        target_level=scenario.target_level,
        pump=scenario.pump,
        dump=scenario.dump,
        fc_pump=scenario.fc_pump,
        fc_dump=scenario.fc_dump,
        dipole=config.pulse.dipole,
        delay=scenario.delay,
        repetition_time=config.train.repetition_time,
        gamma=config.train.gamma,
        neighbor_levels=scenario.neighbor_levels,
        refine_strong_areas=config.numerics.refine_strong_areas,
        projection_tolerance=config.numerics.projection_tolerance,
        record_every=config.numerics.record_every if config.output.verbosity == "step" else 0,
        track_light_shifts=config.train.track_light_shifts,
        optimize_pair=config.train.optimize_pair,
    )


def train_phase(scenario: Scenario) -> float:
    """inter-pair phase: explicit override, else zero (locked) or the free-running Raman phase"""
    train = scenario.config.train
    if train.inter_pair_phase is not None:
        return train.inter_pair_phase
    if train.phase_mode == "free":
        return raman_phase(
            scenario.input_level.absolute_energy, scenario.target_level.absolute_energy, train.repetition_time
        )
    return 0.0


def build_schedule(scenario: Scenario, constant_dump: bool = False) -> PulsePairSchedule:
    train = scenario.config.train
    mode = "fixed_both" if constant_dump else train.schedule
    return area_schedule(
        train.pairs,
        mode,
        pump_area=train.pump_area,
        dump_area=train.dump_area,
        phase=train_phase(scenario),
        repetition_time=train.repetition_time,
        delay=scenario.delay,
    )


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".12g")
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows) -> Path:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, delimiter=",", lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format(value) for value in row])
    return path


def write_json(path: Path, data) -> Path:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(data, sort_keys=True, indent=2, ensure_ascii=False) + "\n")
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _version(package: str) -> str:
    try:
        return metadata.version(package)
    except metadata.PackageNotFoundError:
        return "unknown"


def write_manifest(out_dir: Path, config: RunConfig, outputs: Sequence[Path]) -> Path:
    manifest = {
        "config_sha256": hashlib.sha256(config.to_toml().encode("utf-8")).hexdigest(),
        "versions": {
            "combctl": _version("combctl"),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "outputs": {Path(p).relative_to(out_dir).as_posix(): _sha256(p) for p in sorted(outputs)},
        "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    return write_json(out_dir / "manifest.json", manifest)


def run_eigen(config: RunConfig, out_dir: Path, args) -> List[Path]:
    rows = []
    for name in ("ground", "excited", "target"):
        potential = config.potential(name)
        count = count_bound_levels(potential)
        for v in range(count):
            r_in, r_out = turning_points(potential, v)
            period = units.au_to_fs(vibration_period(potential, v)) if 1 <= v < potential.v_max else None
            rows.append(
                (
                    name,
                    v,
                    units.hartree_to_cm1(morse_energy(potential, v)),
                    units.hartree_to_cm1(potential.electronic_offset + morse_energy(potential, v)),
                    units.bohr_to_angstrom(r_in),
                    units.bohr_to_angstrom(r_out),
                    period,
                )
            )
        print(f"{name}: {count} bound levels, lambda = {potential.lam:.4f}")
    header = ("potential", "v", "energy_cm1", "absolute_energy_cm1", "r_inner_angstrom", "r_outer_angstrom", "period_fs")
    return [write_csv(out_dir / "levels.csv", header, rows)]


def _fc_rows(spectrum: FCSpectrum):
    return [(units.hartree_to_cm1(d), a) for d, a in zip(spectrum.detunings, spectrum.amplitudes)]


def run_fc(config: RunConfig, out_dir: Path, args) -> List[Path]:
    scenario = build_scenario(config)
    outputs = []
    for label, spectrum in (("input", scenario.fc_pump), ("target", scenario.fc_dump)):
        outputs.append(write_csv(out_dir / f"fc_{label}.csv", ("detuning_cm1", "amplitude"), _fc_rows(spectrum)))
        signs = np.count_nonzero(np.diff(np.sign(spectrum.amplitudes)) != 0)
        print(
            f"{label} v={spectrum.anchor_level.v}: {len(spectrum)} lines, "
            f"weight {spectrum.weight():.6f}, {signs} sign changes"
        )
    return outputs


def _spectrum_rows(pulse: SpectralPulse):
    return [(units.hartree_to_cm1(d), e.real, e.imag) for d, e in zip(pulse.detunings, pulse.amplitude)]


def design_check(scenario: Scenario) -> Dict[str, object]:
    """perturbative overlap of the designed pair and of an unshaped pump against the same dump"""
    pumped = pump_wavepacket(scenario.pump, scenario.fc_pump, scenario.phase)
    dumped = reversed_dump_wavepacket(scenario.dump, scenario.fc_dump)
    flat = SpectralPulse(
        carrier=scenario.pump_carrier,
        detunings=scenario.detunings,
        amplitude=scenario.envelope(scenario.detunings).astype(complex),
    )
    unshaped = pump_wavepacket(apply_chirp(flat, scenario.config.pulse.gdd), scenario.fc_pump, scenario.phase)
    return {
        "overlap": abs(overlap(pumped, dumped)),
        "unshaped_overlap": abs(overlap(unshaped, dumped)),
        "pumped": pumped,
        "dumped": dumped,
    }


def run_design(config: RunConfig, out_dir: Path, args) -> List[Path]:
    scenario = build_scenario(config)
    header = ("detuning_cm1", "re_amplitude", "im_amplitude")
    outputs = [
        write_csv(out_dir / "pump_spectrum.csv", header, _spectrum_rows(scenario.pump)),
        write_csv(out_dir / "dump_spectrum.csv", header, _spectrum_rows(scenario.dump)),
    ]
    schedule = build_schedule(scenario)
    sidecar = {
        "pump_carrier_cm1": units.hartree_to_cm1(scenario.pump_carrier),
        "dump_carrier_cm1": units.hartree_to_cm1(scenario.dump_carrier),
        "pump_wavelength_nm": config.pulse.pump_wavelength_nm,
        "dump_wavelength_nm": 1e7 / units.hartree_to_cm1(scenario.dump_carrier),
        "gdd_fs2": config.source["pulse"]["gdd_fs2"],
        "delay_fs": units.au_to_fs(scenario.delay),
        "pump_field_scale": schedule.pump_areas[0] / first_order_norm(scenario.pump, scenario.fc_pump),
        "dump_field_scale": schedule.dump_areas[0] / first_order_norm(scenario.dump, scenario.fc_dump),
    }
    if getattr(args, "check", False):
        check = design_check(scenario)
        sidecar["overlap"] = check["overlap"]
        sidecar["unshaped_overlap"] = check["unshaped_overlap"]
        print(f"|overlap| designed pair: {check['overlap']:.6f}")
        print(f"|overlap| unshaped pump: {check['unshaped_overlap']:.6f}")
        pumped, dumped = check["pumped"].populations(), check["dumped"].populations()
        print(f"{'v':>4} {'|c_pump|^2':>14} {'|c_dump|^2':>14}")
        for v in sorted(set(pumped) | set(dumped)):
            print(f"{v:>4} {pumped.get(v, 0.0):>14.6e} {dumped.get(v, 0.0):>14.6e}")
    outputs.append(write_json(out_dir / "design.json", sidecar))
    return outputs


def run_propagate(config: RunConfig, out_dir: Path, args) -> List[Path]:
    """first pulse pair of the schedule, with per-step rows when record_every is set"""
    scenario = build_scenario(config)
    setup = build_setup(scenario)
    schedule = build_schedule(scenario)
    if setup.optimize_pair:
        pair = optimize_pair(setup, schedule.pump_areas[0], schedule.dump_areas[0])
    else:
        pair = PairChoice(*pair_pulses(setup, schedule.pump_areas[0], schedule.dump_areas[0]), setup.delay)
    spacing = scenario.grid.spacing
    input_psi, target_psi = scenario.input_level.wavefunction, scenario.target_level.wavefunction

    def observe(time, psi):
        norms = np.sum(np.abs(psi) ** 2, axis=1) * spacing
        pop_input = abs(np.vdot(input_psi, psi[0]) * spacing) ** 2
        pop_target = abs(np.vdot(target_psi, psi[2]) * spacing) ** 2
        purity = pop_target / norms[2] if norms[2] > 0 else 0.0
        return (units.au_to_fs(time), *norms.tolist(), pop_input, pop_target, purity)

    state = ThreeSurfaceState.from_level(scenario.input_level, "g1")
    record_every = getattr(args, "record_every", 0) or config.numerics.record_every
    initial = state.psi
    state, diagnostics = propagate_pulse_pair(
        state, setup.propagator, pair.pump, pair.dump, pair.delay, setup.dipole, record_every, pair_index=1, observer=observe
    )
    rows = [observe(diagnostics.start, initial), *diagnostics.trace]
    final = observe(diagnostics.end, state.psi)
    if not diagnostics.trace or diagnostics.trace[-1][0] != final[0]:
        rows.append(final)
    header = ("time_fs", "norm_g1", "norm_e", "norm_g2", "pop_input", "pop_target", "purity")
    print(f"pair window {units.au_to_fs(diagnostics.duration):.1f} fs, {diagnostics.n_steps} steps")
    print(f"target {final[5]:.6f}, input {final[4]:.6f}, peak excited {diagnostics.peak_excited:.6f}")
    return [write_csv(out_dir / "propagate.csv", header, rows)]


GNUPLOT_SCRIPT = """set datafile separator ','
set key autotitle columnhead
set xlabel 'pulse pair n'
set ylabel 'population'
set logscale y
plot 'accumulation.csv' using 1:2 with linespoints, \\
     '' using 1:4 with linespoints, \\
     '' using 1:5 with linespoints, \\
     '' using 1:6 with linespoints
"""


def _accumulation_summary(scenario: Scenario, schedule: PulsePairSchedule, record: AccumulationRecord) -> Dict:
    fit = leakage_exponent(record)
    ideal = ideal_lambda_map(schedule) if schedule.mode == "eq1" else None
    final = record.final
    transferred = 1.0 - final.pop_input
    return {
        "pairs": schedule.n_pairs,
        "schedule": schedule.mode,
        "inter_pair_phase_rad": schedule.phase,
        "final": {
            "pop_input": final.pop_input,
            "pop_target": final.pop_target,
            "pop_leaked": final.pop_leaked,
            "pop_lost": final.pop_lost,
            "purity": final.purity,
            "input_purity": final.input_purity,
        },
        "input_depletion": transferred,
        "target_share_of_transferred": final.pop_target / transferred if transferred > 0 else None,
        "leak_exponent": fit.leak_exponent,
        "depletion_exponent": fit.depletion_exponent,
        "neighbor_exponents": fit.neighbor_exponents,
        "ideal_target": None if ideal is None else float(abs(ideal[2]) ** 2),
    }


def run_accumulate(config: RunConfig, out_dir: Path, args) -> List[Path]:
    scenario = build_scenario(config)
    setup = build_setup(scenario)
    schedule = build_schedule(scenario)
    n_pairs = schedule.n_pairs
    keep = {1, n_pairs}
    kept: Dict[int, ThreeSurfaceState] = {}
    snapshots = StateSnapshot(str(out_dir / "snapshots")) if config.output.snapshot_pairs else None
    outputs: List[Path] = []

    def on_pair(n, state):
        if n in keep:
            kept[n] = state
        if snapshots is not None and n in config.output.snapshot_pairs:
            outputs.append(Path(snapshots.capture(state, n)[0]))

    record = run_train(setup, schedule, on_pair=on_pair)
    rows = [[getattr(row, column) for column in ACCUMULATION_COLUMNS] for row in record.rows]
    outputs.append(write_csv(out_dir / "accumulation.csv", ACCUMULATION_COLUMNS, rows))
    header, density = density_rows(kept)
    outputs.append(write_csv(out_dir / "densities.csv", header, density))
    if record.trace:
        steps = [(units.au_to_fs(t), *rest) for t, *rest in record.trace]
        outputs.append(write_csv(out_dir / "steps.csv", ("time_fs", "norm_g1", "norm_e", "norm_g2"), steps))
    summary = _accumulation_summary(scenario, schedule, record)
    outputs.append(write_json(out_dir / "summary.json", summary))
    if config.output.gnuplot:
        script = out_dir / "plot_accumulation.gp"
        script.write_text(GNUPLOT_SCRIPT, encoding="utf-8")
        outputs.append(script)
    print(
        f"after {n_pairs} pairs: input {record.final.pop_input:.4f}, target {record.final.pop_target:.4f}, "
        f"purity {record.final.purity:.4f}"
    )
    return outputs


def run_scan(config: RunConfig, out_dir: Path, args) -> List[Path]:
    factors = [float(f) for f in str(getattr(args, "intensity", "1")).split(",") if f.strip()]
    scenario = build_scenario(config)
    setup = build_setup(scenario)
    schedule = build_schedule(scenario, constant_dump=getattr(args, "constant_dump", False))
    mode = getattr(args, "mode", "both")
    rows = robustness_scan(setup, schedule, factors, mode=mode)
    outputs = [
        write_csv(
            out_dir / "scan.csv",
            ("factor", "efficiency", "final_input", "purity"),
            [(r.factor, r.efficiency, r.final_input, r.purity) for r in rows],
        )
    ]
    summary = {
        "mode": mode,
        "schedule": schedule.mode,
        "factors": [r.factor for r in rows],
        "efficiency": [r.efficiency for r in rows],
        "efficiency_spread": max(r.efficiency for r in rows) - min(r.efficiency for r in rows),
    }
    outputs.append(write_json(out_dir / "summary.json", summary))
    for r in rows:
        print(f"intensity x{r.factor:g}: efficiency {r.efficiency:.4f}")
    return outputs


RUNNERS = {
    "eigen": run_eigen,
    "fc": run_fc,
    "design": run_design,
    "propagate": run_propagate,
    "accumulate": run_accumulate,
    "scan": run_scan,
}


def run_scenario(config: RunConfig, command: str, out_dir=None, args=None) -> List[Path]:
    """run one subcommand, write its files and the manifest; returns every file written"""
    if command not in RUNNERS:
        raise ValueError(f"unknown subcommand {command!r}; expected one of {COMMANDS}")
    out_dir = Path(out_dir or config.output.directory)
    os.makedirs(out_dir, exist_ok=True)
    outputs = RUNNERS[command](config, out_dir, args)
    manifest = write_manifest(out_dir, config, outputs)
    logger.info("%s wrote %d files to %s", command, len(outputs) + 1, out_dir)
    return [*outputs, manifest]
