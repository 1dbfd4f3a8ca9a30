"""exports"""

from combctl.main import main
from combctl.errors import (
    AliasingError,
    AreaError,
    CombctlError,
    ConfigError,
    ContinuumLeakageError,
    DegenerateDesignError,
    EmptyWindowError,
    GridMismatchError,
    GridTruncationError,
    PropagationError,
    PulseTruncationError,
    ScheduleError,
    UnboundLevelError,
    UnitSuffixError,
    UnknownKeyError,
)
from combctl.potentials import (
    MorsePotential,
    RadialGrid,
    VibrationalLevel,
    bound_levels,
    diagonalize,
    grid_for_levels,
    morse_energy,
    morse_wavefunction,
    vibration_period,
)
from combctl.franck_condon import FCSpectrum, fc_factor, fc_spectrum
from combctl.pulses import (
    DispersionPhase,
    SpectralPulse,
    apply_chirp,
    calibrate_area,
    design_pair,
    dispersion_phase,
    synthesize_time_domain,
)
from combctl.perturbative import LevelWavepacket, overlap, pump_wavepacket, reversed_dump_wavepacket, transfer_amplitude
from combctl.propagator import (
    Propagator,
    SurfaceBasis,
    ThreeSurfaceState,
    free_evolve,
    measure_populations,
    propagate_pulse_pair,
    split_step,
)
from combctl.accumulation import (
    PulsePairSchedule,
    RamanLock,
    TrainSetup,
    area_schedule,
    ideal_lambda_map,
    leakage_exponent,
    locked_pair,
    optimize_pair,
    robustness_scan,
    run_train,
    single_pair_transfer,
)
from combctl.config import RunConfig, parse_config, parse_config_text, shipped_config
from combctl.scenarios import Scenario, build_scenario, build_schedule, build_setup, run_scenario
from combctl.snapshot import StateSnapshot

__all__ = [
    "main",
    "CombctlError",
    "ConfigError",
    "UnknownKeyError",
    "UnitSuffixError",
    "UnboundLevelError",
    "GridTruncationError",
    "GridMismatchError",
    "EmptyWindowError",
    "DegenerateDesignError",
    "AliasingError",
    "AreaError",
    "ScheduleError",
    "PulseTruncationError",
    "ContinuumLeakageError",
    "PropagationError",
    "MorsePotential",
    "RadialGrid",
    "VibrationalLevel",
    "bound_levels",
    "diagonalize",
    "grid_for_levels",
    "morse_energy",
    "morse_wavefunction",
    "vibration_period",
    "FCSpectrum",
    "fc_factor",
    "fc_spectrum",
    "DispersionPhase",
    "SpectralPulse",
    "apply_chirp",
    "calibrate_area",
    "design_pair",
    "dispersion_phase",
    "synthesize_time_domain",
    "LevelWavepacket",
    "overlap",
    "pump_wavepacket",
    "reversed_dump_wavepacket",
    "transfer_amplitude",
    "Propagator",
    "SurfaceBasis",
    "ThreeSurfaceState",
    "free_evolve",
    "measure_populations",
    "propagate_pulse_pair",
    "split_step",
    "PulsePairSchedule",
    "TrainSetup",
    "area_schedule",
    "ideal_lambda_map",
    "leakage_exponent",
    "robustness_scan",
    "run_train",
    "RamanLock",
    "locked_pair",
    "optimize_pair",
    "single_pair_transfer",
    "RunConfig",
    "parse_config",
    "parse_config_text",
    "shipped_config",
    "Scenario",
    "build_scenario",
    "build_schedule",
    "build_setup",
    "run_scenario",
    "StateSnapshot",
]
