"""run configuration: TOML in laboratory units, RunConfig in atomic units"""

import logging
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import tomli_w

from combctl import units
from combctl.errors import ConfigError, UnboundLevelError, UnitSuffixError, UnknownKeyError
from combctl.potentials import MorsePotential, count_bound_levels

logger = logging.getLogger(__name__)

UNIT_SUFFIXES = ("_inv_angstrom", "_angstrom", "_cm1", "_nm", "_fs2", "_fs", "_ns", "_amu", "_rad", "_au")
POTENTIAL_SECTIONS = ("ground", "excited", "target")


@dataclass(frozen=True)
class Key:
    kind: type
    default: Any = None
    required: bool = False
    low: Optional[float] = None
    high: Optional[float] = None
    low_open: bool = False
    choices: Tuple[str, ...] = ()
    element: Optional[type] = None


_POTENTIAL_KEYS = {
    "De_cm1": Key(float, required=True, low=0.0, low_open=True),
    "a_inv_angstrom": Key(float, required=True, low=0.0, low_open=True),
    "re_angstrom": Key(float, required=True, low=0.0, low_open=True),
    "Te_cm1": Key(float, default=0.0, low=0.0),
    "reduced_mass_amu": Key(float, required=True, low=0.0, low_open=True),
}

REGISTRY: Dict[str, Dict[str, Key]] = {
    "levels": {
        "input_v": Key(int, required=True, low=0),
        "target_v": Key(int, required=True, low=0),
        "neighbor_v": Key(list, default=[], element=int),
    },
    "pulse": {
        "pump_wavelength_nm": Key(float, required=True, low=0.0, low_open=True),
        "bandwidth_nm": Key(float, default=10.0, low=0.0, low_open=True),
        "gdd_fs2": Key(float, default=0.0),
        "dipole_au": Key(float, default=1.0, low=0.0, low_open=True),
        "detuning_points": Key(int, default=1024, low=16),
        "grid_bandwidths": Key(float, default=4.0, low=0.0, low_open=True),
        "window_cm1": Key(float, low=0.0, low_open=True),
        "amplitude_table_cm1": Key(list, element=list),
        "raman_detuning_cm1": Key(float, default=0.0),
    },
    "train": {
        "pairs": Key(int, default=40, low=1),
        "repetition_ns": Key(float, default=10.0, low=0.0, low_open=True),
        "schedule": Key(str, default="fixed_pump", choices=("eq1", "fixed_pump", "fixed_both")),
        "pump_area_rad": Key(float, default=math.pi / 6.6, low=0.0, low_open=True, high=math.pi),
        "dump_area_rad": Key(float, default=math.pi / 2, low=0.0, low_open=True, high=math.pi),
        "phase_mode": Key(str, default="locked", choices=("locked", "free")),
        "inter_pair_phase_rad": Key(float),
        "lifetime_ns": Key(float, default=30.0, low=0.0, low_open=True),
        "track_light_shifts": Key(bool, default=True),
        "optimize_pair": Key(bool, default=False),
    },
    "numerics": {
        "grid_points": Key(int, default=512, low=16),
        "r_min_angstrom": Key(float, low=0.0, low_open=True),
        "r_max_angstrom": Key(float, low=0.0, low_open=True),
        "dt_fs": Key(float, low=0.0, low_open=True),
        "potential_cap_cm1": Key(float, default=20000.0, low=0.0, low_open=True),
        "projection_tolerance": Key(float, default=1e-6, low=0.0, low_open=True),
        "refine_strong_areas": Key(bool, default=False),
        "local_step": Key(str, default="split", choices=("split", "exact")),
        "record_every": Key(int, default=0, low=0),
    },
    "output": {
        "directory": Key(str, default="out"),
        "verbosity": Key(str, default="pair", choices=("pair", "step")),
        "gnuplot": Key(bool, default=False),
        "snapshot_pairs": Key(list, default=[], element=int),
    },
}


def _stem(name: str) -> str:
    for suffix in UNIT_SUFFIXES:
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return name


def _check_type(path: str, key: Key, value):
    if key.kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        value = float(value)
        if not math.isfinite(value):
            raise ConfigError(path, f"must be finite, got {value}")
        return value
    if key.kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if not isinstance(value, key.kind):
        raise ConfigError(path, f"expected {key.kind.__name__}, got {value!r}")
    if key.kind is list:
        for item in value:
            if key.element is int and (isinstance(item, bool) or not isinstance(item, int)):
                raise ConfigError(path, f"expected a list of integers, got {value!r}")
            if key.element is list and not (
                isinstance(item, list) and len(item) == 2 and all(isinstance(x, (int, float)) for x in item)
            ):
                raise ConfigError(path, "expected a list of [detuning_cm1, amplitude] pairs")
        if key.element is list:
            value = [[float(x) for x in item] for item in value]
    return value


def _check_range(path: str, key: Key, value):
    if key.choices and value not in key.choices:
        raise ConfigError(path, f"must be one of {list(key.choices)}, got {value!r}")
    if key.low is not None and (value < key.low or (key.low_open and value == key.low)):
        bound = ">" if key.low_open else ">="
        raise ConfigError(path, f"must be {bound} {key.low:g}, got {value}")
    if key.high is not None and value > key.high + 1e-12:
        raise ConfigError(path, f"must be <= {key.high:g}, got {value}")


def _validate_section(prefix: str, table: Any, keys: Dict[str, Key]) -> Dict[str, Any]:
    if not isinstance(table, dict):
        raise ConfigError(prefix, "expected a table")
    stems = {_stem(name): name for name in keys}
    for name in table:
        if name not in keys:
            path = f"{prefix}.{name}"
            if _stem(name) in stems:
                raise UnitSuffixError(path, f"wrong unit suffix; expected {prefix}.{stems[_stem(name)]}")
            raise UnknownKeyError(path, "unknown key")
    resolved = {}
    for name, key in keys.items():
        path = f"{prefix}.{name}"
        if name not in table:
            if key.required:
                raise ConfigError(path, "missing required key")
            if key.default is not None:
                logger.info("%s not set; using default %r", path, key.default)
                resolved[name] = key.default
            continue
        value = _check_type(path, key, table[name])
        if key.kind in (int, float, str):
            _check_range(path, key, value)
        resolved[name] = value
    return resolved


def _sorted(table: Dict[str, Any]) -> Dict[str, Any]:
    return {k: _sorted(v) if isinstance(v, dict) else v for k, v in sorted(table.items())}


@dataclass(frozen=True)
class PotentialConfig:
    dissociation_energy: float
    width: float
    equilibrium_distance: float
    electronic_offset: float
    reduced_mass: float

    def build(self, name: str) -> MorsePotential:
        return MorsePotential(
            dissociation_energy=self.dissociation_energy,
            width=self.width,
            equilibrium_distance=self.equilibrium_distance,
            electronic_offset=self.electronic_offset,
            reduced_mass=self.reduced_mass,
            name=name,
        )


@dataclass(frozen=True)
class LevelsConfig:
    input_v: int
    target_v: int
    neighbor_v: Tuple[int, ...]


@dataclass(frozen=True)
class PulseConfig:
    pump_wavelength_nm: float
    pump_carrier: float
    bandwidth: float
    gdd: float
    dipole: float
    detuning_points: int
    grid_half_width: float
    window: Optional[float]
    amplitude_table: Optional[Tuple[Tuple[float, float], ...]]
    raman_detuning: float


@dataclass(frozen=True)
class TrainConfig:
    pairs: int
    repetition_time: float
    schedule: str
    pump_area: float
    dump_area: float
    phase_mode: str
    inter_pair_phase: Optional[float]
    gamma: float
    track_light_shifts: bool = True
    optimize_pair: bool = False


@dataclass(frozen=True)
class NumericsConfig:
    grid_points: int
    r_min: Optional[float]
    r_max: Optional[float]
    dt: Optional[float]
    potential_cap: float
    projection_tolerance: float
    refine_strong_areas: bool
    record_every: int
    local_step: str = "split"


@dataclass(frozen=True)
class OutputConfig:
    directory: str
    verbosity: str
    gnuplot: bool
    snapshot_pairs: Tuple[int, ...]


@dataclass(frozen=True)
class RunConfig:
    """validated configuration in atomic units; ``source`` keeps the defaults-filled TOML tables"""

    potentials: Dict[str, PotentialConfig]
    levels: LevelsConfig
    pulse: PulseConfig
    train: TrainConfig
    numerics: NumericsConfig
    output: OutputConfig
    source: Dict[str, Any]

    def to_toml(self) -> str:
        return tomli_w.dumps(self.source)

    def potential(self, name: str) -> MorsePotential:
        return self.potentials[name].build(name)


def _potential(table: Dict[str, Any]) -> PotentialConfig:
    return PotentialConfig(
        dissociation_energy=units.cm1_to_hartree(table["De_cm1"]),
        width=units.inv_angstrom_to_inv_bohr(table["a_inv_angstrom"]),
        equilibrium_distance=units.angstrom_to_bohr(table["re_angstrom"]),
        electronic_offset=units.cm1_to_hartree(table["Te_cm1"]),
        reduced_mass=units.amu_to_me(table["reduced_mass_amu"]),
    )


def _check_levels(potentials: Dict[str, PotentialConfig], levels: Dict[str, Any]):
    counts = {}
    for name in ("ground", "target"):
        try:
            counts[name] = count_bound_levels(potentials[name].build(name))
        except UnboundLevelError as err:
            raise ConfigError(f"potentials.{name}", str(err)) from err
    ground, target = counts["ground"], counts["target"]
    if levels["input_v"] >= ground:
        raise ConfigError("levels.input_v", f"ground potential binds v = 0..{ground - 1}, got {levels['input_v']}")
    if levels["target_v"] >= target:
        raise ConfigError("levels.target_v", f"target potential binds v = 0..{target - 1}, got {levels['target_v']}")
    for v in levels["neighbor_v"]:
        if not 0 <= v < ground:
            raise ConfigError("levels.neighbor_v", f"ground potential binds v = 0..{ground - 1}, got {v}")


def _optional(table, name, convert):
    return convert(table[name]) if name in table else None


def config_from_dict(document: Dict[str, Any]) -> RunConfig:
    """validate a parsed TOML document and convert it to atomic units"""
    sections = set(REGISTRY) | {"potentials"}
    for name in document:
        if name not in sections:
            raise UnknownKeyError(name, "unknown section")
    raw_potentials = document.get("potentials", {})
    if not isinstance(raw_potentials, dict):
        raise ConfigError("potentials", "expected a table")
    for name in raw_potentials:
        if name not in POTENTIAL_SECTIONS:
            raise UnknownKeyError(f"potentials.{name}", "unknown potential; expected ground, excited or target")
    source: Dict[str, Any] = {"potentials": {}}
    for name in ("ground", "excited"):
        if name not in raw_potentials:
            raise ConfigError(f"potentials.{name}", "missing required section")
        source["potentials"][name] = _validate_section(f"potentials.{name}", raw_potentials[name], _POTENTIAL_KEYS)
    if "target" in raw_potentials:
        source["potentials"]["target"] = _validate_section("potentials.target", raw_potentials["target"], _POTENTIAL_KEYS)
    else:
        logger.info("potentials.target not set; using a copy of potentials.ground")
        source["potentials"]["target"] = dict(source["potentials"]["ground"])
    for section, keys in REGISTRY.items():
        source[section] = _validate_section(section, document.get(section, {}), keys)
    source = _sorted(source)

    levels, pulse, train, numerics, output = (source[s] for s in ("levels", "pulse", "train", "numerics", "output"))
    if ("r_min_angstrom" in numerics) != ("r_max_angstrom" in numerics):
        raise ConfigError("numerics.r_min_angstrom", "r_min_angstrom and r_max_angstrom must be given together")
    if "r_min_angstrom" in numerics and numerics["r_max_angstrom"] <= numerics["r_min_angstrom"]:
        raise ConfigError("numerics.r_max_angstrom", "must exceed numerics.r_min_angstrom")
    points = numerics["grid_points"]
    if points & (points - 1):
        raise ConfigError("numerics.grid_points", f"must be a power of two, got {points}")
    table = pulse.get("amplitude_table_cm1")
    if table is not None and (len(table) < 2 or any(b[0] <= a[0] for a, b in zip(table, table[1:]))):
        raise ConfigError("pulse.amplitude_table_cm1", "needs at least two rows with increasing detuning")

    potentials = {name: _potential(table) for name, table in source["potentials"].items()}
    _check_levels(potentials, levels)

    pump_carrier = units.nm_to_angular_frequency(pulse["pump_wavelength_nm"])
    bandwidth = units.bandwidth_nm_to_angular(pulse["bandwidth_nm"], pulse["pump_wavelength_nm"])
    config = RunConfig(
        potentials=potentials,
        levels=LevelsConfig(levels["input_v"], levels["target_v"], tuple(levels["neighbor_v"])),
        pulse=PulseConfig(
            pump_wavelength_nm=pulse["pump_wavelength_nm"],
            pump_carrier=pump_carrier,
            bandwidth=bandwidth,
            gdd=units.fs2_to_au(pulse["gdd_fs2"]),
            dipole=pulse["dipole_au"],
            detuning_points=pulse["detuning_points"],
            grid_half_width=pulse["grid_bandwidths"] * bandwidth,
            window=_optional(pulse, "window_cm1", units.cm1_to_hartree),
            amplitude_table=None
            if table is None
            else tuple((units.cm1_to_hartree(d), a) for d, a in table),
            raman_detuning=units.cm1_to_hartree(pulse["raman_detuning_cm1"]),
        ),
        train=TrainConfig(
            pairs=train["pairs"],
            repetition_time=units.ns_to_au(train["repetition_ns"]),
            schedule=train["schedule"],
            pump_area=train["pump_area_rad"],
            dump_area=train["dump_area_rad"],
            phase_mode=train["phase_mode"],
            inter_pair_phase=train.get("inter_pair_phase_rad"),
            gamma=1.0 / units.ns_to_au(train["lifetime_ns"]),
            track_light_shifts=train["track_light_shifts"],
            optimize_pair=train["optimize_pair"],
        ),
        numerics=NumericsConfig(
            grid_points=points,
            r_min=_optional(numerics, "r_min_angstrom", units.angstrom_to_bohr),
            r_max=_optional(numerics, "r_max_angstrom", units.angstrom_to_bohr),
            dt=_optional(numerics, "dt_fs", units.fs_to_au),
            potential_cap=units.cm1_to_hartree(numerics["potential_cap_cm1"]),
            projection_tolerance=numerics["projection_tolerance"],
            refine_strong_areas=numerics["refine_strong_areas"],
            record_every=numerics["record_every"],
            local_step=numerics["local_step"],
        ),
        output=OutputConfig(
            directory=output["directory"],
            verbosity=output["verbosity"],
            gnuplot=output["gnuplot"],
            snapshot_pairs=tuple(output["snapshot_pairs"]),
        ),
        source=source,
    )
    logger.debug("resolved configuration (atomic units): %s", config)
    return config


def parse_config_text(text: str, origin: str = "<string>") -> RunConfig:
    try:
        document = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(origin, f"malformed TOML: {err}") from err
    return config_from_dict(document)


def parse_config(path) -> RunConfig:
    """read, validate and unit-convert a TOML run configuration"""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(str(path), "configuration file not found")
    logger.info("reading configuration %s", path)
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))


def shipped_config(name: str) -> Path:
    """path of a configuration shipped in combctl/configs"""
    return Path(__file__).parent / "configs" / name
