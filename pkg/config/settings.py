"""
Configuration Management for QubitThermo
Run configuration as INI sections mapped onto dataclasses, with validation,
command-line overrides and round-trip persistence.
"""

from utils.common_imports import *
from utils.logger import logger
from core.schedules import SCHEDULE_REGISTRY
from pathlib import Path
import configparser
import dataclasses
import typing


SCENARIOS = ['sweep', 'frames', 'qfactor', 'map', 'sensitivity']
INTEGRATOR_METHODS = ['magnus4', 'rk45', 'dop853']
MAP_STRATEGIES = ['shared_propagator', 'per_cell']
INITIAL_STATES = ['ground', 'excited', 'vector']
LOG_LEVELS = ['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL']


@dataclass
class LZSettings:
    """[schedule] section: drive schedule and sweep span"""

    kind: str = "landau_zener"
    epsilon: float = 0.34
    t_start: float = -100.0
    t_end: float = 100.0
    static_field: List[float] = field(default_factory=lambda: [0.0, 0.0, 2.0])  # constant schedule
    table: str = ""  # CSV with columns t, hx, hy, hz for tabulated schedules

    def validate(self) -> List[str]:
        errors = []
        if self.kind not in SCHEDULE_REGISTRY:
            errors.append(f"schedule.kind must be one of {sorted(SCHEDULE_REGISTRY)}")
        if self.kind == 'landau_zener' and not self.epsilon > 0:
            errors.append("schedule.epsilon must be > 0")
        if not math.isfinite(self.t_start) or not math.isfinite(self.t_end):
            errors.append("schedule.t_start and schedule.t_end must be finite")
        elif not self.t_start < self.t_end:
            errors.append("schedule.t_start must be smaller than schedule.t_end")
        if self.kind == 'constant' and len(self.static_field) != 3:
            errors.append("schedule.static_field must have three components")
        if self.kind == 'tabulated' and not self.table:
            errors.append("schedule.table is required for tabulated schedules")
        return errors


@dataclass
class IntegratorSettings:
    """[integrator] section"""

    method: str = "magnus4"
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_step: float = 0.1
    initial_step: float = 0.05
    output_points: int = 4001
    dt_out: float = 0.0  # overrides output_points when > 0

    def validate(self) -> List[str]:
        errors = []
        if self.method not in INTEGRATOR_METHODS:
            errors.append(f"integrator.method must be one of {INTEGRATOR_METHODS}")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            errors.append("integrator tolerances must be > 0")
        if not self.max_step > 0:
            errors.append("integrator.max_step must be > 0")
        if not self.initial_step > 0:
            errors.append("integrator.initial_step must be > 0")
        if self.output_points < 2:
            errors.append("integrator.output_points must be at least 2")
        if self.dt_out < 0:
            errors.append("integrator.dt_out must be >= 0")
        return errors


@dataclass
class CascadeSettings:
    """[cascade] section: superadiabatic frame construction"""

    n_max: int = 6
    grid_points: int = 20001
    max_angle_step: float = 0.01
    max_grid_points: int = 160001
    q_scale: float = 4.0
    q_convergence_tol: float = 1e-3
    frames: List[int] = field(default_factory=lambda: [1, 2, 4])

    def validate(self) -> List[str]:
        errors = []
        if self.n_max < 1:
            errors.append("cascade.n_max must be >= 1")
        if self.grid_points < 11:
            errors.append("cascade.grid_points must be >= 11")
        if self.max_grid_points < self.grid_points:
            errors.append("cascade.max_grid_points must be >= cascade.grid_points")
        if not 0 < self.max_angle_step < 0.1:
            errors.append("cascade.max_angle_step must lie in (0, 0.1) rad")
        if not self.q_scale > 0:
            errors.append("cascade.q_scale must be > 0")
        if not 0 < self.q_convergence_tol < 1:
            errors.append("cascade.q_convergence_tol must lie in (0, 1)")
        bad = [n for n in self.frames if n < 0 or n > self.n_max]
        if bad:
            errors.append(f"cascade.frames {bad} outside 0..n_max ({self.n_max})")
        return errors


@dataclass
class MapSettings:
    """[map] section: entropy maps, panels and sensitivity runs"""

    resolution: int = 2048
    frame: int = 0
    strategy: str = "shared_propagator"
    panel: bool = False
    epsilon_shift: float = 0.01  # relative shift of the panel rows
    time_shift: float = 0.1      # t_i shift of the panel columns
    delta: float = 0.1           # endpoint shift for sensitivity runs
    compare: str = ""            # second config to compare the map against

    def validate(self) -> List[str]:
        errors = []
        if self.resolution < 16:
            errors.append("map.resolution must be >= 16 cells")
        if self.frame < 0:
            errors.append("map.frame must be >= 0")
        if self.strategy not in MAP_STRATEGIES:
            errors.append(f"map.strategy must be one of {MAP_STRATEGIES}")
        if self.epsilon_shift < 0 or self.time_shift < 0:
            errors.append("map.epsilon_shift and map.time_shift must be >= 0")
        if self.delta < 0:
            errors.append("map.delta must be >= 0")
        return errors


@dataclass
class OutputSettings:
    """[output] section"""

    directory: str = "results"
    write_trajectory: bool = True

    def validate(self) -> List[str]:
        return [] if self.directory else ["output.directory must not be empty"]


@dataclass
class LoggingSettings:
    """[logging] section"""

    level: str = "INFO"
    log_to_file: bool = False
    log_file: str = ""
    max_log_size_mb: int = 10
    backup_count: int = 5

    def validate(self) -> List[str]:
        errors = []
        if self.level.upper() not in LOG_LEVELS:
            errors.append(f"logging.level must be one of {', '.join(LOG_LEVELS)}")
        if self.max_log_size_mb < 1:
            errors.append("logging.max_log_size_mb must be >= 1")
        return errors


SECTION_TYPES = {
    'schedule': LZSettings,
    'integrator': IntegratorSettings,
    'cascade': CascadeSettings,
    'map': MapSettings,
    'output': OutputSettings,
    'logging': LoggingSettings,
}


@dataclass
class RunConfig:
    """Fully resolved configuration of one CLI run"""

    scenario: str = "sweep"
    workers: int = 0  # 0 means one per logical processor
    initial_state: str = "ground"
    initial_vector: List[float] = field(default_factory=list)
    schedule: LZSettings = field(default_factory=LZSettings)
    integrator: IntegratorSettings = field(default_factory=IntegratorSettings)
    cascade: CascadeSettings = field(default_factory=CascadeSettings)
    map: MapSettings = field(default_factory=MapSettings)
    output: OutputSettings = field(default_factory=OutputSettings)
    logging: LoggingSettings = field(default_factory=LoggingSettings)

    @property
    def worker_count(self) -> int:
        return self.workers if self.workers > 0 else (os.cpu_count() or 1)

    @classmethod
    def load_from_file(cls, filepath: str) -> 'RunConfig':
        """
        Load configuration from an INI file

        Args:
            filepath: Path to configuration file

        Returns:
            RunConfig with every key of the file applied over the defaults

        Raises:
            ConfigurationError: missing file, unknown section/key or unparsable value
        """
        path = Path(filepath)
        if not path.is_file():
            raise ConfigurationError(f"Configuration file not found: {filepath}")

        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, 'r', encoding='utf-8') as f:
                parser.read_file(f)
        except configparser.Error as e:
            raise ConfigurationError(f"Cannot parse {filepath}: {e}") from e

        if parser.defaults():
            raise ConfigurationError(f"Unexpected [DEFAULT] keys in {filepath}: {sorted(parser.defaults())}")

        config = cls()
        for section in parser.sections():
            if section == 'run':
                target = config
                allowed = _scalar_fields(cls)
            elif section in SECTION_TYPES:
                target = getattr(config, section)
                allowed = _scalar_fields(type(target))
            else:
                raise ConfigurationError(f"Unknown configuration section [{section}] in {filepath}")

            for key, raw in parser.items(section):
                if key not in allowed:
                    raise ConfigurationError(f"Unknown configuration key '{key}' in [{section}] of {filepath}")
                setattr(target, key, _convert(raw, allowed[key], f"{section}.{key}"))

        # Table paths are relative to the config file that names them
        table = config.schedule.table
        if table and not os.path.isabs(table):
            config.schedule.table = str((path.parent / table).resolve())

        logger.info(f"Configuration loaded from {filepath}")
        return config

    def apply_overrides(self, args) -> List[str]:
        """
        Apply command-line flags over the file values; flags win

        Args:
            args: argparse namespace; attributes that are None are ignored

        Returns:
            Names of the settings that were overridden
        """
        mapping = {
            'scenario': (self, 'scenario'),
            'epsilon': (self.schedule, 'epsilon'),
            't_start': (self.schedule, 't_start'),
            't_end': (self.schedule, 't_end'),
            'frames': (self.cascade, 'frames'),
            'n_max': (self.cascade, 'n_max'),
            'resolution': (self.map, 'resolution'),
            'frame': (self.map, 'frame'),
            'out': (self.output, 'directory'),
            'compare': (self.map, 'compare'),
            'workers': (self, 'workers'),
            'log_level': (self.logging, 'level'),
        }
        applied = []
        for flag, (target, attr) in mapping.items():
            value = getattr(args, flag, None)
            if value is None:
                continue
            setattr(target, attr, value)
            applied.append(attr)
            logger.debug(f"Configuration override: {attr} = {value}")
        return applied

    def validate(self) -> List[str]:
        """
        Validate configuration values

        Returns:
            List of validation error messages (empty when valid)
        """
        errors = []
        if self.scenario not in SCENARIOS:
            errors.append(f"run.scenario must be one of {SCENARIOS}")
        if self.workers < 0:
            errors.append("run.workers must be >= 0")
        if self.initial_state not in INITIAL_STATES:
            errors.append(f"run.initial_state must be one of {INITIAL_STATES}")
        if self.initial_state == 'vector':
            if len(self.initial_vector) != 3:
                errors.append("run.initial_vector must have three components")
            elif math.sqrt(sum(c * c for c in self.initial_vector)) > 1.0 + NORM_TOLERANCE:
                errors.append("run.initial_vector must have norm <= 1")

        for section in SECTION_TYPES:
            errors.extend(getattr(self, section).validate())

        if self.map.frame > self.cascade.n_max:
            errors.append(f"map.frame {self.map.frame} exceeds cascade.n_max {self.cascade.n_max}")
        return errors

    def raise_if_invalid(self):
        """Raise ConfigurationError listing every validation problem at once"""
        errors = self.validate()
        if errors:
            raise ConfigurationError("Invalid configuration: " + "; ".join(errors))

    def to_dict(self) -> Dict[str, Any]:
        """Resolved configuration keyed by INI section"""
        data = {'run': {name: getattr(self, name) for name in _scalar_fields(type(self))}}
        for section in SECTION_TYPES:
            data[section] = asdict(getattr(self, section))
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RunConfig':
        """Inverse of to_dict, used to re-run from an embedded summary config"""
        config = cls()
        for section, values in data.items():
            if section == 'run':
                target, allowed = config, _scalar_fields(cls)
            elif section in SECTION_TYPES:
                target = getattr(config, section)
                allowed = _scalar_fields(type(target))
            else:
                raise ConfigurationError(f"Unknown configuration section '{section}'")
            for key, value in values.items():
                if key not in allowed:
                    raise ConfigurationError(f"Unknown configuration key '{key}' in '{section}'")
                setattr(target, key, list(value) if isinstance(value, (list, tuple)) else value)
        return config

    def save_to_file(self, filepath: str) -> bool:
        """
        Save configuration as INI; loading the file reproduces this config

        Args:
            filepath: Path to save configuration file

        Returns:
            True if saved successfully, False otherwise
        """
        parser = configparser.ConfigParser(interpolation=None)
        for section, values in self.to_dict().items():
            parser[section] = {key: _format(value) for key, value in values.items()}

        try:
            directory = os.path.dirname(filepath)
            if directory:
                os.makedirs(directory, exist_ok=True)
            with open(filepath, 'w', encoding='utf-8') as f:
                parser.write(f)
            logger.info(f"Configuration saved to {filepath}")
            return True
        except OSError as e:
            logger.error(f"Failed to save configuration to {filepath}", e)
            return False

    def get_logging_settings(self) -> Dict[str, Any]:
        """Keyword arguments for QubitThermoLogger.setup_logger"""
        log_file = self.logging.log_file or None
        if self.logging.log_to_file and log_file is None:
            log_file = os.path.join(self.output.directory, "qubitthermo.log")
        return {
            'log_level': self.logging.level,
            'log_to_file': self.logging.log_to_file,
            'log_file_path': log_file,
            'max_log_size': self.logging.max_log_size_mb * 1024 * 1024,
            'backup_count': self.logging.backup_count,
        }


def _scalar_fields(cls) -> Dict[str, Any]:
    """Non-section dataclass fields with their resolved types"""
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)
            if f.name not in SECTION_TYPES}


def _convert(raw: str, target_type, key: str):
    """Convert an INI string to the type declared on the dataclass field"""
    text = raw.strip()
    try:
        if target_type is bool:
            lowered = text.lower()
            if lowered not in configparser.ConfigParser.BOOLEAN_STATES:
                raise ValueError(f"not a boolean: {text!r}")
            return configparser.ConfigParser.BOOLEAN_STATES[lowered]
        if target_type is int:
            return int(text)
        if target_type is float:
            return float(text)
        if target_type is str:
            return text
        if typing.get_origin(target_type) in (list, List):
            (item_type,) = typing.get_args(target_type)
            return [item_type(item.strip()) for item in text.split(',') if item.strip()]
    except ValueError as e:
        raise ConfigurationError(f"Invalid value for {key}: {e}") from e
    raise ConfigurationError(f"Unsupported configuration type for {key}: {target_type}")


def _format(value) -> str:
    if isinstance(value, (list, tuple)):
        return ", ".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def load_run_config(filepath: Optional[str] = None, args=None) -> RunConfig:
    """
    Build the run configuration: file values, then CLI overrides, then validation

    Raises:
        ConfigurationError: if any setting is invalid
    """
    config = RunConfig.load_from_file(filepath) if filepath else RunConfig()
    if args is not None:
        config.apply_overrides(args)
    config.raise_if_invalid()
    return config
