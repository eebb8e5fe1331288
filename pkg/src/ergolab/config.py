"""
Configuration management for ergolab
"""
import json
import logging
import os
import re
import tomllib
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import jsonschema

from .exceptions import ConfigurationError

EXPERIMENT_KINDS = ("spectrum", "equilibrium", "decay", "clt", "stability", "verify", "cohomology")

_TOML_POSITION = re.compile(r"line (\d+), column (\d+)")


def _positive_int_env(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ConfigurationError(f"{name} must be a positive integer, got '{raw}'") from None
    if value < 1:
        raise ConfigurationError(f"{name} must be a positive integer, got {value}")
    return value


@dataclass
class Settings:
    """Process-wide settings from the environment"""

    out: Optional[str] = None
    workers: int = 1
    log_level: str = "INFO"
    log_file: Optional[str] = None

    @classmethod
    def from_env(cls) -> "Settings":
        """Create settings from environment variables"""
        log_level = os.getenv("ERGOLAB_LOG_LEVEL", "INFO")
        if not isinstance(logging.getLevelName(log_level.upper()), int):
            raise ConfigurationError(f"ERGOLAB_LOG_LEVEL must name a logging level, got '{log_level}'")
        return cls(
            out=os.getenv("ERGOLAB_OUT"),
            workers=_positive_int_env("ERGOLAB_WORKERS", 1),
            log_level=log_level,
            log_file=os.getenv("ERGOLAB_LOG_FILE"),
        )

    def setup_logging(self):
        """Setup logging based on settings"""
        logging.basicConfig(
            level=getattr(logging, self.log_level.upper()),
            format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        )


@dataclass
class BuilderSpec:
    builder: str
    params: Dict[str, Any] = field(default_factory=dict)


@dataclass
class PotentialSpec(BuilderSpec):
    epsilon_phi: float = 0.05


@dataclass
class SystemConfig:
    base: BuilderSpec
    fiber: BuilderSpec
    potential: PotentialSpec
    zeta: float = 1.0
    N: int = 256
    bins: Optional[int] = 256
    atom_cap: int = 512


@dataclass
class ExperimentSpec:
    kind: str
    params: Dict[str, Any] = field(default_factory=dict)


@dataclass
class OutputConfig:
    directory: str = "results"
    formats: List[str] = field(default_factory=lambda: ["csv", "json"])
    seed: int = 0


@dataclass
class Tolerances:
    eigen_tol: float = 1e-12
    eigen_max_iter: int = 100_000
    equilibrium_tol: float = 1e-6
    equilibrium_n_max: int = 400
    fixed_fiber_tol: float = 1e-9
    correlation_floor: float = 1e-13
    variance_truncation: float = 1e-10
    admissibility_slack: float = 1e-9


@dataclass
class ExperimentConfig:
    """System, experiment, output and tolerance blocks of one run"""

    system: SystemConfig
    experiment: ExperimentSpec
    output: OutputConfig = field(default_factory=OutputConfig)
    tolerances: Tolerances = field(default_factory=Tolerances)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        validate(data)
        system = dict(data["system"])
        system["base"] = BuilderSpec(**system["base"])
        system["fiber"] = BuilderSpec(**system["fiber"])
        system["potential"] = PotentialSpec(**system["potential"])
        return cls(
            system=SystemConfig(**system),
            experiment=ExperimentSpec(**data["experiment"]),
            output=OutputConfig(**data.get("output", {})),
            tolerances=Tolerances(**data.get("tolerances", {})),
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ExperimentConfig":
        """Read a TOML or JSON config file"""
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigurationError(f"Cannot read config {path}: {e}")

        if path.suffix.lower() == ".json":
            try:
                data = json.loads(text)
            except json.JSONDecodeError as e:
                raise ConfigurationError(f"Invalid JSON in {path}: {e.msg}", line=e.lineno, column=e.colno)
        else:
            try:
                data = tomllib.loads(text)
            except tomllib.TOMLDecodeError as e:
                match = _TOML_POSITION.search(str(e))
                line, column = (int(match.group(1)), int(match.group(2))) if match else (None, None)
                raise ConfigurationError(f"Invalid TOML in {path}: {e}", line=line, column=column)
        return cls.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def write_resolved(self, directory: Union[str, Path]) -> Path:
        target = Path(directory) / "resolved_config.json"
        target.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
        return target


def load_schema() -> Dict[str, Any]:
    return json.loads(resources.files("ergolab.resources").joinpath("experiment.schema.json").read_text())


def validate(data: Dict[str, Any]):
    """Raise ConfigurationError naming the offending key path"""
    try:
        jsonschema.validate(instance=data, schema=load_schema())
    except jsonschema.ValidationError as e:
        location = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigurationError(f"Invalid config at {location}: {e.message}")


# Global settings instance
settings = Settings.from_env()
