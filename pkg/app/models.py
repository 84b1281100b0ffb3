import logging
import math
import os
from abc import ABC, abstractmethod
from enum import Enum
from pathlib import Path
from typing import Any, ClassVar, Dict, List, Optional, Tuple, Type

from pydantic import BaseModel, Field, PrivateAttr, field_validator, model_validator
from pydantic_settings import (
    BaseSettings,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
    TomlConfigSettingsSource,
)

from app.utils.reports import config_to_toml, write_json

logger = logging.getLogger(__name__)


class Sign(str, Enum):
    PLUS = "+"
    MINUS = "-"

    @property
    def factor(self) -> int:
        return 1 if self is Sign.PLUS else -1

    @property
    def flipped(self) -> "Sign":
        return Sign.MINUS if self is Sign.PLUS else Sign.PLUS


class Representation(str, Enum):
    PHYSICAL = "physical"
    SPECTRAL = "spectral"


class KernelVariant(str, Enum):
    """Sign inside the phase-correction kernel |ζ/<ζ> ∓ θ'σ/<σ>|^-1."""

    MINUS = "minus"
    PLUS = "plus"


class ProfileTiming(str, Enum):
    EVOLVING = "evolving"
    FROZEN = "frozen"


class PhaseConvention(str, Enum):
    """How the accumulated phase B enters the corrected profile.

    dynamical: g = exp(-iB) f, matching the +c1*V phase the potential flow adds.
    literal: g = exp(+iB) f, as the correction formula is usually printed.
    """

    DYNAMICAL = "dynamical"
    LITERAL = "literal"


class ZeroModeConvention(str, Enum):
    DROP = "drop"
    MEAN_FIELD = "mean-field"


class KernelKind(str, Enum):
    PERIODIC = "periodic"
    FREE_SPACE = "free-space"


# Domain errors. Library code raises these, only the CLI layer converts them.
class GridError(ValueError):
    pass


class RepresentationError(ValueError):
    pass


class MultiplierError(ValueError):
    pass


class HorizonError(ValueError):
    pass


class InsufficientSnapshotsError(ValueError):
    pass


class CheckpointFormatError(ValueError):
    pass


class UnsupportedVersionError(CheckpointFormatError):
    pass


class PhaseUnwrapError(RuntimeError):
    pass


class InstabilityError(RuntimeError):
    """Raised when the evolved field stops being finite or its mass grows."""

    def __init__(self, message: str, state: Any = None, time: float = 0.0):
        super().__init__(message)
        self.state = state
        self.time = time


class SpectralSettings(BaseSettings):
    """Process-wide knobs read from the environment."""

    model_config = SettingsConfigDict(env_prefix="DIRAC_", extra="ignore")

    threads: int = Field(
        default_factory=lambda: os.cpu_count() or 1,
        ge=1,
        description="Worker count handed to scipy.fft",
    )
    log_level: str = Field(default="INFO")


class RunConfig(BaseSettings):
    """Validated parameters of one Dirac-Hartree evolution."""

    model_config = SettingsConfigDict(
        extra="forbid", populate_by_name=True, case_sensitive=True
    )

    n_per_axis: int = Field(alias="n", description="Grid points per axis")
    box_length: float = Field(alias="L", gt=0, description="Period of the box")
    eps0: float = Field(ge=0, description="Peak modulus of the initial envelope")
    dt: float = Field(gt=0, le=0.1)
    t_final: float = Field(gt=0)
    g: float = Field(default=1.0, ge=0, description="Coupling, c1 = g^2 / 4pi")

    family: str = Field(default="projected-gaussian")
    width: float = Field(default=3.0, gt=0)
    k0: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    center: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    theta: Sign = Sign.PLUS
    seed: int = 0

    snapshot_interval: float = Field(default=1.0, gt=0)
    snapshot_times: Optional[List[float]] = None
    k_sobolev: int = Field(default=8, ge=0)
    weight_power: float = Field(default=10.0, ge=0)

    kernel_variant: KernelVariant = KernelVariant.MINUS
    cutoff_exponent: float = Field(default=0.01, gt=0)
    profile_timing: ProfileTiming = ProfileTiming.EVOLVING
    phase_convention: PhaseConvention = PhaseConvention.DYNAMICAL
    support_threshold: float = Field(default=1e-3, gt=0, lt=1)

    zero_mode: ZeroModeConvention = ZeroModeConvention.DROP
    mean_field_lambda: float = 0.0
    kernel_kind: KernelKind = KernelKind.PERIODIC
    dealias: bool = False

    write_checkpoints: bool = True
    keep_snapshots: bool = False

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        # Only explicit arguments and the TOML document feed a run.
        return (init_settings, TomlConfigSettingsSource(settings_cls))

    @field_validator("n_per_axis")
    @classmethod
    def validate_grid_size(cls, v: int) -> int:
        if v % 2 or v < 8:
            raise ValueError(f"n must be even and at least 8, got {v}")
        return v

    @model_validator(mode="after")
    def validate_horizon(self) -> "RunConfig":
        horizon = self.box_length / 2
        if self.t_final > horizon:
            raise ValueError(
                f"t_final={self.t_final} exceeds the wrap-around horizon "
                f"L/2={horizon}"
            )
        if self.snapshot_times is not None:
            bad = [t for t in self.snapshot_times if t < 0 or t > self.t_final]
            if bad:
                raise ValueError(f"snapshot_times outside [0, t_final]: {bad}")
        return self

    @property
    def c1(self) -> float:
        return self.g**2 / (4 * math.pi)

    @property
    def horizon(self) -> float:
        return self.box_length / 2


def create_run_config(toml_file: Path) -> Type[RunConfig]:
    class FileRunConfig(RunConfig):
        model_config = SettingsConfigDict(
            extra="forbid",
            populate_by_name=True,
            case_sensitive=True,
            toml_file=toml_file,
        )

    return FileRunConfig


def load_config(path: Path) -> RunConfig:
    """Read a flat TOML run description, validate it and echo it to the log."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Config file not found: {path}")
    config = create_run_config(path)()
    logger.info(f"Loaded run configuration from {path}:\n{config_to_toml(config)}")
    return config


class SuiteOutcome(BaseModel):
    command: str
    passed: bool
    checks: Dict[str, bool]
    report: Dict[str, Any]


class AcceptanceSuite(ABC, BaseSettings):
    """Abstract base class for all command-line acceptance suites."""

    model_config = SettingsConfigDict(cli_kebab_case=True, extra="ignore")

    command: ClassVar[str]
    report_name: ClassVar[str]

    out: Optional[Path] = Field(
        default=None, description="Directory receiving the report"
    )

    _checks: Dict[str, bool] = PrivateAttr(default_factory=dict)
    _exit_code: int = PrivateAttr(default=0)

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        # Flags come from the command line only; the environment sets threads.
        return (init_settings,)

    @classmethod
    def can_handle(cls, command: str) -> bool:
        """Check if this suite implements the given subcommand."""
        return command == cls.command

    @abstractmethod
    def run_checks(self) -> BaseModel:
        """
        Compute the suite report and record every acceptance check on it.
        Must be implemented by subclasses.
        """
        raise NotImplementedError

    def output_dir(self) -> Path:
        return self.out if self.out is not None else Path(".")

    def record_check(self, name: str, passed: bool) -> bool:
        passed = bool(passed)
        self._checks[name] = passed
        if passed:
            logger.info(f"Check {name}: passed")
        else:
            logger.warning(f"Check {name}: FAILED")
        return passed

    @property
    def checks(self) -> Dict[str, bool]:
        return dict(self._checks)

    @property
    def exit_code(self) -> int:
        return self._exit_code

    def process_workflow(self) -> int:
        """Run the suite, write its report and map the outcome to an exit status."""
        try:
            report = self.run_checks()
        except RuntimeError as e:
            logger.error(f"{self.command} failed: {e}", exc_info=True)
            return 1
        except (ValueError, OSError) as e:
            logger.error(f"{self.command} aborted: {e}", exc_info=True)
            return 2

        passed = all(self._checks.values())
        outcome = SuiteOutcome(
            command=self.command,
            passed=passed,
            checks=self._checks,
            report=report.model_dump(mode="json"),
        )
        path = self.output_dir() / self.report_name
        write_json(outcome, path)
        logger.info(f"Wrote {self.command} report to {path}")

        if not passed:
            failed = [name for name, ok in self._checks.items() if not ok]
            logger.warning(f"{self.command}: failed checks {failed}")
            return 1
        logger.info(f"{self.command}: all {len(self._checks)} checks passed")
        return 0

    def cli_cmd(self) -> None:
        self._exit_code = self.process_workflow()
