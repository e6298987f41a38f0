"""Experiment settings loaded from flat key-value configuration files."""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from nft_capacity.core.models import PhysicalParams
from nft_capacity.core.units import dbm_to_watts
from nft_capacity.error_handling import ConfigError


logger = logging.getLogger(__name__)

VALID_VARIANTS = ["full", "nogh", "noprop"]
VALID_INTEGRATORS = ["strang", "yoshida4"]

# Keys that do not change the numbers written to disk.
_HASH_EXCLUDED = {"log_level", "log_file", "workers", "output_dir"}


def _split_list(value: str) -> List[str]:
    return [item.strip() for item in value.replace(";", ",").split(",") if item.strip()]


def _expand_range(value: str) -> List[float]:
    """Expand ``start:stop:step`` (stop inclusive) into a float grid."""
    parts = [float(p) for p in value.split(":")]
    if len(parts) != 3 or parts[2] <= 0:
        raise ValueError(f"Invalid range: {value}. Expected start:stop:step")
    start, stop, step = parts
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 12) for i in range(max(count, 0))]


def load_config_file(path: Union[str, Path]) -> Dict[str, str]:
    """Parse a flat ``key = value`` configuration file.

    Blank lines and ``#`` comments are skipped; values stay strings and are
    coerced by the Settings model.

    Raises:
        ConfigError: if the file cannot be read or a line has no ``=``
    """
    config_path = Path(path)
    try:
        text = config_path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read config file {config_path}: {e}") from e

    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(
                f"{config_path}:{lineno}: expected 'key = value', got {raw!r}",
                line=lineno,
            )
        key, value = line.split("=", 1)
        key = key.strip().lower().replace("-", "_")
        if not key:
            raise ConfigError(f"{config_path}:{lineno}: empty key", line=lineno)
        values[key] = value.strip()

    logger.debug(f"Loaded {len(values)} keys from {config_path}")
    return values


class Settings(BaseSettings):
    """nft-capacity experiment configuration"""

    model_config = SettingsConfigDict(
        env_file=None,
        env_prefix="",
        case_sensitive=False,
        validate_default=True,
        extra="ignore",
    )

    beta2_ps2_per_km: float = Field(
        default=21.67, gt=0, description="Group-velocity dispersion (ps^2/km)"
    )
    gamma_per_W_km: float = Field(
        default=1.27, gt=0, description="Kerr coefficient (1/(W km))"
    )
    bandwidth_GHz: float = Field(
        default=100.0, gt=0, description="Signal and noise bandwidth (GHz)"
    )
    span_km: float = Field(default=100.0, gt=0, description="Amplifier spacing (km)")
    num_spans: int = Field(default=20, ge=1, description="Number of amplifiers K")
    n_sp: float = Field(default=1.0, gt=0, description="Spontaneous emission factor")
    photon_energy_J: float = Field(
        default=13.2e-20, gt=0, description="Photon energy (J)"
    )
    alpha_loss_dB_per_km: float = Field(
        default=0.2, gt=0, description="Fiber attenuation (dB/km)"
    )
    power_dBm: float = Field(default=0.0, description="Launch power for one-shot runs")
    duration_symbols: int = Field(
        default=64, ge=8, description="Complex degrees of freedom M = BT"
    )
    bts_threshold: float = Field(
        default=10.0, gt=0, description="Minimum Bt_s for a trusted point"
    )

    power_grid_dBm: List[float] = Field(
        default_factory=lambda: [float(p) for p in range(-10, 12)],
        description="Launch powers of the sweep (dBm), comma list or start:stop:step",
    )
    distances_km: List[float] = Field(
        default_factory=lambda: [500.0, 1000.0, 2000.0],
        description="Total link lengths for fig2, one CSV each",
    )
    seeds: List[int] = Field(default_factory=lambda: [1], description="Input seeds")
    workers: int = Field(default=1, ge=1, le=256, description="Worker processes")
    dx_divisions: int = Field(
        default=64, ge=1, description="Initial integration steps per span"
    )
    max_halvings: int = Field(
        default=4, ge=0, le=12, description="Step halvings before giving up"
    )
    norm_tolerance: float = Field(
        default=1e-6, gt=0, description="Allowed relative drift of the lattice norm"
    )
    norm_target: float = Field(
        default=1e-8, gt=0, description="Lattice norm drift the step control aims for"
    )
    spectral_tolerance: float = Field(
        default=1e-4, gt=0, description="Allowed eigenvalue drift per span over max eta"
    )
    integrator: Literal["strang", "yoshida4"] = Field(
        default="strang", description="Splitting scheme (strang, yoshida4)"
    )
    variants: List[Literal["full", "nogh", "noprop"]] = Field(
        default_factory=lambda: list(VALID_VARIANTS),
        description="Covariance variants to evaluate",
    )
    average_seeds: bool = Field(
        default=False, description="Average determinants over all seeds per point"
    )
    output_dir: Path = Field(default=Path("results"), description="Output directory")
    emit_snapshots: bool = Field(
        default=False, description="Write per-span signal snapshots"
    )

    fig1_samples: int = Field(default=128, ge=8, description="M for fig1 inputs")
    fig1_tau: float = Field(default=0.25, gt=0, description="Sample step for fig1")
    fig1_realizations: int = Field(
        default=20, ge=1, description="Gaussian inputs generated per seed for fig1"
    )
    eta_bins: List[float] = Field(
        default_factory=lambda: [0.25 + 0.25 * i for i in range(12)],
        description="Bin edges in eta for fig1",
    )
    min_modes_per_bin: int = Field(default=5, ge=1, description="Smallest fig1 bin")

    log_level: str = Field(default="INFO", description="Logging level")
    log_file: Optional[Path] = Field(default=None, description="Log file path")

    @field_validator("power_grid_dBm", "distances_km", "eta_bins", mode="before")
    @classmethod
    def parse_float_list(cls, v: Any) -> Any:
        """Accept comma lists and start:stop:step ranges."""
        if isinstance(v, (int, float)):
            return [float(v)]
        if isinstance(v, str):
            if ":" in v:
                return _expand_range(v)
            return [float(item) for item in _split_list(v)]
        return v

    @field_validator("seeds", mode="before")
    @classmethod
    def parse_seeds(cls, v: Any) -> Any:
        if isinstance(v, int):
            return [v]
        if isinstance(v, str):
            return [int(item) for item in _split_list(v)]
        return v

    @field_validator("variants", mode="before")
    @classmethod
    def validate_variants(cls, v: Any) -> Any:
        """Validate and normalize variant names."""
        items = _split_list(v) if isinstance(v, str) else v
        if isinstance(items, (list, tuple)):
            normalized = []
            for item in items:
                name = str(item).lower()
                if name not in VALID_VARIANTS:
                    raise ValueError(
                        f"Invalid variant: {item}. "
                        f"Must be one of: {', '.join(VALID_VARIANTS)}"
                    )
                if name not in normalized:
                    normalized.append(name)
            return normalized
        return v

    @field_validator("integrator", mode="before")
    @classmethod
    def validate_integrator(cls, v: Any) -> str:
        """Validate and normalize integrator value."""
        if isinstance(v, str):
            v_lower = v.lower()
            if v_lower in VALID_INTEGRATORS:
                return v_lower
            raise ValueError(
                f"Invalid integrator: {v}. "
                f"Must be one of: {', '.join(VALID_INTEGRATORS)}"
            )
        return v

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        """Validate log level."""
        valid_levels = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
        v_upper = v.upper()
        if v_upper not in valid_levels:
            raise ValueError(f"Invalid log level: {v}")
        return v_upper

    @model_validator(mode="after")
    def check_grids(self) -> "Settings":
        if not self.power_grid_dBm:
            raise ValueError("power_grid_dBm must not be empty")
        if any(b <= a for a, b in zip(self.power_grid_dBm, self.power_grid_dBm[1:])):
            raise ValueError("power_grid_dBm must be strictly increasing")
        if not self.variants:
            raise ValueError("at least one variant must be enabled")
        if not self.seeds:
            raise ValueError("seeds must not be empty")
        if any(d <= 0 for d in self.distances_km):
            raise ValueError("distances_km must be positive")
        if self.norm_target > self.norm_tolerance:
            raise ValueError("norm_target must not exceed norm_tolerance")
        if len(self.eta_bins) < 2 or any(
            b <= a for a, b in zip(self.eta_bins, self.eta_bins[1:])
        ):
            raise ValueError("eta_bins needs at least two increasing edges")
        return self

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Any,
        init_settings: Any,
        env_settings: Any,
        dotenv_settings: Any,
        file_secret_settings: Any,
    ) -> Tuple[Any, ...]:
        """Only explicit keyword arguments feed the model."""
        _ = (
            settings_cls,
            env_settings,
            dotenv_settings,
            file_secret_settings,
        )
        return (init_settings,)

    @classmethod
    def from_file(
        cls, path: Optional[Union[str, Path]] = None, **overrides: Any
    ) -> "Settings":
        """Load settings from a config file with command-line overrides.

        Raises:
            ConfigError: on unreadable files or invalid values
        """
        values: Dict[str, Any] = {}
        if path is not None:
            values.update(load_config_file(path))
            unknown = sorted(set(values) - set(cls.model_fields))
            if unknown:
                logger.debug(f"Ignoring unknown config keys: {', '.join(unknown)}")
        values.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls(**values)
        except ValidationError as e:
            raise ConfigError(f"Invalid configuration: {e}", source=str(path)) from e

    def physical_params(
        self, power_dBm: Optional[float] = None, num_spans: Optional[int] = None
    ) -> PhysicalParams:
        """Build the PhysicalParams for one launch power and link length."""
        return PhysicalParams(
            beta2=self.beta2_ps2_per_km,
            gamma=self.gamma_per_W_km,
            bandwidth_B=self.bandwidth_GHz * 1e9,
            span_L=self.span_km,
            num_spans_K=self.num_spans if num_spans is None else num_spans,
            n_sp=self.n_sp,
            E_ph=self.photon_energy_J,
            alpha_loss=self.alpha_loss_dB_per_km,
            power_P=dbm_to_watts(self.power_dBm if power_dBm is None else power_dBm),
        )

    def spans_for_distance(self, distance_km: float) -> int:
        """Number of amplifiers covering a total link length."""
        return max(1, int(round(distance_km / self.span_km)))

    def duration_seconds(self) -> float:
        return self.duration_symbols / (self.bandwidth_GHz * 1e9)

    def config_hash(self) -> str:
        """Stable short hash over every setting that changes the numbers."""
        payload = self.model_dump(mode="json", exclude=_HASH_EXCLUDED)
        blob = json.dumps(payload, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]
