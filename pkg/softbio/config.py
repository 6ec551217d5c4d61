import os
from pathlib import Path
from typing import List

from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import ConfigError


class Settings(BaseSettings):
    """Run defaults loaded from environment / .env / optional config file."""

    config_file: str | None = None  # optional path to YAML/JSON

    seed: int = 0
    out_dir: str = "out"
    report_format: str = "both"  # csv | json | both
    log_level: str = "INFO"

    # Comma-separated year cut points between the five age categories
    age_cuts: str = "3,13,40,61"
    age_span_years: float = 80.0
    age_normalization: str = "normalized"
    score_map: str = "reciprocal-shifted"
    glasses_variant: str = "full"
    missing_policy: str = "exclude-trait"

    norm: str = "minmax"
    # "face,soft"
    weights: str = "0.5,0.5"
    soft_missing_fallback: str = "face-only"
    join_policy: str = "drop"

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="SOFTBIO_",
        extra="ignore",
        )

    def age_cut_list(self) -> List[float]:
        return parse_float_list(self.age_cuts)

    def weight_pair(self) -> tuple[float, float]:
        values = parse_float_list(self.weights)
        if len(values) != 2:
            raise ConfigError(f"weights needs two values, got {self.weights!r}")
        return values[0], values[1]


def parse_float_list(value: str) -> List[float]:
    try:
        return [float(v.strip()) for v in value.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {value!r}") from None


def build_settings() -> Settings:
    # Load optional config file for non-sensitive defaults; env wins over file
    from .config_loader import load_config_file

    config_path = os.environ.get("SOFTBIO_CONFIG_FILE")
    if not config_path and Path("softbio.yml").exists():
        config_path = "softbio.yml"
    file_data = load_config_file(config_path)
    env_keys = {k.lower().removeprefix("softbio_") for k in os.environ if k.upper().startswith("SOFTBIO_")}
    file_data = {k: v for k, v in file_data.items() if k not in env_keys}
    return Settings(config_file=config_path, **file_data)
