"""Application configuration helpers."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional

CONFIG_PATH = Path(os.environ.get("PMAC_SETTINGS", "config/settings.json"))
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


@dataclass(frozen=True)
class Settings:
    """Runtime configuration loaded from a JSON file or environment variables."""

    output_dir: Path = Path("results")
    log_level: str = "INFO"
    workers: int = 1
    solver_tol: float = 1e-10
    max_iterations: int = 20000

    @classmethod
    def load(cls, path: Optional[Path] = None) -> "Settings":
        """Load settings from ``path``, the default config file or ``PMAC_*`` variables.

        Raises
        ------
        ValueError
            If a value cannot be converted or lies outside its range; the
            message names the offending key.
        """

        config_path = path or CONFIG_PATH
        if config_path.exists():
            data = json.loads(config_path.read_text())
        else:
            data = cls._load_from_env()
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Settings":
        unknown = set(data) - set(_CONVERTERS)
        if unknown:
            raise ValueError(f"Unknown configuration keys: {', '.join(sorted(unknown))}")
        values: Dict[str, Any] = {}
        for key, convert in _CONVERTERS.items():
            if key not in data:
                continue
            try:
                values[key] = convert(data[key])
            except (TypeError, ValueError) as exc:
                raise ValueError(f"Invalid value for {key}: {data[key]!r}") from exc
        settings = cls(**values)
        settings.validate()
        return settings

    def validate(self) -> None:
        if self.log_level not in LOG_LEVELS:
            raise ValueError(f"log_level must be one of {', '.join(LOG_LEVELS)}, got {self.log_level!r}")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if not self.solver_tol > 0:
            raise ValueError("solver_tol must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")

    @property
    def numeric_log_level(self) -> int:
        return getattr(logging, self.log_level)

    @staticmethod
    def _load_from_env() -> Dict[str, Any]:
        env_mapping = {
            "output_dir": os.environ.get("PMAC_OUTPUT_DIR"),
            "log_level": os.environ.get("PMAC_LOG_LEVEL"),
            "workers": os.environ.get("PMAC_WORKERS"),
            "solver_tol": os.environ.get("PMAC_SOLVER_TOL"),
            "max_iterations": os.environ.get("PMAC_MAX_ITERATIONS"),
        }
        return {k: v for k, v in env_mapping.items() if v}


_CONVERTERS = {
    "output_dir": Path,
    "log_level": lambda value: str(value).upper(),
    "workers": int,
    "solver_tol": float,
    "max_iterations": int,
}
