"""Shared utility helpers for pmac_learning."""
from __future__ import annotations

import hashlib
import json
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterator


def batch_sizes(total: int, size: int) -> Iterator[int]:
    """Yield batch lengths that add up to ``total``, each at most ``size``."""

    if size <= 0:
        raise ValueError("size must be positive")
    remaining = total
    while remaining > 0:
        current = min(size, remaining)
        yield current
        remaining -= current


def ensure_directory(path: Path) -> None:
    """Create parent directories for ``path`` if they do not exist."""

    path.parent.mkdir(parents=True, exist_ok=True)


def now_utc() -> str:
    """Return the current UTC time as an ISO-8601 string."""

    return datetime.now(timezone.utc).replace(microsecond=0).isoformat()


def json_ready(value: Any) -> Any:
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values."""

    if isinstance(value, dict):
        return {str(k): json_ready(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_ready(v) for v in value]
    if hasattr(value, "tolist"):
        return json_ready(value.tolist())
    if isinstance(value, float):
        if math.isnan(value):
            return None
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
    return value


def dumps_json(data: object, indent: int | None = None) -> str:
    return json.dumps(json_ready(data), ensure_ascii=False, sort_keys=True, indent=indent)


def config_hash(data: object) -> str:
    """SHA-256 of the canonical JSON encoding of ``data``."""

    canonical = json.dumps(json_ready(data), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def kmh_to_ms(speed_kmh: float) -> float:
    return speed_kmh / 3.6
