"""File repository for experiment results: per-realization CSV, summaries and manifests."""
from __future__ import annotations

import logging
import re
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

import pandas as pd

from .errors import PreconditionError
from .models import ChannelState, GameConfig, Trajectory
from .utils import config_hash, dumps_json, ensure_directory, now_utc

logger = logging.getLogger(__name__)

RESULTS_DIR = Path("results")
NA_SENTINEL = "undefined"
TRAJECTORY_COLUMNS = ["step", "time", "user", "channel", "power"]
CHANNEL_COLUMNS = ["step", "user", "channel", "re_h", "im_h", "gain"]

_LINK_METRIC = re.compile(r"^(?P<name>\w+)\[(?P<k>\d+),(?P<alpha>\d+)\]$")


class ResultRepository:
    """Persistence layer writing one experiment run into a directory."""

    def __init__(self, root: Path | str = RESULTS_DIR) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _write_csv(self, relative: str, frame: pd.DataFrame) -> Path:
        destination = self.root / relative
        ensure_directory(destination)
        frame.to_csv(destination, index=False, na_rep=NA_SENTINEL, lineterminator="\n")
        return destination

    def _write_json(self, relative: str, data: Mapping[str, Any]) -> Path:
        destination = self.root / relative
        ensure_directory(destination)
        destination.write_text(dumps_json(data, indent=2) + "\n", encoding="utf-8")
        return destination

    def write_realization(self, index: int, frame: pd.DataFrame, name: str = "") -> Path:
        filename = f"{name}_r{index:04d}.csv" if name else f"r{index:04d}.csv"
        return self._write_csv(f"realizations/{filename}", frame)

    def write_table(self, name: str, frame: pd.DataFrame) -> Path:
        return self._write_csv(f"{name}.csv", frame)

    def write_summary(self, summary: Mapping[str, Any]) -> Path:
        return self._write_json("summary.json", summary)

    def write_manifest(
        self, source: Mapping[str, Any], seed: int, n_realizations: int, cfg: GameConfig, experiment: str
    ) -> Path:
        manifest = {
            "experiment": experiment,
            "config_hash": config_hash(source),
            "seed": int(seed),
            "n_realizations": int(n_realizations),
            "defaults": {
                "bandwidth": list(cfg.bandwidth),
                "noise_power": list(cfg.noise_power),
                "max_power": list(cfg.max_power),
            },
            "created_at": now_utc(),
        }
        path = self._write_json("manifest.json", manifest)
        logger.info("Wrote manifest %s", path)
        return path

    def files(self) -> List[Path]:
        return sorted(path for path in self.root.rglob("*") if path.is_file())


def trajectory_frame(trajectory: Trajectory, cfg: GameConfig, extra: Optional[Dict[str, Any]] = None) -> pd.DataFrame:
    """One row per recorded step and link, followed by the metric columns.

    Metrics named ``name[k,alpha]`` become a single ``name`` column read at the
    row's link; scalar metrics repeat on every link of their step.
    """

    scalar = {name: series for name, series in trajectory.metrics.items() if not _LINK_METRIC.match(name)}
    per_link: Dict[str, Dict[tuple, Sequence[float]]] = {}
    for name, series in trajectory.metrics.items():
        match = _LINK_METRIC.match(name)
        if match:
            key = (int(match["k"]), int(match["alpha"]))
            per_link.setdefault(match["name"], {})[key] = series

    rows = []
    for step, (time, profile) in enumerate(zip(trajectory.times, trajectory.profiles)):
        for k, alpha in cfg.links():
            row: Dict[str, Any] = dict(extra or {})
            row.update(step=step, time=float(time), user=k, channel=alpha, power=float(profile.allocation[k, alpha]))
            for name in sorted(scalar):
                row[name] = float(scalar[name][step])
            for name in sorted(per_link):
                row[name] = float(per_link[name][(k, alpha)][step])
            rows.append(row)
    columns = list(extra or {}) + TRAJECTORY_COLUMNS + sorted(scalar) + sorted(per_link)
    return pd.DataFrame(rows, columns=columns)


def channel_frame(
    states: Sequence[ChannelState], cfg: GameConfig, extra: Optional[Dict[str, Any]] = None
) -> pd.DataFrame:
    """Channel track with columns ``step, user, channel, re_h, im_h, gain`` after the ``extra`` ones."""

    rows = []
    for step, state in enumerate(states):
        if state.coefficients is None:
            raise PreconditionError("channel export needs complex coefficients")
        for k, alpha in cfg.links():
            h = state.coefficients[k, alpha]
            row: Dict[str, Any] = dict(extra or {})
            row.update(
                step=step,
                user=k,
                channel=alpha,
                re_h=float(h.real),
                im_h=float(h.imag),
                gain=float(state.gains[k, alpha]),
            )
            rows.append(row)
    return pd.DataFrame(rows, columns=list(extra or {}) + CHANNEL_COLUMNS)
