"""Parsers that convert scenario JSON files into validated experiment descriptions."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import InvalidGameError, ScenarioError
from .models import FadingKind, FadingSpec, GameConfig, StepSchedule
from .utils import kmh_to_ms

DEFAULT_VELOCITIES_KMH = (5.0, 15.0)


class ExperimentKind(str, Enum):
    PHASE_PORTRAIT = "PhasePortrait"
    SRE_CDF = "SreCdf"
    ERGODIC_SRE_VS_SNR = "ErgodicSreVsSnr"
    EQL_OVER_TIME = "EqlOverTime"
    JAKES_TRACKING = "JakesTracking"
    CERTIFICATE_REPORT = "CertificateReport"


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GameModel(_Model):
    num_users: int = Field(ge=1)
    num_channels: int = Field(ge=1)
    accessible: Optional[List[List[int]]] = None
    max_power: Union[float, List[float]] = 1.0
    bandwidth: Union[float, List[float]] = 1.0
    noise_power: Union[float, List[float]] = 1.0


class FadingModel(_Model):
    kind: Literal["Static", "BlockIID", "GaussianFast", "Jakes"] = "Static"
    variance: Union[float, List[List[float]]] = 1.0
    carrier_frequency: float = Field(default=2e9, gt=0)
    sample_period: float = Field(default=1e-3, gt=0)
    n_oscillators: int = Field(default=64, ge=1)


class DynamicsModel(_Model):
    schedule: Literal["Constant", "Harmonic"] = "Constant"
    delta: float = Field(default=1.0, gt=0)
    n_steps: Optional[int] = Field(default=None, ge=0)
    t_end: Optional[float] = Field(default=None, ge=0)
    dt: Optional[float] = Field(default=None, gt=0)
    record_every: int = Field(default=1, ge=1)


class ScenarioModel(_Model):
    name: str
    experiment: ExperimentKind
    game: GameModel
    fading: FadingModel = Field(default_factory=FadingModel)
    dynamics: DynamicsModel = Field(default_factory=DynamicsModel)
    n_realizations: int = Field(default=1, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    snr_sweep: Optional[List[float]] = None
    output_dir: Optional[str] = None
    user_counts: Optional[List[int]] = None
    velocities_kmh: Optional[List[float]] = None
    paper_realizations: Optional[int] = Field(default=None, ge=1)
    tracked_link: Tuple[int, int] = (0, 0)
    n_starts: int = Field(default=4, ge=1)

    @model_validator(mode="after")
    def _experiment_fields(self) -> "ScenarioModel":
        kind = self.experiment
        if kind is ExperimentKind.ERGODIC_SRE_VS_SNR:
            if not self.snr_sweep:
                raise ValueError("snr_sweep is required by ErgodicSreVsSnr")
            if any(rho <= 0 for rho in self.snr_sweep):
                raise ValueError("snr_sweep values must be positive")
        if kind in (ExperimentKind.PHASE_PORTRAIT, ExperimentKind.CERTIFICATE_REPORT) and self.dynamics.t_end is None:
            raise ValueError(f"dynamics.t_end is required by {kind.value}")
        if kind in (ExperimentKind.EQL_OVER_TIME, ExperimentKind.JAKES_TRACKING) and self.dynamics.n_steps is None:
            raise ValueError(f"dynamics.n_steps is required by {kind.value}")
        if kind is ExperimentKind.JAKES_TRACKING and self.fading.kind != "Jakes":
            raise ValueError("JakesTracking needs fading.kind = Jakes")
        if kind is ExperimentKind.EQL_OVER_TIME and self.fading.kind not in ("Static", "BlockIID"):
            raise ValueError("EqlOverTime needs Static or BlockIID fading")
        if kind in (ExperimentKind.PHASE_PORTRAIT, ExperimentKind.CERTIFICATE_REPORT, ExperimentKind.SRE_CDF):
            if self.fading.kind != "Static":
                raise ValueError(f"{kind.value} needs Static fading")
        if self.user_counts is not None:
            if any(count < 1 for count in self.user_counts):
                raise ValueError("user_counts values must be positive")
            if not isinstance(self.fading.variance, float) or self.game.accessible is not None:
                raise ValueError("user_counts needs a scalar variance and full channel access")
        if self.velocities_kmh is not None and any(v <= 0 for v in self.velocities_kmh):
            raise ValueError("velocities_kmh values must be positive")
        return self


@dataclass(frozen=True)
class DynamicsSettings:
    schedule: StepSchedule
    n_steps: Optional[int] = None
    t_end: Optional[float] = None
    dt: Optional[float] = None
    record_every: int = 1


@dataclass(frozen=True)
class Scenario:
    """A validated experiment description."""

    name: str
    experiment: ExperimentKind
    game: GameConfig
    fading: FadingSpec
    dynamics: DynamicsSettings
    n_realizations: int
    seed: int
    snr_sweep: Optional[Tuple[float, ...]] = None
    output_dir: Optional[Path] = None
    user_counts: Tuple[int, ...] = ()
    velocities_kmh: Tuple[float, ...] = DEFAULT_VELOCITIES_KMH
    paper_realizations: Optional[int] = None
    tracked_link: Tuple[int, int] = (0, 0)
    n_starts: int = 4
    source: Dict[str, Any] = field(default_factory=dict, compare=False)

    def with_overrides(
        self,
        seed: Optional[int] = None,
        n_realizations: Optional[int] = None,
        output_dir: Optional[Path] = None,
        paper_scale: bool = False,
    ) -> "Scenario":
        realizations = self.n_realizations
        if paper_scale and self.paper_realizations:
            realizations = self.paper_realizations
        if n_realizations is not None:
            if n_realizations < 1:
                raise ScenarioError("n_realizations must be at least 1", path="<command line>")
            realizations = n_realizations
        return replace(
            self,
            seed=self.seed if seed is None else int(seed),
            n_realizations=realizations,
            output_dir=self.output_dir if output_dir is None else Path(output_dir),
        )

    def game_for(self, num_users: int) -> GameConfig:
        """The scenario game resized to ``num_users`` users with full access."""

        data = self.game.to_dict()
        data.update(num_users=num_users, accessible=None, max_power=self.game.max_power[0])
        return GameConfig.from_dict(data)

    def fading_for(
        self, cfg: GameConfig, seed: int, velocity_kmh: Optional[float] = None
    ) -> FadingSpec:
        """Fading statistics for ``cfg`` with the given seed (and Jakes speed)."""

        variance = self.fading.variance
        if variance.shape != cfg.shape:
            variance = np.where(cfg.access_mask, float(variance.max()), 0.0)
        velocity = None
        if self.fading.kind is FadingKind.JAKES:
            speed = self.velocities_kmh[0] if velocity_kmh is None else velocity_kmh
            velocity = np.full(cfg.num_users, kmh_to_ms(speed))
        return replace(self.fading, variance=variance, velocity=velocity, seed=int(seed) % 2**64)


def parse_scenario(path: Union[Path, str]) -> Scenario:
    """Read and validate a scenario file.

    Raises
    ------
    ScenarioError
        Anchored at ``path:line:column`` for JSON syntax errors and at the first
        line mentioning the offending key for validation errors.
    """

    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc.strerror}", path=str(path)) from exc
    return parse_scenario_text(text, str(path))


def parse_scenario_text(text: str, path: str = "<scenario>") -> Scenario:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(exc.msg, path=path, line=exc.lineno, column=exc.colno) from exc
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a JSON object", path=path, line=1, column=1)
    try:
        model = ScenarioModel.model_validate(data)
    except ValidationError as exc:
        error = exc.errors()[0]
        location = [part for part in error["loc"] if isinstance(part, str)] or ["experiment"]
        line, column = _locate(text, location)
        where = ".".join(str(part) for part in error["loc"]) or "scenario"
        raise ScenarioError(f"{where}: {error['msg']}", path=path, line=line, column=column) from exc
    try:
        return _build(model, data)
    except InvalidGameError as exc:
        line, column = _locate(text, ["game"])
        raise ScenarioError(str(exc), path=path, line=line, column=column) from exc


def _locate(text: str, keys: Sequence[str]) -> Tuple[int, int]:
    """1-based position of the first line quoting the innermost known key."""

    for key in reversed(keys):
        pattern = re.compile(rf'"{re.escape(key)}"\s*:')
        for number, line in enumerate(text.splitlines(), start=1):
            match = pattern.search(line)
            if match:
                return number, match.start() + 1
    return 1, 1


def _build(model: ScenarioModel, data: Dict[str, Any]) -> Scenario:
    game = GameConfig.from_dict(model.game.model_dump())
    if model.snr_sweep and len(set(game.max_power)) > 1:
        raise InvalidGameError("snr_sweep needs a common max_power")
    velocities = tuple(model.velocities_kmh) if model.velocities_kmh else DEFAULT_VELOCITIES_KMH
    fading_data = model.fading
    variance = fading_data.variance
    if isinstance(variance, float):
        variance_array = np.where(game.access_mask, variance, 0.0)
    else:
        variance_array = np.asarray(variance, dtype=float)
        if variance_array.shape != game.shape:
            raise InvalidGameError(f"fading.variance must have shape {game.shape}")
    velocity = None
    if fading_data.kind == FadingKind.JAKES.value:
        velocity = np.full(game.num_users, kmh_to_ms(velocities[0]))
    fading = FadingSpec(
        kind=FadingKind(fading_data.kind),
        variance=variance_array,
        carrier_frequency=fading_data.carrier_frequency,
        velocity=velocity,
        sample_period=fading_data.sample_period,
        seed=model.seed,
        n_oscillators=fading_data.n_oscillators,
    )
    k, alpha = model.tracked_link
    if not (0 <= k < game.num_users and alpha in game.accessible[k]):
        raise InvalidGameError(f"tracked_link {list(model.tracked_link)} is not a link of the game")
    dynamics = DynamicsSettings(
        schedule=StepSchedule(model.dynamics.schedule, model.dynamics.delta),
        n_steps=model.dynamics.n_steps,
        t_end=model.dynamics.t_end,
        dt=model.dynamics.dt,
        record_every=model.dynamics.record_every,
    )
    return Scenario(
        name=model.name,
        experiment=model.experiment,
        game=game,
        fading=fading,
        dynamics=dynamics,
        n_realizations=model.n_realizations,
        seed=model.seed,
        snr_sweep=tuple(model.snr_sweep) if model.snr_sweep else None,
        output_dir=Path(model.output_dir) if model.output_dir else None,
        user_counts=tuple(model.user_counts or ()),
        velocities_kmh=velocities,
        paper_realizations=model.paper_realizations,
        tracked_link=(k, alpha),
        n_starts=model.n_starts,
        source=data,
    )
