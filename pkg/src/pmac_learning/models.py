"""Data models for games, channels, power profiles and learning results."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Any, Dict, Iterable, Mapping, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np

from .errors import InvalidGameError, PreconditionError

SIMPLEX_TOL = 1e-9
RENORMALIZE_TOL = 1e-6
SUPPORT_THRESHOLD = 1e-6
INTERIOR_FLOOR = 1e-12
N_OSCILLATORS = 64


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


def _broadcast(value: Union[float, Sequence[float]], size: int, name: str) -> Tuple[float, ...]:
    if np.isscalar(value):
        return tuple(float(value) for _ in range(size))
    values = tuple(float(v) for v in value)  # type: ignore[union-attr]
    if len(values) != size:
        raise InvalidGameError(f"{name} must have {size} entries, got {len(values)}")
    return values


@dataclass(frozen=True)
class GameConfig:
    """The game: users, accessible channel subsets, budgets, bandwidths, noise."""

    num_users: int
    num_channels: int
    accessible: Tuple[Tuple[int, ...], ...]
    max_power: Tuple[float, ...]
    bandwidth: Tuple[float, ...]
    noise_power: Tuple[float, ...]

    def __post_init__(self) -> None:
        if self.num_users < 1:
            raise InvalidGameError("num_users must be at least 1")
        if self.num_channels < 1:
            raise InvalidGameError("num_channels must be at least 1")
        if len(self.accessible) != self.num_users:
            raise InvalidGameError("accessible must list one channel subset per user")
        for k, subset in enumerate(self.accessible):
            if len(set(subset)) != len(subset):
                raise InvalidGameError(f"user {k} lists a channel twice")
            if len(subset) < 2:
                raise InvalidGameError(f"user {k} must access at least 2 channels")
            if any(alpha < 0 or alpha >= self.num_channels for alpha in subset):
                raise InvalidGameError(f"user {k} accesses a channel outside 0..{self.num_channels - 1}")
        if len(self.max_power) != self.num_users:
            raise InvalidGameError("max_power must have one entry per user")
        if len(self.bandwidth) != self.num_channels or len(self.noise_power) != self.num_channels:
            raise InvalidGameError("bandwidth and noise_power must have one entry per channel")
        for name in ("max_power", "bandwidth", "noise_power"):
            values = getattr(self, name)
            if not all(np.isfinite(v) and v > 0 for v in values):
                raise InvalidGameError(f"all {name} values must be finite and strictly positive")

    @classmethod
    def full_access(
        cls,
        num_users: int,
        num_channels: int,
        max_power: Union[float, Sequence[float]] = 1.0,
        bandwidth: Union[float, Sequence[float]] = 1.0,
        noise_power: Union[float, Sequence[float]] = 1.0,
    ) -> "GameConfig":
        return cls.from_dict(
            {
                "num_users": num_users,
                "num_channels": num_channels,
                "accessible": None,
                "max_power": max_power,
                "bandwidth": bandwidth,
                "noise_power": noise_power,
            }
        )

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "GameConfig":
        try:
            num_users = int(data["num_users"])
            num_channels = int(data["num_channels"])
        except KeyError as exc:
            raise InvalidGameError(f"Missing game key: {exc.args[0]}") from exc
        accessible = data.get("accessible")
        if accessible is None:
            subsets = tuple(tuple(range(num_channels)) for _ in range(num_users))
        else:
            subsets = tuple(tuple(sorted(int(a) for a in subset)) for subset in accessible)
        return cls(
            num_users=num_users,
            num_channels=num_channels,
            accessible=subsets,
            max_power=_broadcast(data.get("max_power", 1.0), num_users, "max_power"),
            bandwidth=_broadcast(data.get("bandwidth", 1.0), num_channels, "bandwidth"),
            noise_power=_broadcast(data.get("noise_power", 1.0), num_channels, "noise_power"),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "num_users": self.num_users,
            "num_channels": self.num_channels,
            "accessible": [list(subset) for subset in self.accessible],
            "max_power": list(self.max_power),
            "bandwidth": list(self.bandwidth),
            "noise_power": list(self.noise_power),
        }

    def with_noise(self, noise_power: Union[float, Sequence[float]]) -> "GameConfig":
        return replace(self, noise_power=_broadcast(noise_power, self.num_channels, "noise_power"))

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.num_users, self.num_channels)

    @cached_property
    def access_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for k, subset in enumerate(self.accessible):
            mask[k, list(subset)] = True
        mask.setflags(write=False)
        return mask

    @cached_property
    def powers(self) -> np.ndarray:
        return _frozen(np.asarray(self.max_power, dtype=float))

    @cached_property
    def bandwidths(self) -> np.ndarray:
        return _frozen(np.asarray(self.bandwidth, dtype=float))

    @cached_property
    def noise(self) -> np.ndarray:
        return _frozen(np.asarray(self.noise_power, dtype=float))

    @property
    def num_links(self) -> int:
        """Q = sum_k A_k."""

        return int(sum(len(subset) for subset in self.accessible))

    def links(self) -> Iterable[Tuple[int, int]]:
        for k, subset in enumerate(self.accessible):
            for alpha in subset:
                yield k, alpha


@dataclass(frozen=True, eq=False)
class ChannelState:
    """One realization of the link gains ``g = |h|^2``."""

    gains: np.ndarray
    coefficients: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        gains = np.asarray(self.gains, dtype=float)
        if gains.ndim != 2:
            raise InvalidGameError("gains must be a (users, channels) array")
        if not np.all(np.isfinite(gains)) or np.any(gains < 0):
            raise InvalidGameError("gains must be finite and nonnegative")
        object.__setattr__(self, "gains", _frozen(gains))
        if self.coefficients is not None:
            coefficients = np.asarray(self.coefficients, dtype=complex)
            if coefficients.shape != gains.shape:
                raise InvalidGameError("coefficients must match the gain array shape")
            if not np.array_equal(coefficients.real**2 + coefficients.imag**2, gains):
                raise InvalidGameError("gains must equal |h|^2 for every stored coefficient")
            object.__setattr__(self, "coefficients", _frozen(coefficients))

    @classmethod
    def from_gains(cls, gains: Union[np.ndarray, Sequence[Sequence[float]]], cfg: GameConfig) -> "ChannelState":
        array = np.asarray(gains, dtype=float)
        if array.shape != cfg.shape:
            raise InvalidGameError(f"gains must have shape {cfg.shape}, got {array.shape}")
        return cls(gains=np.where(cfg.access_mask, array, 0.0))

    @classmethod
    def from_coefficients(cls, coefficients: np.ndarray, cfg: GameConfig) -> "ChannelState":
        h = np.where(cfg.access_mask, np.asarray(coefficients, dtype=complex), 0.0)
        if h.shape != cfg.shape:
            raise InvalidGameError(f"coefficients must have shape {cfg.shape}, got {h.shape}")
        return cls(gains=h.real**2 + h.imag**2, coefficients=h)


@dataclass(frozen=True, eq=False)
class PowerProfile:
    """A point of the product of scaled simplices, stored as a (K, A) array."""

    allocation: np.ndarray

    @classmethod
    def from_array(cls, values: Union[np.ndarray, Sequence[Sequence[float]]], cfg: GameConfig) -> "PowerProfile":
        """Validate ``values`` against the per-user simplex constraints of ``cfg``.

        Sums off by less than ``RENORMALIZE_TOL * P_k`` are rescaled onto the
        simplex; larger violations raise :class:`InvalidGameError`.
        """

        array = np.asarray(values, dtype=float)
        if array.shape != cfg.shape:
            raise InvalidGameError(f"allocation must have shape {cfg.shape}, got {array.shape}")
        mask = cfg.access_mask
        if np.any(np.abs(array[~mask]) > 0):
            raise InvalidGameError("power allocated on a channel outside the user's accessible set")
        if not np.all(np.isfinite(array)):
            raise InvalidGameError("allocation must be finite")
        powers = cfg.powers
        floor = -RENORMALIZE_TOL * powers[:, None]
        if np.any(array < floor):
            raise InvalidGameError("allocation has negative entries")
        array = np.where(mask, np.clip(array, 0.0, None), 0.0)
        totals = array.sum(axis=1)
        drift = np.abs(totals - powers)
        if np.any(drift > RENORMALIZE_TOL * powers):
            k = int(np.argmax(drift / powers))
            raise InvalidGameError(f"user {k} allocates {totals[k]:.9g} W instead of P_k = {powers[k]:.9g} W")
        if np.any(drift > SIMPLEX_TOL * powers):
            array = array * (powers / totals)[:, None]
        return cls(allocation=_frozen(array))

    @classmethod
    def uniform(cls, cfg: GameConfig) -> "PowerProfile":
        mask = cfg.access_mask
        counts = mask.sum(axis=1)
        return cls.from_array(np.where(mask, (cfg.powers / counts)[:, None], 0.0), cfg)

    @classmethod
    def vertex(cls, cfg: GameConfig, channels: Sequence[int]) -> "PowerProfile":
        array = np.zeros(cfg.shape)
        for k, alpha in enumerate(channels):
            if alpha not in cfg.accessible[k]:
                raise InvalidGameError(f"user {k} cannot access channel {alpha}")
            array[k, alpha] = cfg.powers[k]
        return cls.from_array(array, cfg)

    @classmethod
    def random_interior(cls, cfg: GameConfig, rng: np.random.Generator) -> "PowerProfile":
        array = np.zeros(cfg.shape)
        for k, subset in enumerate(cfg.accessible):
            array[k, list(subset)] = rng.dirichlet(np.ones(len(subset))) * cfg.powers[k]
        return cls.from_array(array, cfg)

    def normalized(self, cfg: GameConfig) -> np.ndarray:
        return self.allocation / cfg.powers[:, None]

    def is_interior(self, cfg: GameConfig) -> bool:
        return bool(np.all(self.allocation[cfg.access_mask] > 0))

    def support(self, cfg: GameConfig, threshold: float = SUPPORT_THRESHOLD) -> Tuple[Tuple[int, ...], ...]:
        """Per-user channels carrying more than ``threshold * P_k``."""

        result = []
        for k, subset in enumerate(cfg.accessible):
            cutoff = threshold * cfg.powers[k]
            result.append(tuple(alpha for alpha in subset if self.allocation[k, alpha] > cutoff))
        return tuple(result)

    def l1_distance(self, other: "PowerProfile", cfg: GameConfig) -> float:
        """L1 distance with each user's block normalized by P_k."""

        return float(np.abs(self.normalized(cfg) - other.normalized(cfg)).sum())

    def to_dict(self, cfg: GameConfig) -> list:
        return [{str(alpha): float(self.allocation[k, alpha]) for alpha in subset} for k, subset in enumerate(cfg.accessible)]


class FadingKind(str, Enum):
    STATIC = "Static"
    BLOCK_IID = "BlockIID"
    GAUSSIAN_FAST = "GaussianFast"
    JAKES = "Jakes"


@dataclass(frozen=True, eq=False)
class FadingSpec:
    """Statistics of the link coefficients ``h ~ CN(0, variance)``."""

    kind: FadingKind
    variance: np.ndarray
    carrier_frequency: float = 2e9
    velocity: Optional[np.ndarray] = None
    sample_period: float = 1e-3
    seed: int = 0
    n_oscillators: int = N_OSCILLATORS

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", FadingKind(self.kind))
        variance = np.asarray(self.variance, dtype=float)
        if variance.ndim != 2 or not np.all(np.isfinite(variance)) or np.any(variance < 0):
            raise InvalidGameError("variance must be a finite nonnegative (users, channels) array")
        object.__setattr__(self, "variance", _frozen(variance))
        if self.kind in (FadingKind.BLOCK_IID, FadingKind.JAKES) and self.sample_period <= 0:
            raise InvalidGameError("sample_period must be positive")
        if self.kind is FadingKind.JAKES:
            if self.carrier_frequency <= 0:
                raise InvalidGameError("carrier_frequency must be positive")
            if self.velocity is None:
                raise InvalidGameError("Jakes fading needs per-user velocities")
            velocity = np.asarray(self.velocity, dtype=float)
            if velocity.shape != (variance.shape[0],) or np.any(velocity <= 0):
                raise InvalidGameError("velocity must hold one positive speed (m/s) per user")
            object.__setattr__(self, "velocity", _frozen(velocity))
            if self.n_oscillators < 1:
                raise InvalidGameError("n_oscillators must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidGameError("seed must be a 64-bit unsigned integer")

    @classmethod
    def uniform(
        cls,
        cfg: GameConfig,
        kind: Union[FadingKind, str],
        variance: float = 1.0,
        **kwargs: Any,
    ) -> "FadingSpec":
        velocity = kwargs.pop("velocity", None)
        if velocity is not None and np.isscalar(velocity):
            velocity = np.full(cfg.num_users, float(velocity))
        return cls(
            kind=FadingKind(kind),
            variance=np.where(cfg.access_mask, float(variance), 0.0),
            velocity=velocity,
            **kwargs,
        )

    def with_seed(self, seed: int) -> "FadingSpec":
        return replace(self, seed=int(seed) % 2**64)

    def with_kind(self, kind: Union[FadingKind, str]) -> "FadingSpec":
        return replace(self, kind=FadingKind(kind))

    def with_variance(self, variance: np.ndarray) -> "FadingSpec":
        return replace(self, variance=np.asarray(variance, dtype=float))


class ScheduleKind(str, Enum):
    CONSTANT = "Constant"
    HARMONIC = "Harmonic"


@dataclass(frozen=True)
class StepSchedule:
    """Learning-rate schedule: constant ``delta`` or ``delta / n``."""

    kind: ScheduleKind
    delta: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ScheduleKind(self.kind))
        if not (np.isfinite(self.delta) and self.delta > 0):
            raise InvalidGameError("step size must be finite and positive")

    @classmethod
    def constant(cls, delta: float) -> "StepSchedule":
        return cls(ScheduleKind.CONSTANT, delta)

    @classmethod
    def harmonic(cls, delta0: float = 1.0) -> "StepSchedule":
        return cls(ScheduleKind.HARMONIC, delta0)

    def step(self, n: int) -> float:
        """Step used for the ``n``-th update (n >= 1)."""

        if n < 1:
            raise PreconditionError("step index starts at 1")
        if self.kind is ScheduleKind.HARMONIC:
            return self.delta / n
        return self.delta


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-indexed power profiles with optional channels and metric series."""

    times: np.ndarray
    profiles: Tuple[PowerProfile, ...]
    channel_states: Optional[Tuple[ChannelState, ...]] = None
    metrics: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        n = len(self.profiles)
        object.__setattr__(self, "times", _frozen(np.asarray(self.times, dtype=float)))
        object.__setattr__(self, "profiles", tuple(self.profiles))
        if len(self.times) != n:
            raise InvalidGameError("times and profiles must have equal lengths")
        if self.channel_states is not None:
            object.__setattr__(self, "channel_states", tuple(self.channel_states))
            if len(self.channel_states) != n:
                raise InvalidGameError("channel_states must match the number of profiles")
        metrics = {name: _frozen(np.asarray(series, dtype=float)) for name, series in self.metrics.items()}
        for name, series in metrics.items():
            if len(series) != n:
                raise InvalidGameError(f"metric {name!r} must match the number of profiles")
        object.__setattr__(self, "metrics", metrics)

    def __len__(self) -> int:
        return len(self.profiles)

    @property
    def final(self) -> PowerProfile:
        return self.profiles[-1]

    def allocations(self) -> np.ndarray:
        """Stacked allocations with shape (steps, K, A)."""

        return np.stack([profile.allocation for profile in self.profiles])


@dataclass(frozen=True, eq=False)
class EquilibriumResult:
    profile: PowerProfile
    potential_value: float
    kkt_residual: float
    multipliers: np.ndarray
    support: Tuple[Tuple[int, ...], ...]
    iterations: int = 0
    ergodic: bool = False

    def __post_init__(self) -> None:
        if self.kkt_residual < 0:
            raise InvalidGameError("kkt_residual must be nonnegative")
        if any(len(channels) == 0 for channels in self.support):
            raise InvalidGameError("every user must have a nonempty support")
        object.__setattr__(self, "multipliers", _frozen(np.asarray(self.multipliers, dtype=float)))

    @property
    def is_vertex(self) -> bool:
        return all(len(channels) == 1 for channels in self.support)

    def to_dict(self, cfg: GameConfig) -> Dict[str, Any]:
        return {
            "profile": self.profile.to_dict(cfg),
            "potential_value": self.potential_value,
            "kkt_residual": self.kkt_residual,
            "multipliers": self.multipliers.tolist(),
            "support": [list(channels) for channels in self.support],
            "iterations": self.iterations,
            "ergodic": self.ergodic,
        }


@dataclass(frozen=True)
class UniquenessReport:
    unique_within_tol: bool
    spread: float
    n_starts: int


@dataclass(frozen=True)
class SupportMultigraph:
    """Channels as vertices, one star graph per user superimposed as a multiset."""

    vertices: Tuple[int, ...]
    edges: Tuple[Tuple[int, int], ...]

    def multiplicity(self, a: int, b: int) -> int:
        edge = (min(a, b), max(a, b))
        return sum(1 for e in self.edges if e == edge)

    def to_networkx(self) -> nx.MultiGraph:
        graph = nx.MultiGraph()
        graph.add_nodes_from(self.vertices)
        graph.add_edges_from(self.edges)
        return graph


@dataclass(frozen=True)
class ConvergenceCertificate:
    """Guaranteed exponent ``c`` with the constants it was derived from."""

    kind: str
    c: float
    q0: float
    per_user_c: Dict[int, float]
    per_user_dv: Dict[int, float]
    gamma: Dict[int, float]
    margin_m: Optional[float] = None
    rayleigh_r: Optional[float] = None
    entropy_b: Optional[float] = None
    entropy_a: Optional[float] = None
    ergodic: bool = False

    def __post_init__(self) -> None:
        if self.q0 <= 0:
            raise InvalidGameError("q0 must be positive")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "c": self.c,
            "q0": self.q0,
            "per_user_c": {str(k): v for k, v in self.per_user_c.items()},
            "per_user_dv": {str(k): v for k, v in self.per_user_dv.items()},
            "gamma": {str(k): v for k, v in self.gamma.items()},
            "margin_m": self.margin_m,
            "rayleigh_r": self.rayleigh_r,
            "entropy_b": self.entropy_b,
            "entropy_a": self.entropy_a,
            "ergodic": self.ergodic,
        }


@dataclass(frozen=True)
class EvolutionaryIndex:
    value: float
    perpendicular: float
    parallel: float


@dataclass(frozen=True, eq=False)
class ExponentSeries:
    """Instantaneous convergence exponents; users with zero initial divergence map to ``None``."""

    times: np.ndarray
    per_user: Tuple[Optional[np.ndarray], ...]
    total: Optional[np.ndarray]


@dataclass(frozen=True, eq=False)
class TrackingDelay:
    delay: float
    lags: np.ndarray
    correlogram: np.ndarray

    def to_dict(self) -> Dict[str, Any]:
        return {"delay": self.delay, "peak": float(self.correlogram.max())}


@dataclass(frozen=True)
class ClosedFormGradient:
    """Mean marginal utilities from the derivative of the closed-form potential."""


@dataclass(frozen=True)
class MonteCarlo:
    """Mean marginal utilities as a sample mean over ``n_samples`` gain draws."""

    n_samples: int
    seed: int = 0


MeanMarginalMethod = Union[ClosedFormGradient, MonteCarlo]
