"""Channel generators for static, block-fading and Jakes Rayleigh-fading links.

Every generator draws ``h ~ CN(0, variance)`` so that ``E|h|^2`` equals the
link variance, and builds a fresh ``numpy`` generator from the fading spec's seed on
each call: the same spec always yields the same realizations.
"""
from __future__ import annotations

import logging
from typing import Iterator, List, Optional

import numpy as np

from .errors import FadingKindError, PreconditionError
from .models import ChannelState, FadingKind, FadingSpec, GameConfig
from .utils import batch_sizes

logger = logging.getLogger(__name__)

SPEED_OF_LIGHT = 2.998e8
BATCH_STEPS = 4096


def _require_kind(spec: FadingSpec, *kinds: FadingKind) -> None:
    if spec.kind not in kinds:
        expected = ", ".join(kind.value for kind in kinds)
        raise FadingKindError(f"expected a {expected} fading spec, got {spec.kind.value}")


def _check_shape(spec: FadingSpec, cfg: GameConfig) -> np.ndarray:
    if spec.variance.shape != cfg.shape:
        raise PreconditionError(f"variance has shape {spec.variance.shape}, game expects {cfg.shape}")
    return np.where(cfg.access_mask, spec.variance, 0.0)


def rng_for(spec: FadingSpec) -> np.random.Generator:
    return np.random.default_rng(spec.seed)


def complex_gaussian(
    rng: np.random.Generator, variance: np.ndarray, n: Optional[int] = None
) -> np.ndarray:
    """Circularly symmetric complex normal draws with ``E|h|^2 = variance``."""

    shape = variance.shape if n is None else (n,) + variance.shape
    parts = rng.standard_normal(shape + (2,))
    scale = np.sqrt(variance / 2.0)
    return scale * (parts[..., 0] + 1j * parts[..., 1])


def gains_of(coefficients: np.ndarray) -> np.ndarray:
    return coefficients.real**2 + coefficients.imag**2


def sample_gains(
    spec: FadingSpec, cfg: GameConfig, n: int, rng: np.random.Generator
) -> np.ndarray:
    """``n`` independent gain arrays of shape ``(n, K, A)`` drawn from ``spec``'s statistics."""

    variance = _check_shape(spec, cfg)
    return gains_of(complex_gaussian(rng, variance, n))


def draw_static(spec: FadingSpec, cfg: GameConfig) -> ChannelState:
    """One realization held fixed for the whole game."""

    _require_kind(spec, FadingKind.STATIC)
    variance = _check_shape(spec, cfg)
    return ChannelState.from_coefficients(complex_gaussian(rng_for(spec), variance), cfg)


def iter_block_coefficients(
    spec: FadingSpec, cfg: GameConfig, n_blocks: int, batch: int = BATCH_STEPS
) -> Iterator[np.ndarray]:
    """Yield i.i.d. coefficient blocks in batches of shape ``(b, K, A)``.

    The stream does not depend on ``batch``.
    """

    _require_kind(spec, FadingKind.BLOCK_IID)
    if n_blocks < 0:
        raise PreconditionError("n_blocks must be nonnegative")
    variance = _check_shape(spec, cfg)
    rng = rng_for(spec)
    for size in batch_sizes(n_blocks, batch):
        yield complex_gaussian(rng, variance, size)


def draw_block_sequence(spec: FadingSpec, cfg: GameConfig, n_blocks: int) -> List[ChannelState]:
    states: List[ChannelState] = []
    for block in iter_block_coefficients(spec, cfg, n_blocks):
        states.extend(ChannelState.from_coefficients(h, cfg) for h in block)
    return states


def doppler_frequency(velocity: float, carrier_frequency: float) -> float:
    """Maximum Doppler shift ``f_d = v nu / c`` in Hz."""

    return velocity * carrier_frequency / SPEED_OF_LIGHT


def coherence_time(velocity: float, carrier_frequency: float) -> float:
    return 1.0 / doppler_frequency(velocity, carrier_frequency)


def iter_jakes_coefficients(
    spec: FadingSpec, cfg: GameConfig, n_steps: int, batch: int = BATCH_STEPS
) -> Iterator[np.ndarray]:
    """Sum-of-sinusoids Rayleigh fading, yielded in ``(b, K, A)`` batches.

    Each link sums ``n_oscillators`` equal-power sinusoids whose arrival
    angles are evenly spaced over ``(0, pi)`` behind a random per-link offset,
    with independent uniform phases for the in-phase and quadrature parts.
    The autocorrelation of ``h`` then follows ``variance * J0(2 pi f_d tau)``.
    """

    _require_kind(spec, FadingKind.JAKES)
    if n_steps < 0:
        raise PreconditionError("n_steps must be nonnegative")
    variance = _check_shape(spec, cfg)
    rng = rng_for(spec)
    n_osc = spec.n_oscillators
    num_users, num_channels = cfg.shape

    offsets = rng.uniform(-0.5, 0.5, size=(num_users, num_channels, 1))
    angles = np.pi * (np.arange(1, n_osc + 1) - 0.5 + offsets) / n_osc
    phase_re = rng.uniform(0.0, 2.0 * np.pi, size=(num_users, num_channels, n_osc))
    phase_im = rng.uniform(0.0, 2.0 * np.pi, size=(num_users, num_channels, n_osc))

    f_d = spec.velocity * spec.carrier_frequency / SPEED_OF_LIGHT
    omega = 2.0 * np.pi * f_d[:, None, None] * np.cos(angles)
    scale = np.sqrt(variance / n_osc)
    logger.debug("Jakes track: f_d=%s Hz, %d oscillators, %d steps", f_d.tolist(), n_osc, n_steps)

    start = 0
    for size in batch_sizes(n_steps, batch):
        t = (start + np.arange(size)) * spec.sample_period
        argument = omega[None, ...] * t[:, None, None, None]
        in_phase = np.cos(argument + phase_re).sum(axis=-1)
        quadrature = np.sin(argument + phase_im).sum(axis=-1)
        yield scale * (in_phase + 1j * quadrature)
        start += size


def jakes_track(spec: FadingSpec, cfg: GameConfig, n_steps: int) -> List[ChannelState]:
    states: List[ChannelState] = []
    for block in iter_jakes_coefficients(spec, cfg, n_steps):
        states.extend(ChannelState.from_coefficients(h, cfg) for h in block)
    return states


def mean_gains(spec: FadingSpec, cfg: GameConfig) -> ChannelState:
    """Deterministic channel with ``g = variance``."""

    return ChannelState.from_gains(_check_shape(spec, cfg), cfg)
