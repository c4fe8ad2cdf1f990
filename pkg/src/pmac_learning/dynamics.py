"""Replicator dynamics: the continuous flow, its discrete learning scheme and stochastic runs."""
from __future__ import annotations

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .channels import iter_block_coefficients, gains_of, sample_gains
from .errors import DegenerateParametersError, FadingKindError, PreconditionError, StepBoundError
from .game import marginal_array, potential_array, user_average
from .models import (
    INTERIOR_FLOOR,
    ChannelState,
    ClosedFormGradient,
    FadingKind,
    FadingSpec,
    GameConfig,
    MeanMarginalMethod,
    MonteCarlo,
    PowerProfile,
    StepSchedule,
    Trajectory,
)
from .special_functions import ergodic_gradient_array, ergodic_potential_array, require_gaussian
from .utils import batch_sizes

logger = logging.getLogger(__name__)

UNBOUNDED_STEP = 1e300
DT_SCALE = 0.01
MC_BATCH = 50_000


def replicator_array(allocation: np.ndarray, marginals: np.ndarray, cfg: GameConfig) -> np.ndarray:
    average = user_average(allocation, marginals, cfg)
    return np.where(cfg.access_mask, allocation * (marginals - average[..., None]), 0.0)


def replicator_field(profile: PowerProfile, channels: ChannelState, cfg: GameConfig) -> np.ndarray:
    """``p_ka (v_ka - v_k)``; each user's components sum to zero."""

    marginals = marginal_array(profile.allocation, channels.gains, cfg)
    return replicator_array(profile.allocation, marginals, cfg)


def renormalize(allocation: np.ndarray, cfg: GameConfig) -> np.ndarray:
    allocation = np.where(cfg.access_mask, np.clip(allocation, 0.0, None), 0.0)
    return allocation * (cfg.powers / allocation.sum(axis=1))[:, None]


def clamp_interior(profile: PowerProfile, cfg: GameConfig, floor: float = INTERIOR_FLOOR) -> PowerProfile:
    """Lift every link to at least ``floor * P_k`` and renormalize."""

    lifted = np.where(cfg.access_mask, np.maximum(profile.allocation, floor * cfg.powers[:, None]), 0.0)
    return PowerProfile.from_array(renormalize(lifted, cfg), cfg)


def marginal_upper_bound(gains: np.ndarray, cfg: GameConfig) -> np.ndarray:
    """Interference-free bound ``b_a g_ka / sigma_a^2`` on every marginal utility."""

    return np.where(cfg.access_mask, cfg.bandwidths * gains / cfg.noise, 0.0)


def _bound_from(upper: np.ndarray) -> float:
    largest = float(upper.max()) if upper.size else 0.0
    return UNBOUNDED_STEP if largest <= 0.0 else 1.0 / largest


def safe_step_bound(cfg: GameConfig, channels: ChannelState) -> float:
    """Largest step keeping a discrete update inside the product of simplices.

    With ``v_k <= max_a v_ka^ub`` every factor ``1 + delta (v_ka - v_k)`` stays
    nonnegative once ``delta <= 1 / max v^ub``. Zero gains return ``UNBOUNDED_STEP``.
    """

    return _bound_from(marginal_upper_bound(channels.gains, cfg))


def mean_step_bound(cfg: GameConfig, spec: FadingSpec) -> float:
    """Step bound for the mean dynamics, using ``v_bar <= b gamma / sigma^2``."""

    return _bound_from(marginal_upper_bound(spec.variance, cfg))


def default_dt(cfg: GameConfig, channels: ChannelState) -> float:
    bound = safe_step_bound(cfg, channels)
    return 1.0 if bound >= UNBOUNDED_STEP else DT_SCALE * bound


def _rk4_step(allocation: np.ndarray, gains: np.ndarray, cfg: GameConfig, dt: float) -> np.ndarray:
    """One classical RK4 step of ``d log p / dt = v - v_k``, renormalized per user."""

    def rate(p: np.ndarray) -> np.ndarray:
        marginals = marginal_array(p, gains, cfg)
        return np.where(cfg.access_mask, marginals - user_average(p, marginals, cfg)[:, None], 0.0)

    k1 = rate(allocation)
    k2 = rate(allocation * np.exp(0.5 * dt * k1))
    k3 = rate(allocation * np.exp(0.5 * dt * k2))
    k4 = rate(allocation * np.exp(dt * k3))
    step = allocation * np.exp(dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0)
    return renormalize(step, cfg)


def integrate_ode(
    p0: PowerProfile,
    channels: ChannelState,
    cfg: GameConfig,
    t_end: float,
    dt: Optional[float] = None,
    record_every: int = 1,
) -> Trajectory:
    """Integrate the replicator equation on ``[0, t_end]`` from an interior start.

    Raises
    ------
    PreconditionError
        If ``p0`` has a zero on an existing link, or ``t_end``/``dt`` are invalid.
    """

    if not p0.is_interior(cfg):
        raise PreconditionError("integrate_ode needs a strictly interior initial profile")
    if t_end < 0:
        raise PreconditionError("t_end must be nonnegative")
    if dt is None:
        dt = default_dt(cfg, channels)
    if dt <= 0:
        raise PreconditionError("dt must be positive")
    if record_every < 1:
        raise PreconditionError("record_every must be at least 1")

    n_steps = int(np.ceil(t_end / dt - 1e-9)) if t_end > 0 else 0
    h = t_end / n_steps if n_steps else 0.0
    allocation = clamp_interior(p0, cfg).allocation
    times: List[float] = [0.0]
    profiles: List[PowerProfile] = [PowerProfile.from_array(allocation, cfg)]
    potentials: List[float] = [float(potential_array(allocation, channels.gains, cfg))]
    for n in range(1, n_steps + 1):
        allocation = _rk4_step(allocation, channels.gains, cfg, h)
        if n % record_every == 0 or n == n_steps:
            times.append(n * h)
            profiles.append(PowerProfile.from_array(allocation, cfg))
            potentials.append(float(potential_array(allocation, channels.gains, cfg)))
    logger.debug("Integrated %d RK4 steps of size %.3g", n_steps, h)
    return Trajectory(times=np.array(times), profiles=tuple(profiles), metrics={"potential": np.array(potentials)})


def discrete_update(allocation: np.ndarray, marginals: np.ndarray, cfg: GameConfig, delta: float) -> np.ndarray:
    return renormalize(allocation + delta * replicator_array(allocation, marginals, cfg), cfg)


def discrete_step(p_n: PowerProfile, channel_n: ChannelState, cfg: GameConfig, delta_n: float) -> PowerProfile:
    """``p + delta p (v - v_k)`` for one channel realization.

    Raises :class:`StepBoundError` when ``delta_n`` exceeds :func:`safe_step_bound`;
    this function never caps the step itself.
    """

    bound = safe_step_bound(cfg, channel_n)
    if delta_n > bound * (1.0 + 1e-12):
        raise StepBoundError(delta_n, bound)
    marginals = marginal_array(p_n.allocation, channel_n.gains, cfg)
    return PowerProfile.from_array(discrete_update(p_n.allocation, marginals, cfg, delta_n), cfg)


def _noise_metrics(noise: Dict[str, List[float]], eta: np.ndarray, cfg: GameConfig) -> None:
    for k, alpha in cfg.links():
        noise.setdefault(f"noise[{k},{alpha}]", []).append(float(eta[k, alpha]))


def _mean_gradient(allocation: np.ndarray, spec: FadingSpec, cfg: GameConfig) -> np.ndarray:
    """Exact ergodic gradient; jittered only where coincident parameters make it singular."""

    try:
        return ergodic_gradient_array(allocation, spec.variance, cfg)
    except DegenerateParametersError as exc:
        logger.debug("Noise reference uses jittered parameters: %s", exc)
        return ergodic_gradient_array(allocation, spec.variance, cfg, jitter=True)


def run_block_fading(
    p0: PowerProfile,
    cfg: GameConfig,
    spec: FadingSpec,
    schedule: StepSchedule,
    n_steps: int,
    seed: Optional[int] = None,
    record_every: int = 1,
    cap_steps: bool = True,
    record_noise: bool = False,
) -> Trajectory:
    """Learn with a fresh i.i.d. channel realization at every step.

    ``cap_steps`` clips ``delta(n)`` to the realization's safe bound instead of
    raising. ``record_noise`` stores, for every recorded step ``n``, the noise
    ``v - v_bar`` of the update that produced ``p(n)`` (zero at step 0).
    """

    if spec.kind is not FadingKind.BLOCK_IID:
        raise FadingKindError(f"run_block_fading needs a BlockIID spec, got {spec.kind.value}")
    if n_steps < 0 or record_every < 1:
        raise PreconditionError("n_steps must be nonnegative and record_every positive")
    if seed is not None:
        spec = spec.with_seed(seed)

    allocation = np.array(p0.allocation, dtype=float)
    times: List[float] = [0.0]
    profiles: List[PowerProfile] = [p0]
    steps: List[float] = [0.0]
    noise: Dict[str, List[float]] = {}
    if record_noise:
        _noise_metrics(noise, np.zeros(cfg.shape), cfg)
    capped = 0
    n = 0
    for block in iter_block_coefficients(spec, cfg, n_steps):
        for gains in gains_of(block):
            n += 1
            marginals = marginal_array(allocation, gains, cfg)
            delta = schedule.step(n)
            bound = _bound_from(marginal_upper_bound(gains, cfg))
            if delta > bound:
                if not cap_steps:
                    raise StepBoundError(delta, bound)
                capped += 1
                delta = bound
            record = n % record_every == 0 or n == n_steps
            if record and record_noise:
                eta = marginals + _mean_gradient(allocation, spec, cfg)
                _noise_metrics(noise, eta, cfg)
            allocation = discrete_update(allocation, marginals, cfg, delta)
            if record:
                times.append(float(n))
                profiles.append(PowerProfile.from_array(allocation, cfg))
                steps.append(delta)
    if capped:
        logger.debug("Capped %d of %d steps at the per-realization bound", capped, n_steps)

    metrics: Dict[str, np.ndarray] = {"step": np.array(steps)}
    metrics.update({name: np.array(series) for name, series in noise.items()})
    return Trajectory(times=np.array(times), profiles=tuple(profiles), metrics=metrics)


def run_on_channels(
    p0: PowerProfile,
    channels: Sequence[ChannelState],
    cfg: GameConfig,
    schedule: StepSchedule,
    record_every: int = 1,
    cap_steps: bool = True,
) -> Trajectory:
    """Discrete learning along a given channel sequence; step ``n`` sees ``channels[n - 1]``.

    A constant channel repeated ``n`` times gives the static discrete scheme; a
    Jakes track gives learning in time-correlated fading.
    """

    if record_every < 1:
        raise PreconditionError("record_every must be at least 1")
    n_steps = len(channels)
    allocation = np.array(p0.allocation, dtype=float)
    times: List[float] = [0.0]
    profiles: List[PowerProfile] = [p0]
    steps: List[float] = [0.0]
    capped = 0
    for n, state in enumerate(channels, start=1):
        delta = schedule.step(n)
        bound = safe_step_bound(cfg, state)
        if delta > bound:
            if not cap_steps:
                raise StepBoundError(delta, bound)
            capped += 1
            delta = bound
        marginals = marginal_array(allocation, state.gains, cfg)
        allocation = discrete_update(allocation, marginals, cfg, delta)
        if n % record_every == 0 or n == n_steps:
            times.append(float(n))
            profiles.append(PowerProfile.from_array(allocation, cfg))
            steps.append(delta)
    if capped:
        logger.debug("Capped %d of %d steps at the per-realization bound", capped, n_steps)
    return Trajectory(times=np.array(times), profiles=tuple(profiles), metrics={"step": np.array(steps)})


def mean_marginal_utility_mc(
    profile: PowerProfile, spec: FadingSpec, cfg: GameConfig, n_samples: int, seed: int = 0
) -> Tuple[np.ndarray, np.ndarray]:
    """Sample mean and standard error of ``v(p, g)`` over ``n_samples`` gain draws."""

    if n_samples < 2:
        raise PreconditionError("Monte-Carlo estimation needs at least 2 samples")
    rng = np.random.default_rng(seed)
    total = np.zeros(cfg.shape)
    total_sq = np.zeros(cfg.shape)
    for size in batch_sizes(n_samples, MC_BATCH):
        gains = sample_gains(spec, cfg, size, rng)
        values = marginal_array(profile.allocation[None, ...], gains, cfg)
        total += values.sum(axis=0)
        total_sq += np.square(values).sum(axis=0)
    mean = total / n_samples
    variance = np.clip(total_sq / n_samples - mean**2, 0.0, None) * n_samples / (n_samples - 1)
    return mean, np.sqrt(variance / n_samples)


def mean_marginal_utility(
    profile: PowerProfile,
    spec: FadingSpec,
    cfg: GameConfig,
    method: MeanMarginalMethod = ClosedFormGradient(),
    jitter: bool = False,
) -> np.ndarray:
    """Ergodic marginal utilities ``v_bar = -dPhi_bar/dp``."""

    require_gaussian(spec)
    if isinstance(method, MonteCarlo):
        mean, _ = mean_marginal_utility_mc(profile, spec, cfg, method.n_samples, method.seed)
        return mean
    return -ergodic_gradient_array(profile.allocation, spec.variance, cfg, jitter)


def run_mean_dynamics(
    p0: PowerProfile,
    cfg: GameConfig,
    spec: FadingSpec,
    delta: float,
    n_steps: int,
    record_every: int = 1,
    jitter: bool = False,
) -> Trajectory:
    """Noise-free discrete scheme driven by the ergodic marginals ``v_bar``."""

    require_gaussian(spec)
    bound = mean_step_bound(cfg, spec)
    if delta <= 0 or delta > bound * (1.0 + 1e-12):
        raise StepBoundError(delta, bound)
    if n_steps < 0 or record_every < 1:
        raise PreconditionError("n_steps must be nonnegative and record_every positive")

    allocation = np.array(p0.allocation, dtype=float)
    times: List[float] = [0.0]
    profiles: List[PowerProfile] = [p0]
    potentials: List[float] = [ergodic_potential_array(allocation, spec.variance, cfg, jitter)]
    for n in range(1, n_steps + 1):
        marginals = -ergodic_gradient_array(allocation, spec.variance, cfg, jitter)
        allocation = discrete_update(allocation, marginals, cfg, delta)
        if n % record_every == 0 or n == n_steps:
            times.append(float(n))
            profiles.append(PowerProfile.from_array(allocation, cfg))
            potentials.append(ergodic_potential_array(allocation, spec.variance, cfg, jitter))
    return Trajectory(
        times=np.array(times), profiles=tuple(profiles), metrics={"ergodic_potential": np.array(potentials)}
    )
