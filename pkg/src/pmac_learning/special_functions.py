"""Exponential integrals and the closed-form ergodic potential of Gaussian fading.

With ``h ~ CN(0, gamma)`` the received powers ``r_k X_k`` on a channel are
independent exponentials, and

    E log(1 + sum_k r_k X_k) = sum_j zeta(1 / r_j) prod_{i != j} r_j / (r_j - r_i),

where ``zeta(x) = e^x E_1(x)``. The ergodic potential is minus the
bandwidth-weighted sum of that expectation over channels.
"""
from __future__ import annotations

import logging
from typing import Optional, Tuple, Union

import numpy as np
from scipy import special

from .channels import sample_gains
from .errors import DegenerateParametersError, DomainError, FadingKindError, PreconditionError
from .game import potential_array
from .models import FadingKind, FadingSpec, GameConfig, PowerProfile
from .utils import batch_sizes

logger = logging.getLogger(__name__)

SEPARATION_TOL = 1e-6
JITTER = 1e-5
ACTIVE_FLOOR = 1e-14
RELATIVE_FLOOR = 1e-12
MC_BATCH = 100_000

_CF_SWITCH = 1.0
_CF_MAX_ITER = 500
_CF_EPS = 4.0 * np.finfo(float).eps
_TINY = 1e-300

ArrayLike = Union[float, np.ndarray]


def _expn_continued_fraction(n: int, x: np.ndarray) -> np.ndarray:
    """``e^x E_n(x)`` by modified Lentz evaluation of the continued fraction (x >= 1)."""

    b = x + n
    c = np.full_like(x, 1.0 / _TINY)
    d = 1.0 / b
    h = d.copy()
    for i in range(1, _CF_MAX_ITER + 1):
        an = -i * (n - 1 + i)
        b = b + 2.0
        d = an * d + b
        d = 1.0 / np.where(np.abs(d) < _TINY, _TINY, d)
        c = b + an / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        delta = c * d
        h = h * delta
        if np.all(np.abs(delta - 1.0) < _CF_EPS):
            return h
    logger.warning("Continued fraction for E_%d did not converge in %d terms", n, _CF_MAX_ITER)
    return h


def scaled_expn(n: int, x: ArrayLike) -> ArrayLike:
    """``e^x E_n(x)`` for ``n`` in {1, 2} and ``x > 0``, free of overflow at large ``x``."""

    if n not in (1, 2):
        raise DomainError(f"scaled_expn supports n = 1 or 2, got {n}")
    scalar = np.ndim(x) == 0
    values = np.atleast_1d(np.asarray(x, dtype=float))
    if not np.all(values > 0):
        raise DomainError("exponential integrals need x > 0")
    out = np.empty_like(values)
    small = values < _CF_SWITCH
    if np.any(small):
        xs = values[small]
        series = special.exp1(xs) if n == 1 else special.expn(2, xs)
        out[small] = np.exp(xs) * series
    if np.any(~small):
        out[~small] = _expn_continued_fraction(n, values[~small])
    return float(out[0]) if scalar else out


def zeta(x: ArrayLike) -> ArrayLike:
    """``zeta(x) = int_0^inf e^-t / (x + t) dt = e^x E_1(x)``; bracketed by ``1/(x+1)`` and ``1/x``."""

    return scaled_expn(1, x)


def zeta_prime(x: ArrayLike) -> ArrayLike:
    """``zeta'(x) = zeta(x) - 1/x = -e^x E_2(x) / x``."""

    if np.ndim(x) == 0:
        return -scaled_expn(2, x) / float(x)
    return -scaled_expn(2, x) / np.asarray(x, dtype=float)


def require_gaussian(spec: FadingSpec) -> None:
    # Block fading draws from the same complex normal law, so its ergodic game is the same.
    if spec.kind not in (FadingKind.GAUSSIAN_FAST, FadingKind.BLOCK_IID):
        raise FadingKindError(f"closed-form ergodic potential needs Gaussian fading, got {spec.kind.value}")


def ergodic_params(allocation: np.ndarray, variance: np.ndarray, cfg: GameConfig) -> np.ndarray:
    """``r_ka = gamma_ka p_ka / sigma_a^2`` on existing links, zero elsewhere."""

    if variance.shape != cfg.shape:
        raise PreconditionError(f"variance has shape {variance.shape}, game expects {cfg.shape}")
    return np.where(cfg.access_mask, variance * allocation / cfg.noise, 0.0)


def _separate(r: np.ndarray, channel: int, jitter: bool) -> np.ndarray:
    """Return the active ``r`` values of one channel, checked for coincidences."""

    order = np.argsort(r)
    ordered = r[order]
    if len(ordered) < 2:
        return r
    gaps = 1.0 - ordered[:-1] / ordered[1:]
    if np.all(gaps >= SEPARATION_TOL):
        return r
    if not jitter:
        worst = int(np.argmin(gaps))
        raise DegenerateParametersError(channel, float(gaps[worst]))
    logger.debug("Jittering %d coincident r values on channel %d", len(r), channel)
    jittered = np.empty_like(r)
    jittered[order] = ordered * (1.0 + JITTER * np.arange(len(ordered)))
    return jittered


def _active(r: np.ndarray) -> np.ndarray:
    """Mask of the links treated as transmitting; negligible r drop out like r = 0."""

    if r.size == 0:
        return np.zeros(0, dtype=bool)
    return r > max(ACTIVE_FLOOR, RELATIVE_FLOOR * float(r.max()))


def _weights(r: np.ndarray) -> np.ndarray:
    """Partial-fraction weights ``c_j = prod_{i != j} r_j / (r_j - r_i)``."""

    diff = r[:, None] - r[None, :]
    np.fill_diagonal(diff, 1.0)
    ratio = r[:, None] / diff
    np.fill_diagonal(ratio, 1.0)
    return ratio.prod(axis=1)


def log_expectation(r: np.ndarray, channel: int = 0, jitter: bool = False) -> float:
    """``E log(1 + sum_k r_k X_k)`` for independent unit exponentials ``X_k``."""

    active = r[_active(r)]
    if active.size == 0:
        return 0.0
    active = _separate(active, channel, jitter)
    return float(np.dot(_weights(active), zeta(1.0 / active)))


def log_expectation_gradient(r: np.ndarray, channel: int = 0, jitter: bool = False) -> np.ndarray:
    """Derivative of :func:`log_expectation` with respect to every entry of ``r``.

    Inactive entries get the one-sided limit
    ``E[X_k / (1 + sum_i r_i X_i)]``.
    """

    grad = np.zeros_like(r, dtype=float)
    is_active = _active(r)
    active = r[is_active]
    if active.size == 0:
        grad[:] = 1.0
        return grad
    active = _separate(active, channel, jitter)
    c = _weights(active)
    z = zeta(1.0 / active)
    dz = np.atleast_1d(scaled_expn(2, 1.0 / active)) / active

    diff = active[:, None] - active[None, :]
    np.fill_diagonal(diff, np.inf)
    # own-weight term: dc_k/dr_k = c_k sum_{i != k} -r_i / (r_k (r_k - r_i))
    own = c * z * (-(active[None, :] / diff).sum(axis=1) / active) + c * dz
    # cross term: dc_j/dr_k = c_j / (r_j - r_k) for j != k
    cross = ((c * z)[:, None] / diff).sum(axis=0)
    grad[is_active] = own + cross
    grad[~is_active] = float(np.dot(c, z / active))
    return grad


def ergodic_potential_array(
    allocation: np.ndarray, variance: np.ndarray, cfg: GameConfig, jitter: bool = False
) -> float:
    r = ergodic_params(allocation, variance, cfg)
    total = 0.0
    for alpha in range(cfg.num_channels):
        column = r[cfg.access_mask[:, alpha], alpha]
        total += cfg.bandwidths[alpha] * log_expectation(column, alpha, jitter)
    return -total


def ergodic_gradient_array(
    allocation: np.ndarray, variance: np.ndarray, cfg: GameConfig, jitter: bool = False
) -> np.ndarray:
    """``dPhi_bar / dp`` on existing links; equals ``-v_bar``."""

    r = ergodic_params(allocation, variance, cfg)
    grad = np.zeros(cfg.shape)
    for alpha in range(cfg.num_channels):
        users = cfg.access_mask[:, alpha]
        column = log_expectation_gradient(r[users, alpha], alpha, jitter)
        grad[users, alpha] = -cfg.bandwidths[alpha] * column * variance[users, alpha] / cfg.noise[alpha]
    return grad


def ergodic_potential_gaussian(
    profile: PowerProfile, spec: FadingSpec, cfg: GameConfig, jitter: bool = False
) -> float:
    """Closed-form ergodic potential under Gaussian fading.

    Links with ``r = 0`` drop out of both the sum and the products. Active
    values on one channel closer than ``SEPARATION_TOL`` in relative terms raise
    :class:`DegenerateParametersError` unless ``jitter`` spreads them by
    ``JITTER``.
    """

    require_gaussian(spec)
    return ergodic_potential_array(profile.allocation, spec.variance, cfg, jitter)


def ergodic_potential_gradient(
    profile: PowerProfile, spec: FadingSpec, cfg: GameConfig, jitter: bool = False
) -> np.ndarray:
    require_gaussian(spec)
    return ergodic_gradient_array(profile.allocation, spec.variance, cfg, jitter)


def ergodic_utility_gaussian(
    profile: PowerProfile, spec: FadingSpec, cfg: GameConfig, k: int, jitter: bool = False
) -> float:
    """Ergodic rate of user ``k``: the channel log-expectation with and without ``k``."""

    require_gaussian(spec)
    r = ergodic_params(profile.allocation, spec.variance, cfg)
    total = 0.0
    for alpha in cfg.accessible[k]:
        users = cfg.access_mask[:, alpha]
        column = r[users, alpha]
        others = r[users & (np.arange(cfg.num_users) != k), alpha]
        with_k = log_expectation(column, alpha, jitter)
        without_k = log_expectation(others, alpha, jitter)
        total += cfg.bandwidths[alpha] * (with_k - without_k)
    return total


def ergodic_utilities_gaussian(
    profile: PowerProfile, spec: FadingSpec, cfg: GameConfig, jitter: bool = False
) -> np.ndarray:
    return np.array([ergodic_utility_gaussian(profile, spec, cfg, k, jitter) for k in range(cfg.num_users)])


def ergodic_potential_mc(
    profile: PowerProfile,
    spec: FadingSpec,
    cfg: GameConfig,
    n_samples: int,
    seed: Optional[int] = None,
) -> Tuple[float, float]:
    """Sample mean and standard error of the static potential over fading draws."""

    if n_samples < 2:
        raise DomainError("Monte-Carlo estimation needs at least 2 samples")
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    total = 0.0
    total_sq = 0.0
    for size in batch_sizes(n_samples, MC_BATCH):
        gains = sample_gains(spec, cfg, size, rng)
        values = potential_array(profile.allocation, gains, cfg)
        total += float(values.sum())
        total_sq += float(np.square(values).sum())
    mean = total / n_samples
    variance = max(total_sq / n_samples - mean**2, 0.0) * n_samples / (n_samples - 1)
    return mean, float(np.sqrt(variance / n_samples))
