"""Diagnostics: divergences, efficiency ratios, convergence exponents and certificates."""
from __future__ import annotations

import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import signal, stats

from .equilibrium import ergodic_problem, static_problem, sum_capacity
from .errors import (
    PreconditionError,
    StarConvexityError,
    StrictnessError,
    UndefinedCorrelationError,
    UndefinedRatioError,
)
from .game import marginal_array, potential_array, utility_array
from .models import (
    SUPPORT_THRESHOLD,
    ChannelState,
    ConvergenceCertificate,
    EquilibriumResult,
    EvolutionaryIndex,
    ExponentSeries,
    FadingSpec,
    GameConfig,
    PowerProfile,
    TrackingDelay,
    Trajectory,
)
from .special_functions import (
    ergodic_gradient_array,
    ergodic_potential_array,
    ergodic_utilities_gaussian,
    require_gaussian,
)

logger = logging.getLogger(__name__)

KL_INFINITY = math.inf
RAYLEIGH_SAFETY = 0.9
ENTROPY_A = 2.0
N_SAMPLES = 100
BISECTION_TOL = 1e-12
NEGATIVE_CURVATURE_TOL = 1e-9

Channels = Union[ChannelState, FadingSpec]


def _check_shapes(q: PowerProfile, p: PowerProfile) -> None:
    if q.allocation.shape != p.allocation.shape:
        raise PreconditionError(f"profiles have shapes {q.allocation.shape} and {p.allocation.shape}")


def kl_divergence_per_user(q: PowerProfile, p: PowerProfile) -> np.ndarray:
    """``D(q_k || p_k)`` per user; ``KL_INFINITY`` where ``p`` misses part of ``supp(q_k)``."""

    _check_shapes(q, p)
    qa, pa = q.allocation, p.allocation
    positive = qa > 0
    result = np.zeros(qa.shape[0])
    for k in range(qa.shape[0]):
        row = positive[k]
        if np.any(pa[k, row] <= 0):
            result[k] = KL_INFINITY
            continue
        result[k] = float(np.sum(qa[k, row] * np.log(qa[k, row] / pa[k, row])))
    return result


def kl_divergence(q: PowerProfile, p: PowerProfile) -> float:
    """Kullback-Leibler divergence ``sum q log(q / p)`` over the support of ``q``."""

    per_user = kl_divergence_per_user(q, p)
    if np.any(np.isinf(per_user)):
        return KL_INFINITY
    return float(per_user.sum())


def _is_static(channels_or_spec: Channels) -> bool:
    return isinstance(channels_or_spec, ChannelState)


def marginals_at(
    allocation: np.ndarray, channels_or_spec: Channels, cfg: GameConfig, jitter: bool = False
) -> np.ndarray:
    """``v(p)`` for a channel realization or ``v_bar(p)`` for a Gaussian fading spec."""

    if _is_static(channels_or_spec):
        return marginal_array(allocation, channels_or_spec.gains, cfg)
    require_gaussian(channels_or_spec)
    return -ergodic_gradient_array(allocation, channels_or_spec.variance, cfg, jitter)


def potential_at(allocation: np.ndarray, channels_or_spec: Channels, cfg: GameConfig, jitter: bool = False) -> float:
    if _is_static(channels_or_spec):
        return float(potential_array(allocation, channels_or_spec.gains, cfg))
    require_gaussian(channels_or_spec)
    return ergodic_potential_array(allocation, channels_or_spec.variance, cfg, jitter)


def sre(
    profile: PowerProfile,
    channels_or_spec: Channels,
    cfg: GameConfig,
    capacity: Optional[float] = None,
    jitter: bool = False,
) -> float:
    """Sum-rate efficiency: achieved sum rate over the SIC sum capacity."""

    if capacity is None:
        capacity = sum_capacity(cfg, channels_or_spec, jitter=jitter)
    if capacity <= 0.0:
        raise UndefinedRatioError("sum capacity is zero; SRE is undefined")
    if _is_static(channels_or_spec):
        achieved = float(utility_array(profile.allocation, channels_or_spec.gains, cfg).sum())
    else:
        achieved = float(ergodic_utilities_gaussian(profile, channels_or_spec, cfg, jitter).sum())
    return achieved / capacity


def eql(
    profile: PowerProfile,
    channels_or_spec: Channels,
    cfg: GameConfig,
    equilibrium: EquilibriumResult,
    jitter: bool = False,
) -> float:
    """Equilibration level ``Phi(p) / Phi(q)``; one at equilibrium."""

    reference = potential_at(equilibrium.profile.allocation, channels_or_spec, cfg, jitter)
    if reference == 0.0:
        raise UndefinedRatioError("equilibrium potential is zero; EQL is undefined")
    return potential_at(profile.allocation, channels_or_spec, cfg, jitter) / reference


def instantaneous_exponent(trajectory: Trajectory, equilibrium: EquilibriumResult) -> ExponentSeries:
    """``lambda_k(t) = -(1/t) log(D_k(t) / D_k(0))`` for ``t > 0``.

    Users whose initial divergence is zero have no series. ``total`` is the
    total equilibration rate ``min_k lambda_k(t)`` over the remaining users.
    """

    q = equilibrium.profile
    times = np.asarray(trajectory.times, dtype=float)
    keep = times > 0
    divergences = np.array([kl_divergence_per_user(q, p) for p in trajectory.profiles])
    if np.any(np.isinf(divergences[0])):
        raise PreconditionError("trajectory starts at infinite divergence from the equilibrium")
    per_user: List[Optional[np.ndarray]] = []
    with np.errstate(divide="ignore"):
        for k in range(divergences.shape[1]):
            start = divergences[0, k]
            if start <= 0.0:
                per_user.append(None)
                continue
            ratio = divergences[keep, k] / start
            per_user.append(-np.log(ratio) / times[keep])
    defined = [series for series in per_user if series is not None]
    total = np.min(defined, axis=0) if defined else None
    return ExponentSeries(times=times[keep], per_user=tuple(per_user), total=total)


def _strict_channels(equilibrium: EquilibriumResult) -> Tuple[int, ...]:
    if not equilibrium.is_vertex:
        raise StrictnessError("equilibrium is not a vertex: use general_certificate")
    return tuple(channels[0] for channels in equilibrium.support)


def _entropy_factor(gamma: float) -> float:
    """``(1 - e^-gamma) / gamma`` with its limit 1 at zero."""

    return 1.0 if gamma == 0.0 else float(-math.expm1(-gamma) / gamma)


def _initial_divergence(equilibrium: EquilibriumResult, p0: PowerProfile) -> float:
    h0 = kl_divergence(equilibrium.profile, p0)
    if math.isinf(h0):
        raise PreconditionError("no certificate exists for an initial profile at infinite divergence")
    return h0


def strict_certificate(
    cfg: GameConfig,
    channels_or_spec: Channels,
    equilibrium: EquilibriumResult,
    p0: PowerProfile,
    jitter: bool = False,
) -> ConvergenceCertificate:
    """Exponent ``c = min_k (1 - e^-gamma_k) / gamma_k * dv_k`` for a strict equilibrium.

    ``dv_k`` is user k's smallest marginal gap from its equilibrium channel and
    ``gamma_k = D(q || p0) / P_k``. A fading spec switches to the mean marginals.
    """

    chosen = _strict_channels(equilibrium)
    q = equilibrium.profile.allocation
    marginals = marginals_at(q, channels_or_spec, cfg, jitter)
    h0 = _initial_divergence(equilibrium, p0)

    per_user_dv: Dict[int, float] = {}
    per_user_c: Dict[int, float] = {}
    gamma: Dict[int, float] = {}
    for k, alpha in enumerate(chosen):
        others = [beta for beta in cfg.accessible[k] if beta != alpha]
        dv = float(min(marginals[k, alpha] - marginals[k, beta] for beta in others))
        if dv <= 0.0:
            raise StrictnessError(f"user {k} has no positive deviation cost (dv = {dv:.3e})")
        gamma[k] = h0 / cfg.powers[k]
        per_user_dv[k] = dv
        per_user_c[k] = _entropy_factor(gamma[k]) * dv
    q0 = float(min(q[k, alpha] for k, alpha in enumerate(chosen)))
    return ConvergenceCertificate(
        kind="strict",
        c=min(per_user_c.values()),
        q0=q0,
        per_user_c=per_user_c,
        per_user_dv=per_user_dv,
        gamma=gamma,
        margin_m=min(per_user_dv.values()),
        ergodic=not _is_static(channels_or_spec),
    )


def seminorms(z: np.ndarray, support: np.ndarray, mask: np.ndarray) -> Tuple[float, float]:
    """``|z|_perp`` (L1 off the support) and ``||z||_par`` (L2 on it)."""

    perpendicular = float(np.abs(z[mask & ~support]).sum())
    parallel = float(np.sqrt(np.square(z[support]).sum()))
    return perpendicular, parallel


def evolutionary_index(
    profile: PowerProfile,
    equilibrium: EquilibriumResult,
    marginals: np.ndarray,
    cfg: GameConfig,
    support_threshold: float = SUPPORT_THRESHOLD,
) -> EvolutionaryIndex:
    """``L_q(p) = sum (q - p) v(p)``, the decay rate of ``D(q || p(t))`` under the flow."""

    q = equilibrium.profile.allocation
    p = profile.allocation
    mask = cfg.access_mask
    value = float(np.sum(np.where(mask, (q - p) * marginals, 0.0)))
    support = mask & (q > support_threshold * cfg.powers[:, None])
    perpendicular, parallel = seminorms(p - q, support, mask)
    return EvolutionaryIndex(value=value, perpendicular=perpendicular, parallel=parallel)


def _tangent_basis(subspace: np.ndarray, cfg: GameConfig) -> np.ndarray:
    """Orthonormal basis (links x dim) of per-user zero-sum directions inside ``subspace``."""

    users, channels = np.nonzero(cfg.access_mask)
    inside = subspace[users, channels]
    columns = []
    for k in range(cfg.num_users):
        rows = np.nonzero(inside & (users == k))[0]
        for j in range(1, len(rows)):
            column = np.zeros(len(users))
            column[rows[0]] = -1.0
            column[rows[j]] = 1.0
            columns.append(column)
    if not columns:
        return np.zeros((len(users), 0))
    basis, _ = np.linalg.qr(np.array(columns).T)
    return basis


def _boundary_ray(q: np.ndarray, target: np.ndarray, mask: np.ndarray) -> Optional[np.ndarray]:
    """Extend ``target - q`` until ``q + z`` reaches the boundary of the product of simplices."""

    direction = np.where(mask, target - q, 0.0)
    decreasing = mask & (direction < 0)
    if not np.any(decreasing):
        return None
    scale = float(np.min(-q[decreasing] / direction[decreasing]))
    return scale * direction


def _bisect(func, upper: float) -> float:
    """Positive root of ``func`` on ``(0, upper)`` with ``func < 0`` near 0 and ``> 0`` near ``upper``."""

    lo, hi = 0.0, upper
    while hi - lo > BISECTION_TOL:
        mid = 0.5 * (lo + hi)
        if func(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _ray_entropy(q: np.ndarray, z: np.ndarray, support: np.ndarray, theta: float) -> float:
    p = q[support] + theta * z[support]
    if np.any(p <= 0):
        return math.inf
    return float(np.sum(q[support] * np.log(q[support] / p)))


def general_certificate(
    cfg: GameConfig,
    channels_or_spec: Channels,
    equilibrium: EquilibriumResult,
    p0: PowerProfile,
    n_samples: int = N_SAMPLES,
    seed: int = 0,
    a: float = ENTROPY_A,
    support_threshold: float = SUPPORT_THRESHOLD,
    jitter: bool = False,
) -> ConvergenceCertificate:
    """Exponent ``c = min(m / b, r q0 / b)`` for any equilibrium of a star-convex potential.

    ``m`` is the smallest KKT slack between a supported and an unsupported
    channel. ``r`` is ``RAYLEIGH_SAFETY`` times the smallest eigenvalue of the
    potential Hessian on supported tangent directions, over sampled points
    between ``q`` and random profiles. ``b`` is the largest ratio
    ``h_c / g(theta_c)`` over sampled boundary rays, where ``theta_a`` solves
    ``H_q(q + theta z) = a g(theta)`` and ``h_c = max(h0, max H_q(q + theta_a z))``.
    Terms whose subspace is empty drop out of the minimum.
    """

    if a <= 1.0:
        raise PreconditionError("a must exceed 1")
    rng = np.random.default_rng(seed)
    mask = cfg.access_mask
    q = equilibrium.profile.allocation
    support = mask & (q > support_threshold * cfg.powers[:, None])
    q0 = float(q[support].min())
    h0 = _initial_divergence(equilibrium, p0)
    marginals = marginals_at(q, channels_or_spec, cfg, jitter)

    per_user_dv: Dict[int, float] = {}
    for k in range(cfg.num_users):
        on = support[k]
        off = mask[k] & ~on
        if np.any(off):
            per_user_dv[k] = float(marginals[k, on].min() - marginals[k, off].max())
    margin_m = min(per_user_dv.values()) if per_user_dv else None

    problem = static_problem(cfg, channels_or_spec) if _is_static(channels_or_spec) else ergodic_problem(
        cfg, channels_or_spec, jitter
    )
    basis = _tangent_basis(support, cfg)
    samples = [PowerProfile.random_interior(cfg, rng).allocation for _ in range(n_samples)]
    rayleigh_r: Optional[float] = None
    if basis.shape[1] > 0:
        lowest = math.inf
        for target in samples:
            point = q + rng.uniform(0.0, 1.0) * (target - q)
            hessian = problem.hessian(point, mask)
            projected = basis.T @ hessian @ basis
            lowest = min(lowest, float(np.linalg.eigvalsh(0.5 * (projected + projected.T)).min()))
        if lowest < -NEGATIVE_CURVATURE_TOL * max(1.0, float(np.abs(marginals).max())):
            raise StarConvexityError(f"sampled Hessian has negative curvature {lowest:.3e}")
        rayleigh_r = RAYLEIGH_SAFETY * max(lowest, 0.0)

    rays = [z for z in (_boundary_ray(q, target, mask) for target in samples) if z is not None]
    entropy_b = _entropy_constant(q, rays, support, mask, h0, a)

    candidates = []
    if margin_m is not None:
        candidates.append(margin_m / entropy_b)
    if rayleigh_r is not None:
        candidates.append(rayleigh_r * q0 / entropy_b)
    gamma = {k: h0 / float(cfg.powers[k]) for k in range(cfg.num_users)}
    return ConvergenceCertificate(
        kind="general",
        c=min(candidates),
        q0=q0,
        per_user_c={},
        per_user_dv=per_user_dv,
        gamma=gamma,
        margin_m=margin_m,
        rayleigh_r=rayleigh_r,
        entropy_b=entropy_b,
        entropy_a=a,
        ergodic=not _is_static(channels_or_spec),
    )


def _entropy_constant(
    q: np.ndarray, rays: Sequence[np.ndarray], support: np.ndarray, mask: np.ndarray, h0: float, a: float
) -> float:
    """Largest ``h_c / g(theta_c)`` over the sampled rays."""

    shapes = []
    for z in rays:
        perpendicular = float(np.abs(z[mask & ~support]).sum())
        curvature = float(np.sum(np.square(z[support]) / q[support]))
        shapes.append((z, perpendicular, curvature))

    def g(perpendicular: float, curvature: float, theta: float) -> float:
        return perpendicular * theta + 0.5 * curvature * theta**2

    h_a = 0.0
    for z, perpendicular, curvature in shapes:
        theta_a = _bisect(lambda t: _ray_entropy(q, z, support, t) - a * g(perpendicular, curvature, t), 1.0)
        h_a = max(h_a, _ray_entropy(q, z, support, theta_a))
    h_c = max(h0, h_a)
    b = a
    for z, perpendicular, curvature in shapes:
        theta_c = _bisect(lambda t: _ray_entropy(q, z, support, t) - h_c, 1.0)
        denominator = g(perpendicular, curvature, theta_c)
        if denominator > 0:
            b = max(b, h_c / denominator)
    return b


def tracking_delay(
    equilibrium_series: Sequence[Union[PowerProfile, float]],
    learned_series: Sequence[Union[PowerProfile, float]],
    sample_period: float,
    link: Tuple[int, int] = (0, 0),
) -> TrackingDelay:
    """Lag of maximum normalized cross-correlation, in seconds.

    A positive delay means the learned series trails the equilibrium series.
    """

    def scalar_series(series: Sequence[Union[PowerProfile, float]]) -> np.ndarray:
        return np.array([item.allocation[link] if isinstance(item, PowerProfile) else item for item in series], float)

    target = scalar_series(equilibrium_series)
    learned = scalar_series(learned_series)
    if target.shape != learned.shape:
        raise PreconditionError("tracking_delay needs equal-length aligned series")
    target = target - target.mean()
    learned = learned - learned.mean()
    scale = len(target) * target.std() * learned.std()
    if scale <= 0.0:
        raise UndefinedCorrelationError("cross-correlation of a constant series is undefined")
    correlogram = signal.correlate(learned, target, mode="full") / scale
    lags = signal.correlation_lags(len(learned), len(target), mode="full")
    lag = int(lags[int(np.argmax(correlogram))])
    return TrackingDelay(delay=lag * sample_period, lags=lags, correlogram=correlogram)


def power_deficit_rate(
    trajectory: Trajectory,
    k: int,
    channel: int,
    window: Tuple[float, float] = (1e-8, 1e-3),
) -> float:
    """Fitted exponential decay rate of ``P_k - p_k,channel(t)``.

    The deficit is summed over the other channels directly, and only samples
    whose relative deficit lies inside ``window`` enter the fit.
    """

    times = np.asarray(trajectory.times, dtype=float)
    allocations = trajectory.allocations()
    total = allocations[0, k].sum()
    deficit = (allocations[:, k].sum(axis=1) - allocations[:, k, channel]) / total
    keep = (deficit > window[0]) & (deficit < window[1])
    if keep.sum() < 3:
        raise PreconditionError("too few samples inside the fitting window")
    fit = stats.linregress(times[keep], np.log(deficit[keep]))
    return float(-fit.slope)
