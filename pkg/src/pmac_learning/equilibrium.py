"""Nash equilibria as potential minimizers, with KKT checks and support diagnostics."""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple, Union

import networkx as nx
import numpy as np

from .dynamics import renormalize
from .errors import PreconditionError, SolverError
from .game import hessian_from_curvature, link_indices, marginal_array, potential_array, user_average
from .models import (
    INTERIOR_FLOOR,
    SUPPORT_THRESHOLD,
    ChannelState,
    EquilibriumResult,
    FadingSpec,
    GameConfig,
    PowerProfile,
    SupportMultigraph,
    UniquenessReport,
)
from .special_functions import ergodic_gradient_array, ergodic_potential_array, require_gaussian

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
ERGODIC_TOL = 1e-8
MAX_ITERATIONS = 20000
ARMIJO = 1e-4
POLISH_EVERY = 20
NEWTON_STEPS = 8
MAX_STEP = 1e12
MIN_STEP = 1e-30
MASS_FLOOR = 1e-200

Objective = Callable[[np.ndarray], float]
Gradient = Callable[[np.ndarray], np.ndarray]
Hessian = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class _Problem:
    """A potential over the product of simplices with its derivatives."""

    cfg: GameConfig
    objective: Objective
    gradient: Gradient
    hessian: Hessian
    ergodic: bool = False


def kkt_residual(
    allocation: np.ndarray,
    marginals: np.ndarray,
    cfg: GameConfig,
    support_threshold: float = SUPPORT_THRESHOLD,
) -> Tuple[float, np.ndarray]:
    """Water-filling residual and the multipliers ``lambda_k = v_k``.

    On-support marginals must equal ``lambda_k``; off-support marginals may not
    exceed it.
    """

    multipliers = user_average(allocation, marginals, cfg)
    gap = marginals - multipliers[:, None]
    on = cfg.access_mask & (allocation > support_threshold * cfg.powers[:, None])
    off = cfg.access_mask & ~on
    on_gap = float(np.abs(gap[on]).max()) if np.any(on) else 0.0
    off_gap = float(np.clip(gap[off], 0.0, None).max()) if np.any(off) else 0.0
    return max(on_gap, off_gap), multipliers


def _support_of(allocation: np.ndarray, cfg: GameConfig, threshold: float) -> Tuple[Tuple[int, ...], ...]:
    cutoff = threshold * cfg.powers
    return tuple(
        tuple(alpha for alpha in subset if allocation[k, alpha] > cutoff[k]) for k, subset in enumerate(cfg.accessible)
    )


def _prune(allocation: np.ndarray, cfg: GameConfig, threshold: float) -> np.ndarray:
    """Zero the entries at or below the support threshold and restore the budgets."""

    dropped = (allocation != 0.0) & (allocation <= threshold * cfg.powers[:, None])
    if not np.any(dropped):
        return allocation
    return renormalize(np.where(dropped, 0.0, allocation), cfg)


def _result(problem: _Problem, allocation: np.ndarray, iterations: int, threshold: float) -> EquilibriumResult:
    cfg = problem.cfg
    allocation = _prune(allocation, cfg, threshold)
    marginals = -problem.gradient(allocation)
    residual, multipliers = kkt_residual(allocation, marginals, cfg, threshold)
    return EquilibriumResult(
        profile=PowerProfile.from_array(allocation, cfg),
        potential_value=float(problem.objective(allocation)),
        kkt_residual=residual,
        multipliers=multipliers,
        support=_support_of(allocation, cfg, threshold),
        iterations=iterations,
        ergodic=problem.ergodic,
    )


def _mirror_step(x: np.ndarray, grad: np.ndarray, step: float, cfg: GameConfig) -> np.ndarray:
    """Exponentiated-gradient update ``x * exp(-step * grad)`` renormalized per user."""

    shifted = np.where(cfg.access_mask, grad, np.inf)
    shifted = shifted - shifted.min(axis=1, keepdims=True)
    weights = np.where(cfg.access_mask, x * np.exp(-step * np.where(cfg.access_mask, shifted, 0.0)), 0.0)
    weights = weights * (cfg.powers / weights.sum(axis=1))[:, None]
    # keep underflowed links revivable
    return np.where(cfg.access_mask, np.maximum(weights, MASS_FLOOR * cfg.powers[:, None]), 0.0)


def _newton_polish(problem: _Problem, x: np.ndarray, tol: float, threshold: float) -> Optional[np.ndarray]:
    """Newton iterations on the KKT system restricted to the current support.

    Returns ``None`` when a step leaves the support, raises the potential, or
    the residual is still above ``tol`` after ``NEWTON_STEPS`` steps.
    """

    cfg = problem.cfg
    support = cfg.access_mask & (x > threshold * cfg.powers[:, None])
    users, channels = np.nonzero(support)
    n_links = len(users)
    basis = np.zeros((n_links, cfg.num_users))
    basis[np.arange(n_links), users] = 1.0
    y = renormalize(np.where(support, x, 0.0), cfg)
    value = problem.objective(y)
    for _ in range(NEWTON_STEPS):
        marginals = -problem.gradient(y)
        residual, multipliers = kkt_residual(y, marginals, cfg, threshold)
        if residual <= tol:
            return y
        hessian = problem.hessian(y, support)
        system = np.block([[hessian, basis], [basis.T, np.zeros((cfg.num_users, cfg.num_users))]])
        rhs = np.concatenate([marginals[users, channels], np.zeros(cfg.num_users)])
        solution = np.linalg.lstsq(system, rhs, rcond=None)[0]
        candidate = y.copy()
        candidate[users, channels] += solution[:n_links]
        if np.any(candidate[users, channels] <= 0):
            return None
        candidate = renormalize(candidate, cfg)
        new_value = problem.objective(candidate)
        if new_value > value + 1e-12 * (1.0 + abs(value)):
            return None
        y, value = candidate, new_value
    residual, _ = kkt_residual(y, -problem.gradient(y), cfg, threshold)
    return y if residual <= tol else None


def _minimize(
    problem: _Problem,
    initial: Optional[PowerProfile],
    tol: float,
    max_iterations: int,
    threshold: float,
) -> EquilibriumResult:
    cfg = problem.cfg
    if tol <= 0:
        raise PreconditionError("tol must be positive")
    if initial is not None:
        x = np.array(initial.allocation, dtype=float)
        residual, _ = kkt_residual(x, -problem.gradient(x), cfg, threshold)
        if residual <= tol:
            return _result(problem, x, 0, threshold)
        x = np.where(cfg.access_mask, np.maximum(x, INTERIOR_FLOOR * cfg.powers[:, None]), 0.0)
        x = renormalize(x, cfg)
    else:
        x = PowerProfile.uniform(cfg).allocation.copy()

    grad = problem.gradient(x)
    value = problem.objective(x)
    largest = float(np.abs(grad[cfg.access_mask]).max())
    step = 1.0 / largest if largest > 0 else 1.0
    for iteration in range(1, max_iterations + 1):
        residual, _ = kkt_residual(x, -grad, cfg, threshold)
        if residual <= tol:
            logger.debug("Mirror descent converged after %d iterations", iteration - 1)
            polished = _newton_polish(problem, x, tol, threshold)
            return _result(problem, x if polished is None else polished, iteration - 1, threshold)
        if iteration % POLISH_EVERY == 0:
            polished = _newton_polish(problem, x, tol, threshold)
            if polished is not None:
                logger.debug("Newton polish converged after %d iterations", iteration)
                return _result(problem, polished, iteration, threshold)

        slack = 10.0 * np.finfo(float).eps * (1.0 + abs(value))
        while True:
            candidate = _mirror_step(x, grad, step, cfg)
            candidate_value = problem.objective(candidate)
            decrease = float(np.sum(grad * (candidate - x)))
            if candidate_value <= value + ARMIJO * decrease + slack or step < MIN_STEP:
                break
            step *= 0.5
        x, value = candidate, candidate_value
        grad = problem.gradient(x)
        step = min(step * 2.0, MAX_STEP)

    polished = _newton_polish(problem, x, tol, threshold)
    if polished is not None:
        return _result(problem, polished, max_iterations, threshold)
    best = _result(problem, x, max_iterations, threshold)
    logger.warning("Equilibrium solver stopped at residual %.3e after %d iterations", best.kkt_residual, max_iterations)
    raise SolverError(
        f"KKT residual {best.kkt_residual:.3e} above tol {tol:.1e} after {max_iterations} iterations", best=best
    )


def static_problem(cfg: GameConfig, channels: ChannelState) -> _Problem:
    gains = channels.gains
    users, link_channels = link_indices(cfg)

    def gradient(x: np.ndarray) -> np.ndarray:
        return -marginal_array(x, gains, cfg)

    def hessian(x: np.ndarray, support: np.ndarray) -> np.ndarray:
        load = np.where(cfg.access_mask, gains * x, 0.0).sum(axis=0)
        full = hessian_from_curvature(cfg.bandwidths / (cfg.noise + load) ** 2, gains, cfg)
        keep = support[users, link_channels]
        return full[np.ix_(keep, keep)]

    return _Problem(
        cfg=cfg,
        objective=lambda x: float(potential_array(x, gains, cfg)),
        gradient=gradient,
        hessian=hessian,
    )


def ergodic_problem(cfg: GameConfig, spec: FadingSpec, jitter: bool = False) -> _Problem:
    variance = spec.variance

    def gradient(x: np.ndarray) -> np.ndarray:
        return ergodic_gradient_array(x, variance, cfg, jitter)

    def hessian(x: np.ndarray, support: np.ndarray) -> np.ndarray:
        # central differences of the analytic gradient along each supported link
        users, channels = np.nonzero(support)
        columns = []
        for k, alpha in zip(users, channels):
            h = 1e-6 * x[k, alpha]
            up = x.copy()
            down = x.copy()
            up[k, alpha] += h
            down[k, alpha] -= h
            diff = (gradient(up) - gradient(down)) / (2.0 * h)
            columns.append(diff[users, channels])
        matrix = np.array(columns).T if columns else np.zeros((0, 0))
        return 0.5 * (matrix + matrix.T)

    return _Problem(
        cfg=cfg,
        objective=lambda x: ergodic_potential_array(x, variance, cfg, jitter),
        gradient=gradient,
        hessian=hessian,
        ergodic=True,
    )


def solve_static(
    cfg: GameConfig,
    channels: ChannelState,
    tol: float = DEFAULT_TOL,
    initial: Optional[PowerProfile] = None,
    max_iterations: int = MAX_ITERATIONS,
    support_threshold: float = SUPPORT_THRESHOLD,
) -> EquilibriumResult:
    """Minimize the static potential over the product of simplices.

    Entropic mirror descent with Armijo backtracking identifies the support;
    Newton steps on the reduced KKT system then sharpen the solution.

    Raises
    ------
    SolverError
        If the KKT residual stays above ``tol``; ``best`` holds the last iterate.
    """

    return _minimize(static_problem(cfg, channels), initial, tol, max_iterations, support_threshold)


def solve_ergodic(
    cfg: GameConfig,
    spec: FadingSpec,
    tol: float = ERGODIC_TOL,
    initial: Optional[PowerProfile] = None,
    max_iterations: int = MAX_ITERATIONS,
    support_threshold: float = SUPPORT_THRESHOLD,
    jitter: bool = False,
) -> EquilibriumResult:
    """Minimize the closed-form ergodic potential of Gaussian fading."""

    require_gaussian(spec)
    return _minimize(ergodic_problem(cfg, spec, jitter), initial, tol, max_iterations, support_threshold)


def uniqueness_probe(
    cfg: GameConfig,
    channels: ChannelState,
    n_starts: int,
    tol: float,
    seed: int = 0,
    solver_tol: float = DEFAULT_TOL,
) -> UniquenessReport:
    """Solve from ``n_starts`` random interior points and report the L1 spread."""

    if n_starts < 2:
        raise PreconditionError("uniqueness_probe needs at least 2 starts")
    rng = np.random.default_rng(seed)
    solutions = [
        solve_static(cfg, channels, solver_tol, initial=PowerProfile.random_interior(cfg, rng)).profile.allocation
        for _ in range(n_starts)
    ]
    spread = max(float(np.abs(a - b).sum()) for a, b in itertools.combinations(solutions, 2))
    if spread > tol:
        logger.info("Multi-start spread %.3e exceeds %.1e", spread, tol)
    return UniquenessReport(unique_within_tol=spread <= tol, spread=spread, n_starts=n_starts)


def support_multigraph(
    profile: PowerProfile, cfg: GameConfig, support_threshold: float = SUPPORT_THRESHOLD
) -> SupportMultigraph:
    """Superimpose one star per user, hubbed at its lowest supported channel."""

    if support_threshold <= 0:
        raise PreconditionError("support_threshold must be positive")
    edges = []
    for channels in profile.support(cfg, support_threshold):
        if len(channels) < 2:
            continue
        hub = min(channels)
        edges.extend((hub, alpha) for alpha in sorted(channels) if alpha != hub)
    return SupportMultigraph(vertices=tuple(range(cfg.num_channels)), edges=tuple(sorted(edges)))


def is_acyclic(graph: SupportMultigraph) -> bool:
    """True iff the multigraph is a forest; parallel edges form cycles."""

    return bool(nx.is_forest(graph.to_networkx()))


def sum_capacity(
    cfg: GameConfig,
    channels_or_spec: Union[ChannelState, FadingSpec],
    equilibrium: Optional[EquilibriumResult] = None,
    jitter: bool = False,
) -> float:
    """``-Phi(q)`` at the static equilibrium, or ``-Phi_bar(q)`` at the ergodic one."""

    if isinstance(channels_or_spec, ChannelState):
        if equilibrium is None:
            equilibrium = solve_static(cfg, channels_or_spec)
        return -float(potential_array(equilibrium.profile.allocation, channels_or_spec.gains, cfg))
    if equilibrium is None:
        equilibrium = solve_ergodic(cfg, channels_or_spec, jitter=jitter)
    return -ergodic_potential_array(equilibrium.profile.allocation, channels_or_spec.variance, cfg, jitter)
