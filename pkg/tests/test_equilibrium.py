from __future__ import annotations

import numpy as np
import pytest
from scipy import optimize

from pmac_learning import equilibrium
from pmac_learning.channels import draw_static
from pmac_learning.equilibrium import (
    is_acyclic,
    kkt_residual,
    solve_ergodic,
    solve_static,
    sum_capacity,
    support_multigraph,
    uniqueness_probe,
)
from pmac_learning.errors import FadingKindError, SolverError
from pmac_learning.game import marginal_utility, potential, potential_array, sum_rate
from pmac_learning.metrics import kl_divergence
from pmac_learning.models import ChannelState, FadingKind, FadingSpec, GameConfig, PowerProfile
from pmac_learning.special_functions import ergodic_gradient_array

from .conftest import random_channels, random_game, strict_instance


def test_single_user_water_filling():
    cfg = GameConfig.full_access(1, 2, max_power=3.0)
    channels = ChannelState.from_gains([[2.0, 0.5]], cfg)
    result = solve_static(cfg, channels)
    np.testing.assert_allclose(result.profile.allocation, [[2.25, 0.75]], atol=1e-8)
    assert result.support == ((0, 1),)
    assert result.multipliers[0] == pytest.approx(2.0 / 5.5)


def test_single_user_water_filling_at_low_budget_is_a_vertex():
    cfg = GameConfig.full_access(1, 2, max_power=1.0)
    channels = ChannelState.from_gains([[2.0, 0.5]], cfg)
    result = solve_static(cfg, channels)
    assert result.is_vertex
    assert result.support == ((0,),)
    assert result.profile.allocation[0, 0] == pytest.approx(1.0, abs=1e-9)


def test_solution_satisfies_kkt_conditions(rng):
    cfg = GameConfig.full_access(3, 4, max_power=[1.0, 2.0, 0.5], noise_power=[0.5, 1.0, 1.0, 2.0])
    channels = random_channels(cfg, rng)
    result = solve_static(cfg, channels)
    assert result.kkt_residual <= 1e-10
    marginals = marginal_utility(result.profile, channels, cfg)
    residual, multipliers = kkt_residual(result.profile.allocation, marginals, cfg)
    assert residual == pytest.approx(result.kkt_residual)
    for k, channels_k in enumerate(result.support):
        np.testing.assert_allclose(marginals[k, list(channels_k)], multipliers[k], atol=1e-9)
        off = [alpha for alpha in range(cfg.num_channels) if alpha not in channels_k]
        assert np.all(marginals[k, off] <= multipliers[k] + 1e-9)
    assert result.potential_value == pytest.approx(potential(result.profile, channels, cfg))


def test_equilibrium_start_returns_immediately(rng):
    cfg = GameConfig.full_access(2, 3)
    channels = random_channels(cfg, rng)
    first = solve_static(cfg, channels)
    again = solve_static(cfg, channels, initial=first.profile)
    assert again.iterations == 0
    np.testing.assert_array_equal(again.profile.allocation, first.profile.allocation)


def test_resolving_from_a_solution_converges_at_once(rng):
    for _ in range(5):
        cfg = random_game(rng)
        channels = random_channels(cfg, rng)
        first = solve_static(cfg, channels)
        again = solve_static(cfg, channels, initial=first.profile)
        assert again.iterations <= 2
        assert again.profile.l1_distance(first.profile, cfg) <= 1e-9


def test_off_support_entries_are_exactly_zero(rng):
    cfg, channels = strict_instance(rng)
    result = solve_static(cfg, channels)
    allocation = result.profile.allocation
    assert allocation[0, 1] == 0.0 and allocation[1, 0] == 0.0
    assert kl_divergence(result.profile, PowerProfile.vertex(cfg, [0, 1])) == pytest.approx(0.0, abs=1e-15)

    for _ in range(10):
        cfg = random_game(rng)
        allocation = solve_static(cfg, random_channels(cfg, rng)).profile.allocation
        assert np.all((allocation == 0.0) | (allocation > 1e-6 * cfg.powers[:, None]))


def test_solver_error_carries_best_iterate(two_by_two, monkeypatch):
    monkeypatch.setattr(equilibrium, "_newton_polish", lambda *args: None)
    channels = ChannelState.from_gains([[1.0, 0.8], [0.7, 1.2]], two_by_two)
    with pytest.raises(SolverError) as info:
        solve_static(two_by_two, channels, tol=1e-14, max_iterations=3)
    assert info.value.best is not None
    assert info.value.best.iterations == 3


def test_solution_beats_random_profiles(rng):
    cfg = GameConfig.full_access(3, 3)
    channels = random_channels(cfg, rng)
    result = solve_static(cfg, channels)
    for _ in range(200):
        p = PowerProfile.random_interior(cfg, rng)
        assert potential(p, channels, cfg) >= result.potential_value - 1e-12


def test_equal_gain_game_has_a_continuum_of_equilibria():
    cfg = GameConfig.full_access(3, 2)
    channels = ChannelState.from_gains(np.ones((3, 2)), cfg)
    report = uniqueness_probe(cfg, channels, n_starts=6, tol=1e-4, seed=1)
    assert not report.unique_within_tol
    assert report.spread > 1e-4


def test_support_multigraph_detects_cycles():
    cfg = GameConfig.full_access(2, 3)
    shared = PowerProfile.from_array([[0.5, 0.5, 0.0], [0.3, 0.7, 0.0]], cfg)
    graph = support_multigraph(shared, cfg)
    assert graph.multiplicity(0, 1) == 2
    assert not is_acyclic(graph)

    chained = PowerProfile.from_array([[0.5, 0.5, 0.0], [0.0, 0.3, 0.7]], cfg)
    graph = support_multigraph(chained, cfg)
    assert graph.edges == ((0, 1), (1, 2))
    assert is_acyclic(graph)


def test_sum_capacity_bounds_the_sum_rate(rng):
    cfg = GameConfig.full_access(3, 2)
    channels = random_channels(cfg, rng)
    result = solve_static(cfg, channels)
    capacity = sum_capacity(cfg, channels, result)
    assert capacity == pytest.approx(-result.potential_value)
    assert sum_rate(result.profile, channels, cfg) <= capacity + 1e-12


def test_single_user_sum_capacity_matches_a_scalar_optimizer():
    cfg = GameConfig.full_access(1, 2, max_power=3.0, bandwidth=[1.0, 2.0], noise_power=[1.0, 0.5])
    channels = ChannelState.from_gains([[2.0, 0.3]], cfg)

    def negative_rate(x):
        return -(np.log1p(2.0 * x / 1.0) + 2.0 * np.log1p(0.3 * (3.0 - x) / 0.5))

    best = optimize.minimize_scalar(negative_rate, bounds=(0.0, 3.0), method="bounded", options={"xatol": 1e-12})
    assert sum_capacity(cfg, channels) == pytest.approx(-best.fun, rel=1e-9)


def test_ergodic_equilibrium_balances_mean_marginals(two_by_two):
    spec = FadingSpec(kind=FadingKind.GAUSSIAN_FAST, variance=[[2.0, 1.0], [0.8, 1.6]])
    result = solve_ergodic(two_by_two, spec, jitter=True)
    assert result.ergodic
    assert result.kkt_residual <= 1e-8
    marginals = -ergodic_gradient_array(result.profile.allocation, spec.variance, two_by_two, jitter=True)
    residual, _ = kkt_residual(result.profile.allocation, marginals, two_by_two)
    assert residual <= 1e-8
    assert sum_capacity(two_by_two, spec, result, jitter=True) > 0


def test_ergodic_solver_rejects_static_fading(two_by_two):
    with pytest.raises(FadingKindError):
        solve_ergodic(two_by_two, FadingSpec.uniform(two_by_two, FadingKind.STATIC))


@pytest.mark.slow
def test_random_games_have_unique_acyclic_equilibria(rng):
    for instance in range(50):
        cfg = GameConfig.full_access(
            int(rng.integers(1, 6)), int(rng.integers(2, 6)), max_power=float(rng.uniform(0.5, 2.0))
        )
        channels = random_channels(cfg, rng)
        report = uniqueness_probe(cfg, channels, n_starts=20, tol=1e-4 * max(cfg.max_power), seed=instance)
        assert report.unique_within_tol, report
        result = solve_static(cfg, channels)
        assert is_acyclic(support_multigraph(result.profile, cfg))


def _grid_minimum(cfg, channels, n=1001):
    share = np.linspace(0.0, 1.0, n)
    x, y = np.meshgrid(share, share, indexing="ij")
    allocation = np.stack([np.stack([x, 1.0 - x], axis=-1), np.stack([y, 1.0 - y], axis=-1)], axis=-2)
    values = potential_array(allocation, channels.gains, cfg)
    i, j = np.unravel_index(np.argmin(values), values.shape)

    def objective(z):
        point = np.array([[z[0], 1.0 - z[0]], [z[1], 1.0 - z[1]]])
        return float(potential_array(point, channels.gains, cfg))

    refined = optimize.minimize(
        objective,
        [share[i], share[j]],
        method="L-BFGS-B",
        bounds=[(0.0, 1.0), (0.0, 1.0)],
        options={"ftol": 1e-15, "gtol": 1e-12},
    )
    return np.array([[refined.x[0], 1.0 - refined.x[0]], [refined.x[1], 1.0 - refined.x[1]]])


@pytest.mark.slow
def test_solver_matches_exhaustive_grid_search(two_by_two):
    for seed in range(25):
        spec = FadingSpec.uniform(two_by_two, FadingKind.STATIC, seed=seed)
        channels = draw_static(spec, two_by_two)
        solved = solve_static(two_by_two, channels).profile.allocation
        assert np.abs(solved - _grid_minimum(two_by_two, channels)).sum() <= 1e-3
