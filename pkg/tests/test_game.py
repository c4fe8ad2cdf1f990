from __future__ import annotations

import numpy as np
import pytest

from pmac_learning.game import (
    degeneracy_index,
    marginal_utility,
    potential,
    potential_array,
    potential_hessian,
    sinr,
    sum_rate,
    utilities,
    utility,
)
from pmac_learning.models import ChannelState, GameConfig, PowerProfile

from .conftest import random_channels, random_game


def test_single_user_sinr_is_snr():
    cfg = GameConfig.full_access(1, 2, max_power=2.0, noise_power=[0.5, 2.0])
    channels = ChannelState.from_gains([[3.0, 1.0]], cfg)
    profile = PowerProfile.from_array([[1.5, 0.5]], cfg)
    np.testing.assert_allclose(sinr(profile, channels, cfg), [[9.0, 0.25]])
    assert utility(profile, channels, cfg, 0) == pytest.approx(np.log(10.0) + np.log(1.25))


def test_interference_only_from_shared_channel(two_by_two):
    channels = ChannelState.from_gains([[1.0, 2.0], [4.0, 0.5]], two_by_two)
    profile = PowerProfile.from_array([[1.0, 0.0], [0.5, 0.5]], two_by_two)
    expected = np.array([[1.0 / (1.0 + 2.0), 0.0], [2.0 / (1.0 + 1.0), 0.25]])
    np.testing.assert_allclose(sinr(profile, channels, two_by_two), expected)


def test_inaccessible_links_carry_nothing():
    cfg = GameConfig.from_dict({"num_users": 2, "num_channels": 3, "accessible": [[0, 1], [1, 2]]})
    channels = ChannelState.from_gains(np.full((2, 3), 2.0), cfg)
    profile = PowerProfile.uniform(cfg)
    assert sinr(profile, channels, cfg)[0, 2] == 0.0
    assert marginal_utility(profile, channels, cfg)[1, 0] == 0.0


def test_exact_potential_identity(rng):
    for _ in range(1000):
        cfg = random_game(rng)
        channels = random_channels(cfg, rng)
        p = PowerProfile.random_interior(cfg, rng)
        k = int(rng.integers(cfg.num_users))
        deviated = p.allocation.copy()
        deviated[k] = rng.dirichlet(np.ones(cfg.num_channels)) * cfg.max_power[k]
        p_dev = PowerProfile.from_array(deviated, cfg)

        gain = utility(p_dev, channels, cfg, k) - utility(p, channels, cfg, k)
        phi = potential(p, channels, cfg)
        drop = phi - potential(p_dev, channels, cfg)
        assert abs(gain - drop) <= 1e-10 * (1.0 + abs(phi))


def _finite_difference(func, allocation, k, alpha, h):
    up = allocation.copy()
    down = allocation.copy()
    up[k, alpha] += h
    down[k, alpha] -= h
    return (func(up) - func(down)) / (2.0 * h)


def test_marginal_utility_matches_finite_differences(rng):
    for _ in range(100):
        cfg = random_game(rng)
        channels = random_channels(cfg, rng)
        p = PowerProfile.random_interior(cfg, rng)
        marginals = marginal_utility(p, channels, cfg)
        for k, alpha in cfg.links():
            h = 1e-5

            def own_rate(x, k=k):
                return utility(PowerProfile(allocation=x), channels, cfg, k)

            def minus_potential(x):
                return -potential(PowerProfile(allocation=x), channels, cfg)

            assert _finite_difference(own_rate, p.allocation, k, alpha, h) == pytest.approx(
                marginals[k, alpha], rel=1e-6, abs=1e-9
            )
            assert _finite_difference(minus_potential, p.allocation, k, alpha, h) == pytest.approx(
                marginals[k, alpha], rel=1e-6, abs=1e-9
            )


def test_potential_hessian_matches_gradient_differences(rng):
    cfg = GameConfig.full_access(3, 2, bandwidth=[1.0, 2.0])
    channels = random_channels(cfg, rng)
    p = PowerProfile.random_interior(cfg, rng)
    hessian = potential_hessian(p, channels, cfg)
    links = list(cfg.links())
    h = 1e-6
    for j, (k, alpha) in enumerate(links):
        up = p.allocation.copy()
        down = p.allocation.copy()
        up[k, alpha] += h
        down[k, alpha] -= h
        grad_up = -marginal_utility(PowerProfile(allocation=up), channels, cfg)
        grad_down = -marginal_utility(PowerProfile(allocation=down), channels, cfg)
        column = (grad_up - grad_down) / (2.0 * h)
        np.testing.assert_allclose([column[l] for l in links], hessian[:, j], rtol=1e-5, atol=1e-9)


def test_potential_is_convex_along_segments(rng):
    for _ in range(20):
        cfg = random_game(rng)
        gains = random_channels(cfg, rng).gains
        p = PowerProfile.random_interior(cfg, rng).allocation
        p_prime = PowerProfile.random_interior(cfg, rng).allocation
        lam = rng.uniform()
        mixed = potential_array(lam * p + (1.0 - lam) * p_prime, gains, cfg)
        chord = lam * potential_array(p, gains, cfg) + (1.0 - lam) * potential_array(p_prime, gains, cfg)
        assert mixed <= chord + 1e-12


def test_sum_rate_of_orthogonal_users_is_sic_capacity(two_by_two):
    channels = ChannelState.from_gains([[3.0, 0.1], [0.2, 1.0]], two_by_two)
    vertex = PowerProfile.vertex(two_by_two, [0, 1])
    assert sum_rate(vertex, channels, two_by_two) == pytest.approx(-potential(vertex, channels, two_by_two))
    np.testing.assert_allclose(utilities(vertex, channels, two_by_two), [np.log(4.0), np.log(2.0)])


def test_sud_rate_never_exceeds_sic_rate(rng):
    for _ in range(50):
        cfg = random_game(rng)
        channels = random_channels(cfg, rng)
        p = PowerProfile.random_interior(cfg, rng)
        assert sum_rate(p, channels, cfg) <= -potential(p, channels, cfg) + 1e-12


@pytest.mark.parametrize(("users", "channels", "expected"), [(2, 2, 0), (3, 2, 1), (2, 5, 3), (1, 4, -1)])
def test_degeneracy_index(users, channels, expected):
    assert degeneracy_index(GameConfig.full_access(users, channels)) == expected
