from __future__ import annotations

import math

import numpy as np
import pytest

from pmac_learning.dynamics import integrate_ode
from pmac_learning.equilibrium import solve_static
from pmac_learning.errors import (
    PreconditionError,
    StrictnessError,
    UndefinedCorrelationError,
    UndefinedRatioError,
)
from pmac_learning.game import marginal_array, potential
from pmac_learning.metrics import (
    KL_INFINITY,
    eql,
    evolutionary_index,
    general_certificate,
    instantaneous_exponent,
    kl_divergence,
    kl_divergence_per_user,
    power_deficit_rate,
    seminorms,
    sre,
    strict_certificate,
    tracking_delay,
)
from pmac_learning.models import ChannelState, GameConfig, PowerProfile, Trajectory

from .conftest import random_channels, strict_instance


def test_kl_divergence_basics(two_by_two, rng):
    p = PowerProfile.random_interior(two_by_two, rng)
    q = PowerProfile.random_interior(two_by_two, rng)
    assert kl_divergence(p, p) == 0.0
    assert kl_divergence(q, p) > 0.0
    assert kl_divergence(q, p) == pytest.approx(kl_divergence_per_user(q, p).sum())
    vertex = PowerProfile.vertex(two_by_two, [0, 1])
    assert kl_divergence(vertex, p) == pytest.approx(-math.log(p.allocation[0, 0]) - math.log(p.allocation[1, 1]))
    assert kl_divergence(p, vertex) == KL_INFINITY
    np.testing.assert_array_equal(kl_divergence_per_user(p, vertex), [KL_INFINITY, KL_INFINITY])


def test_sre_is_one_for_orthogonal_equilibria(two_by_two):
    channels = ChannelState.from_gains([[1.0, 0.01], [0.01, 1.0]], two_by_two)
    result = solve_static(two_by_two, channels)
    assert result.is_vertex
    assert sre(result.profile, channels, two_by_two) == pytest.approx(1.0, abs=1e-9)


def test_sre_below_one_when_users_share_a_channel():
    cfg = GameConfig.full_access(3, 2)
    channels = ChannelState.from_gains([[1.0, 0.9], [1.1, 1.0], [0.95, 1.05]], cfg)
    result = solve_static(cfg, channels)
    assert sre(result.profile, channels, cfg) < 1.0


def test_sre_undefined_at_zero_capacity(two_by_two):
    channels = ChannelState.from_gains(np.zeros((2, 2)), two_by_two)
    with pytest.raises(UndefinedRatioError):
        sre(PowerProfile.uniform(two_by_two), channels, two_by_two, capacity=0.0)


def test_eql_reaches_one_at_equilibrium(rng):
    cfg = GameConfig.full_access(3, 3)
    channels = random_channels(cfg, rng)
    result = solve_static(cfg, channels)
    assert eql(result.profile, channels, cfg, result) == pytest.approx(1.0)
    for _ in range(20):
        assert eql(PowerProfile.random_interior(cfg, rng), channels, cfg, result) <= 1.0 + 1e-12


def test_evolutionary_index_is_the_divergence_decay_rate(rng):
    cfg = GameConfig.full_access(2, 3)
    channels = random_channels(cfg, rng)
    result = solve_static(cfg, channels)
    p0 = PowerProfile.random_interior(cfg, rng)
    h = 1e-4
    trajectory = integrate_ode(p0, channels, cfg, t_end=2 * h, dt=h)
    d0, d1, d2 = (kl_divergence(result.profile, p) for p in trajectory.profiles)
    derivative = (-3.0 * d0 + 4.0 * d1 - d2) / (2.0 * h)
    index = evolutionary_index(p0, result, marginal_array(p0.allocation, channels.gains, cfg), cfg)
    assert index.value == pytest.approx(-derivative, rel=1e-5, abs=1e-9)


def test_seminorms_split_support_and_complement():
    support = np.array([[True, False], [False, True]])
    mask = np.ones((2, 2), dtype=bool)
    z = np.array([[-0.3, 0.3], [0.4, -0.4]])
    perpendicular, parallel = seminorms(z, support, mask)
    assert perpendicular == pytest.approx(0.7)
    assert parallel == pytest.approx(0.5)


def test_potential_gap_dominates_the_perpendicular_distance(rng):
    cfg, channels = strict_instance(rng)
    result = solve_static(cfg, channels)
    certificate = strict_certificate(cfg, channels, result, PowerProfile.uniform(cfg))
    q = result.profile
    support = q.allocation > 0
    for _ in range(50):
        p = PowerProfile.random_interior(cfg, rng)
        perpendicular, _ = seminorms(p.allocation - q.allocation, support, cfg.access_mask)
        gap = potential(p, channels, cfg) - potential(q, channels, cfg)
        assert gap >= certificate.margin_m * perpendicular - 1e-9


def test_strict_certificate_fields(rng):
    cfg, channels = strict_instance(rng)
    result = solve_static(cfg, channels)
    assert result.support == ((0,), (1,))
    p0 = PowerProfile.uniform(cfg)
    certificate = strict_certificate(cfg, channels, result, p0)
    marginals = marginal_array(result.profile.allocation, channels.gains, cfg)
    assert certificate.kind == "strict"
    assert certificate.per_user_dv[0] == pytest.approx(marginals[0, 0] - marginals[0, 1])
    gamma = kl_divergence(result.profile, p0)
    assert certificate.gamma[1] == pytest.approx(gamma)
    assert certificate.c == pytest.approx(min(certificate.per_user_c.values()))
    assert 0.0 < certificate.c < certificate.margin_m


def test_strict_certificate_needs_a_vertex():
    cfg = GameConfig.full_access(1, 2, max_power=3.0)
    channels = ChannelState.from_gains([[2.0, 0.5]], cfg)
    result = solve_static(cfg, channels)
    with pytest.raises(StrictnessError):
        strict_certificate(cfg, channels, result, PowerProfile.uniform(cfg))


def test_certificates_refuse_infinite_initial_divergence(rng):
    cfg, channels = strict_instance(rng)
    result = solve_static(cfg, channels)
    with pytest.raises(PreconditionError):
        strict_certificate(cfg, channels, result, PowerProfile.vertex(cfg, [1, 0]))


def test_general_certificate_for_interior_equilibrium():
    cfg = GameConfig.full_access(1, 2, max_power=3.0)
    channels = ChannelState.from_gains([[2.0, 0.5]], cfg)
    result = solve_static(cfg, channels)
    p0 = PowerProfile.from_array([[0.3, 2.7]], cfg)
    certificate = general_certificate(cfg, channels, result, p0, seed=3)
    assert certificate.kind == "general"
    assert certificate.margin_m is None
    assert certificate.rayleigh_r > 0
    assert certificate.entropy_b >= certificate.entropy_a
    assert certificate.c == pytest.approx(certificate.rayleigh_r * certificate.q0 / certificate.entropy_b)

    trajectory = integrate_ode(p0, channels, cfg, t_end=20.0, dt=0.01, record_every=10)
    divergence = np.array([kl_divergence(result.profile, p) for p in trajectory.profiles])
    bound = divergence[0] * np.exp(-certificate.c * trajectory.times)
    assert np.all(divergence <= bound * (1.0 + 1e-6))


def test_general_certificate_rejects_small_entropy_ratio(rng):
    cfg, channels = strict_instance(rng)
    result = solve_static(cfg, channels)
    with pytest.raises(PreconditionError):
        general_certificate(cfg, channels, result, PowerProfile.uniform(cfg), a=1.0)


def test_instantaneous_exponent_total_is_the_slowest_user(two_by_two):
    channels = ChannelState.from_gains([[3.0, 0.1], [0.2, 2.0]], two_by_two)
    result = solve_static(two_by_two, channels)
    np.testing.assert_allclose(result.profile.allocation, [[1.0, 0.0], [0.0, 1.0]], atol=1e-12)
    start = PowerProfile.uniform(two_by_two)
    later = PowerProfile(allocation=np.array([[0.99, 0.01], [0.4, 0.6]]))
    series = instantaneous_exponent(Trajectory(times=[0.0, 1.0], profiles=(start, later)), result)
    expected = [-math.log(math.log(1 / 0.99) / math.log(2.0)), -math.log(math.log(1 / 0.6) / math.log(2.0))]
    np.testing.assert_allclose([series.per_user[0][0], series.per_user[1][0]], expected)
    np.testing.assert_allclose(series.total, [min(expected)])
    assert series.total[0] == pytest.approx(0.3052, abs=1e-4)


def test_instantaneous_exponent_skips_users_at_equilibrium(two_by_two):
    channels = ChannelState.from_gains([[3.0, 0.1], [0.2, 2.0]], two_by_two)
    result = solve_static(two_by_two, channels)
    q = result.profile.allocation
    start = q.copy()
    start[0] = [0.5, 0.5]
    later = q.copy()
    later[0] = [0.9, 0.1]
    profiles = (PowerProfile(allocation=start), PowerProfile(allocation=later))
    trajectory = Trajectory(times=[0.0, 2.0], profiles=profiles)
    series = instantaneous_exponent(trajectory, result)
    assert series.per_user[1] is None
    d0 = kl_divergence(result.profile, profiles[0])
    d1 = kl_divergence(result.profile, profiles[1])
    np.testing.assert_allclose(series.per_user[0], [-math.log(d1 / d0) / 2.0])
    np.testing.assert_allclose(series.total, [-math.log(d1 / d0) / 2.0])
    np.testing.assert_array_equal(series.times, [2.0])


def test_tracking_delay_recovers_a_known_shift():
    n = np.arange(2000)
    target = np.sin(2.0 * np.pi * n / 150.0) + 0.3 * np.sin(2.0 * np.pi * n / 37.0)
    learned = np.roll(target, 4)
    result = tracking_delay(target.tolist(), learned.tolist(), sample_period=0.003)
    assert result.delay == pytest.approx(0.012)
    assert result.correlogram.max() == pytest.approx(1.0, abs=0.01)
    assert result.to_dict()["delay"] == pytest.approx(0.012)


def test_tracking_delay_reads_the_tracked_link(two_by_two):
    values = 0.5 + 0.4 * np.sin(np.arange(400) / 10.0)
    series = [PowerProfile.from_array([[v, 1.0 - v], [1.0 - v, v]], two_by_two) for v in values]
    shifted = series[-2:] + series[:-2]
    assert tracking_delay(series, shifted, 1e-3, link=(1, 1)).delay == pytest.approx(2e-3)


def test_tracking_delay_rejects_constant_and_misaligned_series():
    with pytest.raises(UndefinedCorrelationError):
        tracking_delay([1.0] * 10, list(range(10)), 1e-3)
    with pytest.raises(PreconditionError):
        tracking_delay([1.0, 2.0], [1.0, 2.0, 3.0], 1e-3)


def test_power_deficit_rate_on_exact_exponential(two_by_two):
    times = np.arange(0.0, 40.0, 0.5)
    deficit = np.exp(-0.7 * times)
    profiles = tuple(
        PowerProfile(allocation=np.array([[1.0 - d, d], [0.5, 0.5]])) for d in deficit
    )
    trajectory = Trajectory(times=times, profiles=profiles)
    assert power_deficit_rate(trajectory, k=0, channel=0) == pytest.approx(0.7, rel=1e-6)
    with pytest.raises(PreconditionError):
        power_deficit_rate(trajectory, k=1, channel=0)


@pytest.mark.slow
def test_divergence_decays_faster_than_the_strict_certificate(rng):
    for _ in range(20):
        cfg, channels = strict_instance(rng)
        result = solve_static(cfg, channels)
        p0 = PowerProfile.random_interior(cfg, rng)
        certificate = strict_certificate(cfg, channels, result, p0)
        trajectory = integrate_ode(p0, channels, cfg, t_end=20.0, dt=0.01, record_every=10)
        divergence = np.array([kl_divergence(result.profile, p) for p in trajectory.profiles])
        bound = divergence[0] * np.exp(-certificate.c * trajectory.times)
        assert np.all(divergence <= bound * (1.0 + 1e-6))

        total = instantaneous_exponent(trajectory, result).total
        tail = total[len(total) - len(total) // 3 :]
        assert tail.min() >= certificate.c


@pytest.mark.slow
def test_power_deficit_decays_at_the_marginal_gap(rng):
    for _ in range(10):
        cfg, channels = strict_instance(rng)
        result = solve_static(cfg, channels)
        certificate = strict_certificate(cfg, channels, result, PowerProfile.uniform(cfg))
        trajectory = integrate_ode(PowerProfile.uniform(cfg), channels, cfg, t_end=40.0, dt=0.01, record_every=10)
        for k, channels_k in enumerate(result.support):
            rate = power_deficit_rate(trajectory, k, channels_k[0])
            assert rate == pytest.approx(certificate.per_user_dv[k], rel=0.1)
