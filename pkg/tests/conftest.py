from __future__ import annotations

import numpy as np
import pytest

from pmac_learning.models import ChannelState, GameConfig


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


def random_game(rng: np.random.Generator, max_users: int = 4, max_channels: int = 5) -> GameConfig:
    """Full-access game with random budgets, bandwidths and noise powers."""

    num_users = int(rng.integers(1, max_users + 1))
    num_channels = int(rng.integers(2, max_channels + 1))
    return GameConfig.full_access(
        num_users,
        num_channels,
        max_power=rng.uniform(0.5, 3.0, num_users).tolist(),
        bandwidth=rng.uniform(0.5, 2.0, num_channels).tolist(),
        noise_power=rng.uniform(0.5, 2.0, num_channels).tolist(),
    )


def random_channels(cfg: GameConfig, rng: np.random.Generator) -> ChannelState:
    return ChannelState.from_gains(rng.exponential(1.0, cfg.shape), cfg)


def strict_instance(rng: np.random.Generator) -> tuple[GameConfig, ChannelState]:
    """2x2 game whose equilibrium puts each user on its own strong channel."""

    cfg = GameConfig.full_access(2, 2)
    gains = rng.uniform(0.05, 0.3, (2, 2))
    np.fill_diagonal(gains, rng.uniform(2.0, 6.0, 2))
    return cfg, ChannelState.from_gains(gains, cfg)


@pytest.fixture
def two_by_two() -> GameConfig:
    return GameConfig.full_access(2, 2)
