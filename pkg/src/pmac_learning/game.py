"""Static PMAC game: SINR, spectral efficiencies, marginal utilities and the potential.

The ``*_array`` kernels work on raw ``(K, A)`` allocation and gain arrays so the
learning loops can call them without building value objects at every step.
"""
from __future__ import annotations

import logging
from typing import Tuple

import numpy as np

from .models import ChannelState, GameConfig, PowerProfile

logger = logging.getLogger(__name__)


def channel_load(allocation: np.ndarray, gains: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Received power ``sum_k g_ka p_ka`` on every channel."""

    return np.where(mask, gains * allocation, 0.0).sum(axis=-2)


def sinr_array(allocation: np.ndarray, gains: np.ndarray, cfg: GameConfig) -> np.ndarray:
    mask = cfg.access_mask
    signal = np.where(mask, gains * allocation, 0.0)
    load = signal.sum(axis=-2, keepdims=True)
    interference = np.clip(load - signal, 0.0, None)
    return np.where(mask, signal / (cfg.noise + interference), 0.0)


def utility_array(allocation: np.ndarray, gains: np.ndarray, cfg: GameConfig) -> np.ndarray:
    """Per-user spectral efficiencies ``u_k``, shape ``(..., K)``."""

    rates = cfg.bandwidths * np.log1p(sinr_array(allocation, gains, cfg))
    return np.where(cfg.access_mask, rates, 0.0).sum(axis=-1)


def marginal_array(allocation: np.ndarray, gains: np.ndarray, cfg: GameConfig) -> np.ndarray:
    """``v_ka = b_a g_ka / (sigma_a^2 + load_a)``; the load includes user k."""

    mask = cfg.access_mask
    load = channel_load(allocation, gains, mask)[..., None, :]
    return np.where(mask, cfg.bandwidths * gains / (cfg.noise + load), 0.0)


def potential_array(allocation: np.ndarray, gains: np.ndarray, cfg: GameConfig) -> np.ndarray:
    load = channel_load(allocation, gains, cfg.access_mask)
    return -(cfg.bandwidths * np.log1p(load / cfg.noise)).sum(axis=-1)


def user_average(allocation: np.ndarray, marginals: np.ndarray, cfg: GameConfig) -> np.ndarray:
    """Power-weighted average marginal ``v_k = P_k^-1 sum_b p_kb v_kb``."""

    return (allocation * marginals).sum(axis=-1) / cfg.powers


def sinr(profile: PowerProfile, channels: ChannelState, cfg: GameConfig) -> np.ndarray:
    return sinr_array(profile.allocation, channels.gains, cfg)


def utility(profile: PowerProfile, channels: ChannelState, cfg: GameConfig, k: int) -> float:
    """Spectral efficiency of user ``k`` in nats/s."""

    return float(utility_array(profile.allocation, channels.gains, cfg)[k])


def utilities(profile: PowerProfile, channels: ChannelState, cfg: GameConfig) -> np.ndarray:
    return utility_array(profile.allocation, channels.gains, cfg)


def sum_rate(profile: PowerProfile, channels: ChannelState, cfg: GameConfig) -> float:
    return float(utilities(profile, channels, cfg).sum())


def marginal_utility(profile: PowerProfile, channels: ChannelState, cfg: GameConfig) -> np.ndarray:
    return marginal_array(profile.allocation, channels.gains, cfg)


def potential(profile: PowerProfile, channels: ChannelState, cfg: GameConfig) -> float:
    """Static potential ``-sum_a b_a log(1 + load_a / sigma_a^2)``."""

    return float(potential_array(profile.allocation, channels.gains, cfg))


def link_indices(cfg: GameConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Row/column indices of the existing links, ordered user by user."""

    return np.nonzero(cfg.access_mask)


def hessian_from_curvature(curvature: np.ndarray, gains: np.ndarray, cfg: GameConfig) -> np.ndarray:
    """Assemble the (Q, Q) link Hessian ``delta_ab c_a g_ka g_lb`` from per-channel curvature ``c``."""

    users, channels = link_indices(cfg)
    g = gains[users, channels]
    same_channel = channels[:, None] == channels[None, :]
    return np.where(same_channel, curvature[channels][:, None] * np.outer(g, g), 0.0)


def potential_hessian(profile: PowerProfile, channels: ChannelState, cfg: GameConfig) -> np.ndarray:
    """Hessian of the static potential over the existing links.

    The potential depends on each channel only through its load, so the matrix
    couples two links only when they share a channel.
    """

    load = channel_load(profile.allocation, channels.gains, cfg.access_mask)
    curvature = cfg.bandwidths / (cfg.noise + load) ** 2
    return hessian_from_curvature(curvature, channels.gains, cfg)


def degeneracy_index(cfg: GameConfig) -> int:
    """``Q - A - K``; positive values allow non-strictly convex potentials."""

    return cfg.num_links - cfg.num_channels - cfg.num_users
