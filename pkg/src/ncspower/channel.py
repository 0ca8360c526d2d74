"""Correlated Rayleigh fading channel and the MQAM symbol-error model.

The sampled CSI follows h(t+1) = a h(t) + z(t) with a = exp(-a~ tau) and
circularly-symmetric innovation of variance Z = 1 - a^2, so |h|^2 is
stationary Exp(1).  A transmission at SNR p against CSI alpha fails with
probability exp(-p tau alpha / (kappa(R) B_W)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FadingChannel",
    "ChannelState",
    "step_channel",
    "ser",
    "sample_outcome",
    "stationary_state",
]


def kappa_of_rate(rate: int) -> float:
    """MQAM constellation constant kappa(R) = (2^(R+1) - 2) / 3."""
    return (2.0 ** (rate + 1) - 2.0) / 3.0


@dataclass(frozen=True)
class FadingChannel:
    """AR(1) fading parameters plus the SER constants for rate R."""

    a_tilde: float
    tau: float
    b_w: float
    rate_total: int

    def __post_init__(self):
        if self.a_tilde <= 0:
            raise ValueError("a_tilde must be > 0")
        if self.tau <= 0 or self.b_w <= 0:
            raise ValueError("tau and B_W must be > 0")
        if self.rate_total < 1:
            raise ValueError("rate_total must be >= 1")

    @property
    def a(self) -> float:
        return math.exp(-self.a_tilde * self.tau)

    @property
    def innovation_var(self) -> float:
        # 1 - exp(-2 a~ tau), written so a^2 + Z = 1 holds exactly
        return 1.0 - self.a * self.a

    @property
    def kappa(self) -> float:
        return kappa_of_rate(self.rate_total)


@dataclass(frozen=True)
class ChannelState:
    """Complex CSI h and its squared magnitude alpha."""

    h: complex

    @property
    def alpha(self) -> float:
        return abs(self.h) ** 2


def stationary_state(rng: np.random.Generator) -> ChannelState:
    """Draw h from the stationary CN(0, 1) law."""
    re, im = rng.standard_normal(2)
    return ChannelState(h=complex(re, im) / math.sqrt(2.0))


def step_channel(state: ChannelState, channel: FadingChannel,
                 rng: np.random.Generator) -> ChannelState:
    """Advance the CSI one slot: h' = a h + z, z ~ CN(0, Z)."""
    z_std = math.sqrt(channel.innovation_var / 2.0)
    re, im = rng.standard_normal(2)
    z = complex(re, im) * z_std
    return ChannelState(h=channel.a * state.h + z)


def ser(p: float, alpha: float, channel: FadingChannel) -> float:
    """Symbol error probability exp(-p tau alpha / (kappa B_W))."""
    if p < 0:
        raise ValueError("transmit SNR must be >= 0")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    return math.exp(-p * channel.tau * alpha / (channel.kappa * channel.b_w))


def sample_outcome(p: float, alpha: float, channel: FadingChannel,
                   rng: np.random.Generator) -> int:
    """Bernoulli transmission outcome: 1 on success, 0 on symbol error."""
    return 0 if rng.random() < ser(p, alpha, channel) else 1
