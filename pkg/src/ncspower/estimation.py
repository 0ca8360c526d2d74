"""Certainty-equivalent controller gain and the controller-side estimator.

The plant-control side is fixed once and for all: u = -K x_hat with K from
the Riccati solution, while the estimate x_hat either propagates open loop
(symbol lost) or snaps to the dequantized received centroid (symbol
delivered).  The estimation error Delta = x - x_hat then follows its own
autonomous recursion, independent of the control sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GainUnstable
from .numerics import solve_dare, spectral_norm
from .plant import SampledPlant
from .quantizer import QuantizerState

__all__ = ["ControllerGain", "make_gain", "ce_control", "update_estimate", "step_delta"]


@dataclass(frozen=True)
class ControllerGain:
    K: np.ndarray
    P: np.ndarray


def make_gain(plant: SampledPlant, D: np.ndarray) -> ControllerGain:
    """LQG feedback gain K = (G'PG + D)^-1 G'PF with P from the DARE.

    The closed loop must be norm-contractive (||F - GK|| < 1), which is what
    the stability analysis of the estimator relies on; a gain that fails this
    is rejected rather than silently returned.
    """
    D = np.atleast_2d(np.asarray(D, dtype=float))
    P = solve_dare(plant.F, plant.G, D, plant.W)
    gpg = plant.G.T @ P @ plant.G + D
    K = np.linalg.solve(gpg, plant.G.T @ P @ plant.F)
    closed = spectral_norm(plant.F - plant.G @ K)
    if closed >= 1.0:
        raise GainUnstable(f"||F - GK|| = {closed:.6f} >= 1")
    return ControllerGain(K=K, P=P)


def ce_control(x_hat: np.ndarray, gain: ControllerGain) -> np.ndarray:
    """Certainty-equivalent control u = -K x_hat."""
    return -(gain.K @ np.asarray(x_hat, dtype=float))


def update_estimate(x_hat: np.ndarray, gamma: int, xi: np.ndarray,
                    quant_state: QuantizerState, plant: SampledPlant,
                    u_prev: np.ndarray) -> np.ndarray:
    """Controller estimate for the current slot.

    gamma = 0: open-loop propagation F x_hat + G u.
    gamma = 1: snap to Psi^-1 xi + x~ using the slot-t quantizer parameters.
    """
    if gamma:
        return quant_state.psi_inv @ np.asarray(xi, dtype=float) + quant_state.x_shift
    return plant.F @ np.asarray(x_hat, dtype=float) + plant.G @ np.atleast_1d(u_prev)


def step_delta(delta: np.ndarray, gamma: int, e_quant: np.ndarray,
               psi_inv: np.ndarray, plant: SampledPlant,
               w: np.ndarray) -> np.ndarray:
    """Estimation-error recursion.

    gamma = 0: Delta' = F Delta + w.
    gamma = 1: Delta' = -Psi^-1 e, where e is the quantization noise of the
    delivered symbol.  No control term appears: the error process is
    control-independent.
    """
    if gamma:
        return -(psi_inv @ np.asarray(e_quant, dtype=float))
    return plant.F @ np.asarray(delta, dtype=float) + np.asarray(w, dtype=float)
