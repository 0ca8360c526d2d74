"""Adaptive primitive quantizer: structure matrices, state update, box mapper.

The quantizer tracks the reachable box of the plant state through a shifting
vector x~, a coordinate transform Psi, and per-axis dynamic ranges L.  The
static structure comes from the real eigen-structure of F: Phi F Phi^-1 is
block diagonal with magnitude-rotation blocks, H undoes the rotations so
H (Phi F Phi^-1) acts by per-axis magnitude scaling only, and that is what
keeps the per-axis range recursion exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InfeasibleRates, NonDiagonalizable
from .numerics import spectral_norm

__all__ = [
    "QuantizerStructure",
    "QuantizerState",
    "QuantizeResult",
    "build_structure",
    "allocate_rates",
    "init_state",
    "update_shift",
    "update_range",
    "quantize",
]

_PAIR_TOL = 1e-9


@dataclass(frozen=True)
class QuantizerStructure:
    """Static matrices of the primitive quantizer for a given F and rates."""

    phi: np.ndarray          # Phi F Phi^-1 = Upsilon
    phi_inv: np.ndarray
    upsilon: np.ndarray      # block diagonal magnitude-rotation form of F
    h_rot: np.ndarray        # orthogonal, H @ Upsilon = diag(gamma_mag)
    gamma_mag: np.ndarray    # per-axis magnitudes |lambda_j|
    rates: np.ndarray        # bits per axis
    f_r: np.ndarray          # 2^-R_n per axis

    @property
    def dim(self) -> int:
        return self.phi.shape[0]

    @property
    def phi_norm(self) -> float:
        return spectral_norm(self.phi)


@dataclass(frozen=True)
class QuantizerState:
    """Dynamic quantizer parameters (x~, Psi, L) plus the static rate vector."""

    x_shift: np.ndarray
    psi: np.ndarray
    psi_inv: np.ndarray
    L: np.ndarray
    rates: np.ndarray


@dataclass(frozen=True)
class QuantizeResult:
    xi: np.ndarray
    overflow: bool


def build_structure(F: np.ndarray, rates) -> QuantizerStructure:
    """Real block-diagonalization of F plus the rotation-cancelling H.

    Real eigenvalue lambda_j contributes a scalar block with H_j = 1 and
    magnitude |lambda_j|; a complex pair rho e^{+-i theta} contributes the
    2x2 block rho r(theta) with H_j = r(theta)^-1 and magnitude rho on both
    axes.  Defective F (Jordan blocks larger than 1) is rejected.
    """
    F = np.atleast_2d(np.asarray(F, dtype=float))
    d = F.shape[0]
    rates = np.asarray(rates, dtype=int)
    if rates.shape != (d,):
        raise ValueError("rates must have one entry per state dimension")
    mu, vec = np.linalg.eig(F)
    cond = np.linalg.cond(vec)
    if not np.isfinite(cond) or cond > 1e8:
        raise NonDiagonalizable(
            f"F is defective or near-defective (eigvec cond {cond:.3g})"
        )
    order = np.lexsort((mu.imag, mu.real))
    mu = mu[order]
    vec = vec[:, order]

    cols = np.zeros((d, d))
    gamma = np.zeros(d)
    blocks = []  # (start, size)
    j = 0
    while j < d:
        lam = mu[j]
        if abs(lam.imag) <= _PAIR_TOL * max(1.0, abs(lam)):
            v = vec[:, j].real
            cols[:, j] = v / np.linalg.norm(v)
            gamma[j] = abs(lam.real)
            blocks.append((j, 1))
            j += 1
        else:
            if j + 1 >= d or abs(mu[j + 1] - np.conj(lam)) > 1e-6 * max(1.0, abs(lam)):
                raise NonDiagonalizable("complex eigenvalue without conjugate partner")
            lam_pos = lam if lam.imag > 0 else mu[j + 1]
            v = vec[:, j] if mu[j].imag > 0 else vec[:, j + 1]
            v = v / np.linalg.norm(v)
            k = int(np.argmax(np.abs(v)))
            v = v / (v[k] / abs(v[k]))  # phase fix, determinism only
            # the raw Re/Im pair must share one scale or the block form breaks
            cols[:, j] = v.real
            cols[:, j + 1] = v.imag
            gamma[j] = gamma[j + 1] = abs(lam_pos)
            blocks.append((j, 2))
            j += 2

    phi_inv = cols
    if np.linalg.cond(phi_inv) > 1e8:
        raise NonDiagonalizable("real eigenbasis is ill-conditioned")
    phi = np.linalg.inv(phi_inv)
    upsilon = phi @ F @ phi_inv

    h = np.eye(d)
    for start, size in blocks:
        if size == 2:
            rho = gamma[start]
            block = upsilon[start:start + 2, start:start + 2]
            h[start:start + 2, start:start + 2] = (block / rho).T
    # verify the magnitude-only action and orthogonality the range update relies on
    if spectral_norm(h @ upsilon - np.diag(gamma)) > 1e-8 * max(1.0, spectral_norm(F)):
        raise NonDiagonalizable("rotation cancellation failed; F too ill-conditioned")
    if spectral_norm(h.T @ h - np.eye(d)) > 1e-10:
        raise NonDiagonalizable("H is not orthogonal; F too ill-conditioned")

    return QuantizerStructure(
        phi=phi,
        phi_inv=phi_inv,
        upsilon=upsilon,
        h_rot=h,
        gamma_mag=gamma,
        rates=rates,
        f_r=2.0 ** (-rates.astype(float)),
    )


def allocate_rates(F: np.ndarray, rate_total: int, p_succ: float) -> np.ndarray:
    """Split the total rate across state modes.

    Every mode i must satisfy p_succ * R_i > max(0, log2|mu_i(F)|) with
    R_i >= 1.  Unstable modes get the minimum satisfying rate and all
    leftover bits go to the largest-magnitude mode; when every mode is
    stable the constraints are vacuous and the bits are split evenly.
    """
    F = np.atleast_2d(np.asarray(F, dtype=float))
    d = F.shape[0]
    if rate_total < d:
        raise InfeasibleRates(f"need at least {d} bits, got {rate_total}", mode_index=0)
    if not 0.0 < p_succ <= 1.0:
        raise ValueError("p_succ must be in (0, 1]")
    mags = np.abs(np.linalg.eigvals(F))
    order = np.argsort(-mags)  # largest first
    need = np.maximum(0.0, np.log2(np.maximum(mags, 1e-300)))
    req = np.empty(d, dtype=int)
    for i in range(d):
        req[i] = max(1, math.floor(need[i] / p_succ) + 1)
    if req.sum() > rate_total:
        worst = int(order[0])
        raise InfeasibleRates(
            f"minimum rates {req.tolist()} exceed total {rate_total}", mode_index=worst
        )
    rates = req.copy()
    leftover = rate_total - int(req.sum())
    if np.any(need > 0):
        rates[order[0]] += leftover
    else:
        base = rate_total // d
        rates[:] = base
        for k in range(rate_total - base * d):
            rates[order[k]] += 1
    return rates


def init_state(struct: QuantizerStructure, L0_bound: float) -> QuantizerState:
    """Slot-0 parameters: x~ = 0, Psi = Phi, L = ||Phi|| L0 on every axis."""
    if L0_bound <= 0:
        raise ValueError("L0_bound must be > 0")
    d = struct.dim
    return QuantizerState(
        x_shift=np.zeros(d),
        psi=struct.phi.copy(),
        psi_inv=struct.phi_inv.copy(),
        L=np.full(d, struct.phi_norm * L0_bound),
        rates=struct.rates.copy(),
    )


def update_shift(state: QuantizerState, F: np.ndarray, G: np.ndarray,
                 u: np.ndarray, xi_prev: np.ndarray, gamma_prev: int) -> np.ndarray:
    """Shift-vector recursion; on a delivered symbol the shift snaps to the
    dequantized value before propagating through the plant map."""
    if gamma_prev:
        base = state.psi_inv @ xi_prev + state.x_shift
    else:
        base = state.x_shift
    return F @ base + G @ np.atleast_1d(u)


def update_range(state: QuantizerState, struct: QuantizerStructure,
                 gamma_prev: int, w_max: float) -> tuple[np.ndarray, np.ndarray]:
    """Transform/range recursion: Psi' = H Psi and the per-axis L update.

    A delivered symbol contracts the range by 2^-R_n per axis before the
    magnitude growth; either way the disturbance head-room w_max ||Psi'||
    is added.  ||Psi'|| equals ||Phi|| for all t because H is orthogonal.
    """
    psi_new = struct.h_rot @ state.psi
    contraction = struct.f_r if gamma_prev else np.ones(struct.dim)
    L_new = struct.gamma_mag * (contraction * state.L) + w_max * struct.phi_norm
    return psi_new, L_new


def advance(state: QuantizerState, struct: QuantizerStructure, F, G, u,
            xi_prev, gamma_prev: int, w_max: float) -> QuantizerState:
    """Apply both recursions, returning the slot-t state."""
    psi_new, L_new = update_range(state, struct, gamma_prev, w_max)
    x_new = update_shift(state, F, G, u, xi_prev, gamma_prev)
    return replace(
        state,
        x_shift=x_new,
        psi=psi_new,
        psi_inv=state.psi_inv @ struct.h_rot.T,
        L=L_new,
    )


def quantize(state: QuantizerState, x: np.ndarray) -> QuantizeResult:
    """Map the innovation to the centroid of its box in [-L, L]^d.

    Each axis n is split into 2^R_n half-open cells (top cell closed).  A
    point outside the box flags overflow; the returned xi is then the
    clipped-cell centroid and must not be treated as a valid symbol.
    """
    v = state.psi @ (np.asarray(x, dtype=float) - state.x_shift)
    levels = 2.0 ** state.rates.astype(float)
    side = 2.0 * state.L / levels
    idx = np.floor((v + state.L) / side)
    idx = np.clip(idx, 0, levels - 1)
    xi = -state.L + (idx + 0.5) * side
    overflow = bool(np.any(np.abs(v) > state.L))
    return QuantizeResult(xi=xi, overflow=overflow)
