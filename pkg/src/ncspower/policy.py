"""Closed-form approximate value function and the event-driven power rule.

The relative value function of the power-control MDP is approximated by two
asymptotic branches glued at ||Delta||^2 * alpha = eta_th:

* low urgency   -- V = Delta' A1(alpha) Delta + b1(alpha)
* high urgency  -- V = (Delta' A2(alpha) Delta + exp(2 B2) alpha^C2)
                       * exp((c~ - a~)/4 * alpha) * alpha^-(1/4 - a~/(4 c~))

with all coefficients in closed form from the eigen-structure of the
continuous drift.  The transmit rule is bang-bang: send at p_max whenever
the price lambda is below (V(chi) - V(chi)|_{Delta=0}) * alpha / (kappa B_W).

Also here: the FPC / COPC baselines and the spectral stability conditions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DegenerateSpectrum
from .numerics import EigenDecomposition, eigendecompose, lambert_w0_complex

__all__ = [
    "ApproxValueFn",
    "PowerDecision",
    "make_value_fn",
    "eval_A1",
    "eval_b1",
    "eval_A2",
    "compute_constants",
    "approx_value",
    "decide_power",
    "fpc_policy",
    "copc_policy",
    "instability_measure",
    "check_sufficient",
    "check_necessary",
]

_BRANCH_POINT = -1.0 / math.e


@dataclass(frozen=True)
class PowerDecision:
    p: float
    threshold: float


def _lambert(z: complex) -> complex:
    if abs(z.imag) < 1e-12 and z.real < _BRANCH_POINT:
        raise DegenerateSpectrum(
            f"Lambert argument {z.real:.6g} below the branch point -1/e"
        )
    return lambert_w0_complex(z)


class ApproxValueFn:
    """Precomputed coefficient tables for both branches of the value function.

    Everything alpha-independent is assembled once: the branch-1 entries are
    c_ij * exp(p_ij * alpha + q_ij * log alpha) and the branch-2 entries are
    alpha ** e_ij, so evaluation reduces to elementwise exponentials plus a
    quadratic form in z = U Delta.
    """

    def __init__(self, eig: EigenDecomposition, w_tilde: np.ndarray, a_tilde: float,
                 p_max: float, kappa: float, b_w: float, eta_th: float,
                 lambda_price: float):
        if a_tilde <= 0 or p_max <= 0 or kappa <= 0 or b_w <= 0:
            raise ValueError("a_tilde, p_max, kappa, B_W must be positive")
        if eta_th <= 0:
            raise ValueError("eta_th must be positive")
        self.eig = eig
        self.a_tilde = float(a_tilde)
        self.p_max = float(p_max)
        self.kappa = float(kappa)
        self.b_w = float(b_w)
        self.eta_th = float(eta_th)
        self.lambda_price = float(lambda_price)
        self.c_tilde = math.sqrt(a_tilde**2 + 4.0 * a_tilde * p_max / (kappa * b_w))

        mu = eig.mu
        d = len(mu)
        self.dim = d
        self.w_u = eig.u @ np.atleast_2d(np.asarray(w_tilde, dtype=float)) @ eig.u.conj().T

        at = self.a_tilde
        c1 = np.empty((d, d), dtype=complex)
        p1 = np.empty((d, d), dtype=complex)
        q1 = np.empty((d, d), dtype=complex)
        b1w = np.zeros((d, d), dtype=complex)
        for i in range(d):
            for j in range(d):
                if i == j:
                    if abs(mu[i]) < 1e-14:
                        raise DegenerateSpectrum("zero eigenvalue in the drift")
                    c1[i, j] = 1.0
                    p1[i, j] = -mu[i] / at
                    q1[i, j] = -(mu[i] / at) * (1.0 - 2.0 * mu[i] / at)
                    b1w[i, j] = self.w_u[i, i] / (2.0 * mu[i])
                else:
                    s = mu[i] + mu[j]
                    if abs(s) < 1e-12:
                        raise DegenerateSpectrum("eigenvalue pair sums to zero")
                    c1[i, j] = mu[j] / s
                    p1[i, j] = -s / (2.0 * at)
                    q1[i, j] = -(s / (2.0 * at)) * (1.0 - s / at)
                    if j > i:
                        b1w[i, j] = self.w_u[i, j] / s
        self._c1, self._p1, self._q1, self._b1w = c1, p1, q1, b1w

        ct = self.c_tilde
        e2 = np.empty((d, d), dtype=complex)
        for i in range(d):
            for j in range(d):
                if i == j:
                    e2[i, j] = -mu[i] / ct
                else:
                    s = mu[i] + mu[j]
                    e2[i, j] = _lambert(-mu[j] / (2.0 * ct) * np.exp(-s / (2.0 * ct)))
        self._e2 = e2

    @cached_property
    def constants(self) -> tuple[float, float]:
        """(B2, C2) of the high-urgency branch."""
        mu = self.eig.mu
        d = self.dim
        ct = self.c_tilde
        b2 = 0.0
        c2 = 0.0
        for i in range(d):
            z = self.w_u[i, i] / (4.0 * mu[i])
            if abs(z) == 0.0:
                raise DegenerateSpectrum("zero noise weight in B2 log term")
            b2 += math.log(abs(z))
            c2 += 2.0 * mu[i].real / (-ct)
        for i in range(d):
            for j in range(i + 1, d):
                s = mu[i] + mu[j]
                li = _lambert(mu[i] / (-2.0 * ct) * np.exp(s / (-2.0 * ct)))
                lj = _lambert(mu[j] / (-2.0 * ct) * np.exp(s / (-2.0 * ct)))
                w = self.w_u[i, j]
                for lam in (lj, li):
                    z = w / (-4.0 * ct * lam)
                    if abs(z) == 0.0:
                        raise DegenerateSpectrum("zero noise weight in B2 log term")
                    b2 += math.log(abs(z))
                c2 += 2.0 * (li + lj).real
        c2 -= (d**2 / 2.0) * (1.0 - self.a_tilde / ct)
        return b2, c2

    # -- branch evaluations ------------------------------------------------

    def _entries1(self, alpha: np.ndarray) -> np.ndarray:
        la = np.log(alpha)
        return np.exp(self._p1[None] * alpha[:, None, None]
                      + self._q1[None] * la[:, None, None])

    def b1(self, alpha) -> np.ndarray:
        alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        _check_alpha(alpha)
        ent = self._entries1(alpha)
        return np.einsum("ij,nij->n", self._b1w, ent).real

    def value_batch(self, delta: np.ndarray, alpha: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(V, b1) for a batch of states; branch chosen per sample."""
        delta = np.atleast_2d(np.asarray(delta, dtype=float))
        alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        _check_alpha(alpha)
        la = np.log(alpha)
        z = delta @ self.eig.u.T  # (n, d) complex
        zc = z.conj()

        ent1 = self._entries1(alpha)
        quad1 = np.einsum("ni,nij,nj->n", zc, self._c1[None] * ent1, z).real
        b1 = np.einsum("ij,nij->n", self._b1w, ent1).real
        v1 = quad1 + b1

        urgency = np.einsum("ij,ij->i", delta, delta) * alpha
        branch2 = urgency >= self.eta_th
        v = np.where(branch2, 0.0, v1)
        if np.any(branch2):
            b2c, c2c = self.constants
            ent2 = np.exp(self._e2[None] * la[branch2, None, None])
            quad2 = np.einsum("ni,nij,nj->n", zc[branch2], ent2, z[branch2]).real
            a2 = alpha[branch2]
            prefactor = np.exp((self.c_tilde - self.a_tilde) / 4.0 * a2) \
                * a2 ** (-(0.25 - self.a_tilde / (4.0 * self.c_tilde)))
            v2 = (quad2 + math.exp(2.0 * b2c) * a2**c2c) * prefactor
            v[branch2] = v2
        return v, b1

    def threshold_batch(self, delta: np.ndarray, alpha: np.ndarray) -> np.ndarray:
        """(V(Delta, a) - V(0, a)) * a / (kappa B_W), vectorized."""
        alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        v, b1 = self.value_batch(delta, alpha)
        return (v - b1) * alpha / (self.kappa * self.b_w)

    def decide_batch(self, delta: np.ndarray, alpha: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        thr = self.threshold_batch(delta, alpha)
        p = np.where(self.lambda_price <= thr, self.p_max, 0.0)
        return p, thr


def _check_alpha(alpha: np.ndarray) -> None:
    if np.any(alpha <= 0):
        raise ValueError("alpha must be > 0")


def make_value_fn(f_tilde: np.ndarray, w_tilde: np.ndarray, a_tilde: float,
                  p_max: float, kappa: float, b_w: float, eta_th: float,
                  lambda_price: float) -> ApproxValueFn:
    """Build the approximate value function from the continuous drift."""
    return ApproxValueFn(
        eig=eigendecompose(np.atleast_2d(np.asarray(f_tilde, dtype=float))),
        w_tilde=w_tilde,
        a_tilde=a_tilde,
        p_max=p_max,
        kappa=kappa,
        b_w=b_w,
        eta_th=eta_th,
        lambda_price=lambda_price,
    )


def _real_symmetric(m: np.ndarray) -> np.ndarray:
    r = m.real
    return 0.5 * (r + r.T)


def eval_A1(alpha: float, vf: ApproxValueFn) -> np.ndarray:
    """Low-urgency quadratic coefficient, mapped to state coordinates."""
    alpha = np.atleast_1d(float(alpha))
    _check_alpha(alpha)
    a_mu = vf._c1 * vf._entries1(alpha)[0]
    return _real_symmetric(vf.eig.u.conj().T @ a_mu @ vf.eig.u)


def eval_b1(alpha: float, vf: ApproxValueFn) -> float:
    """Low-urgency constant term (the value at Delta = 0)."""
    return float(vf.b1(float(alpha))[0])


def eval_A2(alpha: float, vf: ApproxValueFn) -> np.ndarray:
    """High-urgency quadratic coefficient, mapped to state coordinates."""
    alpha = float(alpha)
    _check_alpha(np.atleast_1d(alpha))
    a_mu = np.exp(vf._e2 * math.log(alpha))
    return _real_symmetric(vf.eig.u.conj().T @ a_mu @ vf.eig.u)


def compute_constants(vf: ApproxValueFn) -> tuple[float, float]:
    """(B2, C2) for the high-urgency branch."""
    return vf.constants


def approx_value(delta: np.ndarray, alpha: float, vf: ApproxValueFn) -> float:
    """Two-branch approximate value at (Delta, alpha)."""
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    v, _ = vf.value_batch(delta[None, :], np.array([float(alpha)]))
    return float(v[0])


def decide_power(delta: np.ndarray, alpha_prev: float, vf: ApproxValueFn) -> PowerDecision:
    """Bang-bang transmit decision from the previous-slot error and CSI."""
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    p, thr = vf.decide_batch(delta[None, :], np.array([float(alpha_prev)]))
    return PowerDecision(p=float(p[0]), threshold=float(thr[0]))


# -- baselines and stability conditions -------------------------------------


def fpc_policy(p0: float) -> float:
    """Fixed power control: transmit at p0 every slot."""
    if p0 < 0:
        raise ValueError("p0 must be >= 0")
    return float(p0)


def copc_policy(lambda_price: float, a: float, alpha_prev: float, p_max: float) -> float:
    """CSI-only power control min(lambda / (a * alpha_prev), p_max)."""
    if alpha_prev <= 0:
        raise ValueError("alpha_prev must be > 0")
    return min(lambda_price / (a * alpha_prev), p_max)


def instability_measure(F: np.ndarray) -> float:
    """Sum of positive log2 eigenvalue magnitudes of F."""
    mags = np.abs(np.linalg.eigvals(np.atleast_2d(np.asarray(F, dtype=float))))
    return float(np.sum(np.maximum(0.0, np.log2(np.maximum(mags, 1e-300)))))


def _stability_sides(F, rate_total, p_max, tau, kappa, b_w):
    lhs = p_max * tau / (kappa * b_w + p_max * tau)
    F = np.atleast_2d(np.asarray(F, dtype=float))
    rate_term = instability_measure(F) / rate_total
    mu_max = float(np.linalg.eigvalsh(F.T @ F)[-1])
    norm_term = 1.0 - 1.0 / mu_max
    return lhs, rate_term, norm_term


def check_sufficient(F, rate_total: int, p_max: float, tau: float,
                     kappa: float, b_w: float) -> tuple[bool, float]:
    """Spectral sufficient condition for closed-loop stability (plus margin)."""
    lhs, rate_term, norm_term = _stability_sides(F, rate_total, p_max, tau, kappa, b_w)
    margin = lhs - max(rate_term, norm_term)
    return margin > 0, margin


def check_necessary(F, rate_total: int, p_max: float, tau: float,
                    kappa: float, b_w: float) -> tuple[bool, float]:
    """Spectral necessary condition (same LHS against the min of the terms)."""
    lhs, rate_term, norm_term = _stability_sides(F, rate_total, p_max, tau, kappa, b_w)
    margin = lhs - min(rate_term, norm_term)
    return margin > 0, margin
