"""Discretized average-cost value iteration: the brute-force optimality oracle.

Restricted to scalar plants, where the MDP state collapses to (Delta, alpha):
the transform Psi is constant and the quantizer range enters only through
the steady-state quantization-noise law.  The kernel factorizes as

    P[(D', a') | (D, a), p] = T[a -> a'] * ( q(p, a') * S_succ[D']
                                            + (1 - q(p, a')) * S_fail[D -> D'] )

with q the success probability at the realized next-slot CSI, S_succ the
projected quantization-noise law and S_fail the projected disturbance-driven
drift.  Value iteration, policy evaluation, and the two VIA-based baselines
(error-free-channel scheduling and i.i.d.-channel power control) all run on
this factorization.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import ncx2

from .channel import FadingChannel
from .errors import NoConvergence, Unsupported
from .plant import SampledPlant, get_sampler

__all__ = [
    "StateGrid",
    "ViaSolution",
    "TransitionModel",
    "make_grid",
    "build_kernel",
    "relative_value_iteration",
    "evaluate_policy",
    "pcefc_solve",
    "pcicsis_solve",
    "solution_to_csv",
]


@dataclass(frozen=True)
class StateGrid:
    """Product grid for the scalar MDP state (Delta, alpha) plus power levels."""

    delta_axis: np.ndarray
    alpha_axis: np.ndarray   # per-bin representative CSI values
    alpha_edges: np.ndarray  # len(alpha_axis) + 1, last edge is inf
    power_levels: np.ndarray

    @property
    def n_delta(self) -> int:
        return len(self.delta_axis)

    @property
    def n_alpha(self) -> int:
        return len(self.alpha_axis)

    def delta_edges(self) -> np.ndarray:
        mid = 0.5 * (self.delta_axis[1:] + self.delta_axis[:-1])
        return np.concatenate(([-np.inf], mid, [np.inf]))


def _alpha_bins(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Equal-probability bins of Exp(1); representatives are in-bin means."""
    k = np.arange(n + 1, dtype=float)
    edges = -np.log1p(-(k / n))
    edges[-1] = np.inf
    a, b = edges[:-1], edges[1:]
    mass = np.exp(-a) - np.exp(-b)
    with np.errstate(invalid="ignore"):
        upper = np.where(np.isinf(b), 0.0, (b + 1.0) * np.exp(-b))
    reps = ((a + 1.0) * np.exp(-a) - upper) / mass
    return reps, edges


def make_grid(delta_max: float, n_delta: int = 41, n_alpha: int = 21,
              p_max: float = 160.0, n_power: int = 8) -> StateGrid:
    """Default grid: symmetric Delta axis, Exp(1)-matched alpha bins, and a
    power ladder containing 0 and p_max with n_power - 2 interior levels."""
    if n_delta % 2 == 0:
        n_delta += 1  # keep Delta = 0 on the grid
    reps, edges = _alpha_bins(n_alpha)
    return StateGrid(
        delta_axis=np.linspace(-delta_max, delta_max, n_delta),
        alpha_axis=reps,
        alpha_edges=edges,
        power_levels=np.linspace(0.0, p_max, n_power),
    )


def refine(grid: StateGrid) -> StateGrid:
    """Double both state axes (discretization-stability checks)."""
    reps, edges = _alpha_bins(2 * grid.n_alpha)
    return StateGrid(
        delta_axis=np.linspace(grid.delta_axis[0], grid.delta_axis[-1],
                               2 * grid.n_delta - 1),
        alpha_axis=reps,
        alpha_edges=edges,
        power_levels=grid.power_levels,
    )


# -- kernel construction -----------------------------------------------------


def _alpha_transition(grid: StateGrid, channel: FadingChannel) -> np.ndarray:
    """Conditional CSI bin transitions from the AR(1) law.

    Given alpha, the next |h|^2 scaled by 2/Z is noncentral chi-square with
    2 dof and noncentrality 2 a^2 alpha / Z; bin masses are CDF differences,
    renormalized to absorb quadrature tail mass.
    """
    z = channel.innovation_var
    scale = z / 2.0
    t = np.empty((grid.n_alpha, grid.n_alpha))
    finite_edges = grid.alpha_edges.copy()
    for j, rep in enumerate(grid.alpha_axis):
        nc = channel.a**2 * rep / scale
        cdf = np.empty(grid.n_alpha + 1)
        cdf[0] = 0.0
        cdf[-1] = 1.0
        cdf[1:-1] = ncx2.cdf(finite_edges[1:-1] / scale, df=2, nc=nc)
        t[j] = np.diff(cdf)
    t /= t.sum(axis=1, keepdims=True)
    return t


def _uniform_projection(axis: np.ndarray, half_width: float) -> np.ndarray:
    """Project U[-h, h] onto the grid cells of a symmetric axis."""
    edges = np.concatenate(([-np.inf],
                            0.5 * (axis[1:] + axis[:-1]),
                            [np.inf]))
    lo = np.clip(edges[:-1], -half_width, half_width)
    hi = np.clip(edges[1:], -half_width, half_width)
    mass = np.maximum(hi - lo, 0.0) / (2.0 * half_width)
    return mass / mass.sum()


class _TruncNormCdf:
    """CDF of the calibrated truncated-Gaussian slot disturbance (scalar)."""

    def __init__(self, plant: SampledPlant, bound: float):
        sampler = get_sampler(plant.W, bound)
        self.sigma = math.sqrt(sampler.scale * float(plant.W[0, 0]))
        self.bound = bound
        if self.sigma == 0.0:
            self.norm = 1.0
        else:
            self.norm = self._phi(bound / self.sigma) - self._phi(-bound / self.sigma)

    @staticmethod
    def _phi(x):
        return 0.5 * (1.0 + np.vectorize(math.erf)(np.asarray(x) / math.sqrt(2.0)))

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.sigma == 0.0:
            return (x >= 0.0).astype(float)
        clipped = np.clip(x, -self.bound, self.bound)
        return (self._phi(clipped / self.sigma) - self._phi(-self.bound / self.sigma)) / self.norm

    def variance(self) -> float:
        if self.sigma == 0.0:
            return 0.0
        r = self.bound / self.sigma
        pdf_r = math.exp(-0.5 * r * r) / math.sqrt(2.0 * math.pi)
        mass = math.erf(r / math.sqrt(2.0))
        return self.sigma**2 * (1.0 - 2.0 * r * pdf_r / mass)


def _shift_plus_noise(axis: np.ndarray, factor: float, noise_cdf) -> np.ndarray:
    """Rows: law of factor * axis[i] + w projected onto the axis cells."""
    edges = np.concatenate(([-np.inf], 0.5 * (axis[1:] + axis[:-1]), [np.inf]))
    out = np.empty((len(axis), len(axis)))
    for i, x in enumerate(axis):
        cdf = np.empty(len(axis) + 1)
        cdf[0] = 0.0
        cdf[-1] = 1.0
        cdf[1:-1] = noise_cdf(edges[1:-1] - factor * x)
        out[i] = np.diff(cdf)
    out /= out.sum(axis=1, keepdims=True)
    return out


@dataclass
class TransitionModel:
    """Factorized kernel plus stage-cost tables for the scalar MDP."""

    grid: StateGrid
    t_alpha: np.ndarray      # (n_a, n_a), alpha bin transitions
    q_succ: np.ndarray       # (n_p, n_a), success prob at next-slot CSI
    succ_dist: np.ndarray    # (n_d,), Delta' law after a delivered symbol
    fail: np.ndarray         # (n_d, n_d), Delta' law after a lost symbol
    s_weight: float
    lam: float

    def __post_init__(self):
        d2 = self.s_weight * self.grid.delta_axis**2
        self._succ_cost = float(self.succ_dist @ d2)
        self._fail_cost = self.fail @ d2

    def stage_cost(self, p_idx: int) -> np.ndarray:
        """E[S Delta'^2 + lambda p | (Delta, alpha), p], shape (n_d, n_a)."""
        q = self.q_succ[p_idx]
        mix = self.t_alpha @ q * self._succ_cost \
            + np.outer(self._fail_cost, self.t_alpha @ (1.0 - q))
        return mix + self.lam * self.grid.power_levels[p_idx]

    def backup(self, p_idx: int, v: np.ndarray) -> np.ndarray:
        """Stage cost plus expected continuation value for one action."""
        q = self.q_succ[p_idx]
        sv = self.succ_dist @ v              # (n_a,)
        fv = self.fail @ v                   # (n_d, n_a)
        ev = (q * sv) @ self.t_alpha.T + (fv * (1.0 - q)) @ self.t_alpha.T
        return self.stage_cost(p_idx) + ev

    def dense_rows(self, p_idx: int) -> np.ndarray:
        """Fully assembled transition rows, (n_d * n_a, n_d * n_a); test aid."""
        nd, na = self.grid.n_delta, self.grid.n_alpha
        q = self.q_succ[p_idx]
        rows = np.empty((nd, na, nd, na))
        for m in range(na):
            block = q[m] * self.succ_dist[None, :] \
                + (1.0 - q[m]) * self.fail  # (nd, nd')
            rows[:, :, :, m] = block[:, None, :] * self.t_alpha[None, :, m, None]
        return rows.reshape(nd * na, nd * na)


def steady_state_range(plant: SampledPlant, rate_total: int, w_bound: float) -> float:
    """Fixed point of the scalar range recursion under always-success."""
    f_mag = abs(float(plant.F[0, 0]))
    contraction = f_mag * 2.0**-rate_total
    if contraction >= 1.0:
        raise Unsupported("range recursion has no fixed point at this rate")
    return w_bound / (1.0 - contraction)


def build_kernel(grid: StateGrid, plant: SampledPlant, channel: FadingChannel,
                 s_weight: float, lam: float,
                 w_bound: float | None = None) -> TransitionModel:
    """Assemble the factorized kernel for a scalar plant."""
    if plant.dim != 1:
        raise Unsupported("the value-iteration oracle supports d = 1 only")
    bound = plant.w_max if w_bound is None else float(w_bound)
    f_mag = float(plant.F[0, 0])
    l_bar = steady_state_range(plant, channel.rate_total, bound)
    noise_half_width = l_bar / 2.0 ** (channel.rate_total - 1)

    noise_cdf = _TruncNormCdf(plant, bound)
    reps = grid.alpha_axis
    coef = channel.tau / (channel.kappa * channel.b_w)
    q = 1.0 - np.exp(-np.outer(grid.power_levels, reps) * coef)
    return TransitionModel(
        grid=grid,
        t_alpha=_alpha_transition(grid, channel),
        q_succ=q,
        succ_dist=_uniform_projection(grid.delta_axis, noise_half_width),
        fail=_shift_plus_noise(grid.delta_axis, f_mag, noise_cdf),
        s_weight=s_weight,
        lam=lam,
    )


# -- solvers -----------------------------------------------------------------


@dataclass
class ViaSolution:
    theta: float
    v: np.ndarray
    policy: np.ndarray       # chosen power per state
    policy_idx: np.ndarray
    residual: float
    iterations: int


def _iterate(model: TransitionModel, actions, tol: float, max_iter: int,
             fixed_policy: np.ndarray | None = None) -> ViaSolution:
    grid = model.grid
    v = np.zeros((grid.n_delta, grid.n_alpha))
    ref = (grid.n_delta // 2, grid.n_alpha // 2)  # Delta = 0, median alpha
    for it in range(max_iter):
        qs = np.stack([model.backup(p, v) for p in actions])
        if fixed_policy is None:
            tv = qs.min(axis=0)
            pol = qs.argmin(axis=0)
        else:
            tv = np.take_along_axis(
                qs, fixed_policy[None, :, :], axis=0)[0]
            pol = fixed_policy
        diff = tv - v
        span = float(diff.max() - diff.min())
        v = tv - tv[ref]
        if span <= tol:
            theta = 0.5 * float(diff.max() + diff.min())
            residual = float(np.max(np.abs(diff - theta)))
            return ViaSolution(
                theta=theta,
                v=v,
                policy=model.grid.power_levels[np.array(actions)[pol]],
                policy_idx=np.array(actions)[pol],
                residual=residual,
                iterations=it + 1,
            )
    raise NoConvergence("relative value iteration exceeded max_iter", residual=span)


def relative_value_iteration(model: TransitionModel, tol: float = 1e-9,
                             max_iter: int = 50_000) -> ViaSolution:
    """Span-seminorm relative VIA over the full power ladder."""
    return _iterate(model, range(len(model.grid.power_levels)), tol, max_iter)


def evaluate_policy(model: TransitionModel, policy_idx: np.ndarray,
                    tol: float = 1e-9, max_iter: int = 50_000) -> ViaSolution:
    """Average cost of a fixed state-feedback power policy on the kernel."""
    policy_idx = np.asarray(policy_idx, dtype=int)
    return _iterate(model, range(len(model.grid.power_levels)), tol, max_iter,
                    fixed_policy=policy_idx)


# -- VIA-based baselines -----------------------------------------------------


@dataclass
class ScalarChain:
    """Delta-only chain for the error-free-channel scheduling baseline."""

    axis: np.ndarray
    succ_dist: np.ndarray
    fail: np.ndarray
    s_weight: float
    lam: float


def pcefc_solve(grid: StateGrid, plant: SampledPlant, channel: FadingChannel,
                s_weight: float, lam: float, w_bound: float | None = None,
                tol: float = 1e-9, max_iter: int = 50_000) -> ViaSolution:
    """Scheduling under an error-free channel: binary transmit/idle action.

    A transmission always succeeds and resets the error to quantization
    noise; the price lambda is charged per channel use.
    """
    if plant.dim != 1:
        raise Unsupported("pcefc oracle supports d = 1 only")
    bound = plant.w_max if w_bound is None else float(w_bound)
    l_bar = steady_state_range(plant, channel.rate_total, bound)
    succ = _uniform_projection(grid.delta_axis, l_bar / 2.0 ** (channel.rate_total - 1))
    fail = _shift_plus_noise(grid.delta_axis, float(plant.F[0, 0]),
                             _TruncNormCdf(plant, bound))
    d2 = s_weight * grid.delta_axis**2
    succ_cost = float(succ @ d2)
    fail_cost = fail @ d2

    v = np.zeros(len(grid.delta_axis))
    ref = len(grid.delta_axis) // 2
    for it in range(max_iter):
        q_idle = fail_cost + fail @ v
        q_tx = succ_cost + lam + succ @ v
        tv = np.minimum(q_idle, q_tx)
        pol = (q_tx < q_idle).astype(int)
        diff = tv - v
        span = float(diff.max() - diff.min())
        v = tv - tv[ref]
        if span <= tol:
            theta = 0.5 * float(diff.max() + diff.min())
            return ViaSolution(theta=theta, v=v, policy=pol.astype(float),
                               policy_idx=pol, residual=float(np.max(np.abs(diff - theta))),
                               iterations=it + 1)
    raise NoConvergence("pcefc value iteration exceeded max_iter", residual=span)


def pcicsis_solve(grid: StateGrid, plant: SampledPlant, channel: FadingChannel,
                  s_weight: float, lam: float, w_bound: float | None = None,
                  tol: float = 1e-9, max_iter: int = 50_000) -> ViaSolution:
    """Power control for an i.i.d. channel with one-step-prediction state.

    State is (Theta, alpha) with Theta = F Delta + w; the SER is evaluated at
    the known previous-slot CSI and the next CSI is redrawn from Exp(1),
    which is exactly the modeling mismatch this baseline embodies.
    """
    if plant.dim != 1:
        raise Unsupported("pcicsis oracle supports d = 1 only")
    bound = plant.w_max if w_bound is None else float(w_bound)
    f_mag = float(plant.F[0, 0])
    l_bar = steady_state_range(plant, channel.rate_total, bound)
    half = l_bar / 2.0 ** (channel.rate_total - 1)
    noise_cdf = _TruncNormCdf(plant, bound)

    # law of F*eps + w for the success branch, by quadrature over eps
    eps_nodes, eps_weights = np.polynomial.legendre.leggauss(24)
    eps_nodes = eps_nodes * half
    eps_weights = eps_weights / eps_weights.sum()
    edges = np.concatenate(([-np.inf],
                            0.5 * (grid.delta_axis[1:] + grid.delta_axis[:-1]),
                            [np.inf]))
    succ_theta = np.zeros(len(grid.delta_axis))
    for x, wgt in zip(eps_nodes, eps_weights):
        cdf = np.empty(len(grid.delta_axis) + 1)
        cdf[0], cdf[-1] = 0.0, 1.0
        cdf[1:-1] = noise_cdf(edges[1:-1] - f_mag * x)
        succ_theta += wgt * np.diff(cdf)
    succ_theta /= succ_theta.sum()
    fail_theta = _shift_plus_noise(grid.delta_axis, f_mag, noise_cdf)

    coef = channel.tau / (channel.kappa * channel.b_w)
    q = 1.0 - np.exp(-np.outer(grid.power_levels, grid.alpha_axis) * coef)  # (n_p, n_a)
    eps_sq = s_weight * half**2 / 3.0
    theta_sq = s_weight * grid.delta_axis**2

    n_d, n_a, n_p = grid.n_delta, grid.n_alpha, len(grid.power_levels)
    v = np.zeros((n_d, n_a))
    ref = (n_d // 2, n_a // 2)
    for it in range(max_iter):
        v_bar = v.mean(axis=1)  # iid alpha' with equal-probability bins
        sv = float(succ_theta @ v_bar)
        fv = fail_theta @ v_bar  # (n_d,)
        qs = np.empty((n_p, n_d, n_a))
        for p in range(n_p):
            cost = q[p][None, :] * eps_sq + (1.0 - q[p])[None, :] * theta_sq[:, None] \
                + lam * grid.power_levels[p]
            qs[p] = cost + q[p][None, :] * sv + (1.0 - q[p])[None, :] * fv[:, None]
        tv = qs.min(axis=0)
        pol = qs.argmin(axis=0)
        diff = tv - v
        span = float(diff.max() - diff.min())
        v = tv - tv[ref]
        if span <= tol:
            theta = 0.5 * float(diff.max() + diff.min())
            return ViaSolution(theta=theta, v=v,
                               policy=grid.power_levels[pol], policy_idx=pol,
                               residual=float(np.max(np.abs(diff - theta))),
                               iterations=it + 1)
    raise NoConvergence("pcicsis value iteration exceeded max_iter", residual=span)


def solution_to_csv(grid: StateGrid, sol: ViaSolution, path) -> None:
    """Write (delta, alpha, V, policy_power) rows, one per grid point."""
    v = np.atleast_2d(sol.v)
    pol = np.atleast_2d(sol.policy)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["delta", "alpha", "value", "power"])
        if v.shape[0] == 1 and len(grid.delta_axis) > 1:  # Delta-only chain
            for i, d in enumerate(grid.delta_axis):
                writer.writerow([f"{d:.12g}", "", f"{v[0, i]:.12g}", f"{pol[0, i]:.12g}"])
            return
        for i, d in enumerate(grid.delta_axis):
            for j, a in enumerate(grid.alpha_axis):
                writer.writerow([f"{d:.12g}", f"{a:.12g}",
                                 f"{v[i, j]:.12g}", f"{pol[i, j]:.12g}"])
