"""Dense linear-algebra and special-function kernels.

Everything here is self-contained (no scipy): matrix exponential by scaling
and squaring, deterministic complex eigendecomposition, a fixed-point DARE
solver, the principal Lambert W branch, and the sampled-noise covariance
integral evaluated through an augmented matrix exponential.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NoConvergence, NonDiagonalizable

__all__ = [
    "EigenDecomposition",
    "matrix_exponential",
    "eigendecompose",
    "solve_dare",
    "lambert_w0",
    "lambert_w0_complex",
    "noise_covariance",
    "drift_integral",
    "spectral_norm",
]


def spectral_norm(a: np.ndarray) -> float:
    """Largest singular value of ``a``."""
    return float(np.linalg.norm(np.asarray(a, dtype=float), 2))


def _check_square(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def matrix_exponential(a: np.ndarray, t: float = 1.0) -> np.ndarray:
    """exp(a*t) by scaling-and-squaring with a Horner-evaluated Taylor core.

    The argument is scaled until its 1-norm is below 0.5, a degree-18 Taylor
    polynomial is evaluated, and the result is squared back up.  Truncation
    error of the core is ~0.5^19/19! and therefore far below the 1e-12
    contract checked by the tests.
    """
    a = _check_square(a, "exponent")
    if t < 0:
        raise ValueError("t must be >= 0")
    m = a * t
    n = m.shape[0]
    norm = np.linalg.norm(m, 1)
    squarings = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0.5 else 0
    m_scaled = m / (2.0**squarings)
    eye = np.eye(n)
    result = eye.copy()
    for k in range(18, 0, -1):
        result = eye + (m_scaled @ result) / k
    for _ in range(squarings):
        result = result @ result
    return result


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigendecomposition in the row-eigenvector convention A = U^-1 diag(mu) U.

    ``u`` holds the (complex) row eigenvectors, ``u_inv`` the column
    eigenvectors, and ``mu`` the eigenvalues sorted by (real, imag) so
    repeated calls are deterministic.
    """

    u: np.ndarray
    mu: np.ndarray
    u_inv: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.mu)

    def reconstruct(self) -> np.ndarray:
        return self.u_inv @ np.diag(self.mu) @ self.u


_COND_LIMIT = 1e8


def eigendecompose(a: np.ndarray) -> EigenDecomposition:
    """Diagonalize a real square matrix with deterministic ordering.

    Eigenvalues are sorted by (real part, imaginary part); eigenvector
    columns are normalized and phase-fixed so the largest-magnitude entry is
    real positive.  Defective (or nearly defective) matrices are rejected via
    the eigenvector-matrix condition number.
    """
    a = _check_square(a)
    mu, vec = np.linalg.eig(a)
    order = np.lexsort((mu.imag, mu.real))
    mu = mu[order]
    vec = vec[:, order]
    for j in range(vec.shape[1]):
        col = vec[:, j]
        col = col / np.linalg.norm(col)
        k = int(np.argmax(np.abs(col)))
        phase = col[k] / abs(col[k])
        vec[:, j] = col / phase
    cond = np.linalg.cond(vec)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise NonDiagonalizable(
            f"eigenvector condition number {cond:.3g} exceeds {_COND_LIMIT:.0e}"
        )
    u_inv = vec
    u = np.linalg.inv(vec)
    recon = (u_inv @ np.diag(mu) @ u).real
    scale = max(1.0, np.linalg.norm(a))
    if np.linalg.norm(recon - a) > 1e-10 * scale:
        raise NonDiagonalizable("eigendecomposition failed to reconstruct input")
    return EigenDecomposition(u=u, mu=mu, u_inv=u_inv)


def solve_dare(
    f: np.ndarray,
    g: np.ndarray,
    d: np.ndarray,
    w: np.ndarray,
    tol: float = 1e-12,
    max_iters: int = 100_000,
) -> np.ndarray:
    """Fixed-point Riccati iteration for P = F'PF - F'PG(G'PG+D)^-1 G'PF + W.

    Starts from P0 = W; converges linearly at the squared closed-loop norm,
    which is plenty for the desk-scale systems this package targets.
    """
    f = _check_square(f, "F")
    g = np.asarray(g, dtype=float)
    if g.ndim == 1:
        g = g.reshape(-1, 1)
    d = np.asarray(d, dtype=float)
    if d.ndim == 0:
        d = d.reshape(1, 1)
    w = _check_square(np.asarray(w, dtype=float), "W")
    p = w.copy()
    for _ in range(max_iters):
        gpg = g.T @ p @ g + d
        gain_term = f.T @ p @ g @ np.linalg.solve(gpg, g.T @ p @ f)
        p_next = f.T @ p @ f - gain_term + w
        p_next = 0.5 * (p_next + p_next.T)
        if np.max(np.abs(p_next - p)) <= tol * (1.0 + np.max(np.abs(p_next))):
            return p_next
        p = p_next
    raise NoConvergence(
        "DARE fixed-point iteration did not converge",
        residual=float(np.max(np.abs(p_next - p))),
    )


_BRANCH_POINT = -1.0 / math.e


def lambert_w0(x: float) -> float:
    """Principal branch of the Lambert W function on the real axis.

    Halley iteration from a piecewise initial guess (branch-point series near
    -1/e, w ~ x for small x, log asymptote for large x); terminates when the
    defect w*exp(w) - x is below 1e-14*(1+|x|).
    """
    x = float(x)
    if x < _BRANCH_POINT - 1e-15:
        raise ValueError(f"lambert_w0 requires x >= -1/e, got {x}")
    if x == 0.0:
        return 0.0
    x = max(x, _BRANCH_POINT)
    if x < -0.25:
        # series around the branch point, Corless et al. eq. (4.22)
        p = math.sqrt(2.0 * (math.e * x + 1.0))
        w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p**3
    elif x < math.e:
        w = x / (1.0 + x)
    else:
        lx = math.log(x)
        w = lx - math.log(lx)
    for _ in range(200):
        ew = math.exp(w)
        defect = w * ew - x
        if abs(defect) <= 1e-14 * (1.0 + abs(x)):
            return w
        wp1 = w + 1.0
        denom = ew * wp1 - (w + 2.0) * defect / (2.0 * wp1)
        w -= defect / denom
    raise NoConvergence("lambert_w0 Halley iteration stalled", residual=abs(defect))


def lambert_w0_complex(z: complex) -> complex:
    """Principal-branch Lambert W for complex arguments.

    Same Halley iteration as :func:`lambert_w0`; needed when the plant drift
    has complex eigenvalue pairs.  Arguments on the real cut below -1/e are
    rejected by the callers, not here.
    """
    z = complex(z)
    if z == 0:
        return 0.0 + 0.0j
    if abs(z.imag) < 1e-300 and z.real >= _BRANCH_POINT:
        return complex(lambert_w0(z.real))
    if abs(z + 1.0 / math.e) < 0.3:
        p = np.sqrt(2.0 * (math.e * z + 1.0))
        w = -1.0 + p - p * p / 3.0
    elif abs(z) < 1.0:
        w = z * (1.0 - z)
    else:
        lz = np.log(z)
        w = lz - np.log(lz)
    w = complex(w)
    for _ in range(200):
        ew = np.exp(w)
        defect = w * ew - z
        if abs(defect) <= 1e-13 * (1.0 + abs(z)):
            return w
        wp1 = w + 1.0
        denom = ew * wp1 - (w + 2.0) * defect / (2.0 * wp1)
        w -= defect / denom
    raise NoConvergence("complex Lambert iteration stalled", residual=abs(defect))


def drift_integral(f_tilde: np.ndarray, tau: float) -> np.ndarray:
    """int_0^tau exp(F~ s) ds, via the augmented exponential.

    exp([[F~, I], [0, 0]] * tau) has the integral in its upper-right block,
    so the result is exact for singular F~ as well (no inverse needed).
    """
    f_tilde = _check_square(f_tilde, "F~")
    n = f_tilde.shape[0]
    block = np.zeros((2 * n, 2 * n))
    block[:n, :n] = f_tilde
    block[:n, n:] = np.eye(n)
    return matrix_exponential(block, tau)[:n, n:]


def noise_covariance(f_tilde: np.ndarray, w_tilde: np.ndarray, tau: float) -> np.ndarray:
    """Sampled-slot noise covariance int_0^tau exp(F~ s) W~ exp(F~' s) ds.

    Van Loan construction: with M = [[F~, W~], [0, -F~']] one has
    exp(M*tau) = [[E11, E12], [0, E22]] where
    E12 = int_0^tau exp(F~ (tau-s)) W~ exp(-F~' s) ds and E22 = exp(-F~' tau),
    so E12 @ E22^-1 is exactly the desired integral.
    """
    f_tilde = _check_square(f_tilde, "F~")
    w_tilde = _check_square(np.asarray(w_tilde, dtype=float), "W~")
    if tau <= 0:
        raise ValueError("tau must be > 0")
    n = f_tilde.shape[0]
    block = np.zeros((2 * n, 2 * n))
    block[:n, :n] = f_tilde
    block[:n, n:] = w_tilde
    block[n:, n:] = -f_tilde.T
    big = matrix_exponential(block, tau)
    w = big[:n, n:] @ matrix_exponential(f_tilde.T, tau)
    w = 0.5 * (w + w.T)
    return w
